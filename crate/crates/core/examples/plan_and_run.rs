//! Plan three irregular shapes, execute one, and look at its trace.
use ftimm::engine::{naive_gemm, run_plan};
use ftimm::machine::default_ftm7032;
use ftimm::matrix::MatrixGenerator;
use ftimm::perf::estimate_time;
use ftimm::tuner::{MatrixShape, Tuner};

fn main() -> ftimm::Result<()> {
    let model = default_ftm7032();
    let mut tuner = Tuner::new(&model)?;
    for (m, n, k) in [(1 << 16, 32, 32), (32, 32, 1 << 20), (20480, 32, 20480)] {
        let plan = tuner.adjust(&MatrixShape::new(m, n, k)?)?;
        println!("{m}x{n}x{k}: {} {:?}", plan.strategy, plan.blocks);
    }

    let shape = MatrixShape::new(3000, 24, 300)?;
    let plan = tuner.adjust(&shape)?;
    let (a, b, c0) = MatrixGenerator::problem(42, shape.m, shape.n, shape.k);
    let (mut c, mut o) = (c0.clone(), c0);
    let report = run_plan(&a, &b, &mut c, &plan, &model)?;
    naive_gemm(&a, &b, &mut o)?;

    let worst = (0..shape.m)
        .flat_map(|i| (0..shape.n).map(move |j| (i, j)))
        .map(|(i, j)| (c.get(i, j) - o.get(i, j)).abs() / (1.0 + o.get(i, j).abs()))
        .fold(0.0f32, f32::max);
    println!("{shape} via {}: max relative error {worst:.2e}", plan.strategy);
    println!("{} DMA events, {} active cores, checksum {:?}", report.dma_events.len(), report.active_cores, report.result_checksum);
    for (level, bytes) in &report.bytes_per_level {
        println!("  into {level}: {bytes} bytes");
    }
    let t = estimate_time(&report, &model);
    println!("modeled {:.3e} s, {:.1} GFlops", t.overlapped_time_s, t.gflops);
    print!("{}", report.trace_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}

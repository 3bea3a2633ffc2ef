//! Roofline ceilings and where the modeled runs land under them.
use ftimm::engine::simulate;
use ftimm::machine::default_ftm7032;
use ftimm::perf::{arithmetic_intensity, estimate_time, roofline};
use ftimm::tuner::{MatrixShape, Tuner};

fn main() -> ftimm::Result<()> {
    let model = default_ftm7032();
    let mut tuner = Tuner::new(&model)?;
    println!("{:>22} {:>8} {:>10} {:>10} {:>8}", "shape", "flop/B", "ceiling", "modeled", "frac");
    for (m, n, k) in [(1 << 16, 32, 32), (1 << 16, 96, 512), (32, 32, 1 << 20), (20480, 32, 20480), (4096, 96, 4096)] {
        let shape = MatrixShape::new(m, n, k)?;
        let plan = tuner.adjust(&shape)?;
        let t = estimate_time(&simulate(&shape, &plan, &model)?, &model);
        let ceiling = roofline(&shape, &model, model.num_cores);
        println!(
            "{:>22} {:>8.2} {:>10.1} {:>10.1} {:>8.3}",
            format!("{m}x{n}x{k}"),
            arithmetic_intensity(&shape),
            ceiling,
            t.gflops,
            t.gflops / ceiling
        );
    }
    Ok(())
}

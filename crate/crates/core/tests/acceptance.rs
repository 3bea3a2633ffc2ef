//! Acceptance suite. Each test prints one `PASS`/`FAIL criterion N` line
//! (visible with `--nocapture`) and then asserts the same outcome.

use std::time::{Duration, Instant};

use ftimm::cli;
use ftimm::engine::{naive_gemm, run_auto, run_plan, run_tgemm, simulate, SimReport};
use ftimm::machine::{default_ftm7032, Level, MachineModel};
use ftimm::matrix::{Matrix, MatrixGenerator};
use ftimm::microkernel::{estimate_cycles, generate_schedule, select_tiling, theoretical_upper_bound, verify_schedule, Unit};
use ftimm::perf::{estimate_time, roofline, speedup_row};
use ftimm::tuner::{
    capacity_check, cmr_k_strategy, cmr_m_strategy, initial_blocks, BlockSizes, ExecutionPlan, MatrixShape, Strategy, Tuner,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, ok: bool, detail: &str) {
    println!("{} criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn shape(m: usize, n: usize, k: usize) -> MatrixShape {
    MatrixShape::new(m, n, k).unwrap()
}

/// Max of |c - o| / (1 + |o|).
fn rel_err(c: &Matrix, o: &Matrix) -> f64 {
    let mut w = 0f64;
    for i in 0..o.rows() {
        for (x, y) in c.row(i).iter().zip(o.row(i)) {
            w = w.max(((x - y).abs() / (1.0 + y.abs())) as f64);
        }
    }
    w
}

/// C0 + A x B in double precision.
fn exact(a: &Matrix, b: &Matrix, c0: &Matrix) -> Vec<f64> {
    let n = b.cols();
    let mut out = vec![0f64; c0.rows() * n];
    for i in 0..c0.rows() {
        let row = &mut out[i * n..(i + 1) * n];
        for (r, &x) in row.iter_mut().zip(c0.row(i)) {
            *r = x as f64;
        }
        for (k, &av) in a.row(i).iter().enumerate() {
            for (r, &bv) in row.iter_mut().zip(b.row(k)) {
                *r += av as f64 * bv as f64;
            }
        }
    }
    out
}

/// Same measure against a double-precision product, for diagnostics only.
fn rel_err_exact(c: &Matrix, e: &[f64]) -> f64 {
    let n = c.cols();
    let mut w = 0f64;
    for i in 0..c.rows() {
        for (x, &y) in c.row(i).iter().zip(&e[i * n..(i + 1) * n]) {
            w = w.max((*x as f64 - y).abs() / (1.0 + y.abs()));
        }
    }
    w
}

fn log_uniform(rng: &mut ChaCha8Rng, hi: usize) -> usize {
    let x: f64 = rng.random_range(0.0..=(hi as f64).ln());
    (x.exp().round() as usize).clamp(1, hi)
}

#[derive(Default)]
struct PathStats {
    worst: f64,
    worst_shape: Option<MatrixShape>,
    failures: usize,
    runs: usize,
    engine_exact: f64,
    naive_exact: f64,
}

impl PathStats {
    fn add(&mut self, s: MatrixShape, err: f64, tol: f64) {
        self.runs += 1;
        if err > tol {
            self.failures += 1;
        }
        if err > self.worst {
            self.worst = err;
            self.worst_shape = Some(s);
        }
    }
}

#[test]
fn criterion_1_oracle_equivalence() {
    let model = default_ftm7032();
    let mut tuner = Tuner::new(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20240101);
    let names = ["TGEMM", "FTIMM_M", "FTIMM_K", "auto"];
    let mut stats: Vec<PathStats> = names.iter().map(|_| PathStats::default()).collect();
    let mut busy = Duration::ZERO;

    let mut cases: Vec<(MatrixShape, f64)> = (0..200)
        .map(|_| {
            let (m, k) = (log_uniform(&mut rng, 4096), log_uniform(&mut rng, 4096));
            (shape(m, log_uniform(&mut rng, 96), k), 1e-5)
        })
        .collect();
    cases.push((shape(32, 32, 1 << 20), 1e-4));
    cases.push((shape(64, 16, 70_000), 1e-4));

    for (n, &(s, tol)) in cases.iter().enumerate() {
        let (a, b, c0) = MatrixGenerator::problem(1000 + n as u64, s.m, s.n, s.k);
        let t = Instant::now();
        let mut o = c0.clone();
        naive_gemm(&a, &b, &mut o).unwrap();
        let mut outs = Vec::new();
        let mut c = c0.clone();
        run_tgemm(&a, &b, &mut c, &model).unwrap();
        outs.push(c);
        for st in [Strategy::FtimmM, Strategy::FtimmK] {
            let plan = tuner.plan_for(&s, st).unwrap();
            let mut c = c0.clone();
            run_plan(&a, &b, &mut c, &plan, &model).unwrap();
            outs.push(c);
        }
        let mut c = c0.clone();
        run_auto(&a, &b, &mut c, &model).unwrap();
        outs.push(c);
        let errs: Vec<f64> = outs.iter().map(|c| rel_err(c, &o)).collect();
        busy += t.elapsed();

        // Untimed: distance from a double-precision product when a path misses.
        let reference = errs.iter().any(|&e| e > tol).then(|| exact(&a, &b, &c0));
        for (p, (c, &err)) in outs.iter().zip(&errs).enumerate() {
            stats[p].add(s, err, tol);
            if let (true, Some(e)) = (err > tol, &reference) {
                stats[p].engine_exact = stats[p].engine_exact.max(rel_err_exact(c, e));
                stats[p].naive_exact = stats[p].naive_exact.max(rel_err_exact(&o, e));
            }
        }
    }
    let elapsed = busy;

    let mut lines = Vec::new();
    for (name, st) in names.iter().zip(&stats) {
        lines.push(format!(
            "{name}: {}/{} over tolerance, worst {:.2e} at {}, vs f64 on failures engine {:.2e} naive {:.2e}",
            st.failures,
            st.runs,
            st.worst,
            st.worst_shape.map_or("-".into(), |s| s.to_string()),
            st.engine_exact,
            st.naive_exact
        ));
    }
    let ok = stats.iter().all(|s| s.failures == 0) && elapsed <= Duration::from_secs(300);
    report(1, ok, &format!("{} shapes in {:.1?}; {}", cases.len(), elapsed, lines.join("; ")));
    assert!(ok, "{}", lines.join("\n"));
}

#[test]
fn criterion_2_schedule_signatures() {
    let model = default_ftm7032();
    let mut notes = Vec::new();
    let mut ok = true;
    // (m_s, n_a, expected body length, filled FMAC slots, total FMAC slots, FMAC3 used)
    let cases = [(8, 96, 8, 24, 24, true), (6, 64, 8, 24, 24, true), (6, 32, 7, 12, 21, false)];
    for (m_s, n_a, len, filled, slots, fmac3) in cases {
        let spec = select_tiling(m_s, n_a, &model).unwrap();
        let s = generate_schedule(&spec, &model).unwrap();
        let e = estimate_cycles(&s, &spec, 1, &model);
        let issues = verify_schedule(&s, &spec, &model);
        let third = !s.busy_cycles(Unit::VectorFmac(3)).is_empty();
        let good = s.len() == len && e.fmac_filled == filled && e.fmac_slots == slots && third == fmac3 && issues.is_empty();
        if m_s == 8 {
            // Full-width panel: m_u cycles, every FMAC busy every cycle.
            ok &= s.len() == spec.m_u && e.fmac_efficiency == 1.0;
            for u in 1..=3 {
                ok &= s.busy_cycles(Unit::VectorFmac(u)).len() == s.len();
            }
        }
        ok &= good;
        notes.push(format!("m_s={m_s} n_a={n_a}: {} cycles, {}/{} FMAC, issues {}", s.len(), e.fmac_filled, e.fmac_slots, issues.len()));
    }
    report(2, ok, &notes.join("; "));
    assert!(ok, "{notes:?}");
}

#[test]
fn criterion_3_upper_bounds() {
    let model = default_ftm7032();
    let mut ok = (1..=32).all(|n| theoretical_upper_bound(n).unwrap() == 2.0 / 3.0)
        && (33..=96).all(|n| theoretical_upper_bound(n).unwrap() == 1.0);
    let mut worst_gap = f64::INFINITY;
    for m_s in 1..=16 {
        for n_a in (8..=96).step_by(8) {
            let spec = select_tiling(m_s, n_a, &model).unwrap();
            let s = generate_schedule(&spec, &model).unwrap();
            let eff = estimate_cycles(&s, &spec, 512, &model).fmac_efficiency;
            let gap = theoretical_upper_bound(n_a).unwrap() - eff;
            worst_gap = worst_gap.min(gap);
            ok &= gap >= 0.0;
        }
    }
    report(3, ok, &format!("bounds exact, smallest bound minus efficiency {worst_gap:.4}"));
    assert!(ok);
}

#[test]
fn criterion_4_capacity_exact_fit() {
    let model = default_ftm7032();
    let mut ok = true;
    let mut notes = Vec::new();
    for (st, b) in [(Strategy::FtimmM, BlockSizes::published_m()), (Strategy::FtimmK, BlockSizes::published_k())] {
        let r = capacity_check(st, &b, &model);
        ok &= r.feasible() && r.bytes(Level::Am) == 786_432 && model.capacity(Level::Am) == 786_432;
        ok &= r.bytes(Level::Sm) <= model.capacity(Level::Sm) && r.bytes(Level::Gsm) <= model.capacity(Level::Gsm);
        let bumped = capacity_check(st, &BlockSizes { k_a: b.k_a + 1, ..b }, &model);
        ok &= !bumped.feasible();
        notes.push(format!("{st}: AM {} SM {} GSM {}, k_a+1 feasible={}", r.bytes(Level::Am), r.bytes(Level::Sm), r.bytes(Level::Gsm), bumped.feasible()));
    }
    report(4, ok, &notes.join("; "));
    assert!(ok, "{notes:?}");
}

#[test]
fn criterion_5_search_dominance() {
    let model = default_ftm7032();
    let nc = model.num_cores;
    let t = Instant::now();
    let m = initial_blocks(Strategy::FtimmM, &model).unwrap();
    let k = initial_blocks(Strategy::FtimmK, &model).unwrap();
    let took = t.elapsed();
    let (f1, f2) = cmr_m_strategy(&m, nc);
    let (p1, p2) = cmr_m_strategy(&BlockSizes::published_m(), nc);
    let (f3, f4) = cmr_k_strategy(&k, nc);
    let (p3, p4) = cmr_k_strategy(&BlockSizes::published_k(), nc);
    let ok = capacity_check(Strategy::FtimmM, &m, &model).feasible()
        && capacity_check(Strategy::FtimmK, &k, &model).feasible()
        && f1 >= p1
        && f2 >= p2
        && f3 >= p3
        && f4 >= p4
        && took <= Duration::from_secs(10);
    report(
        5,
        ok,
        &format!("M ({f1:.3},{f2:.3}) vs ({p1:.3},{p2:.3}); K ({f3:.3},{f4:.3}) vs ({p3:.3},{p4:.3}); search {took:.2?}"),
    );
    assert!(ok);
}

fn b_a_bytes(shape: &MatrixShape, plan: &ExecutionPlan, model: &MachineModel) -> u64 {
    let r: SimReport = simulate(shape, plan, model).unwrap();
    r.events_with_step("B_a").filter(|e| e.dst == Level::Am).map(|e| e.bytes).sum()
}

#[test]
fn criterion_6_speedup_trend_and_padding() {
    let model = default_ftm7032();
    let mut tuner = Tuner::new(&model).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for s in [shape(1 << 16, 32, 32), shape(32, 32, 1 << 20), shape(20480, 32, 20480)] {
        let row = speedup_row(&s, &mut tuner).unwrap();
        ok &= row.strategy != Strategy::Tgemm && row.ftimm_time_s < row.tgemm_time_s;
        notes.push(format!("{s} {} {:.2}x", row.strategy, row.speedup));
    }

    // Functional check of the third regime at reduced size.
    let s = shape(4096, 32, 4096);
    let plan = tuner.adjust(&s).unwrap();
    let (a, b, c0) = MatrixGenerator::problem(6, s.m, s.n, s.k);
    let (mut c, mut o) = (c0.clone(), c0.clone());
    run_plan(&a, &b, &mut c, &plan, &model).unwrap();
    naive_gemm(&a, &b, &mut o).unwrap();
    let err = rel_err(&c, &o);
    ok &= err <= 1e-5;
    let reference = exact(&a, &b, &c0);
    notes.push(format!(
        "{s} {} max rel error {err:.2e} (tolerance 1e-5; vs f64 engine {:.2e} naive {:.2e})",
        plan.strategy,
        rel_err_exact(&c, &reference),
        rel_err_exact(&o, &reference)
    ));

    // TGEMM pads B to 96 columns in AM.
    let (t32, t96) = (shape(512, 32, 512), shape(512, 96, 512));
    let tg32 = b_a_bytes(&t32, &tuner.plan_for(&t32, Strategy::Tgemm).unwrap(), &model);
    let tg96 = b_a_bytes(&t96, &tuner.plan_for(&t96, Strategy::Tgemm).unwrap(), &model);
    ok &= tg32 == tg96;
    // ftIMM with the same loop counts but a 32-wide panel moves a third.
    let w96 = shape(1 << 16, 96, 32);
    let p96 = tuner.adjust(&w96).unwrap();
    let mut p32 = p96;
    p32.blocks.n_g = 32;
    p32.blocks.n_a = 32;
    p32.kernel = select_tiling(p32.blocks.m_s, 32, &model).unwrap();
    let f96 = b_a_bytes(&w96, &p96, &model);
    let f32_ = b_a_bytes(&shape(1 << 16, 32, 32), &p32, &model);
    let ratio = f96 as f64 / f32_ as f64;
    ok &= (ratio - 3.0).abs() < 0.05;
    notes.push(format!("TGEMM B_a {tg32} vs {tg96} bytes; ftIMM N=96/N=32 B_a ratio {ratio:.3}"));

    report(6, ok, &notes.join("; "));
    assert!(ok, "{notes:?}");
}

#[test]
fn criterion_7_roofline() {
    let model = default_ftm7032();
    let s = shape(1 << 16, 32, 32);
    let plan = Tuner::new(&model).unwrap().adjust(&s).unwrap();
    let t = estimate_time(&simulate(&s, &plan, &model).unwrap(), &model);
    let ceiling = roofline(&s, &model, model.num_cores);
    // Closed form: 2MNK / (4 (MK + KN + 2MN)) flops per byte times DDR bandwidth.
    let (m, n, k) = (s.m as f64, s.n as f64, s.k as f64);
    let expect = 2.0 * m * n * k / (4.0 * (m * k + k * n + 2.0 * m * n)) * model.latency.dma_ddr_bandwidth_gbps;
    let frac = t.gflops / ceiling;
    // Relative slack of 1e-9 absorbs rounding when the run hits the ceiling exactly.
    let ok = (ceiling - expect).abs() < 1e-9 * expect
        && (ceiling - 227.0).abs() < 1.0
        && t.gflops <= ceiling * (1.0 + 1e-9)
        && (0.3..=1.0 + 1e-9).contains(&frac);
    report(7, ok, &format!("{:.3} GFlops modeled, ceiling {ceiling:.3}, fraction {frac:.4}", t.gflops));
    assert!(ok);
}

#[test]
fn criterion_8_scaling() {
    let base = default_ftm7032();
    let s = shape(32, 32, 1 << 20);
    let mut bytes = Vec::new();
    for nc in 1..=8 {
        let model = base.clone().with_num_cores(nc);
        let plan = Tuner::new(&model).unwrap().plan_for(&s, Strategy::FtimmK).unwrap();
        bytes.push(simulate(&s, &plan, &model).unwrap().reduction_bytes);
    }
    let mut ok = bytes[0] == 0 && bytes[1] > 0;
    for (i, &b) in bytes.iter().enumerate() {
        ok &= b == i as u64 * bytes[1];
    }
    let mut notes = vec![format!("reduction bytes by cores {bytes:?}")];

    for s in [shape(1 << 16, 32, 32), shape(20480, 32, 20480)] {
        let mut times = Vec::new();
        for nc in 1..=8 {
            let model = base.clone().with_num_cores(nc);
            let plan = Tuner::new(&model).unwrap().plan_for(&s, Strategy::FtimmM).unwrap();
            if nc == 8 {
                ok &= s.m >= 8 * plan.blocks.m_a;
            }
            times.push(estimate_time(&simulate(&s, &plan, &model).unwrap(), &model).overlapped_time_s);
        }
        ok &= times.windows(2).all(|w| w[1] <= w[0]);
        notes.push(format!("{s} times {:?}", times.iter().map(|t| format!("{t:.3e}")).collect::<Vec<_>>()));
    }
    report(8, ok, &notes.join("; "));
    assert!(ok, "{notes:?}");
}

fn cli_out(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ftimm").chain(args.iter().copied()).map(std::ffi::OsString::from);
    let code = cli::run(argv, &mut out, &mut err);
    (code, out)
}

#[test]
fn criterion_9_determinism() {
    let run = ["--format", "csv", "--seed", "7", "run", "--m", "300", "--n", "24", "--k", "900", "--strategy", "ftimm-k"];
    let run_json = ["--format", "json", "--seed", "7", "run", "--m", "300", "--n", "24", "--k", "900"];
    let sweep = ["sweep", "--preset", "fig5d"];
    let first: Vec<(i32, Vec<u8>)> = [&run[..], &run_json[..], &sweep[..]].iter().map(|a| cli_out(a)).collect();
    let mut ok = first.iter().all(|(c, o)| *c == 0 && !o.is_empty());
    // Repeat sequentially and from several threads at once.
    for _ in 0..2 {
        for (a, f) in [&run[..], &run_json[..], &sweep[..]].iter().zip(&first) {
            ok &= cli_out(a) == *f;
        }
    }
    std::thread::scope(|sc| {
        let hs: Vec<_> = (0..4).map(|i| {
            let a: &[&str] = [&run[..], &run_json[..], &sweep[..]][i % 3];
            sc.spawn(move || (i % 3, cli_out(a)))
        }).collect();
        for h in hs {
            let (i, got) = h.join().unwrap();
            ok &= got == first[i];
        }
    });

    // Engine checksums, bit for bit.
    let model = default_ftm7032();
    let (a, b, c0) = MatrixGenerator::problem(7, 300, 24, 900);
    let sums: Vec<u64> = (0..3)
        .map(|_| {
            let mut c = c0.clone();
            run_auto(&a, &b, &mut c, &model).unwrap().result_checksum.unwrap().to_bits()
        })
        .collect();
    ok &= sums.windows(2).all(|w| w[0] == w[1]);
    report(9, ok, &format!("run/sweep output {} bytes identical across repeats and threads, checksum bits {:#x}", first[2].1.len(), sums[0]));
    assert!(ok);
}

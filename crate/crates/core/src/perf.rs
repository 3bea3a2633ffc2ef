//! Modeled wall-clock time of a trace, roofline ceilings and sweep tables.
//!
//! Times come from the recorded loop nest. A ping-pong level costs its first
//! load plus, per iteration, the larger of that iteration's body and the next
//! iteration's load. Everything else adds up serially, cores run side by side,
//! and no subtree finishes faster than its own DMA traffic allows: per-core
//! transfers share one channel per core, and all DDR traffic shares the DDR
//! bandwidth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{simulate, DmaEvent, Node, NodeKind, SimReport};
use crate::error::{Error, Result};
use crate::machine::{Level, MachineModel};
use crate::tuner::{tgemm_plan, ExecutionPlan, MatrixShape, Strategy, Tuner};

/// DMA seconds into one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDmaTime {
    pub per_core: Vec<f64>,
    /// Transfers issued once for all cores.
    pub shared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeEstimate {
    pub compute_cycles: Vec<u64>,
    /// Keyed by destination level.
    pub dma_time_s: BTreeMap<Level, LevelDmaTime>,
    /// Busiest core's compute alone.
    pub compute_time_s: f64,
    /// DMA alone: the busiest core's channel plus shared transfers, or all
    /// DDR traffic at full bandwidth, whichever is longer.
    pub dma_only_time_s: f64,
    pub overlapped_time_s: f64,
    pub gflops: f64,
    /// gflops over the peak of the cores that did work.
    pub efficiency: f64,
}

fn event_seconds(e: &DmaEvent, model: &MachineModel) -> f64 {
    let bw = if e.touches_ddr() { model.latency.dma_ddr_bandwidth_gbps } else { model.latency.dma_gsm_bandwidth_gbps };
    e.bytes as f64 / (bw * 1e9) + model.cycles_to_seconds(f64::from(model.latency.dma_startup_cycles))
}

struct Cost {
    time: f64,
    shared: f64,
    per_core: Vec<f64>,
    ddr_bytes: u64,
}

struct Eval<'a> {
    report: &'a SimReport,
    model: &'a MachineModel,
    event_s: Vec<f64>,
    kernel_s: Vec<f64>,
}

impl Eval<'_> {
    fn cost(&self, n: &Node) -> Cost {
        let nc = self.model.num_cores as usize;
        let mut c = Cost { time: 0.0, shared: 0.0, per_core: vec![0.0; nc], ddr_bytes: 0 };
        let add_event = |c: &mut Cost, id: u32| -> f64 {
            let e = &self.report.dma_events[id as usize];
            let s = self.event_s[id as usize];
            match e.core {
                Some(k) => c.per_core[k as usize] += s,
                None => c.shared += s,
            }
            if e.touches_ddr() {
                c.ddr_bytes += e.bytes;
            }
            s
        };
        let loads: f64 = n.load.iter().map(|&id| add_event(&mut c, id)).sum();
        let stores: f64 = n.store.iter().map(|&id| add_event(&mut c, id)).sum();

        // (load, body) per iteration.
        let mut items: Vec<(f64, f64)> = Vec::with_capacity(n.children.len() + n.leaves.len());
        let mut child_times = Vec::with_capacity(n.children.len());
        for ch in &n.children {
            let cc = self.cost(ch);
            let ld: f64 = ch.load.iter().map(|&id| self.event_s[id as usize]).sum();
            items.push((ld, cc.time - ld));
            child_times.push(cc.time);
            c.shared += cc.shared;
            for (a, b) in c.per_core.iter_mut().zip(&cc.per_core) {
                *a += b;
            }
            c.ddr_bytes += cc.ddr_bytes;
        }
        for leaf in &n.leaves {
            let ld = add_event(&mut c, leaf.load);
            items.push((ld, self.kernel_s[leaf.kernel as usize]));
        }

        let body = match n.kind {
            NodeKind::Seq => items.iter().map(|(l, b)| l + b).sum(),
            NodeKind::PingPong => match items.first() {
                None => 0.0,
                Some(&(first, _)) => first + (0..items.len()).map(|i| items[i].1.max(items.get(i + 1).map_or(0.0, |x| x.0))).sum::<f64>(),
            },
            NodeKind::Parallel => child_times.iter().copied().fold(0.0, f64::max),
        };
        let extra = self.model.cycles_to_seconds(n.extra_cycles as f64);
        let channel = c.shared + c.per_core.iter().copied().fold(0.0, f64::max);
        let ddr = c.ddr_bytes as f64 / (self.model.latency.dma_ddr_bandwidth_gbps * 1e9);
        c.time = (loads + body + extra + stores).max(channel).max(ddr);
        c
    }
}

/// Modeled time of a run on `model`.
pub fn estimate_time(report: &SimReport, model: &MachineModel) -> TimeEstimate {
    let event_s: Vec<f64> = report.dma_events.iter().map(|e| event_seconds(e, model)).collect();
    let kernel_s = report.kernels.iter().map(|k| model.cycles_to_seconds(k.cycles as f64)).collect();
    let eval = Eval { report, model, event_s, kernel_s };
    let root = eval.cost(&report.timeline);

    let nc = model.num_cores as usize;
    let mut dma_time_s: BTreeMap<Level, LevelDmaTime> = BTreeMap::new();
    for (e, s) in report.dma_events.iter().zip(&eval.event_s) {
        let slot = dma_time_s.entry(e.dst).or_insert_with(|| LevelDmaTime { per_core: vec![0.0; nc], shared: 0.0 });
        match e.core {
            Some(k) => slot.per_core[k as usize] += s,
            None => slot.shared += s,
        }
    }
    let compute_cycles = report.modeled_cycles.per_core.clone();
    let compute_time_s = model.cycles_to_seconds(report.modeled_cycles.critical_path as f64);
    let channel = root.shared + root.per_core.iter().copied().fold(0.0, f64::max);
    let dma_only_time_s = channel.max(root.ddr_bytes as f64 / (model.latency.dma_ddr_bandwidth_gbps * 1e9));
    let overlapped_time_s = root.time.max(compute_time_s);
    let gflops = report.shape.flops() / overlapped_time_s / 1e9;
    let active = report.active_cores.max(1);
    TimeEstimate {
        compute_cycles,
        dma_time_s,
        compute_time_s,
        dma_only_time_s,
        overlapped_time_s,
        gflops,
        efficiency: gflops / (f64::from(active) * model.peak_gflops_per_core()),
    }
}

/// FLOPs per byte when A and B are read once and C is read and written once.
pub fn arithmetic_intensity(shape: &MatrixShape) -> f64 {
    let (m, n, k) = (shape.m as f64, shape.n as f64, shape.k as f64);
    2.0 * m * n * k / (4.0 * (m * k + k * n + 2.0 * m * n))
}

/// Ceiling in GFlops: compute peak of `num_cores` or DDR bandwidth times
/// intensity.
pub fn roofline(shape: &MatrixShape, model: &MachineModel, num_cores: u32) -> f64 {
    let peak = f64::from(num_cores) * model.peak_gflops_per_core();
    peak.min(arithmetic_intensity(shape) * model.latency.dma_ddr_bandwidth_gbps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub shape: MatrixShape,
    pub strategy: Strategy,
    pub tgemm_time_s: f64,
    pub ftimm_time_s: f64,
    pub tgemm_gflops: f64,
    pub ftimm_gflops: f64,
    pub speedup: f64,
    pub roofline: f64,
    pub roofline_fraction: f64,
}

/// Models TGEMM and the tuned plan on each shape.
pub fn speedup_table(shapes: &[MatrixShape], model: &MachineModel) -> Result<Vec<SpeedupRow>> {
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("no shapes given".into()));
    }
    let mut tuner = Tuner::new(model)?;
    shapes.iter().map(|s| speedup_row(s, &mut tuner)).collect()
}

/// One row with the plan the tuner picks for the shape.
pub fn speedup_row(shape: &MatrixShape, tuner: &mut Tuner) -> Result<SpeedupRow> {
    let plan = tuner.adjust(shape)?;
    compare(shape, &plan, &tuner.model)
}

/// TGEMM against `plan` on `shape`.
pub fn compare(shape: &MatrixShape, plan: &ExecutionPlan, model: &MachineModel) -> Result<SpeedupRow> {
    let t = estimate_time(&simulate(shape, &tgemm_plan(shape, model)?, model)?, model);
    let f = estimate_time(&simulate(shape, plan, model)?, model);
    let ceiling = roofline(shape, model, model.num_cores);
    Ok(SpeedupRow {
        shape: *shape,
        strategy: plan.strategy,
        tgemm_time_s: t.overlapped_time_s,
        ftimm_time_s: f.overlapped_time_s,
        tgemm_gflops: t.gflops,
        ftimm_gflops: f.gflops,
        speedup: t.overlapped_time_s / f.overlapped_time_s,
        roofline: ceiling,
        roofline_fraction: f.gflops / ceiling,
    })
}

/// Named shape grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// M = 2^16, N and K small.
    Fig5a,
    /// K = 2^16, M and N small.
    Fig5b,
    /// M = K = 20480 over N.
    Fig5c,
    /// N = K = 32 over M.
    Fig5d,
    /// M = N = 32 over K.
    Fig5e,
    /// N = 32 over M = K.
    Fig5f,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::Fig5a, Preset::Fig5b, Preset::Fig5c, Preset::Fig5d, Preset::Fig5e, Preset::Fig5f];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig5a => "fig5a",
            Preset::Fig5b => "fig5b",
            Preset::Fig5c => "fig5c",
            Preset::Fig5d => "fig5d",
            Preset::Fig5e => "fig5e",
            Preset::Fig5f => "fig5f",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig5a" => Ok(Preset::Fig5a),
            "fig5b" => Ok(Preset::Fig5b),
            "fig5c" => Ok(Preset::Fig5c),
            "fig5d" | "fig5-suffix-4" | "4" => Ok(Preset::Fig5d),
            "fig5e" | "fig5-suffix-5" | "5" => Ok(Preset::Fig5e),
            "fig5f" | "fig5-suffix-6" | "6" => Ok(Preset::Fig5f),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s:?}"))),
        }
    }

    pub fn shapes(self) -> Vec<MatrixShape> {
        let sh = |m, n, k| MatrixShape { m, n, k };
        let small = [16, 32, 48, 64, 80, 96];
        match self {
            Preset::Fig5a => small.iter().flat_map(|&n| [32, 128, 512].map(|k| sh(1 << 16, n, k))).collect(),
            Preset::Fig5b => [16, 32, 64, 96].iter().flat_map(|&m| [16, 32, 64, 96].map(|n| sh(m, n, 1 << 16))).collect(),
            Preset::Fig5c => small.iter().map(|&n| sh(20480, n, 20480)).collect(),
            Preset::Fig5d => [16, 18, 20, 22].iter().map(|&e| sh(1 << e, 32, 32)).collect(),
            Preset::Fig5e => [16, 18, 20, 22].iter().map(|&e| sh(32, 32, 1 << e)).collect(),
            Preset::Fig5f => [4096, 8192, 12288, 16384, 20480].iter().map(|&x| sh(x, 32, x)).collect(),
        }
    }
}

pub const SWEEP_COLUMNS: [&str; 9] =
    ["M", "N", "K", "strategy", "tgemm_gflops_model", "ftimm_gflops_model", "speedup", "roofline", "roofline_fraction"];

/// Reads M,N,K rows; a header line is skipped if present.
pub fn read_shapes_csv(text: &str) -> Result<Vec<MatrixShape>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let nums: std::result::Result<Vec<usize>, _> = rec.iter().take(3).map(str::parse).collect();
        match nums {
            Ok(v) if v.len() == 3 => out.push(MatrixShape::new(v[0], v[1], v[2])?),
            _ if out.is_empty() && rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("m")) => {}
            _ => return Err(Error::InvalidArgument(format!("bad shape row {:?}", rec.iter().collect::<Vec<_>>()))),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no shapes in file".into()));
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SpeedupRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.shape.m.to_string(),
            r.shape.n.to_string(),
            r.shape.k.to_string(),
            r.strategy.to_string(),
            format!("{:.3}", r.tgemm_gflops),
            format!("{:.3}", r.ftimm_gflops),
            format!("{:.4}", r.speedup),
            format!("{:.3}", r.roofline),
            format!("{:.4}", r.roofline_fraction),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
}

/// Bar chart of both models per shape with the roofline as a tick.
pub fn sweep_svg(title: &str, rows: &[SpeedupRow]) -> String {
    let (w, h, pad) = (60.0 + 70.0 * rows.len() as f64, 320.0, 40.0);
    let top = rows.iter().flat_map(|r| [r.tgemm_gflops, r.ftimm_gflops, r.roofline]).fold(1.0, f64::max);
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="16" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - 10.0, h - pad);
    let _ = writeln!(s, r#"<text x="4" y="{}">{top:.0}</text>"#, pad);
    for (i, r) in rows.iter().enumerate() {
        let x = pad + 70.0 * i as f64;
        for (dx, v, color) in [(8.0, r.tgemm_gflops, "#999999"), (28.0, r.ftimm_gflops, "#2b6cb0")] {
            let _ = writeln!(s, r#"<rect x="{}" y="{:.1}" width="18" height="{:.1}" fill="{color}"/>"#, x + dx, y(v), h - pad - y(v));
        }
        let _ = writeln!(s, r##"<line x1="{}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="#c53030" stroke-width="2"/>"##, x + 4.0, y(r.roofline), x + 50.0, y(r.roofline));
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}x{}x{}</text>"#, x, h - pad + 14.0, r.shape.m, r.shape.n, r.shape.k);
    }
    let _ = writeln!(s, r##"<text x="{pad}" y="{}" fill="#999999">TGEMM</text><text x="{}" y="{}" fill="#2b6cb0">ftIMM</text><text x="{}" y="{}" fill="#c53030">roofline</text>"##, h - 8.0, pad + 60.0, h - 8.0, pad + 120.0, h - 8.0);
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_ftm7032;

    fn shape(m: usize, n: usize, k: usize) -> MatrixShape {
        MatrixShape::new(m, n, k).unwrap()
    }

    #[test]
    fn roofline_closed_forms() {
        let m = default_ftm7032();
        let one = roofline(&shape(1, 1, 1), &m, 8);
        assert!((one - 2.0 / 16.0 * 42.6).abs() < 1e-12);
        let tall = roofline(&shape(1 << 30, 32, 32), &m, 8);
        assert!((tall - 2048.0 / 384.0 * 42.6).abs() < 0.01, "{tall}");
        assert!(roofline(&shape(8192, 8192, 8192), &m, 8) <= 8.0 * 345.6 + 1e-9);
    }

    #[test]
    fn pingpong_hides_loads() {
        // With eight cores every N <= 96 shape is DDR bound; one core is not.
        let m = default_ftm7032().with_num_cores(1);
        let s = shape(4096, 96, 4096);
        let plan = Tuner::new(&m).unwrap().plan_for(&s, Strategy::FtimmM).unwrap();
        let t = estimate_time(&simulate(&s, &plan, &m).unwrap(), &m);
        assert!(t.overlapped_time_s >= t.compute_time_s && t.overlapped_time_s >= t.dma_only_time_s);
        assert!(t.overlapped_time_s <= 1.05 * t.compute_time_s, "{t:?}");
        assert!(t.efficiency > 0.0 && t.efficiency <= 1.0);
    }

    #[test]
    fn tall_case_is_ddr_bound() {
        let m = default_ftm7032();
        let s = shape(1 << 16, 32, 32);
        let plan = Tuner::new(&m).unwrap().adjust(&s).unwrap();
        let rep = simulate(&s, &plan, &m).unwrap();
        let t = estimate_time(&rep, &m);
        let ddr: u64 = rep.dma_events.iter().filter(|e| e.touches_ddr()).map(|e| e.bytes).sum();
        let bound = ddr as f64 / 42.6e9;
        assert!((t.overlapped_time_s - bound).abs() <= 0.1 * bound, "{} vs {bound}", t.overlapped_time_s);
    }

    #[test]
    fn tiny_run_positive() {
        let m = default_ftm7032();
        let s = shape(1, 1, 1);
        let t = estimate_time(&simulate(&s, &tgemm_plan(&s, &m).unwrap(), &m).unwrap(), &m);
        assert!(t.overlapped_time_s.is_finite() && t.overlapped_time_s > 0.0);
    }

    #[test]
    fn startup_cost_adds_time() {
        let m = default_ftm7032();
        let s = shape(512, 32, 512);
        let plan = tgemm_plan(&s, &m).unwrap();
        let rep = simulate(&s, &plan, &m).unwrap();
        let mut slow = m.clone();
        slow.latency.dma_startup_cycles = 1000;
        assert!(estimate_time(&rep, &slow).overlapped_time_s > estimate_time(&rep, &m).overlapped_time_s);
    }

    #[test]
    fn presets_and_csv() {
        assert_eq!(Preset::parse("fig5-suffix-5").unwrap(), Preset::Fig5e);
        assert!(Preset::parse("fig9").is_err());
        for p in Preset::ALL {
            assert!(!p.shapes().is_empty());
        }
        let shapes = read_shapes_csv("M,N,K\n64,32,64\n# note\n128, 16, 8\n").unwrap();
        assert_eq!(shapes, vec![shape(64, 32, 64), shape(128, 16, 8)]);
        assert!(read_shapes_csv("1,2\n").is_err());
        let rows = speedup_table(&shapes, &default_ftm7032()).unwrap();
        let text = sweep_csv(&rows).unwrap();
        assert!(text.starts_with("M,N,K,strategy,tgemm_gflops_model"));
        assert_eq!(text.lines().count(), 3);
        assert!(sweep_svg("t", &rows).contains("<rect"));
    }
}

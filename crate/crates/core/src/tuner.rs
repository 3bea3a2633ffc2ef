//! Block-size selection: computation-to-memory ratios, on-chip capacity
//! checks, the initial grid search and per-shape adjustment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{Level, MachineModel};
use crate::microkernel::{KernelCosts, MicroKernelSpec, MAX_N_A};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatrixShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl MatrixShape {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("shape {m}x{n}x{k} must be positive")));
        }
        Ok(MatrixShape { m, n, k })
    }

    pub fn flops(&self) -> f64 {
        2.0 * self.m as f64 * self.n as f64 * self.k as f64
    }
}

impl fmt::Display for MatrixShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M={} N={} K={}", self.m, self.n, self.k)
    }
}

/// Block sizes of every loop level. Fields a strategy does not block are set
/// to the loop extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSizes {
    pub m_g: usize,
    pub k_g: usize,
    pub n_g: usize,
    pub m_a: usize,
    pub k_a: usize,
    pub n_a: usize,
    pub m_s: usize,
}

impl BlockSizes {
    pub fn published_m() -> Self {
        BlockSizes { m_g: 320, k_g: 5888, n_g: 96, m_a: 320, k_a: 864, n_a: 96, m_s: 8 }
    }

    pub fn published_k() -> Self {
        BlockSizes { m_g: 1024, k_g: 512, n_g: 512, m_a: 1024, k_a: 512, n_a: 96, m_s: 14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "TGEMM")]
    Tgemm,
    #[serde(rename = "FTIMM_M")]
    FtimmM,
    #[serde(rename = "FTIMM_K")]
    FtimmK,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Tgemm => "TGEMM",
            Strategy::FtimmM => "FTIMM_M",
            Strategy::FtimmK => "FTIMM_K",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "tgemm" => Ok(Strategy::Tgemm),
            "ftimm-m" | "m" => Ok(Strategy::FtimmM),
            "ftimm-k" | "k" => Ok(Strategy::FtimmK),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub strategy: Strategy,
    pub blocks: BlockSizes,
    pub kernel: MicroKernelSpec,
    pub num_cores: u32,
}

/// (f1, f2): ratios of the GSM-level and AM-level loops of the M strategy.
pub fn cmr_m_strategy(b: &BlockSizes, num_core: u32) -> (f64, f64) {
    let nc = f64::from(num_core);
    let (ma, kg, ng, ka, na) = (b.m_a as f64, b.k_g as f64, b.n_g as f64, b.k_a as f64, b.n_a as f64);
    let f1 = 2.0 * ma * kg * ng * nc / (nc * ma * (kg + 2.0 * ng) + kg * ng);
    let f2 = 2.0 * ma * ka * na * nc / (nc * ma * (ka + 2.0 * na) + ka * na);
    (f1, f2)
}

/// (f3, f4) for the K strategy.
pub fn cmr_k_strategy(b: &BlockSizes, num_core: u32) -> (f64, f64) {
    let nc = f64::from(num_core);
    let (mg, ng, ma, ka, na) = (b.m_g as f64, b.n_g as f64, b.m_a as f64, b.k_a as f64, b.n_a as f64);
    let f3 = 2.0 * mg * ka * ng * nc / (nc * ka * (mg + ng) + 2.0 * mg * ng);
    let f4 = 2.0 * ma * ka * na * nc / (nc * ka * (ma + na) + 2.0 * ma * na);
    (f3, f4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelUsage {
    pub level: Level,
    pub bytes: u64,
    pub capacity: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    pub strategy: Strategy,
    pub usage: Vec<LevelUsage>,
    pub violations: Vec<String>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn bytes(&self, level: Level) -> u64 {
        self.usage.iter().find(|u| u.level == level).map_or(0, |u| u.bytes)
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for u in &self.usage {
            let pct = 100.0 * u.bytes as f64 / u.capacity as f64;
            writeln!(f, "{:<4} {:>9} / {:>9} bytes ({pct:5.1}%)", u.level.name(), u.bytes, u.capacity)?;
        }
        if self.feasible() {
            write!(f, "feasible")
        } else {
            write!(f, "infeasible: {}", self.violations.join("; "))
        }
    }
}

/// On-chip footprint of a strategy's buffers (double-buffered where the
/// algorithm ping-pongs) against the model's capacities.
pub fn capacity_check(strategy: Strategy, b: &BlockSizes, model: &MachineModel) -> FeasibilityReport {
    let w = 4u64;
    let u = |x: usize| x as u64;
    let (gsm, am, sm) = match strategy {
        Strategy::FtimmM => (
            2 * u(b.k_g) * u(b.n_g) * w,
            (u(b.m_a) * u(b.n_a) + 2 * u(b.k_a) * u(b.n_a)) * w,
            2 * u(b.m_s) * u(b.k_a) * w,
        ),
        Strategy::FtimmK => (
            u(b.m_g) * u(b.n_g) * w,
            (u(b.m_a) * u(b.n_a) + 2 * u(b.k_a) * u(b.n_a)) * w,
            2 * u(b.m_s) * u(b.k_a) * w,
        ),
        Strategy::Tgemm => (
            2 * u(b.m_g) * u(b.k_g) * w,
            (2 * u(b.k_g) * u(b.n_a) + u(b.m_g) * u(b.n_a)) * w,
            2 * u(b.m_s) * u(b.k_g) * w,
        ),
    };
    let mut violations = Vec::new();
    let usage: Vec<LevelUsage> = [(Level::Gsm, gsm), (Level::Am, am), (Level::Sm, sm)]
        .into_iter()
        .map(|(level, bytes)| {
            let capacity = model.capacity(level);
            if bytes > capacity {
                violations.push(format!("{level} needs {bytes} bytes, capacity {capacity}"));
            }
            LevelUsage { level, bytes, capacity }
        })
        .collect();
    let fields = [b.m_g, b.k_g, b.n_g, b.m_a, b.k_a, b.n_a, b.m_s];
    if fields.contains(&0) {
        violations.push("block sizes must be positive".into());
    }
    if b.n_a > MAX_N_A {
        violations.push(format!("n_a={} exceeds {MAX_N_A}", b.n_a));
    }
    if strategy != Strategy::Tgemm {
        if b.m_s > b.m_a {
            violations.push(format!("m_s={} exceeds m_a={}", b.m_s, b.m_a));
        }
        if b.n_a > b.n_g {
            violations.push(format!("n_a={} exceeds n_g={}", b.n_a, b.n_g));
        }
    }
    if strategy == Strategy::FtimmM && b.k_a > b.k_g {
        violations.push(format!("k_a={} exceeds k_g={}", b.k_a, b.k_g));
    }
    FeasibilityReport { strategy, usage, violations }
}

/// Smallest micro-kernel row count considered when the problem is tall enough.
pub const MIN_M_S: usize = 6;
/// Largest m_s tried; beyond it row unrolling is capped by registers anyway.
pub const MAX_M_S: usize = 16;
const STEP: usize = 32;

fn elems(model: &MachineModel, level: Level) -> usize {
    (model.capacity(level) / 4).min(usize::MAX as u64) as usize
}

fn round_down(x: usize, step: usize) -> usize {
    if x >= step {
        x / step * step
    } else {
        x
    }
}

/// Grid search for the strategy's starting blocks on `model`.
///
/// M strategy: maximize min(f1, f2), then k_g, then f1. K strategy has no k_g;
/// ties on min(f3, f4) go to larger f3, then larger k_a.
pub fn initial_blocks(strategy: Strategy, model: &MachineModel) -> Result<BlockSizes> {
    let mut costs = KernelCosts::new();
    initial_blocks_with(strategy, model, &mut costs)
}

fn initial_blocks_with(strategy: Strategy, model: &MachineModel, costs: &mut KernelCosts) -> Result<BlockSizes> {
    let v = model.v();
    let (gsm, am, sm) = (elems(model, Level::Gsm), elems(model, Level::Am), elems(model, Level::Sm));
    let nc = model.num_cores;
    let mut best: Option<((f64, f64, f64), BlockSizes)> = None;
    let mut consider = |key: (f64, f64, f64), b: BlockSizes| {
        if best.as_ref().is_none_or(|(k, _)| key > *k) {
            best = Some((key, b));
        }
    };
    let n_as: Vec<usize> = (1..).map(|i| i * v).take_while(|&n| n <= MAX_N_A).collect();
    for &n_a in &n_as {
        for k_a in (STEP..).step_by(STEP).take_while(|&k| 2 * MIN_M_S * k <= sm) {
            for m_a in (STEP..).step_by(STEP).take_while(|&m| m * n_a + 2 * k_a * n_a <= am) {
                match strategy {
                    Strategy::FtimmM => {
                        for n_g in (n_a..=MAX_N_A).step_by(v) {
                            let k_g = round_down(gsm / (2 * n_g), STEP);
                            if k_g < k_a {
                                continue;
                            }
                            let b = BlockSizes { m_g: m_a, k_g, n_g, m_a, k_a, n_a, m_s: MIN_M_S };
                            let (f1, f2) = cmr_m_strategy(&b, nc);
                            consider((f1.min(f2), k_g as f64, f1), b);
                        }
                    }
                    Strategy::FtimmK => {
                        for n_g in (n_a..).step_by(STEP).take_while(|&n| n * m_a <= gsm) {
                            let m_g = round_down(gsm / n_g, STEP);
                            if m_g < m_a {
                                continue;
                            }
                            let b = BlockSizes { m_g, k_g: k_a, n_g, m_a, k_a, n_a, m_s: MIN_M_S };
                            let (f3, f4) = cmr_k_strategy(&b, nc);
                            consider((f3.min(f4), f3, k_a as f64), b);
                        }
                    }
                    Strategy::Tgemm => {}
                }
            }
        }
    }
    if strategy == Strategy::Tgemm {
        return Ok(BlockSizes { m_g: 512, k_g: 512, n_g: MAX_N_A, m_a: 512, k_a: 512, n_a: MAX_N_A, m_s: MIN_M_S });
    }
    let (_, mut b) = best.ok_or_else(|| Error::InvalidModel("no feasible block sizes".into()))?;
    let hi = MAX_M_S.min(b.m_a).min(sm / (2 * b.k_a));
    b.m_s = choose_m_s(b.m_a, b.n_a, b.k_a, MIN_M_S.min(hi), hi, costs, model)?;
    Ok(b)
}

/// Row count per micro-kernel call with the lowest modeled cycles to cover
/// `rows` rows (tail call included); ties go to the larger m_s.
fn choose_m_s(rows: usize, n_a: usize, k_a: usize, lo: usize, hi: usize, costs: &mut KernelCosts, model: &MachineModel) -> Result<usize> {
    let mut best = (u64::MAX, lo.max(1));
    for m_s in lo.max(1)..=hi.max(1) {
        let full = (rows / m_s) as u64 * costs.cycles(m_s, n_a, k_a, model)?;
        let tail = match rows % m_s {
            0 => 0,
            r => costs.cycles(r, n_a, k_a, model)?,
        };
        if full + tail <= best.0 {
            best = (full + tail, m_s);
        }
    }
    Ok(best.1)
}

/// Thresholds that separate the strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustParams {
    /// M at or above which the M strategy is used (N permitting).
    pub m_threshold: usize,
    /// K at or above which small-M problems use the K strategy.
    pub k_threshold: usize,
}

/// Holds the starting blocks for a model and produces plans for shapes.
#[derive(Debug)]
pub struct Tuner {
    pub model: MachineModel,
    pub init_m: BlockSizes,
    pub init_k: BlockSizes,
    pub params: AdjustParams,
    costs: KernelCosts,
}

impl Tuner {
    pub fn new(model: &MachineModel) -> Result<Self> {
        let mut costs = KernelCosts::new();
        let init_m = initial_blocks_with(Strategy::FtimmM, model, &mut costs)?;
        let init_k = initial_blocks_with(Strategy::FtimmK, model, &mut costs)?;
        let params = AdjustParams {
            m_threshold: MIN_M_S * model.num_cores as usize * MIN_M_S,
            k_threshold: 4 * init_k.k_a,
        };
        Ok(Tuner { model: model.clone(), init_m, init_k, params, costs })
    }

    pub fn with_params(mut self, params: AdjustParams) -> Self {
        self.params = params;
        self
    }

    pub fn choose_strategy(&self, shape: &MatrixShape) -> Strategy {
        if shape.n <= self.init_m.n_a {
            if shape.m >= self.params.m_threshold {
                return Strategy::FtimmM;
            }
            if shape.k >= self.params.k_threshold {
                return Strategy::FtimmK;
            }
        }
        Strategy::Tgemm
    }

    pub fn adjust(&mut self, shape: &MatrixShape) -> Result<ExecutionPlan> {
        let s = self.choose_strategy(shape);
        self.plan_for(shape, s)
    }

    /// Plan for a given strategy with blocks clamped to the shape.
    pub fn plan_for(&mut self, shape: &MatrixShape, strategy: Strategy) -> Result<ExecutionPlan> {
        let blocks = match strategy {
            Strategy::Tgemm => tgemm_blocks(shape),
            Strategy::FtimmM => self.blocks_m(shape)?,
            Strategy::FtimmK => self.blocks_k(shape)?,
        };
        let report = capacity_check(strategy, &blocks, &self.model);
        if !report.feasible() {
            return Err(Error::PlanMismatch(format!("{strategy} blocks {blocks:?} for {shape}: {}", report.violations.join("; "))));
        }
        let kernel = self.costs.spec(blocks.m_s, blocks.n_a, &self.model)?;
        Ok(ExecutionPlan { strategy, blocks, kernel, num_cores: self.model.num_cores })
    }

    fn m_s_floor(&self, shape: &MatrixShape) -> usize {
        if shape.m >= MIN_M_S * self.model.num_cores as usize {
            MIN_M_S
        } else {
            1
        }
    }

    fn blocks_m(&mut self, shape: &MatrixShape) -> Result<BlockSizes> {
        let init = self.init_m;
        let nc = self.model.num_cores as usize;
        let (gsm, am, sm) = (elems(&self.model, Level::Gsm), elems(&self.model, Level::Am), elems(&self.model, Level::Sm));
        let n_g = init.n_g.min(shape.n);
        let n_a = init.n_a.min(n_g);
        let k_g = shape.k.min(round_down(gsm / (2 * n_g), STEP));
        let k_a = init.k_a.min(k_g);
        let m_a_max = (am - 2 * k_a * n_a) / n_a;
        let blocks = shape.m.div_ceil(m_a_max).div_ceil(nc) * nc;
        let m_a = shape.m.div_ceil(blocks);
        let hi = MAX_M_S.min(m_a).min(sm / (2 * k_a));
        let lo = self.m_s_floor(shape).min(hi);
        let m_s = choose_m_s(m_a, n_a, k_a, lo, hi, &mut self.costs, &self.model)?;
        Ok(BlockSizes { m_g: shape.m, k_g, n_g, m_a, k_a, n_a, m_s })
    }

    fn blocks_k(&mut self, shape: &MatrixShape) -> Result<BlockSizes> {
        let init = self.init_k;
        let nc = self.model.num_cores as usize;
        let (am, sm) = (elems(&self.model, Level::Am), elems(&self.model, Level::Sm));
        let n_g = init.n_g.min(shape.n);
        let n_a = init.n_a.min(n_g);
        let m_g = init.m_g.min(shape.m);
        let m_a = init.m_a.min(m_g);
        let hi = MAX_M_S.min(m_a).min(sm / (2 * init.k_a));
        let lo = self.m_s_floor(shape).min(hi);
        let m_s = choose_m_s(m_a, n_a, init.k_a, lo, hi, &mut self.costs, &self.model)?;
        // Grow the per-core depth toward K / cores within AM and SM.
        let cap = ((am - m_a * n_a) / (2 * n_a)).min(sm / (2 * m_s));
        let k_a = round_down(shape.k.div_ceil(nc).min(cap), STEP).max(1);
        Ok(BlockSizes { m_g, k_g: shape.k, n_g, m_a, k_a, n_a, m_s })
    }
}

/// The fixed TGEMM blocking, clamped to the shape. n_a and m_s stay at the
/// padded 96 x 6 kernel layout.
pub fn tgemm_blocks(shape: &MatrixShape) -> BlockSizes {
    let m_g = shape.m.min(512);
    let k_g = shape.k.min(512);
    BlockSizes { m_g, k_g, n_g: shape.n, m_a: m_g, k_a: k_g, n_a: MAX_N_A, m_s: MIN_M_S }
}

pub fn tgemm_plan(shape: &MatrixShape, model: &MachineModel) -> Result<ExecutionPlan> {
    let blocks = tgemm_blocks(shape);
    let kernel = crate::microkernel::select_tiling(blocks.m_s, blocks.n_a, model)?;
    Ok(ExecutionPlan { strategy: Strategy::Tgemm, blocks, kernel, num_cores: model.num_cores })
}

/// Strategy and blocks for `shape` under the default thresholds.
pub fn adjust(shape: &MatrixShape, model: &MachineModel) -> Result<ExecutionPlan> {
    Tuner::new(model)?.adjust(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_ftm7032;

    #[test]
    fn all_ones_ratios() {
        let b = BlockSizes { m_g: 1, k_g: 1, n_g: 1, m_a: 1, k_a: 1, n_a: 1, m_s: 1 };
        assert_eq!(cmr_m_strategy(&b, 1).0, 0.5);
        assert_eq!(cmr_k_strategy(&b, 1).0, 0.5);
    }

    #[test]
    fn published_values() {
        let (f1, f2) = cmr_m_strategy(&BlockSizes::published_m(), 8);
        assert!((f1 - 179.421).abs() < 1e-3, "{f1}");
        assert!((f2 - 152.415).abs() < 1e-3, "{f2}");
        let (f3, f4) = cmr_k_strategy(&BlockSizes::published_k(), 8);
        assert!((f3 - 585.143).abs() < 1e-3, "{f3}");
        assert!((f4 - 168.329).abs() < 1e-3, "{f4}");
    }

    #[test]
    fn exact_fit() {
        let m = default_ftm7032();
        let r = capacity_check(Strategy::FtimmM, &BlockSizes::published_m(), &m);
        assert!(r.feasible(), "{r}");
        assert_eq!(r.bytes(Level::Am), 786432);
        let r = capacity_check(Strategy::FtimmK, &BlockSizes::published_k(), &m);
        assert!(r.feasible(), "{r}");
        assert_eq!(r.bytes(Level::Am), 786432);
        let mut b = BlockSizes::published_m();
        b.k_a += 1;
        assert!(!capacity_check(Strategy::FtimmM, &b, &m).feasible());
    }

    #[test]
    fn strategy_names() {
        for s in [Strategy::Tgemm, Strategy::FtimmM, Strategy::FtimmK] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("ftimm-m".parse::<Strategy>().unwrap(), Strategy::FtimmM);
        assert!("x".parse::<Strategy>().is_err());
    }

    #[test]
    fn thresholds() {
        let t = Tuner::new(&default_ftm7032()).unwrap();
        assert_eq!(t.params.m_threshold, 288);
        assert_eq!(t.params.k_threshold, 4 * t.init_k.k_a);
    }
}

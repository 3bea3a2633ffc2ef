//! Micro-kernel tiling, VLIW schedule generation, verification and cycle
//! estimates.

mod estimate;
mod schedule;
mod verify;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use estimate::{estimate_cycles, CycleEstimate};
pub use schedule::{generate_schedule, Instruction, Op, Reg, Unit, UnitClass, VliwSchedule};
pub use verify::{verify_schedule, Issue, IssueKind};

use crate::error::{Error, Result};
use crate::machine::MachineModel;

/// Widest B_a panel a micro-kernel accepts.
pub const MAX_N_A: usize = 96;

/// Tiling of one micro-kernel call. The depth of a call is not part of the
/// spec; it comes from the tile shapes (or is passed to [`estimate_cycles`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MicroKernelSpec {
    pub m_s: usize,
    pub n_a: usize,
    pub m_u: usize,
    pub k_u: usize,
    pub v_n: usize,
}

/// Vector registers held live by an (m_u, k_u) tiling: accumulators,
/// broadcast A values and B vectors.
pub fn registers_needed(m_u: usize, k_u: usize, v_n: usize) -> usize {
    k_u * m_u * v_n + m_u * k_u + k_u * v_n
}

impl MicroKernelSpec {
    pub fn registers(&self) -> usize {
        registers_needed(self.m_u, self.k_u, self.v_n)
    }

    pub fn validate(&self, model: &MachineModel) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.m_s == 0 || self.m_u == 0 || self.k_u == 0 {
            return bad(format!("zero dimension in {self:?}"));
        }
        if self.n_a == 0 || self.n_a > MAX_N_A {
            return bad(format!("n_a={} outside 1..={MAX_N_A}", self.n_a));
        }
        if self.m_u > self.m_s {
            return bad(format!("m_u={} exceeds m_s={}", self.m_u, self.m_s));
        }
        if self.v_n != self.n_a.div_ceil(model.v()) {
            return bad(format!("v_n={} does not match n_a={}", self.v_n, self.n_a));
        }
        if self.registers() > model.core.register_budget() {
            return bad(format!(
                "needs {} vector registers, budget is {}",
                self.registers(),
                model.core.register_budget()
            ));
        }
        Ok(())
    }
}

/// Picks (m_u, k_u) for an m_s x n_a micro-kernel.
///
/// Wide panels with enough rows unroll rows only (k_u = 1). Otherwise rows are
/// unrolled as far as registers allow and k is unrolled just enough to cover
/// the FMAC latency, which needs k_u partial sums per output.
pub fn select_tiling(m_s: usize, n_a: usize, model: &MachineModel) -> Result<MicroKernelSpec> {
    if m_s == 0 {
        return Err(Error::InvalidArgument("m_s must be positive".into()));
    }
    if n_a == 0 || n_a > MAX_N_A {
        return Err(Error::InvalidArgument(format!("n_a={n_a} outside 1..={MAX_N_A}")));
    }
    let v_n = n_a.div_ceil(model.v());
    let budget = model.core.register_budget();
    let t_fma = model.latency.t_fma as usize;
    let fits = |m_u: usize, k_u: usize| registers_needed(m_u, k_u, v_n) <= budget;
    let spec = |m_u, k_u| MicroKernelSpec { m_s, n_a, m_u, k_u, v_n };

    if !fits(1, 1) {
        return Err(Error::InfeasibleTiling(format!(
            "m_s={m_s}, n_a={n_a}: even a 1x1 tiling exceeds {budget} registers"
        )));
    }
    let wide = v_n >= model.core.fmac_units_per_vpe as usize;
    if m_s >= t_fma && wide {
        if let Some(m_u) = (t_fma..=m_s).rev().find(|&m| fits(m, 1)) {
            return Ok(spec(m_u, 1));
        }
    }
    for m_u in (1..=m_s).rev() {
        let k_u = (2..).take_while(|&k| fits(m_u, k)).find(|&k| m_u * k >= t_fma);
        if let Some(k_u) = k_u {
            return Ok(spec(m_u, k_u));
        }
    }
    let m_u = (1..=m_s).rev().find(|&m| fits(m, 1)).unwrap_or(1);
    Ok(spec(m_u, 1))
}

/// Best FMAC utilisation any schedule can reach for a panel of width n_a.
pub fn theoretical_upper_bound(n_a: usize) -> Result<f64> {
    match n_a {
        1..=32 => Ok(2.0 / 3.0),
        33..=MAX_N_A => Ok(1.0),
        _ => Err(Error::InvalidArgument(format!("n_a={n_a} outside 1..={MAX_N_A}"))),
    }
}

/// Memoized kernel costs keyed by (m_s, n_a); used by the tuner and engine
/// where the same few kernels are costed many times.
#[derive(Debug, Default)]
pub struct KernelCosts {
    cache: HashMap<(usize, usize), (MicroKernelSpec, CycleEstimate)>,
}

impl KernelCosts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&mut self, m_s: usize, n_a: usize, model: &MachineModel) -> Result<(MicroKernelSpec, &CycleEstimate)> {
        let (spec, est) = match self.cache.entry((m_s, n_a)) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let spec = select_tiling(m_s, n_a, model)?;
                let sched = generate_schedule(&spec, model)?;
                let est = estimate_cycles(&sched, &spec, 1, model);
                e.insert((spec, est))
            }
        };
        Ok((*spec, est))
    }

    pub fn spec(&mut self, m_s: usize, n_a: usize, model: &MachineModel) -> Result<MicroKernelSpec> {
        Ok(self.entry(m_s, n_a, model)?.0)
    }

    /// Cycles of one call with depth k_a.
    pub fn cycles(&mut self, m_s: usize, n_a: usize, k_a: usize, model: &MachineModel) -> Result<u64> {
        Ok(self.entry(m_s, n_a, model)?.1.total_cycles_for(k_a))
    }
}

use serde::Serialize;

use super::schedule::{Op, Unit, VliwSchedule};
use super::MicroKernelSpec;
use crate::machine::MachineModel;

/// Cycle model of one micro-kernel call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleEstimate {
    pub loop_cycles: usize,
    pub fmac_filled: usize,
    pub fmac_slots: usize,
    /// `fmac_filled / fmac_slots`.
    pub fmac_efficiency: f64,
    /// Steady-state cycles for one k step over all m_s rows.
    pub cycles_per_k_iter: f64,
    pub row_groups: usize,
    pub k_u: usize,
    /// Per row group: C load, pipeline fill, drain, partial-sum reduction
    /// plus the add into C, and the C store.
    pub c_load_cycles: u64,
    pub prologue_cycles: u64,
    pub epilogue_cycles: u64,
    pub reduction_cycles: u64,
    pub c_store_cycles: u64,
    pub k_a: usize,
    pub total_cycles: u64,
}

impl CycleEstimate {
    /// Cycles of a call with depth `k_a` using the same schedule.
    pub fn total_cycles_for(&self, k_a: usize) -> u64 {
        let steps = k_a.div_ceil(self.k_u) as u64;
        let per_group = self.c_load_cycles
            + self.prologue_cycles
            + steps * self.loop_cycles as u64
            + self.epilogue_cycles
            + self.reduction_cycles
            + self.c_store_cycles;
        self.row_groups as u64 * per_group
    }

    /// Filled FMAC slots over all FMAC slots of the whole call.
    pub fn call_efficiency(&self, m_s: usize, n_a_vectors: usize, k_a: usize, fmac_units: usize) -> f64 {
        let useful = (m_s * n_a_vectors * k_a) as f64;
        useful / (self.total_cycles_for(k_a) as f64 * fmac_units as f64)
    }
}

pub fn estimate_cycles(sched: &VliwSchedule, spec: &MicroKernelSpec, k_a: usize, model: &MachineModel) -> CycleEstimate {
    let l = sched.len();
    let fmac_units = sched.units.iter().filter(|u| matches!(u, Unit::VectorFmac(_))).count();
    let fmac_filled = sched.count(Op::Vfmulas32);
    let fmac_slots = fmac_units * l;
    let row_groups = spec.m_s.div_ceil(spec.m_u);

    let vb = model.core.vector_bytes();
    let vec_per_cycle = (model.core.vector_load_bytes_per_cycle as usize / vb).clamp(1, 4);
    let c_vectors = spec.m_u * spec.v_n;
    let c_moves = c_vectors.div_ceil(vec_per_cycle) as u64;
    let t_fma = model.latency.t_fma as u64;
    // k_u - 1 partial-sum adds plus the add into C, each a dependent chain.
    let adds = (spec.k_u * c_vectors).div_ceil(fmac_units.max(1)) as u64;
    let reduction_cycles = adds.max(spec.k_u as u64 * t_fma);

    let mut est = CycleEstimate {
        loop_cycles: l,
        fmac_filled,
        fmac_slots,
        fmac_efficiency: if fmac_slots == 0 { 0.0 } else { fmac_filled as f64 / fmac_slots as f64 },
        cycles_per_k_iter: (row_groups * l) as f64 / spec.k_u as f64,
        row_groups,
        k_u: spec.k_u,
        c_load_cycles: c_moves + model.latency.t_vldw as u64,
        prologue_cycles: sched.prologue_cycles as u64,
        epilogue_cycles: sched.epilogue_cycles as u64,
        reduction_cycles,
        c_store_cycles: c_moves,
        k_a,
        total_cycles: 0,
    };
    est.total_cycles = est.total_cycles_for(k_a);
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_ftm7032;
    use crate::microkernel::{generate_schedule, select_tiling};

    fn est(m_s: usize, n_a: usize, k_a: usize) -> CycleEstimate {
        let m = default_ftm7032();
        let spec = select_tiling(m_s, n_a, &m).unwrap();
        estimate_cycles(&generate_schedule(&spec, &m).unwrap(), &spec, k_a, &m)
    }

    #[test]
    fn efficiencies() {
        let e = est(6, 96, 512);
        assert_eq!((e.fmac_filled, e.fmac_slots), (18, 18));
        let e = est(6, 64, 512);
        assert_eq!((e.fmac_filled, e.fmac_slots), (24, 24));
        let e = est(6, 32, 512);
        assert_eq!((e.fmac_filled, e.fmac_slots), (12, 21));
        assert_eq!(e.fmac_efficiency, 12.0 / 21.0);
    }

    #[test]
    fn totals_grow_with_depth() {
        let e = est(6, 96, 512);
        assert_eq!(e.cycles_per_k_iter, 6.0);
        assert!(e.total_cycles_for(513) > e.total_cycles_for(512));
        assert_eq!(e.total_cycles_for(1024) - e.total_cycles_for(512), 512 * 6);
        // Steady state dominates a deep call.
        let useful = 512 * 6;
        assert!((e.total_cycles as f64) < useful as f64 * 1.05);
        let e2 = est(6, 64, 512);
        assert!(e2.reduction_cycles >= 12);
        assert_eq!(e2.total_cycles_for(511), e2.total_cycles_for(512));
    }
}

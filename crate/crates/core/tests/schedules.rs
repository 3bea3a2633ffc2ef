use ftimm::machine::{default_ftm7032, MachineModel};
use ftimm::microkernel::{
    estimate_cycles, generate_schedule, select_tiling, theoretical_upper_bound, verify_schedule, Op, Unit,
};
use proptest::prelude::*;

#[test]
fn whole_grid_verifies_and_respects_bound() {
    let m = default_ftm7032();
    for m_s in 1..=16 {
        for n_a in (8..=96).step_by(8) {
            let spec = select_tiling(m_s, n_a, &m).unwrap();
            assert!(spec.registers() <= m.core.register_budget());
            let s = generate_schedule(&spec, &m).unwrap();
            let issues = verify_schedule(&s, &spec, &m);
            assert!(issues.is_empty(), "m_s={m_s} n_a={n_a}: {issues:?}");
            let e = estimate_cycles(&s, &spec, 512, &m);
            assert!(e.fmac_efficiency <= theoretical_upper_bound(n_a).unwrap() + 1e-12);
            assert!(e.fmac_efficiency > 0.0);
            assert_eq!(s.count(Op::Vfmulas32), spec.m_u * spec.k_u * spec.v_n);
        }
    }
}

#[test]
fn narrow_panels_never_touch_third_unit() {
    let m = default_ftm7032();
    for m_s in 1..=16 {
        for n_a in 1..=32 {
            let spec = select_tiling(m_s, n_a, &m).unwrap();
            let s = generate_schedule(&spec, &m).unwrap();
            assert!(s.busy_cycles(Unit::VectorFmac(3)).is_empty());
        }
    }
}

fn model_with(t_fma: u32, t_vldw: u32, t_sbr: u32) -> MachineModel {
    let mut m = default_ftm7032();
    m.latency.t_fma = t_fma;
    m.latency.t_vldw = t_vldw;
    m.latency.t_sbr = t_sbr;
    m
}

proptest! {
    #[test]
    fn latencies_change_placement_not_legality(
        m_s in 1usize..=16,
        n_a in 1usize..=96,
        t_fma in 1u32..=10,
        t_vldw in 1u32..=8,
        t_sbr in 1u32..=8,
    ) {
        let m = model_with(t_fma, t_vldw, t_sbr);
        let spec = select_tiling(m_s, n_a, &m).unwrap();
        let s = generate_schedule(&spec, &m).unwrap();
        prop_assert!(verify_schedule(&s, &spec, &m).is_empty());
        prop_assert!(s.len() >= t_fma as usize);
        prop_assert_eq!(&s, &generate_schedule(&spec, &m).unwrap());
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::schedule::{Op, Reg, Unit, UnitClass, VliwSchedule};
use super::MicroKernelSpec;
use crate::machine::MachineModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    UnitCapability,
    DuplicateUnit,
    IssueWidth,
    BroadcastThroughput,
    VectorLoadBandwidth,
    AccumulatorHazard,
    OperandDependency,
    BranchPlacement,
    LoopControl,
    RegisterBudget,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub kind: IssueKind,
    /// 1-based cycle, when the issue is tied to one.
    pub cycle: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cycle {
            Some(c) => write!(f, "cycle {c}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Structural checks of a loop body against the machine's issue, throughput
/// and latency rules. An empty result means the body is legal.
pub fn verify_schedule(sched: &VliwSchedule, spec: &MicroKernelSpec, model: &MachineModel) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |kind, cycle, message: String| issues.push(Issue { kind, cycle, message });
    let core = &model.core;
    let l = sched.len() as i64;
    if l == 0 {
        push(IssueKind::Coverage, None, "empty loop body".into());
        return issues;
    }

    let distinct: BTreeSet<Unit> = sched.units.iter().copied().collect();
    if distinct.len() != sched.units.len() {
        push(IssueKind::DuplicateUnit, None, "unit listed more than once".into());
    }

    for (c, row) in sched.steady_state.iter().enumerate() {
        let cycle = Some(c + 1);
        let placed: Vec<_> = row.iter().zip(&sched.units).filter_map(|(s, &u)| s.as_ref().map(|i| (u, i))).collect();
        for (u, i) in &placed {
            if !i.op.runs_on(*u) {
                push(IssueKind::UnitCapability, cycle, format!("{} cannot issue on {u}", i.op));
            }
        }
        for (class, width, name) in [
            (UnitClass::Scalar, core.scalar_issue_width, "scalar"),
            (UnitClass::Vector, core.vector_issue_width, "vector"),
        ] {
            let n = placed.iter().filter(|(u, _)| u.class() == class).count();
            if n > width as usize {
                push(IssueKind::IssueWidth, cycle, format!("{n} {name} instructions exceed issue width {width}"));
            }
        }
        let bcast: u32 = placed.iter().map(|(_, i)| i.op.broadcast_width()).sum();
        if bcast > core.broadcast_fp32_per_cycle {
            push(
                IssueKind::BroadcastThroughput,
                cycle,
                format!("broadcast throughput exceeded: {bcast} FP32 > {}", core.broadcast_fp32_per_cycle),
            );
        }
        let bytes: usize = placed.iter().map(|(_, i)| i.op.vector_loads() * core.vector_bytes()).sum();
        if bytes > core.vector_load_bytes_per_cycle as usize {
            push(
                IssueKind::VectorLoadBandwidth,
                cycle,
                format!("vector load bandwidth exceeded: {bytes} bytes > {}", core.vector_load_bytes_per_cycle),
            );
        }
    }

    // Producers of every register, as (offset, latency, op).
    let mut producers: BTreeMap<Reg, Vec<(i64, i64, Op)>> = BTreeMap::new();
    let mut acc_writes: BTreeMap<Reg, Vec<usize>> = BTreeMap::new();
    for (c, _, i) in sched.instructions() {
        let off = sched.offset(c, i);
        for &d in &i.dst {
            if matches!(d, Reg::Acc { .. }) {
                acc_writes.entry(d).or_default().push(c);
            } else {
                producers.entry(d).or_default().push((off, i.op.latency(model), i.op));
            }
        }
    }

    for (c, _, i) in sched.instructions() {
        let off = sched.offset(c, i);
        for &s in &i.src {
            if matches!(s, Reg::Acc { .. }) {
                continue;
            }
            let Some(ps) = producers.get(&s) else {
                push(IssueKind::OperandDependency, Some(c), format!("{} reads {s} which nothing produces", i.op));
                continue;
            };
            if ps.len() > 1 {
                push(IssueKind::OperandDependency, Some(c), format!("{s} written {} times per body", ps.len()));
                continue;
            }
            let (p_off, lat, p_op) = ps[0];
            let ok_kind = match s {
                Reg::Scalar(_) => matches!(p_op, Op::Sldh | Op::Sldw),
                Reg::Lo(_) => p_op == Op::Sfexts32l,
                Reg::Hi(_) => p_op == Op::Sbale2h,
                Reg::A { .. } => matches!(p_op, Op::Svbcast | Op::Svbcast2),
                Reg::B { .. } => matches!(p_op, Op::Vldw | Op::Vlddw),
                Reg::Acc { .. } => true,
            };
            if !ok_kind {
                push(IssueKind::OperandDependency, Some(c), format!("{s} produced by unexpected {p_op}"));
            }
            let slack = off - (p_off + lat);
            if slack < 0 {
                push(IssueKind::OperandDependency, Some(c), format!("{} reads {s} {} cycles before it is ready", i.op, -slack));
            } else if slack >= l {
                push(IssueKind::OperandDependency, Some(c), format!("{s} is overwritten before {} reads it", i.op));
            }
        }
    }

    let t_fma = model.latency.t_fma as usize;
    for (reg, cycles) in &mut acc_writes {
        cycles.sort_unstable();
        let mut gaps: Vec<(usize, usize)> = cycles.windows(2).map(|w| (w[1] - w[0], w[1])).collect();
        gaps.push((cycles[0] + sched.len() - cycles[cycles.len() - 1], cycles[0]));
        for (gap, at) in gaps {
            if gap < t_fma {
                push(
                    IssueKind::AccumulatorHazard,
                    Some(at),
                    format!("accumulator reuse hazard on {reg}: distance {gap} < t_fma={t_fma}"),
                );
            }
        }
    }

    for ku in 0..spec.k_u {
        for mu in 0..spec.m_u {
            for nn in 0..spec.v_n {
                let r = Reg::Acc { ku: ku as u16, mu: mu as u16, nn: nn as u16 };
                let n = acc_writes.get(&r).map_or(0, Vec::len);
                if n != 1 {
                    push(IssueKind::Coverage, None, format!("{r} updated {n} times per body, expected 1"));
                }
            }
        }
    }
    let expected = spec.m_u * spec.k_u * spec.v_n;
    let fmacs = sched.count(Op::Vfmulas32);
    if fmacs != expected {
        push(IssueKind::Coverage, None, format!("{fmacs} VFMULAS32 per body, expected {expected}"));
    }

    let branches: Vec<usize> = sched.instructions().filter(|(_, _, i)| i.op == Op::Sbr).map(|(c, _, _)| c).collect();
    let want = l - model.latency.t_sbr as i64 + 1;
    match branches.as_slice() {
        [c] if *c as i64 == want => {}
        [c] => push(IssueKind::BranchPlacement, Some(*c), format!("SBR must issue at cycle {want} to close the body")),
        other => push(IssueKind::BranchPlacement, None, format!("{} SBR per body, expected 1", other.len())),
    }

    if let Some(u) = sched.unit_index(Unit::Sieu) {
        if sched.steady_state.iter().all(|row| row[u].is_some()) {
            push(IssueKind::LoopControl, None, "no free SIEU slot for loop control".into());
        }
    } else {
        push(IssueKind::LoopControl, None, "schedule has no SIEU unit".into());
    }

    let vregs: BTreeSet<Reg> = sched
        .instructions()
        .flat_map(|(_, _, i)| i.dst.iter().chain(&i.src).copied())
        .filter(|r| r.is_vector())
        .collect();
    let budget = core.register_budget();
    if vregs.len() > budget {
        push(IssueKind::RegisterBudget, None, format!("{} vector registers live, budget {budget}", vregs.len()));
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_ftm7032;
    use crate::microkernel::{generate_schedule, select_tiling};

    fn table_one() -> (VliwSchedule, MicroKernelSpec, MachineModel) {
        let m = default_ftm7032();
        let spec = select_tiling(6, 96, &m).unwrap();
        (generate_schedule(&spec, &m).unwrap(), spec, m)
    }

    #[test]
    fn generated_is_clean() {
        let (s, spec, m) = table_one();
        assert!(verify_schedule(&s, &spec, &m).is_empty());
    }

    #[test]
    fn double_broadcast_overflow() {
        let m = default_ftm7032();
        let spec = select_tiling(6, 64, &m).unwrap();
        let mut s = generate_schedule(&spec, &m).unwrap();
        let f1 = s.unit_index(Unit::ScalarFmac1).unwrap();
        let f2 = s.unit_index(Unit::ScalarFmac2).unwrap();
        let row = s.steady_state.iter().position(|r| r[f2].as_ref().is_some_and(|i| i.op == Op::Svbcast2)).unwrap();
        let copy = s.steady_state[row][f2].clone();
        s.steady_state[row][f1] = copy;
        let issues = verify_schedule(&s, &spec, &m);
        assert!(issues.iter().any(|i| i.message.contains("broadcast throughput exceeded")));
    }

    #[test]
    fn back_to_back_accumulator() {
        let (mut s, spec, m) = table_one();
        let f = s.unit_index(Unit::VectorFmac(1)).unwrap();
        let first = s.steady_state[0][f].clone().unwrap();
        let next = s.steady_state[1][f].as_mut().unwrap();
        next.dst = first.dst.clone();
        next.src[2] = first.dst[0];
        let issues = verify_schedule(&s, &spec, &m);
        assert!(issues.iter().any(|i| i.kind == IssueKind::AccumulatorHazard && i.message.contains("accumulator reuse hazard")));
    }

    #[test]
    fn misplaced_load_and_branch() {
        let (mut s, spec, m) = table_one();
        let ls = s.unit_index(Unit::VectorLs1).unwrap();
        let row = s.steady_state.iter().position(|r| r[ls].is_some()).unwrap();
        let ins = s.steady_state[row][ls].take();
        s.steady_state[row + 1][ls] = ins;
        let ctl = s.unit_index(Unit::Control).unwrap();
        let br = s.steady_state.iter().position(|r| r[ctl].is_some()).unwrap();
        let ins = s.steady_state[br][ctl].take();
        s.steady_state[0][ctl] = ins;
        let issues = verify_schedule(&s, &spec, &m);
        assert!(issues.iter().any(|i| i.kind == IssueKind::OperandDependency));
        assert!(issues.iter().any(|i| i.kind == IssueKind::BranchPlacement));
    }

    #[test]
    fn wrong_unit_and_budget() {
        let (mut s, spec, m) = table_one();
        let ls = s.unit_index(Unit::ScalarLs1).unwrap();
        let fm = s.unit_index(Unit::VectorFmac(3)).unwrap();
        s.steady_state[0].swap(ls, fm);
        let issues = verify_schedule(&s, &spec, &m);
        assert!(issues.iter().any(|i| i.kind == IssueKind::UnitCapability));
        let mut small = m.clone();
        small.core.vector_registers_per_vpe = 20;
        assert!(verify_schedule(&s, &spec, &small).iter().any(|i| i.kind == IssueKind::RegisterBudget));
    }
}

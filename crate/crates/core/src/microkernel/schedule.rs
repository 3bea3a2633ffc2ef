use std::fmt;

use serde::Serialize;

use super::MicroKernelSpec;
use crate::error::{Error, Result};
use crate::machine::MachineModel;

/// Issue slots of one core. `VectorFmac(i)` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Unit {
    ScalarLs1,
    ScalarFmac1,
    ScalarFmac2,
    Sieu,
    VectorLs1,
    VectorLs2,
    VectorFmac(u8),
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitClass {
    Scalar,
    Vector,
}

impl Unit {
    pub fn class(self) -> UnitClass {
        match self {
            Unit::ScalarLs1 | Unit::ScalarFmac1 | Unit::ScalarFmac2 | Unit::Sieu | Unit::Control => UnitClass::Scalar,
            Unit::VectorLs1 | Unit::VectorLs2 | Unit::VectorFmac(_) => UnitClass::Vector,
        }
    }

    /// Units of a core with `fmac_units` vector FMAC pipelines, in table order.
    pub fn all(fmac_units: usize) -> Vec<Unit> {
        let mut u = vec![Unit::ScalarLs1, Unit::ScalarFmac1, Unit::ScalarFmac2, Unit::Sieu, Unit::VectorLs1, Unit::VectorLs2];
        u.extend((1..=fmac_units).map(|i| Unit::VectorFmac(i as u8)));
        u.push(Unit::Control);
        u
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::ScalarLs1 => f.write_str("ScalarLS1"),
            Unit::ScalarFmac1 => f.write_str("ScalarFMAC1"),
            Unit::ScalarFmac2 => f.write_str("ScalarFMAC2"),
            Unit::Sieu => f.write_str("SIEU"),
            Unit::VectorLs1 => f.write_str("VectorLS1"),
            Unit::VectorLs2 => f.write_str("VectorLS2"),
            Unit::VectorFmac(i) => write!(f, "VectorFMAC{i}"),
            Unit::Control => f.write_str("Control"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    Sldh,
    Sldw,
    Sfexts32l,
    Sbale2h,
    Svbcast,
    Svbcast2,
    Vldw,
    Vlddw,
    Vfmulas32,
    Sbr,
    Nop,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Sldh => "SLDH",
            Op::Sldw => "SLDW",
            Op::Sfexts32l => "SFEXTS32L",
            Op::Sbale2h => "SBALE2H",
            Op::Svbcast => "SVBCAST",
            Op::Svbcast2 => "SVBCAST2",
            Op::Vldw => "VLDW",
            Op::Vlddw => "VLDDW",
            Op::Vfmulas32 => "VFMULAS32",
            Op::Sbr => "SBR",
            Op::Nop => "NOP",
        }
    }

    pub fn runs_on(self, unit: Unit) -> bool {
        match self {
            Op::Sldh | Op::Sldw => unit == Unit::ScalarLs1,
            Op::Sfexts32l => unit == Unit::ScalarFmac1,
            Op::Svbcast | Op::Svbcast2 => matches!(unit, Unit::ScalarFmac1 | Unit::ScalarFmac2),
            Op::Sbale2h => unit == Unit::Sieu,
            Op::Vldw | Op::Vlddw => matches!(unit, Unit::VectorLs1 | Unit::VectorLs2),
            Op::Vfmulas32 => matches!(unit, Unit::VectorFmac(_)),
            Op::Sbr => unit == Unit::Control,
            Op::Nop => true,
        }
    }

    /// Cycles from issue until the result can be read.
    pub fn latency(self, model: &MachineModel) -> i64 {
        match self {
            Op::Vldw | Op::Vlddw => model.latency.t_vldw as i64,
            Op::Vfmulas32 => model.latency.t_fma as i64,
            Op::Sbr => model.latency.t_sbr as i64,
            Op::Nop => 0,
            _ => SCALAR_LATENCY,
        }
    }

    /// FP32 scalars broadcast to the vector side.
    pub fn broadcast_width(self) -> u32 {
        match self {
            Op::Svbcast => 1,
            Op::Svbcast2 => 2,
            _ => 0,
        }
    }

    pub fn vector_loads(self) -> usize {
        match self {
            Op::Vldw => 1,
            Op::Vlddw => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar-side ops (loads, extracts, broadcasts) are modeled as single-cycle.
pub const SCALAR_LATENCY: i64 = 1;

/// Abstract registers. Indices are the (mu, ku, nn) coordinates served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Reg {
    /// Raw 64-bit scalar load feeding broadcast chain `g`.
    Scalar(u16),
    Lo(u16),
    Hi(u16),
    A { mu: u16, ku: u16 },
    B { ku: u16, nn: u16 },
    Acc { ku: u16, mu: u16, nn: u16 },
}

impl Reg {
    pub fn is_vector(self) -> bool {
        matches!(self, Reg::A { .. } | Reg::B { .. } | Reg::Acc { .. })
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Reg::Scalar(g) => write!(f, "R{g}"),
            Reg::Lo(g) => write!(f, "R{g}.lo"),
            Reg::Hi(g) => write!(f, "R{g}.hi"),
            Reg::A { mu, ku } => write!(f, "VA[{mu}][{ku}]"),
            Reg::B { ku, nn } => write!(f, "VB[{ku}][{nn}]"),
            Reg::Acc { ku, mu, nn } => write!(f, "VC[{ku}][{mu}][{nn}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Instruction {
    pub op: Op,
    pub dst: Vec<Reg>,
    pub src: Vec<Reg>,
    /// How many loop iterations ahead of the FMACs this instruction works.
    pub lead: u32,
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op)?;
        if let Some(d) = self.dst.first() {
            write!(f, " {d}")?;
            if self.dst.len() > 1 {
                write!(f, "+{}", self.dst.len() - 1)?;
            }
        }
        Ok(())
    }
}

/// Steady-state loop body of a software-pipelined micro-kernel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct VliwSchedule {
    pub units: Vec<Unit>,
    /// `steady_state[cycle][unit]`, cycles 0-based here and 1-based in output.
    pub steady_state: Vec<Vec<Option<Instruction>>>,
    pub prologue_cycles: usize,
    pub epilogue_cycles: usize,
    /// (mu, ku) pairs retired per body.
    pub iterations_covered: usize,
}

impl VliwSchedule {
    pub fn len(&self) -> usize {
        self.steady_state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steady_state.is_empty()
    }

    pub fn unit_index(&self, unit: Unit) -> Option<usize> {
        self.units.iter().position(|&u| u == unit)
    }

    /// Instruction at a 1-based cycle.
    pub fn cell(&self, cycle: usize, unit: Unit) -> Option<&Instruction> {
        let u = self.unit_index(unit)?;
        self.steady_state.get(cycle.checked_sub(1)?)?.get(u)?.as_ref()
    }

    /// Every placed instruction with its 1-based cycle and unit.
    pub fn instructions(&self) -> impl Iterator<Item = (usize, Unit, &Instruction)> {
        self.steady_state.iter().enumerate().flat_map(move |(c, row)| {
            row.iter()
                .zip(&self.units)
                .filter_map(move |(slot, &u)| slot.as_ref().map(|i| (c + 1, u, i)))
        })
    }

    /// Issue time relative to the start of the iteration the instruction serves.
    pub fn offset(&self, cycle: usize, ins: &Instruction) -> i64 {
        cycle as i64 - ins.lead as i64 * self.len() as i64
    }

    pub fn count(&self, op: Op) -> usize {
        self.instructions().filter(|(_, _, i)| i.op == op).count()
    }

    /// Cycles (1-based) in which `unit` is busy.
    pub fn busy_cycles(&self, unit: Unit) -> Vec<usize> {
        (1..=self.len()).filter(|&c| self.cell(c, unit).is_some()).collect()
    }

    /// Unit x cycle grid in the layout of an assembly pipeline table.
    pub fn to_table(&self) -> String {
        let l = self.len();
        let w = self
            .instructions()
            .map(|(_, _, i)| i.op.name().len())
            .max()
            .unwrap_or(3)
            .max(l.to_string().len() + 1);
        let mut out = format!("{:<12}", "unit");
        for c in 1..=l {
            out.push_str(&format!(" {:>w$}", format!("c{c}")));
        }
        out.push('\n');
        for &u in &self.units {
            out.push_str(&format!("{:<12}", u.to_string()));
            for c in 1..=l {
                let s = self.cell(c, u).map_or(".", |i| i.op.name());
                out.push_str(&format!(" {s:>w$}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit");
        for c in 1..=self.len() {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for &u in &self.units {
            out.push_str(&u.to_string());
            for c in 1..=self.len() {
                out.push(',');
                if let Some(i) = self.cell(c, u) {
                    out.push_str(i.op.name());
                }
            }
            out.push('\n');
        }
        out
    }
}

struct Body<'m> {
    model: &'m MachineModel,
    len: i64,
    units: Vec<Unit>,
    cells: Vec<Vec<Option<Instruction>>>,
}

impl<'m> Body<'m> {
    fn new(model: &'m MachineModel, len: usize) -> Self {
        let units = Unit::all(model.core.fmac_units_per_vpe as usize);
        let cells = vec![vec![None; units.len()]; len];
        Body { model, len: len as i64, units, cells }
    }

    fn cycle_of(&self, off: i64) -> usize {
        (off - 1).rem_euclid(self.len) as usize
    }

    fn fits(&self, row: usize, op: Op, ui: usize) -> bool {
        if self.cells[row][ui].is_some() {
            return false;
        }
        let core = &self.model.core;
        let ops = || self.cells[row].iter().flatten().map(|i| i.op);
        let bcast: u32 = ops().map(Op::broadcast_width).sum();
        if bcast + op.broadcast_width() > core.broadcast_fp32_per_cycle {
            return false;
        }
        let vb = core.vector_bytes();
        let loads: usize = ops().map(Op::vector_loads).sum();
        if (loads + op.vector_loads()) * vb > core.vector_load_bytes_per_cycle as usize {
            return false;
        }
        let class = self.units[ui].class();
        let same = self.cells[row]
            .iter()
            .zip(&self.units)
            .filter(|(s, u)| s.is_some() && u.class() == class)
            .count();
        let width = match class {
            UnitClass::Scalar => core.scalar_issue_width,
            UnitClass::Vector => core.vector_issue_width,
        };
        same < width as usize
    }

    /// Places `ins` at the first offset in `offsets` with a free compatible
    /// unit; returns the chosen offset.
    fn place(&mut self, ins: Instruction, units: &[Unit], offsets: impl IntoIterator<Item = i64>) -> std::result::Result<i64, Instruction> {
        for off in offsets {
            let row = self.cycle_of(off);
            for &u in units {
                let ui = self.units.iter().position(|&x| x == u).expect("unit present");
                if self.fits(row, ins.op, ui) {
                    let lead = ((row as i64 + 1 - off) / self.len) as u32;
                    self.cells[row][ui] = Some(Instruction { lead, ..ins });
                    return Ok(off);
                }
            }
        }
        Err(ins)
    }
}

/// Builds the steady-state loop body for `spec`.
///
/// The body length starts at the largest resource or latency bound and grows
/// until every operand chain fits. FMACs fill the usable vector FMAC units
/// from cycle 1; broadcast chains are scheduled as late as their consumers
/// allow and B loads as early as the single-buffered registers allow.
pub fn generate_schedule(spec: &MicroKernelSpec, model: &MachineModel) -> Result<VliwSchedule> {
    spec.validate(model)?;
    let core = &model.core;
    let fmac_units = core.fmac_units_per_vpe as usize;
    let bc = core.broadcast_fp32_per_cycle as usize;
    let v_n = spec.v_n;
    let usable = fmac_units.min(bc * v_n).max(1);
    // Two scalars per broadcast when one scalar per cycle can't feed the units.
    let dual = bc >= 2 && v_n < fmac_units;

    let pairs: Vec<(usize, usize)> = (0..spec.m_u).flat_map(|mu| (0..spec.k_u).map(move |ku| (mu, ku))).collect();
    let groups: Vec<Vec<usize>> = if dual {
        (0..pairs.len()).collect::<Vec<_>>().chunks(2).map(<[usize]>::to_vec).collect()
    } else {
        (0..pairs.len()).map(|p| vec![p]).collect()
    };
    let n_fmac = pairs.len() * v_n;
    let n_sbale = groups.iter().filter(|g| g.len() == 2).count();
    let load_instrs = spec.k_u * v_n.div_ceil(2);
    let load_bytes = spec.k_u * v_n * core.vector_bytes();

    let lower = [
        n_fmac.div_ceil(usable),
        groups.len(),
        pairs.len().div_ceil(bc),
        n_sbale + 1,
        load_instrs.div_ceil(2),
        load_bytes.div_ceil(core.vector_load_bytes_per_cycle as usize),
        model.latency.t_sbr as usize,
        model.latency.t_fma as usize,
    ]
    .into_iter()
    .max()
    .unwrap_or(1);

    let cap = lower * 4 + 16;
    let mut last_failure = None;
    for len in lower..=cap {
        match build(spec, model, len, usable, &pairs, &groups) {
            Ok(s) => return Ok(s),
            Err(ins) => last_failure = Some(ins),
        }
    }
    Err(Error::Schedule(format!(
        "cannot place {} within {cap} cycles for {spec:?}",
        last_failure.flatten().map_or_else(|| "loop control".to_string(), |i| i.to_string())
    )))
}

fn build(
    spec: &MicroKernelSpec,
    model: &MachineModel,
    len: usize,
    usable: usize,
    pairs: &[(usize, usize)],
    groups: &[Vec<usize>],
) -> std::result::Result<VliwSchedule, Option<Instruction>> {
    let mut body = Body::new(model, len);
    let l = len as i64;
    let v_n = spec.v_n;
    let t_vldw = model.latency.t_vldw as i64;
    let lat = SCALAR_LATENCY;
    let acc = |ku: usize, mu: usize, nn: usize| Reg::Acc { ku: ku as u16, mu: mu as u16, nn: nn as u16 };
    let a_reg = |(mu, ku): (usize, usize)| Reg::A { mu: mu as u16, ku: ku as u16 };
    let b_reg = |ku: usize, nn: usize| Reg::B { ku: ku as u16, nn: nn as u16 };

    // fmac_off[pair][nn]
    let mut fmac_off = vec![vec![0i64; v_n]; pairs.len()];
    for (f, (p, nn)) in (0..pairs.len()).flat_map(|p| (0..v_n).map(move |nn| (p, nn))).enumerate() {
        let (mu, ku) = pairs[p];
        let off = (f / usable) as i64 + 1;
        let unit = Unit::VectorFmac((f % usable) as u8 + 1);
        let ins = Instruction {
            op: Op::Vfmulas32,
            dst: vec![acc(ku, mu, nn)],
            src: vec![a_reg(pairs[p]), b_reg(ku, nn), acc(ku, mu, nn)],
            lead: 0,
        };
        body.place(ins, &[unit], [off]).map_err(Some)?;
        fmac_off[p][nn] = off;
    }

    // Window of legal issue offsets for a producer of latency `lat` whose
    // result is read at `reads`: ready by the first read, not overwritten by
    // the next iteration's copy before the last read.
    let window = |reads: &[i64], lat: i64| {
        let first = *reads.iter().min().expect("has readers");
        let last = *reads.iter().max().expect("has readers");
        (last - l - lat + 1)..=(first - lat)
    };

    for (g, members) in groups.iter().enumerate() {
        let g16 = g as u16;
        let reads: Vec<i64> = members.iter().flat_map(|&p| fmac_off[p].iter().copied()).collect();
        let two = members.len() == 2;
        let bcast = Instruction {
            op: if two { Op::Svbcast2 } else { Op::Svbcast },
            dst: members.iter().map(|&p| a_reg(pairs[p])).collect(),
            src: if two { vec![Reg::Lo(g16), Reg::Hi(g16)] } else { vec![Reg::Lo(g16)] },
            lead: 0,
        };
        let ob = body.place(bcast, &[Unit::ScalarFmac2], window(&reads, lat).rev()).map_err(Some)?;

        let ext = Instruction { op: Op::Sfexts32l, dst: vec![Reg::Lo(g16)], src: vec![Reg::Scalar(g16)], lead: 0 };
        let mut ext_offs = vec![body.place(ext, &[Unit::ScalarFmac1], window(&[ob], lat).rev()).map_err(Some)?];
        if two {
            let hi = Instruction { op: Op::Sbale2h, dst: vec![Reg::Hi(g16)], src: vec![Reg::Scalar(g16)], lead: 0 };
            ext_offs.push(body.place(hi, &[Unit::Sieu], window(&[ob], lat).rev()).map_err(Some)?);
        }
        let ld = Instruction { op: if two { Op::Sldw } else { Op::Sldh }, dst: vec![Reg::Scalar(g16)], src: vec![], lead: 0 };
        body.place(ld, &[Unit::ScalarLs1], window(&ext_offs, lat).rev()).map_err(Some)?;
    }

    for ku in 0..spec.k_u {
        for nn0 in (0..v_n).step_by(2) {
            let nns: Vec<usize> = (nn0..v_n.min(nn0 + 2)).collect();
            let reads: Vec<i64> = pairs
                .iter()
                .enumerate()
                .filter(|(_, &(_, k))| k == ku)
                .flat_map(|(p, _)| nns.iter().map(move |&nn| (p, nn)))
                .map(|(p, nn)| fmac_off[p][nn])
                .collect();
            let ins = Instruction {
                op: if nns.len() == 2 { Op::Vlddw } else { Op::Vldw },
                dst: nns.iter().map(|&nn| b_reg(ku, nn)).collect(),
                src: vec![],
                lead: 0,
            };
            body.place(ins, &[Unit::VectorLs1, Unit::VectorLs2], window(&reads, t_vldw)).map_err(Some)?;
        }
    }

    let sbr = Instruction { op: Op::Sbr, dst: vec![], src: vec![], lead: 0 };
    body.place(sbr, &[Unit::Control], [l - model.latency.t_sbr as i64 + 1]).map_err(Some)?;

    let sieu = body.units.iter().position(|&u| u == Unit::Sieu).expect("unit present");
    if body.cells.iter().all(|row| row[sieu].is_some()) {
        return Err(None);
    }

    let mut sched = VliwSchedule {
        units: body.units,
        steady_state: body.cells,
        prologue_cycles: 0,
        epilogue_cycles: 0,
        iterations_covered: pairs.len(),
    };
    let offs: Vec<(i64, Op)> = sched.instructions().map(|(c, _, i)| (sched.offset(c, i), i.op)).collect();
    let min_off = offs.iter().map(|o| o.0).min().unwrap_or(1);
    let fmac_done = offs
        .iter()
        .filter(|o| o.1 == Op::Vfmulas32)
        .map(|o| o.0 + model.latency.t_fma as i64)
        .max()
        .unwrap_or(l + 1);
    sched.prologue_cycles = (1 - min_off).max(0) as usize;
    sched.epilogue_cycles = (fmac_done - (l + 1)).max(0) as usize;
    Ok(sched)
}

//! Simulated execution of the three GEMM loop nests.
//!
//! Every run walks the loop nest of its strategy once, recording each DMA and
//! kernel call in a [`SimReport`]. With operands present the kernels also
//! update C; [`simulate`] walks the same nest without data so large shapes
//! can be modeled cheaply. Simulated cores run one after another in a fixed
//! order, so results and traces do not depend on the host.

mod trace;

pub use trace::{DmaEvent, KernelInvocation, KernelUse, Leaf, ModeledCycles, Node, NodeKind, PhaseTag, SimReport};

use crate::error::{Error, Result};
use crate::kernel::{exec_ftimm_kernel, exec_tgemm_kernel};
use crate::machine::{Level, MachineModel};
use crate::matrix::Matrix;
use crate::tuner::{adjust, capacity_check, tgemm_plan, ExecutionPlan, MatrixShape, Strategy};
use trace::Recorder;

use Level::{Am, Ddr, Gsm, Sm};
use NodeKind::{Parallel, PingPong, Seq};

/// Checks that A (m x k), B (k x n) and C (m x n) conform.
pub fn conform(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<MatrixShape> {
    if a.cols() != b.rows() || a.rows() != c.rows() || b.cols() != c.cols() {
        return Err(Error::ShapeMismatch(format!(
            "A {}x{}, B {}x{}, C {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols()
        )));
    }
    MatrixShape::new(a.rows(), b.cols(), a.cols())
}

/// Reference C += A x B. Each output sums its products from zero in k order
/// with fused multiply-adds, then is added to C.
pub fn naive_gemm(a: &Matrix, b: &Matrix, c: &mut Matrix) -> Result<()> {
    conform(a, b, c)?;
    let mut acc = vec![0.0f32; c.cols()];
    for i in 0..a.rows() {
        acc.fill(0.0);
        for (k, &av) in a.row(i).iter().enumerate() {
            for (s, &bv) in acc.iter_mut().zip(b.row(k)) {
                *s = av.mul_add(bv, *s);
            }
        }
        for (cv, s) in c.row_mut(i).iter_mut().zip(&acc) {
            *cv += s;
        }
    }
    Ok(())
}

struct Data<'x> {
    a: &'x Matrix,
    b: &'x Matrix,
    c: &'x mut Matrix,
}

/// TGEMM with its fixed blocking.
pub fn run_tgemm(a: &Matrix, b: &Matrix, c: &mut Matrix, model: &MachineModel) -> Result<SimReport> {
    let shape = conform(a, b, c)?;
    run_plan(a, b, c, &tgemm_plan(&shape, model)?, model)
}

pub fn run_ftimm_m(a: &Matrix, b: &Matrix, c: &mut Matrix, plan: &ExecutionPlan, model: &MachineModel) -> Result<SimReport> {
    expect_strategy(plan, Strategy::FtimmM)?;
    run_plan(a, b, c, plan, model)
}

pub fn run_ftimm_k(a: &Matrix, b: &Matrix, c: &mut Matrix, plan: &ExecutionPlan, model: &MachineModel) -> Result<SimReport> {
    expect_strategy(plan, Strategy::FtimmK)?;
    run_plan(a, b, c, plan, model)
}

/// Picks the plan for the shape and runs it.
pub fn run_auto(a: &Matrix, b: &Matrix, c: &mut Matrix, model: &MachineModel) -> Result<SimReport> {
    let shape = conform(a, b, c)?;
    run_plan(a, b, c, &adjust(&shape, model)?, model)
}

/// Runs whichever loop nest `plan` names.
pub fn run_plan(a: &Matrix, b: &Matrix, c: &mut Matrix, plan: &ExecutionPlan, model: &MachineModel) -> Result<SimReport> {
    let shape = conform(a, b, c)?;
    execute(shape, plan, model, Some(Data { a, b, c }))
}

/// Trace and cycle model of `plan` on `shape` without touching any data.
pub fn simulate(shape: &MatrixShape, plan: &ExecutionPlan, model: &MachineModel) -> Result<SimReport> {
    execute(*shape, plan, model, None)
}

fn expect_strategy(plan: &ExecutionPlan, s: Strategy) -> Result<()> {
    if plan.strategy != s {
        return Err(Error::PlanMismatch(format!("plan is {}, expected {s}", plan.strategy)));
    }
    Ok(())
}

fn execute(shape: MatrixShape, plan: &ExecutionPlan, model: &MachineModel, mut data: Option<Data<'_>>) -> Result<SimReport> {
    if plan.num_cores != model.num_cores {
        return Err(Error::PlanMismatch(format!("plan for {} cores on a {}-core model", plan.num_cores, model.num_cores)));
    }
    let report = capacity_check(plan.strategy, &plan.blocks, model);
    if !report.feasible() {
        return Err(Error::PlanMismatch(report.to_string()));
    }
    let mut rec = Recorder::new(model);
    let root = match plan.strategy {
        Strategy::Tgemm => tgemm(&mut rec, shape, plan, &mut data)?,
        Strategy::FtimmM => ftimm_m(&mut rec, shape, plan, &mut data)?,
        Strategy::FtimmK => ftimm_k(&mut rec, shape, plan, &mut data)?,
    };
    let checksum = data.map(|d| d.c.checksum());
    Ok(rec.finish(shape, *plan, checksum, root))
}

/// (block index, offset, length) over 0..extent in steps of `step`.
fn blocks(extent: usize, step: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..extent).step_by(step.max(1)).enumerate().map(move |(b, o)| (b, o, step.min(extent - o)))
}

fn core_nodes(nc: usize, kind: NodeKind) -> Vec<Node> {
    (0..nc).map(|c| Node::new(kind, Some(c as u16))).collect()
}

fn parallel(per_core: Vec<Node>) -> Node {
    let mut par = Node::new(Parallel, None);
    par.children = per_core.into_iter().filter(|n| !n.is_empty()).collect();
    par
}

fn tgemm(rec: &mut Recorder<'_>, shape: MatrixShape, plan: &ExecutionPlan, data: &mut Option<Data<'_>>) -> Result<Node> {
    let b = plan.blocks;
    let nc = plan.num_cores as usize;
    let tag = PhaseTag::new;
    let mut root = Node::new(Seq, None);
    for (ib, i, mg) in blocks(shape.m, b.m_g) {
        let mut inode = Node::new(PingPong, None);
        for (jb, j, kg) in blocks(shape.k, b.k_g) {
            let mut jnode = Node::new(Seq, None);
            jnode.load.push(rec.dma(Ddr, Gsm, mg, kg, None, jb > 0, tag("A_g", &[ib, jb])));
            let mut per_core = core_nodes(nc, PingPong);
            for (tb, t, nt) in blocks(shape.n, b.n_a) {
                let core = tb % nc;
                let cid = core as u16;
                let hidden = !per_core[core].children.is_empty();
                // B_a and C_a keep the full n_a-wide layout in AM.
                let mut tnode = Node::new(PingPong, Some(cid));
                tnode.load.push(rec.dma(Ddr, Am, kg, b.n_a, Some(cid), hidden, tag("B_a", &[ib, jb, tb])));
                tnode.load.push(rec.dma(Ddr, Am, mg, b.n_a, Some(cid), hidden, tag("C_a", &[ib, jb, tb])));
                for (iib, ii, ms) in blocks(mg, b.m_s) {
                    let load = rec.dma(Gsm, Sm, ms, kg, Some(cid), iib > 0, tag("A_s", &[ib, jb, tb, iib]));
                    let (kernel, _) = rec.kernel(cid, ms, b.n_a, kg)?;
                    tnode.leaves.push(Leaf { load, kernel });
                    if let Some(d) = data.as_mut() {
                        exec_tgemm_kernel(&d.a.tile(i + ii, j, ms, kg), &d.b.tile(j, t, kg, nt), &mut d.c.tile_mut(i + ii, t, ms, nt))?;
                    }
                }
                tnode.store.push(rec.dma(Am, Ddr, mg, nt, Some(cid), false, tag("C_store", &[ib, jb, tb])));
                per_core[core].children.push(tnode);
            }
            jnode.children.push(parallel(per_core));
            inode.children.push(jnode);
        }
        root.children.push(inode);
    }
    Ok(root)
}

fn ftimm_m(rec: &mut Recorder<'_>, shape: MatrixShape, plan: &ExecutionPlan, data: &mut Option<Data<'_>>) -> Result<Node> {
    let b = plan.blocks;
    let nc = plan.num_cores as usize;
    let tag = PhaseTag::new;
    let mut root = Node::new(Seq, None);
    for (ib, i, ng) in blocks(shape.n, b.n_g) {
        let mut inode = Node::new(PingPong, None);
        for (jb, j, kg) in blocks(shape.k, b.k_g) {
            let mut jnode = Node::new(Seq, None);
            jnode.load.push(rec.dma(Ddr, Gsm, kg, ng, None, jb > 0, tag("B_g", &[ib, jb])));
            let mut per_core = core_nodes(nc, Seq);
            for (tb, t, ma) in blocks(shape.m, b.m_a) {
                let cid = (tb % nc) as u16;
                for (iib, ii, na) in blocks(ng, b.n_a) {
                    let mut cnode = Node::new(PingPong, Some(cid));
                    cnode.load.push(rec.dma(Ddr, Am, ma, na, Some(cid), false, tag("C_a", &[ib, jb, tb, iib])));
                    for (jjb, jj, ka) in blocks(kg, b.k_a) {
                        let mut jjnode = Node::new(PingPong, Some(cid));
                        jjnode.load.push(rec.dma(Gsm, Am, ka, na, Some(cid), jjb > 0, tag("B_a", &[ib, jb, tb, jjb])));
                        for (ttb, tt, ms) in blocks(ma, b.m_s) {
                            let load = rec.dma(Ddr, Sm, ms, ka, Some(cid), ttb > 0, tag("A_s", &[jb, tb, jjb, ttb]));
                            let (kernel, spec) = rec.kernel(cid, ms, na, ka)?;
                            jjnode.leaves.push(Leaf { load, kernel });
                            if let Some(d) = data.as_mut() {
                                exec_ftimm_kernel(
                                    &d.a.tile(t + tt, j + jj, ms, ka),
                                    &d.b.tile(j + jj, i + ii, ka, na),
                                    &mut d.c.tile_mut(t + tt, i + ii, ms, na),
                                    &spec,
                                )?;
                            }
                        }
                        cnode.children.push(jjnode);
                    }
                    cnode.store.push(rec.dma(Am, Ddr, ma, na, Some(cid), false, tag("C_store", &[ib, jb, tb, iib])));
                    per_core[cid as usize].children.push(cnode);
                }
            }
            jnode.children.push(parallel(per_core));
            inode.children.push(jnode);
        }
        root.children.push(inode);
    }
    Ok(root)
}

fn ftimm_k(rec: &mut Recorder<'_>, shape: MatrixShape, plan: &ExecutionPlan, data: &mut Option<Data<'_>>) -> Result<Node> {
    let b = plan.blocks;
    let nc = plan.num_cores as usize;
    let tag = PhaseTag::new;
    let v = rec.model.v();
    let fmacs = rec.model.core.fmac_units_per_vpe as u64;
    let k_blocks = shape.k.div_ceil(b.k_a);
    let active = nc.min(k_blocks);
    let mut root = Node::new(Seq, None);
    for (ib, i, mg) in blocks(shape.m, b.m_g) {
        for (jb, j, ng) in blocks(shape.n, b.n_g) {
            let mut ijnode = Node::new(Seq, None);
            ijnode.load.push(rec.dma(Ddr, Gsm, mg, ng, None, false, tag("C_g", &[ib, jb])));
            for (iib, ii, ma) in blocks(mg, b.m_a) {
                for (jjb, jj, na) in blocks(ng, b.n_a) {
                    let (r0, c0) = (i + ii, j + jj);
                    let idx = [ib, jb, iib, jjb];
                    // The root core starts from the C tile, the others from zero.
                    let mut partial: Vec<Matrix> = match data.as_ref() {
                        Some(d) => (0..active)
                            .map(|c| if c == 0 { Matrix::from_fn(ma, na, |r, q| d.c.get(r0 + r, c0 + q)) } else { Matrix::zeros(ma, na) })
                            .collect(),
                        None => Vec::new(),
                    };
                    let mut per_core = core_nodes(nc, PingPong);
                    per_core[0].load.push(rec.dma(Gsm, Am, ma, na, Some(0), false, tag("C_seed", &idx)));
                    for (tb, t, ka) in blocks(shape.k, b.k_a) {
                        let core = tb % nc;
                        let cid = core as u16;
                        let hidden = !per_core[core].children.is_empty();
                        let mut tnode = Node::new(PingPong, Some(cid));
                        tnode.load.push(rec.dma(Ddr, Am, ka, na, Some(cid), hidden, tag("B_a", &[ib, jb, jjb, tb])));
                        for (ub, u, ms) in blocks(ma, b.m_s) {
                            let load = rec.dma(Ddr, Sm, ms, ka, Some(cid), ub > 0, tag("A_s", &[ib, iib, tb, ub]));
                            let (kernel, spec) = rec.kernel(cid, ms, na, ka)?;
                            tnode.leaves.push(Leaf { load, kernel });
                            if let Some(d) = data.as_ref() {
                                exec_ftimm_kernel(
                                    &d.a.tile(r0 + u, t, ms, ka),
                                    &d.b.tile(t, c0, ka, na),
                                    &mut partial[core].tile_mut(u, 0, ms, na),
                                    &spec,
                                )?;
                            }
                        }
                        per_core[core].children.push(tnode);
                    }
                    let mut tile = Node::new(Seq, None);
                    tile.children.push(parallel(per_core));

                    // Partial tiles meet in GSM and the root core sums them in core order.
                    let mut red = Node::new(Seq, Some(0));
                    for c in 1..active {
                        red.load.push(rec.dma(Am, Gsm, ma, na, Some(c as u16), false, tag("reduce", &idx)));
                        rec.reduction_bytes += (ma * na * 4) as u64;
                    }
                    for _ in 1..active {
                        red.load.push(rec.dma(Gsm, Am, ma, na, Some(0), false, tag("gather", &idx)));
                    }
                    let adds = ((active - 1) * ma * na.div_ceil(v)) as u64;
                    red.extra_cycles = adds.div_ceil(fmacs);
                    rec.extra_cycles[0] += red.extra_cycles;
                    red.store.push(rec.dma(Am, Ddr, ma, na, Some(0), false, tag("C_store", &idx)));
                    tile.children.push(red);
                    ijnode.children.push(tile);

                    if let Some(d) = data.as_mut() {
                        let (first, rest) = partial.split_first_mut().expect("at least one active core");
                        for p in rest.iter() {
                            for r in 0..ma {
                                for (s, x) in first.row_mut(r).iter_mut().zip(p.row(r)) {
                                    *s += x;
                                }
                            }
                        }
                        for r in 0..ma {
                            d.c.tile_mut(r0 + r, c0, 1, na).row_mut(0).copy_from_slice(first.row(r));
                        }
                    }
                }
            }
            root.children.push(ijnode);
        }
    }
    Ok(root)
}

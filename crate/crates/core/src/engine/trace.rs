use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::machine::{Level, MachineModel};
use crate::microkernel::{KernelCosts, MicroKernelSpec};
use crate::tuner::{ExecutionPlan, MatrixShape};

/// Algorithm step that issued a transfer plus its loop block indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PhaseTag {
    pub step: &'static str,
    pub idx: [u32; 4],
    pub depth: u8,
}

impl PhaseTag {
    pub fn new(step: &'static str, idx: &[usize]) -> Self {
        let mut a = [0u32; 4];
        for (slot, &i) in a.iter_mut().zip(idx) {
            *slot = i as u32;
        }
        PhaseTag { step, idx: a, depth: idx.len().min(4) as u8 }
    }
}

impl fmt::Display for PhaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.step)?;
        for (n, i) in self.idx[..self.depth as usize].iter().enumerate() {
            if n > 0 {
                f.write_str(".")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DmaEvent {
    pub src: Level,
    pub dst: Level,
    pub bytes: u64,
    /// `None` for transfers into a shared level on behalf of all cores.
    pub core: Option<u16>,
    pub overlappable: bool,
    pub tag: PhaseTag,
}

impl DmaEvent {
    pub fn touches_ddr(&self) -> bool {
        self.src == Level::Ddr || self.dst == Level::Ddr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    /// Children run one after another, loads included.
    Seq,
    /// Child i+1's load overlaps child i's body.
    PingPong,
    /// Children run on different cores at the same time.
    Parallel,
}

/// One kernel call preceded by the load feeding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Leaf {
    pub load: u32,
    pub kernel: u32,
}

/// Loop nest as executed: a node loads its buffers, runs its children (or
/// leaves), does any extra vector work, then stores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub kind: NodeKind,
    pub core: Option<u16>,
    pub load: Vec<u32>,
    pub store: Vec<u32>,
    /// Vector cycles spent after the children, e.g. summing partial tiles.
    pub extra_cycles: u64,
    pub children: Vec<Node>,
    pub leaves: Vec<Leaf>,
}

impl Node {
    pub fn new(kind: NodeKind, core: Option<u16>) -> Self {
        Node { kind, core, load: Vec::new(), store: Vec::new(), extra_cycles: 0, children: Vec::new(), leaves: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty() && self.store.is_empty() && self.children.is_empty() && self.leaves.is_empty() && self.extra_cycles == 0
    }
}

/// A distinct (kernel, depth) pair with its modeled cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelUse {
    pub spec: MicroKernelSpec,
    pub k_a: usize,
    pub cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelInvocation {
    pub core: u16,
    pub spec: MicroKernelSpec,
    pub k_a: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModeledCycles {
    /// Kernel and reduction cycles per core.
    pub per_core: Vec<u64>,
    /// Busiest core.
    pub critical_path: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub shape: MatrixShape,
    pub plan: ExecutionPlan,
    /// Sum of C after the run, absent for trace-only runs.
    pub result_checksum: Option<f64>,
    pub dma_events: Vec<DmaEvent>,
    pub kernels: Vec<KernelUse>,
    pub kernel_invocations: Vec<KernelInvocation>,
    pub modeled_cycles: ModeledCycles,
    /// Bytes delivered into each level.
    pub bytes_per_level: BTreeMap<Level, u64>,
    /// Partial-sum bytes pushed to GSM by the K strategy.
    pub reduction_bytes: u64,
    pub active_cores: u32,
    pub timeline: Node,
}

impl SimReport {
    pub fn events_with_step<'a>(&'a self, step: &'a str) -> impl Iterator<Item = &'a DmaEvent> + 'a {
        self.dma_events.iter().filter(move |e| e.tag.step == step)
    }

    pub fn bytes_with_step(&self, step: &str) -> u64 {
        self.events_with_step(step).map(|e| e.bytes).sum()
    }

    /// Trace as CSV: phase_tag, core_id, src, dst, bytes, overlappable.
    pub fn trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["phase_tag", "core_id", "src", "dst", "bytes", "overlappable"]).expect("in-memory write");
        for e in &self.dma_events {
            let core = e.core.map_or_else(|| "shared".to_string(), |c| c.to_string());
            w.write_record([e.tag.to_string(), core, e.src.to_string(), e.dst.to_string(), e.bytes.to_string(), e.overlappable.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Collects events and kernel calls while a loop nest runs.
pub(crate) struct Recorder<'m> {
    pub model: &'m MachineModel,
    pub events: Vec<DmaEvent>,
    kernels: Vec<KernelUse>,
    kernel_ids: HashMap<(usize, usize, usize), u32>,
    counts: BTreeMap<(u16, u32), u64>,
    pub costs: KernelCosts,
    pub extra_cycles: Vec<u64>,
    pub reduction_bytes: u64,
}

impl<'m> Recorder<'m> {
    pub fn new(model: &'m MachineModel) -> Self {
        Recorder {
            model,
            events: Vec::new(),
            kernels: Vec::new(),
            kernel_ids: HashMap::new(),
            counts: BTreeMap::new(),
            costs: KernelCosts::new(),
            extra_cycles: vec![0; model.num_cores as usize],
            reduction_bytes: 0,
        }
    }

    /// Records a rows x cols FP32 transfer.
    pub fn dma(&mut self, src: Level, dst: Level, rows: usize, cols: usize, core: Option<u16>, overlappable: bool, tag: PhaseTag) -> u32 {
        let id = self.events.len() as u32;
        self.events.push(DmaEvent { src, dst, bytes: (rows * cols * 4) as u64, core, overlappable, tag });
        id
    }

    /// Counts one call of the kernel for an m_s x n_a tile of depth k_a.
    pub fn kernel(&mut self, core: u16, m_s: usize, n_a: usize, k_a: usize) -> Result<(u32, MicroKernelSpec)> {
        let id = match self.kernel_ids.get(&(m_s, n_a, k_a)) {
            Some(&id) => id,
            None => {
                let spec = self.costs.spec(m_s, n_a, self.model)?;
                let cycles = self.costs.cycles(m_s, n_a, k_a, self.model)?;
                let id = self.kernels.len() as u32;
                self.kernels.push(KernelUse { spec, k_a, cycles });
                self.kernel_ids.insert((m_s, n_a, k_a), id);
                id
            }
        };
        *self.counts.entry((core, id)).or_default() += 1;
        Ok((id, self.kernels[id as usize].spec))
    }

    pub fn finish(self, shape: MatrixShape, plan: ExecutionPlan, checksum: Option<f64>, timeline: Node) -> SimReport {
        let nc = self.model.num_cores as usize;
        let mut per_core = self.extra_cycles;
        per_core.resize(nc, 0);
        let mut active = vec![false; nc];
        let kernel_invocations = self
            .counts
            .iter()
            .map(|(&(core, id), &count)| {
                let k = self.kernels[id as usize];
                per_core[core as usize] += k.cycles * count;
                active[core as usize] = true;
                KernelInvocation { core, spec: k.spec, k_a: k.k_a, count }
            })
            .collect();
        let mut bytes_per_level = BTreeMap::new();
        for e in &self.events {
            *bytes_per_level.entry(e.dst).or_insert(0) += e.bytes;
        }
        let critical_path = per_core.iter().copied().max().unwrap_or(0);
        SimReport {
            shape,
            plan,
            result_checksum: checksum,
            dma_events: self.events,
            kernels: self.kernels,
            kernel_invocations,
            modeled_cycles: ModeledCycles { per_core, critical_path },
            bytes_per_level,
            reduction_bytes: self.reduction_bytes,
            active_cores: active.iter().filter(|&&a| a).count() as u32,
            timeline,
        }
    }
}

//! Configurable description of the modeled DSP cluster.
//!
//! Every other module reads a [`MachineModel`] and never mutates it. The
//! defaults describe one FT-m7032 GPDSP cluster.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Memory levels of the cluster, ordered from off-chip to the register side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "DDR")]
    Ddr,
    #[serde(rename = "GSM")]
    Gsm,
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "AM")]
    Am,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Ddr, Level::Gsm, Level::Sm, Level::Am];

    pub fn name(self) -> &'static str {
        match self {
            Level::Ddr => "DDR",
            Level::Gsm => "GSM",
            Level::Sm => "SM",
            Level::Am => "AM",
        }
    }

    /// Capacity and sharing of this level in the stock cluster.
    pub fn default_desc(self) -> MemoryLevelDesc {
        let (capacity_bytes, is_shared) = match self {
            Level::Ddr => (0, true),
            Level::Gsm => (6 << 20, true),
            Level::Sm => (64 << 10, false),
            Level::Am => (768 << 10, false),
        };
        MemoryLevelDesc { name: self, capacity_bytes, is_shared }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LevelEntry")]
pub struct MemoryLevelDesc {
    pub name: Level,
    /// Zero means unbounded (only meaningful for DDR).
    pub capacity_bytes: u64,
    pub is_shared: bool,
}

// Lets a config file override a single field of one level.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelEntry {
    name: Level,
    capacity_bytes: Option<u64>,
    is_shared: Option<bool>,
}

impl From<LevelEntry> for MemoryLevelDesc {
    fn from(e: LevelEntry) -> Self {
        let d = e.name.default_desc();
        MemoryLevelDesc {
            name: e.name,
            capacity_bytes: e.capacity_bytes.unwrap_or(d.capacity_bytes),
            is_shared: e.is_shared.unwrap_or(d.is_shared),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreDesc {
    pub num_vpe: u32,
    pub fmac_units_per_vpe: u32,
    /// FP32 lanes per vector register group (V).
    pub simd_width_fp32: u32,
    pub vector_registers_per_vpe: u32,
    /// Registers kept back for addresses and temporaries.
    pub reserved_vector_registers: u32,
    pub clock_ghz: f64,
    pub scalar_issue_width: u32,
    pub vector_issue_width: u32,
    pub broadcast_fp32_per_cycle: u32,
    pub vector_load_bytes_per_cycle: u32,
}

impl Default for CoreDesc {
    fn default() -> Self {
        CoreDesc {
            num_vpe: 16,
            fmac_units_per_vpe: 3,
            simd_width_fp32: 32,
            vector_registers_per_vpe: 64,
            reserved_vector_registers: 4,
            clock_ghz: 1.8,
            scalar_issue_width: 5,
            vector_issue_width: 6,
            broadcast_fp32_per_cycle: 2,
            vector_load_bytes_per_cycle: 512,
        }
    }
}

impl CoreDesc {
    /// Each FMAC unit retires two FP32 multiply-adds per cycle per VPE.
    pub fn peak_gflops(&self) -> f64 {
        f64::from(self.num_vpe) * f64::from(self.fmac_units_per_vpe) * 2.0 * 2.0 * self.clock_ghz
    }

    pub fn total_issue_width(&self) -> u32 {
        self.scalar_issue_width + self.vector_issue_width
    }

    pub fn register_budget(&self) -> usize {
        self.vector_registers_per_vpe.saturating_sub(self.reserved_vector_registers) as usize
    }

    /// Bytes moved by one full vector register (V lanes of FP32).
    pub fn vector_bytes(&self) -> usize {
        self.simd_width_fp32 as usize * 4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyDesc {
    pub t_fma: u32,
    pub t_vldw: u32,
    pub t_sbr: u32,
    pub dma_ddr_bandwidth_gbps: f64,
    /// GSM to SM/AM transfers.
    pub dma_gsm_bandwidth_gbps: f64,
    pub dma_startup_cycles: u32,
}

impl Default for LatencyDesc {
    fn default() -> Self {
        LatencyDesc {
            t_fma: 6,
            t_vldw: 4,
            t_sbr: 3,
            dma_ddr_bandwidth_gbps: 42.6,
            dma_gsm_bandwidth_gbps: 128.0,
            dma_startup_cycles: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineModel {
    #[serde(deserialize_with = "merge_levels")]
    pub memory_levels: Vec<MemoryLevelDesc>,
    pub core: CoreDesc,
    pub latency: LatencyDesc,
    pub num_cores: u32,
}

impl Default for MachineModel {
    fn default() -> Self {
        default_ftm7032()
    }
}

fn merge_levels<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<MemoryLevelDesc>, D::Error> {
    let given = Vec::<MemoryLevelDesc>::deserialize(d)?;
    let mut out: Vec<MemoryLevelDesc> = Level::ALL.iter().map(|l| l.default_desc()).collect();
    let mut seen = Vec::new();
    for g in given {
        if seen.contains(&g.name) {
            return Err(serde::de::Error::custom(format!("duplicate memory level {}", g.name)));
        }
        seen.push(g.name);
        let slot = out.iter_mut().find(|l| l.name == g.name).expect("all levels present");
        *slot = g;
    }
    Ok(out)
}

/// The stock FT-m7032 cluster: 8 cores, 6 MiB GSM, 64 KiB SM, 768 KiB AM.
pub fn default_ftm7032() -> MachineModel {
    MachineModel {
        memory_levels: Level::ALL.iter().map(|l| l.default_desc()).collect(),
        core: CoreDesc::default(),
        latency: LatencyDesc::default(),
        num_cores: 8,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationResult {
    pub violations: Vec<String>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl MachineModel {
    pub fn level(&self, level: Level) -> Option<&MemoryLevelDesc> {
        self.memory_levels.iter().find(|l| l.name == level)
    }

    /// Capacity in bytes; `u64::MAX` for unbounded or missing levels.
    pub fn capacity(&self, level: Level) -> u64 {
        match self.level(level) {
            Some(l) if l.capacity_bytes > 0 => l.capacity_bytes,
            _ => u64::MAX,
        }
    }

    pub fn peak_gflops_per_core(&self) -> f64 {
        self.core.peak_gflops()
    }

    pub fn peak_gflops_cluster(&self) -> f64 {
        self.core.peak_gflops() * f64::from(self.num_cores)
    }

    pub fn cycles_to_seconds(&self, cycles: f64) -> f64 {
        cycles / (self.core.clock_ghz * 1e9)
    }

    /// Lanes per vector register group.
    pub fn v(&self) -> usize {
        self.core.simd_width_fp32 as usize
    }

    pub fn with_num_cores(mut self, n: u32) -> Self {
        self.num_cores = n;
        self
    }

    pub fn validate(&self) -> ValidationResult {
        let mut v = Vec::new();
        for level in Level::ALL {
            match self.memory_levels.iter().filter(|l| l.name == level).count() {
                0 => v.push(format!("missing level {level}")),
                1 => {}
                n => v.push(format!("level {level} declared {n} times")),
            }
        }
        for l in &self.memory_levels {
            if l.name != Level::Ddr && l.capacity_bytes == 0 {
                v.push(format!("{} capacity must be positive", l.name));
            }
        }
        let c = &self.core;
        let positive = [
            ("num_vpe", c.num_vpe),
            ("fmac_units_per_vpe", c.fmac_units_per_vpe),
            ("simd_width_fp32", c.simd_width_fp32),
            ("vector_registers_per_vpe", c.vector_registers_per_vpe),
            ("scalar_issue_width", c.scalar_issue_width),
            ("vector_issue_width", c.vector_issue_width),
            ("broadcast_fp32_per_cycle", c.broadcast_fp32_per_cycle),
            ("vector_load_bytes_per_cycle", c.vector_load_bytes_per_cycle),
            ("t_fma", self.latency.t_fma),
            ("t_vldw", self.latency.t_vldw),
            ("t_sbr", self.latency.t_sbr),
            ("num_cores", self.num_cores),
        ];
        for (name, value) in positive {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if c.reserved_vector_registers >= c.vector_registers_per_vpe {
            v.push("reserved_vector_registers leaves no usable registers".into());
        }
        let reals = [
            ("clock_ghz", c.clock_ghz),
            ("dma_ddr_bandwidth_gbps", self.latency.dma_ddr_bandwidth_gbps),
            ("dma_gsm_bandwidth_gbps", self.latency.dma_gsm_bandwidth_gbps),
        ];
        for (name, value) in reals {
            if !(value.is_finite() && value > 0.0) {
                v.push(format!("{name} must be a positive number"));
            }
        }
        if (c.vector_load_bytes_per_cycle as usize) < c.simd_width_fp32 as usize * 4 {
            v.push("vector_load_bytes_per_cycle cannot fit one vector load".into());
        }
        ValidationResult { violations: v }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: MachineModel = serde_json::from_str(s)?;
        let r = m.validate();
        if !r.is_ok() {
            return Err(Error::InvalidModel(r.violations.join("; ")));
        }
        Ok(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

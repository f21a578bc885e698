//! Per-operator latency and energy models for every engine, plus data
//! transfers and the roofline evaluator.
//!
//! Engines with a memory hierarchy (CiM, SA) are costed as a three-stage
//! pipeline over rounds of tiles: DRAM -> global buffer, global buffer ->
//! child buffers, compute. Stage `s` of round `r` starts once stage `s` of
//! round `r - 1` and stage `s - 1` of round `r` are done, so the op latency
//! is at least the largest stage total and at most their sum. An op is
//! memory-bound when its DRAM stage is at least as busy as its compute.

mod cid;
mod cim;
mod roofline;
mod sa;
mod transfer;
mod vector;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{CostTable, Engine, HardwareSpec};
use crate::workload::Operator;

pub use cid::{cid_gemv_cost, plan_cid_partition, PartitionPlan};
pub use cim::{cim_gemm_cost, cim_tile_grid, CimTileGrid};
pub use roofline::{roofline_point, RooflinePoint};
pub use sa::sa_gemm_cost;
pub use transfer::transfer_cost;
pub use vector::vector_op_cost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Compute,
    Memory,
    Adc,
    Transfer,
    Buffer,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Compute => "compute",
            Stage::Memory => "memory",
            Stage::Adc => "adc",
            Stage::Transfer => "transfer",
            Stage::Buffer => "buffer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bound {
    ComputeBound,
    MemoryBound,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub time: f64,
    pub energy: f64,
}

/// Whether an op's stationary operand is already resident in the CiM
/// crossbars or must be (re)written before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Residency {
    Stationary,
    Reloaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub latency: f64,
    pub energy: f64,
    /// Per-stage busy time and energy. Stage times overlap; they do not sum
    /// to `latency`.
    pub breakdown: BTreeMap<Stage, StageCost>,
    pub bound: Bound,
    pub compute_cycles: u64,
    pub adc_conversions: u64,
}

impl OpCost {
    pub fn zero() -> Self {
        Self {
            latency: 0.0,
            energy: 0.0,
            breakdown: BTreeMap::new(),
            bound: Bound::ComputeBound,
            compute_cycles: 0,
            adc_conversions: 0,
        }
    }

    fn from_stages(latency: f64, stages: impl IntoIterator<Item = (Stage, StageCost)>) -> Self {
        let breakdown: BTreeMap<Stage, StageCost> = stages.into_iter().collect();
        let energy = breakdown.values().map(|s| s.energy).sum();
        let time = |s| breakdown.get(&s).map_or(0.0, |c: &StageCost| c.time);
        let memory = time(Stage::Memory);
        let bound = if memory > 0.0 && memory >= time(Stage::Compute) {
            Bound::MemoryBound
        } else {
            Bound::ComputeBound
        };
        Self {
            latency,
            energy,
            breakdown,
            bound,
            compute_cycles: 0,
            adc_conversions: 0,
        }
    }

    pub fn stage(&self, stage: Stage) -> StageCost {
        self.breakdown.get(&stage).copied().unwrap_or_default()
    }

    /// Deterministic multi-line rendering used by `cost-explain`.
    pub fn explain(&self) -> String {
        let mut out = format!(
            "latency_s = {:e}\nenergy_j = {:e}\nbound = {:?}\n",
            self.latency, self.energy, self.bound
        );
        if self.compute_cycles > 0 {
            out.push_str(&format!("compute_cycles = {}\n", self.compute_cycles));
        }
        if self.adc_conversions > 0 {
            out.push_str(&format!("adc_conversions = {}\n", self.adc_conversions));
        }
        for (stage, c) in &self.breakdown {
            out.push_str(&format!(
                "{stage}: time_s = {:e}, energy_j = {:e}\n",
                c.time, c.energy
            ));
        }
        out
    }
}

/// Per-round stage times of a pipelined op.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RoundStages {
    pub dram: f64,
    pub fill: f64,
    pub compute: f64,
}

/// Finish time of the last round of a three-stage pipeline.
pub(crate) fn pipeline_latency(rounds: &[RoundStages]) -> f64 {
    let (mut d, mut f, mut c) = (0.0_f64, 0.0_f64, 0.0_f64);
    for r in rounds {
        d += r.dram;
        f = f.max(d) + r.fill;
        c = c.max(f) + r.compute;
    }
    c
}

/// Route from the HBM stacks to an off-stack engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DramPath {
    pub bandwidth: f64,
    pub latency: f64,
    pub row_bytes: u64,
}

impl DramPath {
    /// Energy of reading or writing `bytes` through this path.
    pub fn energy(&self, bytes: f64, table: &CostTable) -> f64 {
        bytes * 8.0 * (table.e_dram_bit_internal + table.e_dram_bit_offchip)
            + (bytes / self.row_bytes as f64).ceil() * table.e_dram_row_act
    }
}

/// HBM -> CiM/SA path: limited by both the stacks and the interposer.
pub fn dram_path(hw: &HardwareSpec) -> DramPath {
    DramPath {
        bandwidth: hw.cid.external_bandwidth().min(hw.interposer.bandwidth),
        latency: hw.interposer.latency,
        row_bytes: hw.cid.row_size_bytes,
    }
}

/// Hardware, calibration table and CiM wordline setting bundled for costing.
#[derive(Debug, Clone)]
pub struct CostModel<'a> {
    pub hw: &'a HardwareSpec,
    pub table: &'a CostTable,
    cim: crate::hardware::CimSpec,
}

impl<'a> CostModel<'a> {
    pub fn new(hw: &'a HardwareSpec, table: &'a CostTable) -> Self {
        Self {
            hw,
            table,
            cim: hw.cim.clone(),
        }
    }

    pub fn with_wordlines(mut self, wordlines: Option<u64>) -> Self {
        if let Some(w) = wordlines {
            self.cim.wordlines_active = w;
        }
        self
    }

    pub fn cim(&self) -> &crate::hardware::CimSpec {
        &self.cim
    }

    pub fn op_cost(&self, op: &Operator, engine: Engine, residency: Residency) -> Result<OpCost> {
        match engine {
            Engine::Cim => cim_gemm_cost(op, &self.cim, self.table, &dram_path(self.hw), residency),
            Engine::Cid => cid_gemv_cost(op, &self.hw.cid, self.table, &self.hw.tsv),
            Engine::Sa => sa_gemm_cost(op, self.hw, self.table),
            Engine::Vector => vector_op_cost(op, self.hw, self.table),
        }
    }
}

pub(crate) fn require_matmul(op: &Operator, engine: Engine) -> Result<()> {
    if op.kind.is_matmul() {
        Ok(())
    } else {
        Err(Error::WrongEngine {
            op: op.name.clone(),
            engine,
        })
    }
}

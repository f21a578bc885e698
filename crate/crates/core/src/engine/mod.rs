//! Runs mapped operator graphs through the prefill and decode phases and
//! accumulates TTFT, per-token TPOT, end-to-end latency and energy.
//!
//! Ops execute one after another in graph order; overlap exists only inside
//! an op's own tile pipeline.

mod roofline;
mod sweep;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{transfer_cost, Bound, CostModel, OpCost, Residency, StageCost};
use crate::error::{Error, Result};
use crate::hardware::{CostTable, Engine, HardwareSpec};
use crate::mapper::{assign, LinkKind, MappingPlan, MappingStrategy};
use crate::workload::{
    build_graph, GraphOptions, ModelSpec, OpKind, Operator, OperatorGraph, Phase, PhaseRequest,
};

pub use roofline::{roofline_table, Ceiling, RooflineRow, RooflineTable};
pub use sweep::{
    compare, geomean, sweep, Comparison, Metric, PointRatio, ResolvedSweep, ResultRow,
    ResultTable, SweepPoint, SweepSpec, CSV_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Gemm,
    Gemv,
    Attention,
    NonGemm,
    Transfer,
}

impl OpClass {
    pub const ALL: [OpClass; 5] = [
        OpClass::Gemm,
        OpClass::Gemv,
        OpClass::Attention,
        OpClass::NonGemm,
        OpClass::Transfer,
    ];

    pub fn of(op: &Operator) -> OpClass {
        match op.kind {
            _ if op.is_attention() => OpClass::Attention,
            OpKind::Gemm => OpClass::Gemm,
            OpKind::Gemv => OpClass::Gemv,
            _ => OpClass::NonGemm,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpClass::Gemm => "gemm",
            OpClass::Gemv => "gemv",
            OpClass::Attention => "attention",
            OpClass::NonGemm => "non_gemm",
            OpClass::Transfer => "transfer",
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: Phase,
    pub latency: f64,
    pub energy: f64,
    pub per_op_class: BTreeMap<OpClass, StageCost>,
    /// Share of `latency` spent in memory-bound ops and transfers.
    pub bound_fraction: f64,
}

impl PhaseResult {
    pub fn empty(phase: Phase) -> Self {
        Self {
            phase,
            latency: 0.0,
            energy: 0.0,
            per_op_class: OpClass::ALL
                .into_iter()
                .map(|c| (c, StageCost::default()))
                .collect(),
            bound_fraction: 0.0,
        }
    }

    pub fn class(&self, class: OpClass) -> StageCost {
        self.per_op_class.get(&class).copied().unwrap_or_default()
    }

    fn add(&mut self, class: OpClass, cost: &OpCost, memory_time: &mut f64) {
        let c = self.per_op_class.entry(class).or_default();
        c.time += cost.latency;
        c.energy += cost.energy;
        self.latency += cost.latency;
        self.energy += cost.energy;
        if cost.bound == Bound::MemoryBound {
            *memory_time += cost.latency;
        }
    }

    fn merge(&mut self, other: &PhaseResult) {
        let mem = self.bound_fraction * self.latency + other.bound_fraction * other.latency;
        for (class, c) in &other.per_op_class {
            let e = self.per_op_class.entry(*class).or_default();
            e.time += c.time;
            e.energy += c.energy;
        }
        self.latency += other.latency;
        self.energy += other.energy;
        self.bound_fraction = if self.latency > 0.0 {
            mem / self.latency
        } else {
            0.0
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub model: String,
    pub strategy: String,
    pub l_in: u64,
    pub l_out: u64,
    pub batch: u64,
    pub ttft: f64,
    pub tpot_series: Vec<f64>,
    pub tpot_mean: f64,
    pub end_to_end: f64,
    pub prefill: PhaseResult,
    pub decode: PhaseResult,
    pub config_fingerprint: String,
}

impl SimResult {
    pub fn energy(&self) -> f64 {
        self.prefill.energy + self.decode.energy
    }

    pub fn prefill_share(&self) -> f64 {
        if self.end_to_end > 0.0 {
            self.ttft / self.end_to_end
        } else {
            0.0
        }
    }
}

/// Cost of one executed op, kept for per-op reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub id: usize,
    pub name: String,
    pub class: OpClass,
    pub engine: Engine,
    pub cost: OpCost,
}

type ShapeKey = (OpKind, u64, u64, u64, u64, bool, u32, u32, u64, u64, u64, u64);

fn shape_key(op: &Operator) -> ShapeKey {
    (
        op.kind,
        op.m,
        op.n,
        op.k,
        op.instances,
        op.weight_resident,
        op.stationary_bits,
        op.stream_bits,
        op.flops_per_element,
        op.exps_per_element,
        op.bytes_read,
        op.bytes_written,
    )
}

/// One model on one hardware configuration under one strategy.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    pub model: &'a ModelSpec,
    pub hw: &'a HardwareSpec,
    pub table: &'a CostTable,
    pub strategy: MappingStrategy,
    pub options: GraphOptions,
}

#[derive(Default)]
struct Memo {
    ops: HashMap<(ShapeKey, Engine, Residency), OpCost>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a ModelSpec,
        hw: &'a HardwareSpec,
        table: &'a CostTable,
        strategy: MappingStrategy,
    ) -> Self {
        Self {
            model,
            hw,
            table,
            strategy,
            options: GraphOptions::default(),
        }
    }

    fn cost_model(&self) -> CostModel<'a> {
        CostModel::new(self.hw, self.table).with_wordlines(self.strategy.wordlines_active)
    }

    /// Hash of everything that determines the numbers.
    pub fn fingerprint(&self) -> String {
        let doc = serde_json::json!({
            "model": self.model,
            "hardware": self.hw,
            "strategy": self.strategy,
            "cost_table": self.table,
            "options": self.options,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    fn check_capacity(&self, l_in: u64, l_out: u64, batch: u64) -> Result<()> {
        let kv = self.model.kv_bytes_per_token() * batch * (l_in + l_out);
        let needed = self.model.weight_bytes() + kv;
        let available = self.hw.cid.capacity_bytes;
        if needed > available {
            return Err(Error::Capacity { needed, available });
        }
        Ok(())
    }

    fn graph(&self, req: &PhaseRequest) -> Result<OperatorGraph> {
        build_graph(self.model, req, &self.options)
    }

    pub fn plan(&self, req: &PhaseRequest) -> Result<(OperatorGraph, MappingPlan)> {
        let graph = self.graph(req)?;
        let plan = assign(&graph, &self.strategy, self.hw)?;
        Ok((graph, plan))
    }

    /// Per-op costs of one phase graph, in execution order, transfers last.
    pub fn op_records(&self, req: &PhaseRequest) -> Result<Vec<OpRecord>> {
        let (graph, plan) = self.plan(req)?;
        let model = self.cost_model();
        let mut out = Vec::with_capacity(graph.ops.len());
        for op in &graph.ops {
            let engine = plan.assignment[&op.id];
            out.push(OpRecord {
                id: op.id,
                name: op.name.clone(),
                class: OpClass::of(op),
                engine,
                cost: model.op_cost(op, engine, plan.residency(op.id))?,
            });
        }
        for t in &plan.transfers {
            out.push(OpRecord {
                id: t.consumer,
                name: format!("{}->{}", graph.ops[t.producer].name, graph.ops[t.consumer].name),
                class: OpClass::Transfer,
                engine: plan.assignment[&t.consumer],
                cost: self.transfer(t.bytes, t.link),
            });
        }
        Ok(out)
    }

    fn transfer(&self, bytes: u64, link: LinkKind) -> OpCost {
        match link {
            LinkKind::Interposer => {
                transfer_cost(bytes, &self.hw.interposer, self.table.e_dram_bit_offchip)
            }
            LinkKind::Tsv => transfer_cost(bytes, &self.hw.tsv, self.table.e_dram_bit_internal),
        }
    }

    fn run_graph(&self, req: &PhaseRequest, memo: &mut Memo) -> Result<PhaseResult> {
        let (graph, plan) = self.plan(req)?;
        let model = self.cost_model();
        let mut result = PhaseResult::empty(req.phase);
        let mut memory_time = 0.0;
        for op in &graph.ops {
            let engine = plan.assignment[&op.id];
            let residency = plan.residency(op.id);
            let key = (shape_key(op), engine, residency);
            let cost = match memo.ops.get(&key) {
                Some(c) => c,
                None => {
                    let c = model.op_cost(op, engine, residency)?;
                    memo.ops.entry(key).or_insert(c)
                }
            };
            result.add(OpClass::of(op), cost, &mut memory_time);
        }
        for t in &plan.transfers {
            let cost = self.transfer(t.bytes, t.link);
            result.add(OpClass::Transfer, &cost, &mut memory_time);
        }
        if result.latency > 0.0 {
            result.bound_fraction = memory_time / result.latency;
        }
        Ok(result)
    }

    pub fn run_prefill(&self, l_in: u64, batch: u64) -> Result<PhaseResult> {
        self.check_capacity(l_in, 0, batch)?;
        self.run_graph(&PhaseRequest::prefill(l_in, batch), &mut Memo::default())
    }

    /// Decode phase: one step per output token with the KV cache growing by
    /// one token per step. Returns the phase totals and per-step latencies.
    pub fn run_decode(&self, l_in: u64, l_out: u64, batch: u64) -> Result<(PhaseResult, Vec<f64>)> {
        self.check_capacity(l_in, l_out, batch)?;
        let mut memo = Memo::default();
        let mut total = PhaseResult::empty(Phase::Decode);
        let mut series = Vec::with_capacity(l_out as usize);
        for step in 0..l_out {
            let r = self.run_graph(&PhaseRequest::decode(l_in, l_out, batch, step), &mut memo)?;
            series.push(r.latency);
            total.merge(&r);
        }
        Ok((total, series))
    }

    pub fn run_end_to_end(&self, l_in: u64, l_out: u64, batch: u64) -> Result<SimResult> {
        self.check_capacity(l_in, l_out, batch)?;
        let prefill = self.run_prefill(l_in, batch)?;
        let (decode, tpot_series) = self.run_decode(l_in, l_out, batch)?;
        let ttft = prefill.latency;
        let decode_time: f64 = tpot_series.iter().sum();
        let tpot_mean = if tpot_series.is_empty() {
            0.0
        } else {
            decode_time / tpot_series.len() as f64
        };
        Ok(SimResult {
            model: self.model.name.clone(),
            strategy: self.strategy.name.to_string(),
            l_in,
            l_out,
            batch,
            ttft,
            tpot_mean,
            end_to_end: ttft + decode_time,
            tpot_series,
            prefill,
            decode,
            config_fingerprint: self.fingerprint(),
        })
    }
}

pub fn run_prefill(
    model: &ModelSpec,
    hw: &HardwareSpec,
    table: &CostTable,
    strategy: MappingStrategy,
    l_in: u64,
    batch: u64,
) -> Result<PhaseResult> {
    Simulator::new(model, hw, table, strategy).run_prefill(l_in, batch)
}

pub fn run_decode(
    model: &ModelSpec,
    hw: &HardwareSpec,
    table: &CostTable,
    strategy: MappingStrategy,
    l_in: u64,
    l_out: u64,
    batch: u64,
) -> Result<(PhaseResult, Vec<f64>)> {
    Simulator::new(model, hw, table, strategy).run_decode(l_in, l_out, batch)
}

pub fn run_end_to_end(
    model: &ModelSpec,
    hw: &HardwareSpec,
    table: &CostTable,
    strategy: MappingStrategy,
    l_in: u64,
    l_out: u64,
    batch: u64,
) -> Result<SimResult> {
    Simulator::new(model, hw, table, strategy).run_end_to_end(l_in, l_out, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::mapper::StrategyName;

    fn sim(model: &ModelSpec, s: StrategyName, f: impl FnOnce(&Simulator) -> SimResult) -> SimResult {
        let hw = presets::hardware();
        let table = presets::cost_table();
        f(&Simulator::new(model, &hw, &table, s.strategy()))
    }

    #[test]
    fn end_to_end_identity() {
        let m = presets::llama2_7b();
        let r = sim(&m, StrategyName::Halo1, |s| s.run_end_to_end(256, 16, 1).unwrap());
        let sum: f64 = r.tpot_series.iter().sum();
        assert_eq!(r.end_to_end, r.ttft + sum);
        assert_eq!(r.tpot_series.len(), 16);
        let classes: f64 = r.prefill.per_op_class.values().map(|c| c.time).sum();
        assert!((classes - r.prefill.latency).abs() <= 1e-12 * r.prefill.latency);
        let energies: f64 = r.decode.per_op_class.values().map(|c| c.energy).sum();
        assert!((energies - r.decode.energy).abs() <= 1e-12 * r.decode.energy);
    }

    #[test]
    fn tpot_non_decreasing() {
        let m = presets::qwen3_8b();
        for s in [StrategyName::Halo1, StrategyName::FullyCiM, StrategyName::AttAcc2] {
            let r = sim(&m, s, |x| x.run_end_to_end(100, 24, 2).unwrap());
            for w in r.tpot_series.windows(2) {
                assert!(w[1] >= w[0], "{s}: {w:?}");
            }
        }
    }

    #[test]
    fn zero_output_tokens() {
        let m = presets::llama2_7b();
        let r = sim(&m, StrategyName::Halo1, |s| s.run_end_to_end(64, 0, 1).unwrap());
        assert!(r.tpot_series.is_empty());
        assert_eq!(r.decode.latency, 0.0);
        assert_eq!(r.tpot_mean, 0.0);
        assert_eq!(r.end_to_end, r.ttft);
    }

    #[test]
    fn kv_over_capacity_fails() {
        let m = presets::llama2_7b();
        let hw = presets::hardware();
        let table = presets::cost_table();
        let s = Simulator::new(&m, &hw, &table, StrategyName::Halo1.strategy());
        assert!(matches!(s.run_decode(8192, 8192, 256), Err(Error::Capacity { .. })));
    }

    #[test]
    fn fingerprint_tracks_inputs() {
        let m = presets::llama2_7b();
        let hw = presets::hardware();
        let table = presets::cost_table();
        let a = Simulator::new(&m, &hw, &table, StrategyName::Halo1.strategy()).fingerprint();
        let b = Simulator::new(&m, &hw, &table, StrategyName::Halo2.strategy()).fingerprint();
        assert_ne!(a, b);
        assert_eq!(
            a,
            Simulator::new(&m, &hw, &table, StrategyName::Halo1.strategy()).fingerprint()
        );
    }
}

//! Transformer workload description: model architecture, phase requests and
//! the per-phase operator graphs whose FLOP and byte footprints drive every
//! cost model downstream.

mod graph;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{build_decode_step_graph, build_graph, build_prefill_graph};

/// Transformer architecture. Loaded from a model file; nothing here is
/// specific to one model family.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_q_heads: u64,
    pub num_kv_heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    pub weight_bits: u32,
    pub activation_bits: u32,
    /// Per-head normalization of Q and K after projection.
    #[serde(default)]
    pub qk_norm: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_q_heads", self.num_q_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::InvalidModel(format!("{field} must be > 0")));
            }
        }
        if self.num_q_heads % self.num_kv_heads != 0 {
            return Err(Error::InvalidModel(format!(
                "num_q_heads ({}) must be a multiple of num_kv_heads ({})",
                self.num_q_heads, self.num_kv_heads
            )));
        }
        for (field, bits) in [
            ("weight_bits", self.weight_bits),
            ("activation_bits", self.activation_bits),
        ] {
            if ![4, 8, 16].contains(&bits) {
                return Err(Error::InvalidModel(format!(
                    "{field} must be 4, 8 or 16 (got {bits})"
                )));
            }
        }
        Ok(())
    }

    pub fn q_dim(&self) -> u64 {
        self.num_q_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> u64 {
        self.num_kv_heads * self.head_dim
    }

    /// Query heads sharing one KV head.
    pub fn group_size(&self) -> u64 {
        self.num_q_heads / self.num_kv_heads
    }

    /// Parameter count of all GEMM weights plus the embedding table.
    pub fn num_parameters(&self) -> u64 {
        let h = self.hidden_dim;
        let attn = h * self.q_dim() + 2 * h * self.kv_dim() + self.q_dim() * h;
        let ffn = 3 * h * self.ffn_dim;
        self.num_layers * (attn + ffn) + 2 * self.vocab_size * h
    }

    pub fn weight_bytes(&self) -> u64 {
        bits_to_bytes(self.num_parameters(), self.weight_bits)
    }

    /// K and V bytes stored per token per sequence across all layers.
    pub fn kv_bytes_per_token(&self) -> u64 {
        self.num_layers * bits_to_bytes(2 * self.kv_dim(), self.activation_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseRequest {
    pub phase: Phase,
    pub l_in: u64,
    pub l_out: u64,
    pub batch: u64,
    /// Only meaningful for decode.
    pub decode_step: u64,
}

impl PhaseRequest {
    pub fn prefill(l_in: u64, batch: u64) -> Self {
        Self {
            phase: Phase::Prefill,
            l_in,
            l_out: 0,
            batch,
            decode_step: 0,
        }
    }

    pub fn decode(l_in: u64, l_out: u64, batch: u64, decode_step: u64) -> Self {
        Self {
            phase: Phase::Decode,
            l_in,
            l_out,
            batch,
            decode_step,
        }
    }

    /// Tokens held in the KV cache when this step runs.
    pub fn kv_len(&self) -> u64 {
        match self.phase {
            Phase::Prefill => self.l_in,
            Phase::Decode => self.l_in + self.decode_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_in == 0 {
            return Err(Error::InvalidRequest("l_in must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidRequest("batch must be >= 1".into()));
        }
        if self.phase == Phase::Decode && self.decode_step >= self.l_out {
            return Err(Error::InvalidRequest(format!(
                "decode_step {} out of range for l_out {}",
                self.decode_step, self.l_out
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Gemm,
    Gemv,
    Softmax,
    LayerNorm,
    Activation,
    Elementwise,
    Other,
}

impl OpKind {
    pub fn is_matmul(self) -> bool {
        matches!(self, OpKind::Gemm | OpKind::Gemv)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One node of an operator graph.
///
/// Matmul ops compute `instances` independent `(m x k) * (k x n)` products.
/// The `k x n` operand is the one an engine holds stationary: a model weight
/// when `weight_resident`, otherwise the K or V cache. Non-matmul ops cover
/// `instances * m * n` elements and leave `k` at zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operator {
    pub id: usize,
    pub name: String,
    pub kind: OpKind,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub instances: u64,
    pub weight_resident: bool,
    /// Precision of the stationary `k x n` operand.
    pub stationary_bits: u32,
    /// Precision of streamed inputs and outputs.
    pub stream_bits: u32,
    pub flops_per_element: u64,
    pub exps_per_element: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub layer: Option<u64>,
}

impl Operator {
    pub fn elements(&self) -> u64 {
        self.instances * self.m * self.n
    }

    pub fn macs(&self) -> u64 {
        if self.kind.is_matmul() {
            self.instances * self.m * self.n * self.k
        } else {
            0
        }
    }

    pub fn stationary_bytes(&self) -> u64 {
        if self.kind.is_matmul() {
            bits_to_bytes(self.instances * self.k * self.n, self.stationary_bits)
        } else {
            0
        }
    }

    pub fn input_bytes(&self) -> u64 {
        self.bytes_read - self.stationary_bytes()
    }

    /// Attention matmuls whose stationary operand is the KV cache.
    pub fn is_attention(&self) -> bool {
        self.kind.is_matmul() && !self.weight_resident
    }

    /// Output rows normalized by the scalar core (one divide or sqrt each).
    pub fn rows(&self) -> u64 {
        self.instances * self.m
    }

    pub fn is_empty(&self) -> bool {
        if self.kind.is_matmul() {
            self.macs() == 0
        } else {
            self.elements() == 0
        }
    }
}

pub fn op_flops(op: &Operator) -> u64 {
    if op.kind.is_matmul() {
        2 * op.macs()
    } else {
        op.elements() * (op.flops_per_element + op.exps_per_element)
    }
}

pub fn op_bytes(op: &Operator) -> u64 {
    op.bytes_read + op.bytes_written
}

pub fn arithmetic_intensity(op: &Operator) -> f64 {
    let bytes = op_bytes(op);
    if bytes == 0 {
        0.0
    } else {
        op_flops(op) as f64 / bytes as f64
    }
}

pub(crate) fn bits_to_bytes(count: u64, bits: u32) -> u64 {
    (count * bits as u64).div_ceil(8)
}

/// Per-element costs for ops that run on the vector units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonGemmCosts {
    pub layernorm_flops: u64,
    pub softmax_flops: u64,
    pub softmax_exps: u64,
    pub activation_flops: u64,
    pub elementwise_flops: u64,
    pub rope_flops: u64,
    pub sampling_flops: u64,
}

impl Default for NonGemmCosts {
    fn default() -> Self {
        Self {
            layernorm_flops: 5,
            softmax_flops: 4,
            softmax_exps: 1,
            activation_flops: 2,
            elementwise_flops: 1,
            rope_flops: 6,
            sampling_flops: 1,
        }
    }
}

/// Switches for the parts of the graph outside the decoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphOptions {
    pub include_embedding: bool,
    pub include_lm_head: bool,
    pub include_qk_norm: bool,
    pub include_sampling: bool,
    pub non_gemm: NonGemmCosts,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            include_embedding: true,
            include_lm_head: true,
            include_qk_norm: true,
            include_sampling: true,
            non_gemm: NonGemmCosts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorGraph {
    pub phase: Phase,
    pub ops: Vec<Operator>,
    /// `(producer, consumer)` pairs of op ids; producers always precede
    /// consumers in `ops`.
    pub deps: Vec<(usize, usize)>,
}

impl OperatorGraph {
    pub fn empty(phase: Phase) -> Self {
        Self {
            phase,
            ops: Vec::new(),
            deps: Vec::new(),
        }
    }

    pub fn total_flops(&self) -> u64 {
        self.ops.iter().map(op_flops).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.ops.iter().map(op_bytes).sum()
    }

    pub fn op(&self, id: usize) -> Option<&Operator> {
        self.ops.get(id).filter(|op| op.id == id)
    }

    pub fn find(&self, name: &str) -> Option<&Operator> {
        self.ops.iter().find(|op| op.name == name)
    }

    pub fn layer_ops(&self, layer: u64) -> impl Iterator<Item = &Operator> {
        self.ops.iter().filter(move |op| op.layer == Some(layer))
    }

    /// True when every edge points forward in `ops` order.
    pub fn is_topologically_ordered(&self) -> bool {
        let position: std::collections::HashMap<usize, usize> = self
            .ops
            .iter()
            .enumerate()
            .map(|(i, op)| (op.id, i))
            .collect();
        self.deps.iter().all(|(p, c)| match (position.get(p), position.get(c)) {
            (Some(p), Some(c)) => p < c,
            _ => false,
        })
    }
}

use super::{
    bits_to_bytes, GraphOptions, ModelSpec, OpKind, Operator, OperatorGraph, Phase, PhaseRequest,
};
use crate::error::{Error, Result};

pub fn build_prefill_graph(
    model: &ModelSpec,
    req: &PhaseRequest,
    opts: &GraphOptions,
) -> Result<OperatorGraph> {
    if req.phase != Phase::Prefill {
        return Err(Error::InvalidRequest(
            "build_prefill_graph needs a prefill request".into(),
        ));
    }
    build_graph(model, req, opts)
}

pub fn build_decode_step_graph(
    model: &ModelSpec,
    req: &PhaseRequest,
    opts: &GraphOptions,
) -> Result<OperatorGraph> {
    if req.phase != Phase::Decode {
        return Err(Error::InvalidRequest(
            "build_decode_step_graph needs a decode request".into(),
        ));
    }
    build_graph(model, req, opts)
}

/// Builds the operator graph for one prefill pass or one decode step.
pub fn build_graph(
    model: &ModelSpec,
    req: &PhaseRequest,
    opts: &GraphOptions,
) -> Result<OperatorGraph> {
    model.validate()?;
    req.validate()?;
    let mut b = Builder {
        model,
        opts,
        phase: req.phase,
        // tokens processed by this pass
        tokens: match req.phase {
            Phase::Prefill => req.l_in,
            Phase::Decode => 1,
        },
        batch: req.batch,
        kv_len: match req.phase {
            Phase::Prefill => req.l_in,
            Phase::Decode => req.kv_len(),
        },
        graph: OperatorGraph::empty(req.phase),
    };
    b.build();
    Ok(b.graph)
}

struct Builder<'a> {
    model: &'a ModelSpec,
    opts: &'a GraphOptions,
    phase: Phase,
    tokens: u64,
    batch: u64,
    kv_len: u64,
    graph: OperatorGraph,
}

struct MatmulShape {
    m: u64,
    n: u64,
    k: u64,
    instances: u64,
    weight_resident: bool,
}

impl Builder<'_> {
    fn rows(&self) -> u64 {
        self.batch * self.tokens
    }

    fn build(&mut self) {
        let model = self.model;
        let h = model.hidden_dim;
        let rows = self.rows();

        let mut residual = if self.opts.include_embedding {
            // table gather: one hidden-sized row per token
            let id = self.push_elementwise("embedding", OpKind::Other, None, rows, h, 0, 1, &[]);
            Some(id)
        } else {
            None
        };

        for layer in 0..model.num_layers {
            residual = Some(self.build_layer(layer, residual));
        }

        let norm = self.push_elementwise(
            "final_norm",
            OpKind::LayerNorm,
            None,
            rows,
            h,
            self.opts.non_gemm.layernorm_flops,
            1,
            &residual.into_iter().collect::<Vec<_>>(),
        );

        if self.opts.include_lm_head {
            // only the last position of each sequence produces a token
            let head = self.push_matmul(
                "lm_head",
                None,
                MatmulShape {
                    m: self.batch,
                    n: model.vocab_size,
                    k: h,
                    instances: 1,
                    weight_resident: true,
                },
                &[norm],
            );
            if self.opts.include_sampling {
                let id = self.push_elementwise(
                    "sampling",
                    OpKind::Other,
                    None,
                    self.batch,
                    model.vocab_size,
                    self.opts.non_gemm.sampling_flops,
                    1,
                    &[head],
                );
                // argmax emits one 32-bit token id per sequence
                let op = &mut self.graph.ops[id];
                op.bytes_written = 4 * self.batch;
            }
        }
    }

    fn build_layer(&mut self, layer: u64, residual: Option<usize>) -> usize {
        let model = self.model;
        let costs = self.opts.non_gemm;
        let h = model.hidden_dim;
        let rows = self.rows();
        let l = Some(layer);
        let group = model.group_size();
        let kv_instances = self.batch * model.num_kv_heads;
        let res_deps: Vec<usize> = residual.into_iter().collect();

        let attn_norm = self.push_elementwise(
            "attn_norm",
            OpKind::LayerNorm,
            l,
            rows,
            h,
            costs.layernorm_flops,
            1,
            &res_deps,
        );
        let proj = |n| MatmulShape {
            m: rows,
            n,
            k: h,
            instances: 1,
            weight_resident: true,
        };
        let q = self.push_matmul("q_proj", l, proj(model.q_dim()), &[attn_norm]);
        // k_proj / v_proj outputs are the KV-cache appends for this pass
        let k = self.push_matmul("k_proj", l, proj(model.kv_dim()), &[attn_norm]);
        let v = self.push_matmul("v_proj", l, proj(model.kv_dim()), &[attn_norm]);

        let mut qk = vec![q, k];
        if model.qk_norm && self.opts.include_qk_norm {
            let n = self.push_elementwise(
                "qk_norm",
                OpKind::Elementwise,
                l,
                rows,
                model.q_dim() + model.kv_dim(),
                costs.layernorm_flops,
                1,
                &[q, k],
            );
            qk = vec![n];
        }
        let rope = self.push_elementwise(
            "rope",
            OpKind::Other,
            l,
            rows,
            model.q_dim() + model.kv_dim(),
            costs.rope_flops,
            1,
            &qk,
        );

        // Query heads of one group share the same K/V operand.
        let scores = self.push_matmul(
            "qk_scores",
            l,
            MatmulShape {
                m: group * self.tokens,
                n: self.kv_len,
                k: model.head_dim,
                instances: kv_instances,
                weight_resident: false,
            },
            &[rope],
        );
        let softmax = {
            let id = self.push_elementwise(
                "softmax",
                OpKind::Softmax,
                l,
                group * self.tokens,
                self.kv_len,
                costs.softmax_flops,
                1,
                &[scores],
            );
            let op = &mut self.graph.ops[id];
            op.instances = kv_instances;
            op.exps_per_element = costs.softmax_exps;
            let elems = op.elements();
            op.bytes_read = bits_to_bytes(elems, op.stream_bits);
            op.bytes_written = op.bytes_read;
            id
        };
        let pv = self.push_matmul(
            "pv",
            l,
            MatmulShape {
                m: group * self.tokens,
                n: model.head_dim,
                k: self.kv_len,
                instances: kv_instances,
                weight_resident: false,
            },
            &[softmax, v],
        );
        let o = self.push_matmul(
            "o_proj",
            l,
            MatmulShape {
                m: rows,
                n: h,
                k: model.q_dim(),
                instances: 1,
                weight_resident: true,
            },
            &[pv],
        );
        let mut add_deps = vec![o];
        add_deps.extend(&res_deps);
        let attn_add = self.push_elementwise(
            "attn_residual",
            OpKind::Elementwise,
            l,
            rows,
            h,
            costs.elementwise_flops,
            2,
            &add_deps,
        );

        let ffn_norm = self.push_elementwise(
            "ffn_norm",
            OpKind::LayerNorm,
            l,
            rows,
            h,
            costs.layernorm_flops,
            1,
            &[attn_add],
        );
        let up_shape = || MatmulShape {
            m: rows,
            n: model.ffn_dim,
            k: h,
            instances: 1,
            weight_resident: true,
        };
        let gate = self.push_matmul("gate_proj", l, up_shape(), &[ffn_norm]);
        let up = self.push_matmul("up_proj", l, up_shape(), &[ffn_norm]);
        let act = self.push_elementwise(
            "activation",
            OpKind::Activation,
            l,
            rows,
            model.ffn_dim,
            costs.activation_flops,
            1,
            &[gate],
        );
        let gated = self.push_elementwise(
            "gate_mul",
            OpKind::Elementwise,
            l,
            rows,
            model.ffn_dim,
            costs.elementwise_flops,
            2,
            &[act, up],
        );
        let down = self.push_matmul(
            "down_proj",
            l,
            MatmulShape {
                m: rows,
                n: h,
                k: model.ffn_dim,
                instances: 1,
                weight_resident: true,
            },
            &[gated],
        );
        self.push_elementwise(
            "ffn_residual",
            OpKind::Elementwise,
            l,
            rows,
            h,
            costs.elementwise_flops,
            2,
            &[down, attn_add],
        )
    }

    fn next_name(&self, base: &str, layer: Option<u64>) -> String {
        match layer {
            Some(l) => format!("L{l}.{base}"),
            None => base.to_string(),
        }
    }

    fn push(&mut self, mut op: Operator, deps: &[usize]) -> usize {
        let id = self.graph.ops.len();
        op.id = id;
        self.graph.ops.push(op);
        self.graph.deps.extend(deps.iter().map(|&d| (d, id)));
        id
    }

    fn push_matmul(
        &mut self,
        name: &str,
        layer: Option<u64>,
        s: MatmulShape,
        deps: &[usize],
    ) -> usize {
        let kind = match self.phase {
            Phase::Prefill => OpKind::Gemm,
            Phase::Decode => OpKind::Gemv,
        };
        let act = self.model.activation_bits;
        let stationary_bits = if s.weight_resident {
            self.model.weight_bits
        } else {
            // KV cache is stored at activation precision
            act
        };
        let stationary = bits_to_bytes(s.instances * s.k * s.n, stationary_bits);
        let input = bits_to_bytes(s.instances * s.m * s.k, act);
        let output = bits_to_bytes(s.instances * s.m * s.n, act);
        let op = Operator {
            id: 0,
            name: self.next_name(name, layer),
            kind,
            m: s.m,
            n: s.n,
            k: s.k,
            instances: s.instances,
            weight_resident: s.weight_resident,
            stationary_bits,
            stream_bits: act,
            flops_per_element: 0,
            exps_per_element: 0,
            bytes_read: stationary + input,
            bytes_written: output,
            layer,
        };
        self.push(op, deps)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_elementwise(
        &mut self,
        name: &str,
        kind: OpKind,
        layer: Option<u64>,
        m: u64,
        n: u64,
        flops_per_element: u64,
        inputs: u64,
        deps: &[usize],
    ) -> usize {
        let act = self.model.activation_bits;
        let elems = m * n;
        let op = Operator {
            id: 0,
            name: self.next_name(name, layer),
            kind,
            m,
            n,
            k: 0,
            instances: 1,
            weight_resident: false,
            stationary_bits: act,
            stream_bits: act,
            flops_per_element,
            exps_per_element: 0,
            bytes_read: inputs * bits_to_bytes(elems, act),
            bytes_written: bits_to_bytes(elems, act),
            layer,
        };
        self.push(op, deps)
    }
}

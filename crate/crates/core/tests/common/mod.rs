//! Reference counters for the oracle and acceptance tests. Nothing here
//! calls into the closed-form cost code: FLOPs and bytes come from walking
//! loop nests, cycles from stepping a clock.
#![allow(dead_code)]

use halo_core::hardware::{CidSpec, CimSpec, HardwareSpec};
use halo_core::workload::{GraphOptions, ModelSpec, OpKind, Operator, Phase, PhaseRequest};
use rand::Rng;

fn bytes(count: u64, bits: u32) -> u64 {
    (count * bits as u64).div_ceil(8)
}

/// Touched-element sets of a loop nest over three tensors.
struct Nest {
    a: Vec<bool>,
    b: Vec<bool>,
    c: Vec<bool>,
    macs: u64,
}

impl Nest {
    fn new(a: usize, b: usize, c: usize) -> Self {
        Self {
            a: vec![false; a],
            b: vec![false; b],
            c: vec![false; c],
            macs: 0,
        }
    }

    fn touch(&mut self, a: usize, b: usize, c: usize) {
        self.a[a] = true;
        self.b[b] = true;
        self.c[c] = true;
        self.macs += 1;
    }

    fn counts(&self) -> (u64, u64, u64) {
        let n = |v: &Vec<bool>| v.iter().filter(|&&x| x).count() as u64;
        (n(&self.a), n(&self.b), n(&self.c))
    }
}

/// `Y[r][j] = sum_k X[r][k] * W[k][j]`.
fn linear(rows: u64, k: u64, n: u64) -> Nest {
    let (r, k, n) = (rows as usize, k as usize, n as usize);
    let mut nest = Nest::new(r * k, k * n, r * n);
    for i in 0..r {
        for j in 0..n {
            for kk in 0..k {
                nest.touch(i * k + kk, kk * n + j, i * n + j);
            }
        }
    }
    nest
}

struct Dims {
    batch: u64,
    tokens: u64,
    kv_len: u64,
    q_heads: u64,
    kv_heads: u64,
    head_dim: u64,
}

/// `S[b][h][t][s] = sum_d Q[b][t][h][d] * K[b][s][h / group][d]`.
fn scores(d: &Dims) -> Nest {
    let (b, t, s, hq, hk, hd) = (
        d.batch as usize,
        d.tokens as usize,
        d.kv_len as usize,
        d.q_heads as usize,
        d.kv_heads as usize,
        d.head_dim as usize,
    );
    let group = hq / hk;
    let mut nest = Nest::new(b * t * hq * hd, b * s * hk * hd, b * hq * t * s);
    for bi in 0..b {
        for h in 0..hq {
            let kvh = h / group;
            for ti in 0..t {
                for si in 0..s {
                    for di in 0..hd {
                        nest.touch(
                            ((bi * t + ti) * hq + h) * hd + di,
                            ((bi * s + si) * hk + kvh) * hd + di,
                            ((bi * hq + h) * t + ti) * s + si,
                        );
                    }
                }
            }
        }
    }
    nest
}

/// `O[b][t][h][d] = sum_s P[b][h][t][s] * V[b][s][h / group][d]`.
fn weighted_values(d: &Dims) -> Nest {
    let (b, t, s, hq, hk, hd) = (
        d.batch as usize,
        d.tokens as usize,
        d.kv_len as usize,
        d.q_heads as usize,
        d.kv_heads as usize,
        d.head_dim as usize,
    );
    let group = hq / hk;
    let mut nest = Nest::new(b * hq * t * s, b * s * hk * hd, b * t * hq * hd);
    for bi in 0..b {
        for h in 0..hq {
            let kvh = h / group;
            for ti in 0..t {
                for di in 0..hd {
                    for si in 0..s {
                        nest.touch(
                            ((bi * hq + h) * t + ti) * s + si,
                            ((bi * s + si) * hk + kvh) * hd + di,
                            ((bi * t + ti) * hq + h) * hd + di,
                        );
                    }
                }
            }
        }
    }
    nest
}

/// FLOPs and bytes of the graph op named `name`, counted by enumerating
/// the computation the name stands for.
pub fn brute_force_flops_bytes(
    model: &ModelSpec,
    req: &PhaseRequest,
    opts: &GraphOptions,
    name: &str,
) -> (u64, u64) {
    let prefill = req.phase == Phase::Prefill;
    let tokens = if prefill { req.l_in } else { 1 };
    let dims = Dims {
        batch: req.batch,
        tokens,
        kv_len: if prefill {
            req.l_in
        } else {
            req.l_in + req.decode_step
        },
        q_heads: model.num_q_heads,
        kv_heads: model.num_kv_heads,
        head_dim: model.head_dim,
    };
    let rows = req.batch * tokens;
    let h = model.hidden_dim;
    let q = model.num_q_heads * model.head_dim;
    let kv = model.num_kv_heads * model.head_dim;
    let act = model.activation_bits;
    let w = model.weight_bits;
    let c = opts.non_gemm;
    let base = name.rsplit('.').next().unwrap_or(name);

    let matmul = |nest: Nest, stationary_bits: u32| {
        let (a, b, out) = nest.counts();
        (2 * nest.macs, bytes(a, act) + bytes(b, stationary_bits) + bytes(out, act))
    };
    // element-wise op over `elems` outputs reading `inputs` tensors
    let pointwise = |elems: u64, flops: u64, inputs: u64| {
        let mut f = 0;
        for _ in 0..elems {
            f += flops;
        }
        (f, inputs * bytes(elems, act) + bytes(elems, act))
    };

    match base {
        "embedding" => pointwise(rows * h, 0, 1),
        "attn_norm" | "ffn_norm" | "final_norm" => pointwise(rows * h, c.layernorm_flops, 1),
        "q_proj" => matmul(linear(rows, h, q), w),
        "k_proj" | "v_proj" => matmul(linear(rows, h, kv), w),
        "qk_norm" => pointwise(rows * (q + kv), c.layernorm_flops, 1),
        "rope" => pointwise(rows * (q + kv), c.rope_flops, 1),
        "qk_scores" => matmul(scores(&dims), act),
        "softmax" => {
            let elems = dims.batch * dims.q_heads * dims.tokens * dims.kv_len;
            let (f, _) = pointwise(elems, c.softmax_flops + c.softmax_exps, 1);
            (f, 2 * bytes(elems, act))
        }
        "pv" => matmul(weighted_values(&dims), act),
        "o_proj" => matmul(linear(rows, q, h), w),
        "attn_residual" | "ffn_residual" => pointwise(rows * h, c.elementwise_flops, 2),
        "gate_proj" | "up_proj" => matmul(linear(rows, h, model.ffn_dim), w),
        "activation" => pointwise(rows * model.ffn_dim, c.activation_flops, 1),
        "gate_mul" => pointwise(rows * model.ffn_dim, c.elementwise_flops, 2),
        "down_proj" => matmul(linear(rows, model.ffn_dim, h), w),
        "lm_head" => matmul(linear(req.batch, h, model.vocab_size), w),
        "sampling" => {
            let elems = req.batch * model.vocab_size;
            let (f, _) = pointwise(elems, c.sampling_flops, 1);
            (f, bytes(elems, act) + 4 * req.batch)
        }
        other => panic!("no reference for op `{other}`"),
    }
}

pub fn random_model(rng: &mut impl Rng) -> ModelSpec {
    let kv_heads = rng.random_range(1..=3);
    let group = rng.random_range(1..=3);
    let head_dim = [2, 4, 8][rng.random_range(0..3)];
    ModelSpec {
        name: "tiny".into(),
        num_layers: rng.random_range(1..=2),
        hidden_dim: rng.random_range(4..=24),
        num_q_heads: kv_heads * group,
        num_kv_heads: kv_heads,
        head_dim,
        ffn_dim: rng.random_range(4..=32),
        vocab_size: rng.random_range(2..=40),
        weight_bits: [4, 8, 16][rng.random_range(0..3)],
        activation_bits: [8, 16][rng.random_range(0..2)],
        qk_norm: rng.random_bool(0.5),
    }
}

pub fn random_request(rng: &mut impl Rng) -> PhaseRequest {
    let l_in = rng.random_range(1..=12);
    let batch = rng.random_range(1..=3);
    if rng.random_bool(0.5) {
        PhaseRequest::prefill(l_in, batch)
    } else {
        let l_out = rng.random_range(1..=6);
        PhaseRequest::decode(l_in, l_out, batch, rng.random_range(0..l_out))
    }
}

/// A standalone matmul with every dimension in `1..=max_dim`.
pub fn random_matmul(rng: &mut impl Rng, max_dim: u64) -> Operator {
    let m = rng.random_range(1..=max_dim);
    let n = rng.random_range(1..=max_dim);
    let k = rng.random_range(1..=max_dim);
    let instances = rng.random_range(1..=4);
    let weight_resident = rng.random_bool(0.5);
    let stationary_bits = [4, 8][rng.random_range(0..2)];
    let stream_bits = 8;
    Operator {
        id: 0,
        name: "rand".into(),
        kind: if m == 1 { OpKind::Gemv } else { OpKind::Gemm },
        m,
        n,
        k,
        instances,
        weight_resident,
        stationary_bits,
        stream_bits,
        flops_per_element: 0,
        exps_per_element: 0,
        bytes_read: bytes(instances * k * n, stationary_bits) + bytes(instances * m * k, stream_bits),
        bytes_written: bytes(instances * m * n, stream_bits),
        layer: None,
    }
}

/// Crossbar tiles of one op in issue order: per instance, column blocks of
/// one unit's width, row tiles within a block, column tiles within a row.
/// Each entry is (rows used, columns used).
fn crossbar_tiles(op: &Operator, cim: &CimSpec) -> Vec<(u64, u64)> {
    let slices = (op.stationary_bits as u64).div_ceil(cim.bits_per_cell as u64);
    let cols = op.n * slices;
    let mut row_tiles = Vec::new();
    let mut r = 0;
    while r < op.k {
        row_tiles.push((op.k - r).min(cim.crossbar_rows));
        r += cim.crossbar_rows;
    }
    let mut col_tiles = Vec::new();
    let mut c = 0;
    while c < cols {
        col_tiles.push((cols - c).min(cim.crossbar_cols));
        c += cim.crossbar_cols;
    }
    let mut out = Vec::new();
    for _ in 0..op.instances {
        for block in col_tiles.chunks(cim.crossbars_per_unit as usize) {
            for &rows in &row_tiles {
                for &cols in block {
                    out.push((rows, cols));
                }
            }
        }
    }
    out
}

/// Steps a global clock over every crossbar of every round. A crossbar
/// spends one cycle per (input row, wordline group, input bit, ADC pass);
/// each cycle converts the columns its ADCs cover in that pass.
pub fn cim_step(op: &Operator, cim: &CimSpec) -> (u64, u64) {
    let tiles = crossbar_tiles(op, cim);
    let xbars = (cim.units_per_core * cim.crossbars_per_unit
        * cim.tile_mesh[0]
        * cim.tile_mesh[1]
        * cim.core_mesh[0]
        * cim.core_mesh[1]) as usize;
    let isb = cim.input_stream_bits as u64;
    let bit_cycles = (op.stream_bits as u64).div_ceil(isb) * isb;
    let mut cycles = 0u64;
    let mut conversions = 0u64;
    for round in tiles.chunks(xbars) {
        // per crossbar: (input row, group, bit, adc pass)
        let mut state: Vec<(u64, u64, u64, u64)> = vec![(0, 0, 0, 0); round.len()];
        loop {
            let mut busy = false;
            for (x, &(rows, cols)) in round.iter().enumerate() {
                let groups = rows.div_ceil(cim.wordlines_active);
                let passes = cols.div_ceil(cim.adc_per_crossbar);
                let s = &mut state[x];
                if s.0 >= op.m {
                    continue;
                }
                busy = true;
                conversions += (cols - s.3 * cim.adc_per_crossbar).min(cim.adc_per_crossbar);
                s.3 += 1;
                if s.3 == passes {
                    s.3 = 0;
                    s.2 += 1;
                    if s.2 == bit_cycles {
                        s.2 = 0;
                        s.1 += 1;
                        if s.1 == groups {
                            s.1 = 0;
                            s.0 += 1;
                        }
                    }
                }
            }
            if !busy {
                break;
            }
            cycles += 1;
        }
    }
    (cycles, conversions)
}

/// Stationary columns per bank under the bank-placement policy, computed by
/// dealing columns out one at a time.
pub fn deal_columns(op: &Operator, banks: u64) -> Vec<u64> {
    let mut per_bank = vec![0u64; banks as usize];
    if op.weight_resident || op.instances <= 1 {
        for col in 0..op.instances * op.n {
            per_bank[(col % banks) as usize] += 1;
        }
    } else if op.instances <= banks {
        // contiguous bank range per instance, lower ranges one bank larger
        let mut ranges = vec![0u64; op.instances as usize];
        for b in 0..banks {
            ranges[(b % op.instances) as usize] += 1;
        }
        let mut start = 0;
        for &len in &ranges {
            for col in 0..op.n {
                per_bank[(start + col % len) as usize] += 1;
            }
            start += len;
        }
    } else {
        for inst in 0..op.instances {
            per_bank[(inst % banks) as usize] += op.n;
        }
    }
    per_bank
}

/// Steps the busiest bank's read / multiply pipeline, preceded by the first
/// input-buffer fill and followed by the adder tree.
pub fn cid_step(op: &Operator, cid: &CidSpec) -> u64 {
    let banks = cid.num_stacks * cid.channels_per_stack * cid.bankgroups_per_channel
        * cid.banks_per_bankgroup;
    let per_bank = deal_columns(op, banks);
    let col_bytes = (cid.multipliers_per_bank * cid.multiplier_bits as u64).div_ceil(8);
    let clk = |t: f64| (t * cid.dram_clock - 1e-9).ceil().max(0.0) as u64;
    let read = clk(cid.t_rcd) + clk(cid.t_rp) + cid.row_size_bytes.div_ceil(col_bytes) * clk(cid.t_ccd).max(1);
    let mult = (cid.row_size_bytes * 8 / cid.multiplier_bits as u64).div_ceil(cid.multipliers_per_bank);

    // buffer fill: one column write per clock
    let buf_operands = cid.local_buffer_bytes * 8 / cid.multiplier_bits as u64;
    let mut fill_bytes = (op.k.min(buf_operands) * op.stream_bits as u64).div_ceil(8);
    let mut fill = 0;
    let mut loads_per_vector = 0;
    let mut left = op.k;
    while left > 0 {
        loads_per_vector += 1;
        left = left.saturating_sub(buf_operands);
    }
    while fill_bytes > 0 {
        fill_bytes = fill_bytes.saturating_sub(col_bytes);
        fill += 1;
    }
    let buffer = if cid.double_buffered {
        fill
    } else {
        op.m * loads_per_vector * fill
    };

    let mut slowest = 0;
    for &cols in &per_bank {
        let rows = (cols * op.k * op.stationary_bits as u64)
            .div_ceil(8)
            .div_ceil(cid.row_size_bytes);
        let items = op.m * rows;
        // reader: rows read so far, cycles left on current read, holding a row
        let (mut issued, mut reading, mut holding) = (0u64, 0u64, false);
        // multiplier: rows done, cycles left
        let (mut done, mut mac_left) = (0u64, 0u64);
        let mut t = 0u64;
        while done < items {
            // hand a finished row to an idle multiplier
            if holding && mac_left == 0 {
                holding = false;
                mac_left = mult;
            }
            let can_read = if cid.double_buffered {
                !holding
            } else {
                !holding && mac_left == 0
            };
            if reading == 0 && can_read && issued < items {
                reading = read;
                issued += 1;
            }
            if reading == 0 && mac_left == 0 && !holding {
                break;
            }
            t += 1;
            if reading > 0 {
                reading -= 1;
                if reading == 0 {
                    holding = true;
                }
            }
            if mac_left > 0 {
                mac_left -= 1;
                if mac_left == 0 {
                    done += 1;
                }
            }
        }
        slowest = slowest.max(t);
    }

    let mut reduction = 0;
    let mut width = cid.multipliers_per_bank.max(1);
    while width > 1 {
        width = width.div_ceil(2);
        reduction += 1;
    }
    buffer + slowest + reduction
}

/// Steps the output-stationary wavefront of every array in every round:
/// PE (i, j) fires its `k` products at cycles i + j .. i + j + k - 1.
pub fn sa_step(op: &Operator, hw: &HardwareSpec) -> u64 {
    let sa = &hw.systolic;
    let arrays = (hw.cim.tile_mesh[0] * hw.cim.tile_mesh[1] * hw.cim.core_mesh[0] * hw.cim.core_mesh[1]
        * sa.arrays_per_core) as usize;
    let mut tiles = Vec::new();
    for _ in 0..op.instances {
        let mut i = 0;
        while i < op.m {
            let mut j = 0;
            while j < op.n {
                tiles.push(((op.m - i).min(sa.array_rows), (op.n - j).min(sa.array_cols)));
                j += sa.array_cols;
            }
            i += sa.array_rows;
        }
    }
    let mut total = 0;
    for round in tiles.chunks(arrays) {
        let mut round_end = 0;
        for &(mu, nu) in round {
            for i in 0..mu {
                for j in 0..nu {
                    round_end = round_end.max(i + j + op.k);
                }
            }
        }
        total += round_end;
    }
    total
}

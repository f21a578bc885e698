use super::{
    dram_path, pipeline_latency, require_matmul, OpCost, RoundStages, Stage, StageCost,
};
use crate::error::Result;
use crate::hardware::{CostTable, Engine, HardwareSpec};
use crate::workload::Operator;

/// Cycles for one output-stationary tile: operands skew in over
/// `m_used + n_used - 2` cycles and every PE accumulates `k` products.
pub(crate) fn sa_tile_cycles(m_used: u64, n_used: u64, k: u64) -> u64 {
    m_used + n_used + k - 2
}

/// Latency and energy of a matmul on the systolic arrays that replace the
/// CiM units at iso-area. Arrays sit where the CiM units were, so they share
/// the global buffer, NoC and DRAM path.
pub fn sa_gemm_cost(op: &Operator, hw: &HardwareSpec, table: &CostTable) -> Result<OpCost> {
    require_matmul(op, Engine::Sa)?;
    if op.is_empty() {
        return Ok(OpCost::zero());
    }
    let sa = &hw.systolic;
    let cim = &hw.cim;
    let dram = dram_path(hw);
    let arrays = cim.total_cores() * sa.arrays_per_core;
    let (rows, cols) = (sa.array_rows, sa.array_cols);
    let tm = op.m.div_ceil(rows);
    let tn = op.n.div_ceil(cols);
    let total = op.instances * tm * tn;
    let n_rounds = total.div_ceil(arrays);
    let in_b = op.stream_bits as f64 / 8.0;
    let w_b = op.stationary_bits as f64 / 8.0;
    let k = op.k as f64;

    let mut stages = Vec::with_capacity(n_rounds as usize);
    let mut round_cycles = 0u64;
    let mut round_bytes = 0.0;
    let mut fill_bytes = 0.0;
    let mut cycles_total = 0u64;
    let streamed = (op.bytes_read + op.bytes_written) as f64;
    let mut j = 0u64;
    let close = |round_cycles: u64, round_bytes: f64, first: bool, stages: &mut Vec<RoundStages>| {
        let mut d = streamed / n_rounds as f64 / dram.bandwidth;
        if first {
            d += dram.latency;
        }
        stages.push(RoundStages {
            dram: d,
            fill: round_bytes / cim.gb_bw,
            compute: round_cycles as f64 / sa.sa_clock,
        });
    };
    for _ in 0..op.instances {
        for i in 0..tm {
            let mu = (op.m - i * rows).min(rows);
            for jn in 0..tn {
                let nu = (op.n - jn * cols).min(cols);
                let cycles = sa_tile_cycles(mu, nu, op.k);
                round_cycles = round_cycles.max(cycles);
                let bytes = mu as f64 * k * in_b + k * nu as f64 * w_b + (mu * nu) as f64 * in_b;
                round_bytes += bytes;
                j += 1;
                if j % arrays == 0 || j == total {
                    close(round_cycles, round_bytes, stages.is_empty(), &mut stages);
                    cycles_total += round_cycles;
                    fill_bytes += round_bytes;
                    round_cycles = 0;
                    round_bytes = 0.0;
                }
            }
        }
    }
    let latency = pipeline_latency(&stages);
    let sum = |f: fn(&RoundStages) -> f64| stages.iter().map(f).sum::<f64>();

    let sram = &table.e_sram_bit;
    let buffer_energy = (streamed + fill_bytes) * 8.0 * sram.gb
        + fill_bytes * 8.0 * cim.mean_hops() * table.e_noc_bit_per_hop;
    let mut cost = OpCost::from_stages(
        latency,
        [
            (
                Stage::Compute,
                StageCost {
                    time: sum(|r| r.compute),
                    energy: op.macs() as f64 * table.e_mac_sa,
                },
            ),
            (
                Stage::Memory,
                StageCost {
                    time: sum(|r| r.dram),
                    energy: dram.energy(streamed, table),
                },
            ),
            (
                Stage::Buffer,
                StageCost {
                    time: sum(|r| r.fill),
                    energy: buffer_energy,
                },
            ),
        ],
    );
    cost.compute_cycles = cycles_total;
    Ok(cost)
}

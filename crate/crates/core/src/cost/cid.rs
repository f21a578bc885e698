use serde::{Deserialize, Serialize};

use super::{require_matmul, OpCost, Stage, StageCost};
use crate::error::{Error, Result};
use crate::hardware::{CidSpec, CostTable, Engine, InterposerLink};
use crate::workload::Operator;

/// How a CiD op's stationary columns are spread over the banks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Stationary columns held by each bank, indexed by bank.
    pub columns_per_bank: Vec<u64>,
    /// DRAM rows each bank streams per input vector (busiest bank).
    pub rows_per_bank: u64,
    /// Fills of the local input buffer per input vector.
    pub buffer_loads: u64,
}

impl PartitionPlan {
    pub fn max_columns(&self) -> u64 {
        self.columns_per_bank.iter().copied().max().unwrap_or(0)
    }

    pub fn min_columns(&self) -> u64 {
        self.columns_per_bank.iter().copied().min().unwrap_or(0)
    }

    pub fn banks_used(&self) -> u64 {
        self.columns_per_bank.iter().filter(|&&c| c > 0).count() as u64
    }
}

/// `total` items over `slots`; lower-indexed slots take the remainder.
fn stripe(total: u64, slots: u64) -> impl Iterator<Item = u64> {
    let (base, extra) = (total / slots, total % slots);
    (0..slots).map(move |i| base + u64::from(i < extra))
}

/// Spreads an op's stationary columns over the banks.
///
/// Weight columns are striped over every bank. KV-cache columns stay with
/// their sequence: each instance (one sequence's head) owns a contiguous
/// bank range and is striped only inside it; with more instances than banks,
/// whole instances are dealt out round-robin.
pub fn plan_cid_partition(op: &Operator, cid: &CidSpec) -> Result<PartitionPlan> {
    let needed = op.stationary_bytes();
    if needed > cid.capacity_bytes {
        return Err(Error::Capacity {
            needed,
            available: cid.capacity_bytes,
        });
    }
    let banks = cid.total_banks();
    let columns_per_bank: Vec<u64> = if op.weight_resident || op.instances <= 1 {
        stripe(op.instances * op.n, banks).collect()
    } else if op.instances <= banks {
        stripe(banks, op.instances)
            .flat_map(|range| stripe(op.n, range))
            .collect()
    } else {
        stripe(op.instances, banks).map(|i| i * op.n).collect()
    };
    let busiest = columns_per_bank.iter().copied().max().unwrap_or(0);
    let bytes = (busiest * op.k * op.stationary_bits as u64).div_ceil(8);
    Ok(PartitionPlan {
        columns_per_bank,
        rows_per_bank: bytes.div_ceil(cid.row_size_bytes),
        buffer_loads: op.k.div_ceil(cid.buffer_operands().max(1)),
    })
}

/// Latency and energy of a matmul executed by the bank multipliers.
///
/// Each of the `m` input rows is broadcast to every bank's local buffer;
/// banks then stream their resident rows through the multipliers. The
/// slowest bank sets the pace.
pub fn cid_gemv_cost(
    op: &Operator,
    cid: &CidSpec,
    table: &CostTable,
    tsv: &InterposerLink,
) -> Result<OpCost> {
    require_matmul(op, Engine::Cid)?;
    if op.is_empty() {
        return Ok(OpCost::zero());
    }
    let plan = plan_cid_partition(op, cid)?;
    let rows_per_bank = plan.rows_per_bank;

    let clock = cid.dram_clock;
    let s = cid.row_stream_cycles();
    let c = cid.row_mac_cycles();
    // rows stream through a two-stage (read, multiply) pipeline
    let items = op.m * rows_per_bank;
    let bank_cycles = match items {
        0 => 0,
        n if cid.double_buffered => s + (n - 1) * s.max(c) + c,
        n => n * (s + c),
    };
    // input chunks written into the local buffer, one column per clock;
    // with double buffering only the first load is exposed
    let chunk = op.k.min(cid.buffer_operands()) * op.stream_bits as u64;
    let load_cycles = chunk.div_ceil(8).div_ceil(cid.column_bytes());
    let buffer_cycles = if cid.double_buffered {
        load_cycles
    } else {
        op.m * plan.buffer_loads * load_cycles
    };
    let reduction_cycles = cid.reduction_stages();
    let cycles = buffer_cycles + bank_cycles + reduction_cycles;

    let out_bytes = op.bytes_written as f64;
    let aggregate_t = tsv.latency + out_bytes / tsv.bandwidth;
    let slow = 1.0 + table.refresh_overhead;
    let latency = (buffer_cycles as f64 + bank_cycles as f64 * slow + reduction_cycles as f64)
        / clock
        + aggregate_t;
    let stream_t = (items * s) as f64 * slow / clock;
    let mac_t = (items * c + reduction_cycles) as f64 / clock;
    let buffer_t = buffer_cycles as f64 / clock;
    let m = op.m as f64;

    let stationary_bits = op.instances * op.k * op.n * op.stationary_bits as u64;
    // every bank opens the rows it holds, the busiest sets the pace
    let rows_opened: u64 = plan
        .columns_per_bank
        .iter()
        .map(|&c| (c * op.k * op.stationary_bits as u64).div_ceil(8).div_ceil(cid.row_size_bytes))
        .sum();
    let activations = op.m * rows_opened;
    let memory_energy = m * stationary_bits as f64 * table.e_dram_bit_internal
        + activations as f64 * table.e_dram_row_act;
    let macs = op.macs() as f64;
    let buffer_energy = (macs + (op.m * op.k * op.instances) as f64)
        * op.stream_bits as f64
        * table.e_sram_bit.local;

    let mut cost = OpCost::from_stages(
        latency,
        [
            (
                Stage::Memory,
                StageCost {
                    time: stream_t,
                    energy: memory_energy,
                },
            ),
            (
                Stage::Compute,
                StageCost {
                    time: mac_t,
                    energy: macs * table.e_mac_cid,
                },
            ),
            (
                Stage::Buffer,
                StageCost {
                    time: buffer_t,
                    energy: buffer_energy,
                },
            ),
            (
                Stage::Transfer,
                StageCost {
                    time: aggregate_t,
                    energy: out_bytes * 8.0 * table.e_dram_bit_internal,
                },
            ),
        ],
    );
    cost.compute_cycles = cycles;
    Ok(cost)
}

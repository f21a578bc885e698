use super::{OpCost, Stage, StageCost};
use crate::error::{Error, Result};
use crate::hardware::{CostTable, Engine, HardwareSpec};
use crate::workload::{op_bytes, OpKind, Operator};

/// Latency and energy of an element-wise, normalization or softmax op on the
/// logic-die vector units. Compute and operand streaming overlap.
pub fn vector_op_cost(op: &Operator, hw: &HardwareSpec, table: &CostTable) -> Result<OpCost> {
    if op.kind.is_matmul() {
        return Err(Error::WrongEngine {
            op: op.name.clone(),
            engine: Engine::Vector,
        });
    }
    if op.is_empty() {
        return Ok(OpCost::zero());
    }
    let ld = &hw.logic_die;
    let elements = op.elements();
    let lanes = ld.vector_width * ld.units;
    let vector_cycles = elements.div_ceil(lanes) * op.flops_per_element;
    let exps = elements * op.exps_per_element;
    let exp_cycles = exps.div_ceil(ld.exp_units * ld.units);
    let scalar_cycles = if ld.scalar_core && matches!(op.kind, OpKind::Softmax | OpKind::LayerNorm)
    {
        op.rows().div_ceil(ld.units) * ld.scalar_cycles_per_row
    } else {
        0
    };
    let cycles = vector_cycles + exp_cycles + scalar_cycles;
    let compute_t = cycles as f64 / ld.vector_clock;

    let bytes = op_bytes(op) as f64;
    let bandwidth = hw.cid.external_bandwidth().min(hw.tsv.bandwidth);
    let memory_t = bytes / bandwidth;
    let memory_energy = bytes * 8.0 * table.e_dram_bit_internal
        + (bytes / hw.cid.row_size_bytes as f64).ceil() * table.e_dram_row_act;
    let compute_energy = (elements * op.flops_per_element) as f64 * table.e_vector_op
        + exps as f64 * table.e_exp_op;

    let mut cost = OpCost::from_stages(
        compute_t.max(memory_t),
        [
            (
                Stage::Compute,
                StageCost {
                    time: compute_t,
                    energy: compute_energy,
                },
            ),
            (
                Stage::Memory,
                StageCost {
                    time: memory_t,
                    energy: memory_energy,
                },
            ),
        ],
    );
    cost.compute_cycles = cycles;
    Ok(cost)
}

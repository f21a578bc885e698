use serde::{Deserialize, Serialize};

use super::{
    pipeline_latency, require_matmul, DramPath, OpCost, Residency, RoundStages, Stage, StageCost,
};
use crate::error::{Error, Result};
use crate::hardware::{CimSpec, CostTable, Engine};
use crate::workload::Operator;

/// How an op's stationary `k x n` operand is cut into crossbar tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CimTileGrid {
    /// Crossbar columns one stationary value occupies.
    pub slices: u64,
    pub row_tiles: u64,
    pub col_tiles: u64,
    pub tiles_per_instance: u64,
    pub total_tiles: u64,
    /// Tiles resident at once; one round maps this many.
    pub capacity: u64,
    pub rounds: u64,
    /// Cycles to stream one input value bit-serially.
    pub bit_cycles: u64,
}

pub fn cim_tile_grid(op: &Operator, cim: &CimSpec) -> CimTileGrid {
    let slices = (op.stationary_bits as u64).div_ceil(cim.bits_per_cell as u64);
    let row_tiles = op.k.div_ceil(cim.crossbar_rows);
    let col_tiles = (op.n * slices).div_ceil(cim.crossbar_cols);
    let tiles_per_instance = row_tiles * col_tiles;
    let total_tiles = op.instances * tiles_per_instance;
    let capacity = cim.total_crossbars();
    let isb = cim.input_stream_bits as u64;
    CimTileGrid {
        slices,
        row_tiles,
        col_tiles,
        tiles_per_instance,
        total_tiles,
        capacity,
        rounds: total_tiles.div_ceil(capacity),
        bit_cycles: (op.stream_bits as u64).div_ceil(isb) * isb,
    }
}

#[derive(Debug, Clone, Copy)]
struct Tile {
    instance: u64,
    row_tile: u64,
    col_tile: u64,
    rows: u64,
    cols: u64,
}

/// Visits tiles in crossbar order. Each CiM unit takes a run of up to
/// `crossbars_per_unit` column tiles of one row tile so its input buffer
/// feeds all of them; consecutive units walk down the row tiles so a core
/// can reduce partial sums before they leave it.
fn for_each_tile(op: &Operator, cim: &CimSpec, grid: &CimTileGrid, mut f: impl FnMut(Tile)) {
    let block = cim.crossbars_per_unit;
    let cols_total = op.n * grid.slices;
    for instance in 0..op.instances {
        for cb in 0..grid.col_tiles.div_ceil(block) {
            let ct_end = ((cb + 1) * block).min(grid.col_tiles);
            for row_tile in 0..grid.row_tiles {
                let rows = (op.k - row_tile * cim.crossbar_rows).min(cim.crossbar_rows);
                for col_tile in cb * block..ct_end {
                    let cols = (cols_total - col_tile * cim.crossbar_cols).min(cim.crossbar_cols);
                    f(Tile {
                        instance,
                        row_tile,
                        col_tile,
                        rows,
                        cols,
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct CoreTraffic {
    input: f64,
    weight: f64,
    psum: f64,
}

#[derive(Debug, Default)]
struct RoundAcc {
    max_cycles: u64,
    max_rows: u64,
    weight_bytes: f64,
    cores: Vec<CoreTraffic>,
}

/// Latency and energy of a matmul on the analog CiM crossbars.
///
/// Weight ops honour `residency`; KV-cache operands are always written
/// before use.
pub fn cim_gemm_cost(
    op: &Operator,
    cim: &CimSpec,
    table: &CostTable,
    dram: &DramPath,
    residency: Residency,
) -> Result<OpCost> {
    require_matmul(op, Engine::Cim)?;
    if op.is_empty() {
        return Ok(OpCost::zero());
    }
    let grid = cim_tile_grid(op, cim);
    let residency = if op.weight_resident {
        residency
    } else {
        Residency::Reloaded
    };
    if residency == Residency::Stationary && grid.total_tiles > grid.capacity {
        return Err(Error::Infeasible {
            op: op.name.clone(),
            reason: format!(
                "{} crossbar tiles cannot stay resident in {} crossbars",
                grid.total_tiles, grid.capacity
            ),
        });
    }
    let load = residency == Residency::Reloaded;

    let m = op.m as f64;
    let in_bytes = op.stream_bits as f64 / 8.0;
    let psum_bytes = cim.psum_bits as f64 / 8.0;
    let cell_bits = cim.bits_per_cell as f64;
    let unit = cim.crossbars_per_unit;
    let core_size = cim.crossbars_per_core();
    let cores_per_round = grid.capacity.div_ceil(core_size) as usize;

    let mut rounds: Vec<RoundAcc> = Vec::with_capacity(grid.rounds as usize);
    let mut conversions: u64 = 0;
    let mut weight_cells: u64 = 0;
    let mut prev_unit_key = (u64::MAX, u64::MAX);
    let mut core_outputs: Vec<(u64, u64)> = Vec::with_capacity(core_size as usize);
    let mut j: u64 = 0;

    for_each_tile(op, cim, &grid, |t| {
        let slot = j % grid.capacity;
        j += 1;
        if slot == 0 {
            rounds.push(RoundAcc {
                cores: vec![CoreTraffic::default(); cores_per_round],
                ..Default::default()
            });
        }
        let round = rounds.last_mut().expect("round opened at slot 0");
        let core = (slot / core_size) as usize;
        let groups = cim.row_groups(t.rows);
        let cycles = groups * grid.bit_cycles * cim.adc_rounds(t.cols);
        round.max_cycles = round.max_cycles.max(cycles);
        conversions += op.m * grid.bit_cycles * groups * t.cols;

        if load {
            let cells = t.rows * t.cols;
            weight_cells += cells;
            let bytes = cells as f64 * cell_bits / 8.0;
            round.weight_bytes += bytes;
            round.cores[core].weight += bytes;
            round.max_rows = round.max_rows.max(t.rows);
        }

        let unit_key = (t.instance, t.row_tile);
        if slot % unit == 0 || unit_key != prev_unit_key {
            round.cores[core].input += m * t.rows as f64 * in_bytes;
        }
        prev_unit_key = unit_key;

        if slot % core_size == 0 {
            core_outputs.clear();
        }
        let out_key = (t.instance, t.col_tile);
        if !core_outputs.contains(&out_key) {
            core_outputs.push(out_key);
            let values = t.cols.div_ceil(grid.slices) as f64;
            round.cores[core].psum += m * values * psum_bytes;
        }
    });

    let n_rounds = rounds.len() as f64;
    let streamed = (op.input_bytes() + op.bytes_written) as f64;
    let mut stages = Vec::with_capacity(rounds.len());
    let (mut fill_bytes, mut in_total, mut w_total, mut ps_total) = (0.0, 0.0, 0.0, 0.0);
    let mut cycles_total: u64 = 0;
    for (i, r) in rounds.iter().enumerate() {
        let mut dram_bytes = streamed / n_rounds;
        if load {
            dram_bytes += r.weight_bytes;
        }
        let mut dram_t = dram_bytes / dram.bandwidth;
        if i == 0 {
            dram_t += dram.latency;
        }
        let (mut core_in, mut core_w, mut core_ps) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut round_bytes = 0.0;
        for c in &r.cores {
            core_in = core_in.max(c.input);
            core_w = core_w.max(c.weight);
            core_ps = core_ps.max(c.psum);
            round_bytes += c.input + c.weight + c.psum;
            in_total += c.input;
            w_total += c.weight;
            ps_total += c.psum;
        }
        fill_bytes += round_bytes;
        let fill_t = (round_bytes / cim.gb_bw)
            .max(core_in / cim.ib_bw)
            .max(core_w / cim.wb_bw)
            .max(core_ps / cim.ob_bw)
            + r.max_rows as f64 * table.t_crossbar_write;
        let cycles = op.m * r.max_cycles;
        cycles_total += cycles;
        stages.push(RoundStages {
            dram: dram_t,
            fill: fill_t,
            compute: cycles as f64 / cim.cim_clock,
        });
    }
    let latency = pipeline_latency(&stages);
    let sum = |f: fn(&RoundStages) -> f64| stages.iter().map(f).sum::<f64>();

    let dram_bytes = streamed + if load { w_total } else { 0.0 };
    let sram = &table.e_sram_bit;
    let buffer_energy = (dram_bytes + fill_bytes) * 8.0 * sram.gb
        + in_total * 8.0 * sram.ib
        + w_total * 8.0 * sram.wb
        + ps_total * 8.0 * sram.ob
        + fill_bytes * 8.0 * cim.mean_hops() * table.e_noc_bit_per_hop
        + weight_cells as f64 * table.e_crossbar_write;
    let compute_t = sum(|r| r.compute);

    let mut cost = OpCost::from_stages(
        latency,
        [
            (
                Stage::Compute,
                StageCost {
                    time: compute_t,
                    energy: op.macs() as f64 * table.e_mac_cim,
                },
            ),
            (
                Stage::Adc,
                StageCost {
                    time: compute_t,
                    energy: conversions as f64 * table.e_adc_conv,
                },
            ),
            (
                Stage::Memory,
                StageCost {
                    time: sum(|r| r.dram),
                    energy: dram.energy(dram_bytes, table),
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
    cost.adc_conversions = conversions;
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::cost::{dram_path, Bound};
    use crate::workload::OpKind;

    fn gemm(m: u64, k: u64, n: u64) -> Operator {
        Operator {
            id: 0,
            name: "w".into(),
            kind: OpKind::Gemm,
            m,
            n,
            k,
            instances: 1,
            weight_resident: true,
            stationary_bits: 8,
            stream_bits: 8,
            flops_per_element: 0,
            exps_per_element: 0,
            bytes_read: m * k + k * n,
            bytes_written: m * n,
            layer: None,
        }
    }

    fn cost(op: &Operator, wordlines: u64) -> OpCost {
        let hw = presets::hardware();
        let mut cim = hw.cim.clone();
        cim.wordlines_active = wordlines;
        cim_gemm_cost(op, &cim, &presets::cost_table(), &dram_path(&hw), Residency::Reloaded)
            .unwrap()
    }

    #[test]
    fn large_weight_needs_multiple_rounds() {
        // 8192 x 8192 8-bit weights -> 64 x 512 tiles on 128 x 128 crossbars
        let hw = presets::hardware();
        let g = cim_tile_grid(&gemm(1, 8192, 8192), &hw.cim);
        assert_eq!(g.total_tiles, 32768);
        assert_eq!(g.rounds, 32768 / hw.cim.total_crossbars());
    }

    #[test]
    fn half_wordlines_double_conversions() {
        let op = gemm(64, 4096, 4096);
        let full = cost(&op, 128);
        let half = cost(&op, 64);
        assert_eq!(half.adc_conversions, 2 * full.adc_conversions);
        assert!(half.latency > full.latency);
    }

    #[test]
    fn one_crossbar_cycle_count() {
        // k = 128 rows, n = 16 values = 128 columns -> 3 ADC rounds x 8 bits
        let c = cost(&gemm(5, 128, 16), 128);
        assert_eq!(c.compute_cycles, 5 * 8 * 3);
        assert_eq!(c.adc_conversions, 5 * 8 * 128);
    }

    #[test]
    fn stationary_skips_weight_traffic() {
        let hw = presets::hardware();
        let op = gemm(1, 1024, 1024);
        let t = presets::cost_table();
        let path = dram_path(&hw);
        let re = cim_gemm_cost(&op, &hw.cim, &t, &path, Residency::Reloaded).unwrap();
        let st = cim_gemm_cost(&op, &hw.cim, &t, &path, Residency::Stationary).unwrap();
        assert!(st.latency < re.latency);
        assert!(st.energy < re.energy);
    }

    #[test]
    fn oversized_stationary_is_infeasible() {
        let hw = presets::hardware();
        let op = gemm(1, 8192, 8192);
        let r = cim_gemm_cost(
            &op,
            &hw.cim,
            &presets::cost_table(),
            &dram_path(&hw),
            Residency::Stationary,
        );
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn gemv_weight_streaming_is_memory_bound() {
        assert_eq!(cost(&gemm(1, 4096, 4096), 128).bound, Bound::MemoryBound);
    }

    #[test]
    fn non_matmul_rejected() {
        let mut op = gemm(1, 1, 1);
        op.kind = OpKind::Softmax;
        let hw = presets::hardware();
        let r = cim_gemm_cost(
            &op,
            &hw.cim,
            &presets::cost_table(),
            &dram_path(&hw),
            Residency::Reloaded,
        );
        assert!(matches!(r, Err(Error::WrongEngine { .. })));
    }
}

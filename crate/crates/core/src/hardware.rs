//! Hardware description: HBM compute-in-DRAM stacks, the analog CiM
//! accelerator on the interposer, logic-die vector units, the systolic-array
//! variant, and the calibration constants every cost model reads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Engine {
    #[serde(rename = "cid")]
    Cid,
    #[serde(rename = "cim")]
    Cim,
    #[serde(rename = "sa")]
    Sa,
    #[serde(rename = "vector")]
    Vector,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Cid, Engine::Cim, Engine::Sa, Engine::Vector];
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Cid => "CiD",
            Engine::Cim => "CiM",
            Engine::Sa => "SA",
            Engine::Vector => "Vector",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cid" => Ok(Engine::Cid),
            "cim" => Ok(Engine::Cim),
            "sa" | "systolic" => Ok(Engine::Sa),
            "vector" | "logic" => Ok(Engine::Vector),
            _ => Err(Error::UnknownEngine(s.to_string())),
        }
    }
}

/// HBM stacks with bank-level multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CidSpec {
    pub num_stacks: u64,
    pub channels_per_stack: u64,
    pub bankgroups_per_channel: u64,
    pub banks_per_bankgroup: u64,
    pub multipliers_per_bank: u64,
    pub multiplier_bits: u32,
    pub local_buffer_bytes: u64,
    pub double_buffered: bool,
    /// Clock of the bank multipliers and reduction tree (Hz).
    pub dram_clock: f64,
    pub row_size_bytes: u64,
    pub t_rcd: f64,
    pub t_rp: f64,
    /// Column-to-column delay for one multiplier-wide column read (s).
    pub t_ccd: f64,
    pub capacity_bytes: u64,
    /// Off-stack bandwidth of one stack (bytes/s).
    pub stack_bandwidth: f64,
}

impl CidSpec {
    pub fn total_banks(&self) -> u64 {
        self.num_stacks * self.channels_per_stack * self.bankgroups_per_channel
            * self.banks_per_bankgroup
    }

    /// Bytes delivered by one column access, one operand per multiplier.
    pub fn column_bytes(&self) -> u64 {
        (self.multipliers_per_bank * self.multiplier_bits as u64).div_ceil(8)
    }

    /// Multiplier clocks needed to cover `seconds` of DRAM timing.
    fn clocks(&self, seconds: f64) -> u64 {
        // tolerate float noise in e.g. 12 ns x 2 GHz
        (seconds * self.dram_clock - 1e-9).ceil().max(0.0) as u64
    }

    /// Clocks to activate, stream out and precharge one row.
    pub fn row_stream_cycles(&self) -> u64 {
        let columns = self.row_size_bytes.div_ceil(self.column_bytes().max(1));
        self.clocks(self.t_rcd) + self.clocks(self.t_rp) + columns * self.clocks(self.t_ccd).max(1)
    }

    /// Clocks for the bank multipliers to consume one row of operands.
    pub fn row_mac_cycles(&self) -> u64 {
        let operands = self.row_size_bytes * 8 / self.multiplier_bits as u64;
        operands.div_ceil(self.multipliers_per_bank.max(1))
    }

    pub fn row_stream_time(&self) -> f64 {
        self.row_stream_cycles() as f64 / self.dram_clock
    }

    pub fn row_mac_time(&self) -> f64 {
        self.row_mac_cycles() as f64 / self.dram_clock
    }

    /// Operands the local buffer holds.
    pub fn buffer_operands(&self) -> u64 {
        self.local_buffer_bytes * 8 / self.multiplier_bits as u64
    }

    /// Adder-tree depth inside a bank.
    pub fn reduction_stages(&self) -> u64 {
        (self.multipliers_per_bank.max(1) as f64).log2().ceil() as u64
    }

    pub fn external_bandwidth(&self) -> f64 {
        self.num_stacks as f64 * self.stack_bandwidth
    }
}

/// Analog CiM accelerator: tiles -> cores -> CiM units -> crossbars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CimSpec {
    pub tile_mesh: [u64; 2],
    pub core_mesh: [u64; 2],
    pub units_per_core: u64,
    pub crossbars_per_unit: u64,
    pub crossbar_rows: u64,
    pub crossbar_cols: u64,
    pub bits_per_cell: u32,
    /// Precision of the stationary operand the crossbars are sized for.
    pub weight_bits: u32,
    pub adc_per_crossbar: u64,
    pub adc_bits: u32,
    pub wordlines_active: u64,
    pub input_stream_bits: u32,
    /// Width of a partial sum leaving a core.
    pub psum_bits: u32,
    pub gb_bytes: u64,
    pub gb_bw: f64,
    pub ib_bytes: u64,
    pub ib_bw: f64,
    pub wb_bytes: u64,
    pub wb_bw: f64,
    pub ob_bytes: u64,
    pub ob_bw: f64,
    pub cim_clock: f64,
}

impl CimSpec {
    pub fn tiles(&self) -> u64 {
        self.tile_mesh[0] * self.tile_mesh[1]
    }

    pub fn cores_per_tile(&self) -> u64 {
        self.core_mesh[0] * self.core_mesh[1]
    }

    pub fn total_cores(&self) -> u64 {
        self.tiles() * self.cores_per_tile()
    }

    pub fn crossbars_per_core(&self) -> u64 {
        self.units_per_core * self.crossbars_per_unit
    }

    pub fn total_crossbars(&self) -> u64 {
        self.total_cores() * self.crossbars_per_core()
    }

    /// Columns one stationary value occupies.
    pub fn slices(&self) -> u64 {
        (self.weight_bits as u64).div_ceil(self.bits_per_cell as u64)
    }

    /// Stationary values stored per crossbar column-set.
    pub fn values_per_crossbar_row(&self) -> u64 {
        self.crossbar_cols / self.slices()
    }

    pub fn adc_rounds(&self, cols_used: u64) -> u64 {
        cols_used.div_ceil(self.adc_per_crossbar)
    }

    pub fn row_groups(&self, rows_used: u64) -> u64 {
        rows_used.div_ceil(self.wordlines_active)
    }

    /// Bits storable across all crossbars.
    pub fn capacity_bits(&self) -> u64 {
        self.total_crossbars() * self.crossbar_rows * self.crossbar_cols * self.bits_per_cell as u64
    }

    /// Average NoC hops from the global buffer to a core.
    pub fn mean_hops(&self) -> f64 {
        (self.tile_mesh[0] + self.tile_mesh[1]) as f64 / 2.0
            + (self.core_mesh[0] + self.core_mesh[1]) as f64 / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicDieSpec {
    pub vector_width: u64,
    pub vector_clock: f64,
    pub exp_units: u64,
    pub scalar_core: bool,
    /// Cycles the scalar core spends per row normalization (divide / sqrt).
    pub scalar_cycles_per_row: u64,
    /// One vector unit per stack logic die.
    pub units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystolicSpec {
    pub arrays_per_core: u64,
    pub array_rows: u64,
    pub array_cols: u64,
    pub mac_bits: u32,
    pub sa_clock: f64,
    pub iso_area: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterposerLink {
    /// bytes/s
    pub bandwidth: f64,
    /// s
    pub latency: f64,
}

/// Linear area model for the per-bank compute logic, in a common unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaModel {
    pub multiplier_area: f64,
    pub buffer_area_per_byte: f64,
    pub bank_area: f64,
    pub max_overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    pub cid: CidSpec,
    pub cim: CimSpec,
    pub logic_die: LogicDieSpec,
    pub systolic: SystolicSpec,
    /// CiM/SA die to HBM stacks.
    pub interposer: InterposerLink,
    /// Bank logic to logic die inside a stack.
    pub tsv: InterposerLink,
    pub area: AreaModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SramEnergy {
    pub gb: f64,
    pub ib: f64,
    pub wb: f64,
    pub ob: f64,
    pub local: f64,
}

/// Calibration constants (J per op / bit / event, s per crossbar row write).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub e_mac_cid: f64,
    pub e_mac_cim: f64,
    pub e_mac_sa: f64,
    pub e_adc_conv: f64,
    pub e_dram_row_act: f64,
    pub e_dram_bit_internal: f64,
    pub e_dram_bit_offchip: f64,
    pub e_sram_bit: SramEnergy,
    pub e_noc_bit_per_hop: f64,
    pub e_crossbar_write: f64,
    pub t_crossbar_write: f64,
    pub e_vector_op: f64,
    pub e_exp_op: f64,
    /// Fractional latency added for DRAM refresh; 0 disables it.
    #[serde(default)]
    pub refresh_overhead: f64,
}

impl CostTable {
    pub fn negative_fields(&self) -> Vec<&'static str> {
        let s = &self.e_sram_bit;
        [
            ("e_mac_cid", self.e_mac_cid),
            ("e_mac_cim", self.e_mac_cim),
            ("e_mac_sa", self.e_mac_sa),
            ("e_adc_conv", self.e_adc_conv),
            ("e_dram_row_act", self.e_dram_row_act),
            ("e_dram_bit_internal", self.e_dram_bit_internal),
            ("e_dram_bit_offchip", self.e_dram_bit_offchip),
            ("e_sram_bit.gb", s.gb),
            ("e_sram_bit.ib", s.ib),
            ("e_sram_bit.wb", s.wb),
            ("e_sram_bit.ob", s.ob),
            ("e_sram_bit.local", s.local),
            ("e_noc_bit_per_hop", self.e_noc_bit_per_hop),
            ("e_crossbar_write", self.e_crossbar_write),
            ("t_crossbar_write", self.t_crossbar_write),
            ("e_vector_op", self.e_vector_op),
            ("e_exp_op", self.e_exp_op),
            ("refresh_overhead", self.refresh_overhead),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v >= 0.0))
        .map(|(name, _)| name)
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub area_overhead: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fraction of a bank's area taken by its multipliers and local buffer.
pub fn area_overhead(cid: &CidSpec, area: &AreaModel) -> f64 {
    let logic = cid.multipliers_per_bank as f64 * area.multiplier_area
        + cid.local_buffer_bytes as f64 * area.buffer_area_per_byte;
    logic / area.bank_area
}

pub fn validate(hw: &HardwareSpec) -> ValidationReport {
    let mut v = Vec::new();
    let cid = &hw.cid;
    let cim = &hw.cim;

    if cid.multipliers_per_bank == 0 {
        v.push("no CiD compute: multipliers_per_bank is 0".to_string());
    }
    for (name, value) in [
        ("cid.num_stacks", cid.num_stacks),
        ("cid.channels_per_stack", cid.channels_per_stack),
        ("cid.bankgroups_per_channel", cid.bankgroups_per_channel),
        ("cid.banks_per_bankgroup", cid.banks_per_bankgroup),
        ("cid.row_size_bytes", cid.row_size_bytes),
        ("cid.local_buffer_bytes", cid.local_buffer_bytes),
        ("cid.capacity_bytes", cid.capacity_bytes),
        ("cim.units_per_core", cim.units_per_core),
        ("cim.crossbars_per_unit", cim.crossbars_per_unit),
        ("cim.crossbar_rows", cim.crossbar_rows),
        ("cim.crossbar_cols", cim.crossbar_cols),
        ("cim.adc_per_crossbar", cim.adc_per_crossbar),
        ("cim.wordlines_active", cim.wordlines_active),
        ("logic_die.vector_width", hw.logic_die.vector_width),
        ("logic_die.exp_units", hw.logic_die.exp_units),
        ("logic_die.units", hw.logic_die.units),
        ("systolic.arrays_per_core", hw.systolic.arrays_per_core),
        ("systolic.array_rows", hw.systolic.array_rows),
        ("systolic.array_cols", hw.systolic.array_cols),
    ] {
        if value == 0 {
            v.push(format!("{name} must be > 0"));
        }
    }
    if cim.tile_mesh.contains(&0) || cim.core_mesh.contains(&0) {
        v.push("cim tile_mesh and core_mesh entries must be > 0".to_string());
    }
    if cid.multiplier_bits == 0 || cim.bits_per_cell == 0 || cim.input_stream_bits == 0 {
        v.push("bit widths must be > 0".to_string());
    }
    for (name, value) in [
        ("cid.dram_clock", cid.dram_clock),
        ("cid.stack_bandwidth", cid.stack_bandwidth),
        ("cid.t_ccd", cid.t_ccd),
        ("cim.cim_clock", cim.cim_clock),
        ("cim.gb_bw", cim.gb_bw),
        ("cim.ib_bw", cim.ib_bw),
        ("cim.wb_bw", cim.wb_bw),
        ("cim.ob_bw", cim.ob_bw),
        ("logic_die.vector_clock", hw.logic_die.vector_clock),
        ("systolic.sa_clock", hw.systolic.sa_clock),
        ("interposer.bandwidth", hw.interposer.bandwidth),
        ("tsv.bandwidth", hw.tsv.bandwidth),
    ] {
        if !(value > 0.0) {
            v.push(format!("{name} must be > 0"));
        }
    }
    for (name, value) in [
        ("cid.t_rcd", cid.t_rcd),
        ("cid.t_rp", cid.t_rp),
        ("interposer.latency", hw.interposer.latency),
        ("tsv.latency", hw.tsv.latency),
    ] {
        if !(value >= 0.0) {
            v.push(format!("{name} must be >= 0"));
        }
    }
    if cim.wordlines_active != cim.crossbar_rows && 2 * cim.wordlines_active != cim.crossbar_rows {
        v.push(format!(
            "cim.wordlines_active must be {} or {} (got {})",
            cim.crossbar_rows,
            cim.crossbar_rows / 2,
            cim.wordlines_active
        ));
    }
    if cim.adc_per_crossbar > cim.crossbar_cols {
        v.push("cim.adc_per_crossbar exceeds crossbar_cols".to_string());
    }
    if cim.bits_per_cell > 0 && cim.crossbar_cols % cim.slices().max(1) != 0 {
        v.push("cim.crossbar_cols must hold a whole number of bit-sliced values".to_string());
    }

    let overhead = area_overhead(cid, &hw.area);
    if !(overhead < hw.area.max_overhead) {
        v.push(format!(
            "CiD area overhead {:.1}% is >{:.0}% of bank area",
            overhead * 100.0,
            hw.area.max_overhead * 100.0
        ));
    }

    ValidationReport {
        violations: v,
        area_overhead: overhead,
    }
}

/// Peak arithmetic throughput of an engine (FLOP/s, one MAC = 2 FLOPs).
pub fn peak_compute(engine: Engine, hw: &HardwareSpec) -> f64 {
    match engine {
        Engine::Cid => {
            let cid = &hw.cid;
            2.0 * cid.total_banks() as f64 * cid.multipliers_per_bank as f64 * cid.dram_clock
        }
        Engine::Cim => cim_peak_compute(&hw.cim),
        Engine::Sa => {
            let sa = &hw.systolic;
            let arrays = hw.cim.total_cores() * sa.arrays_per_core;
            2.0 * (arrays * sa.array_rows * sa.array_cols) as f64 * sa.sa_clock
        }
        Engine::Vector => {
            let ld = &hw.logic_die;
            (ld.units * ld.vector_width) as f64 * ld.vector_clock
        }
    }
}

/// Peak CiM throughput for the densest column occupancy: with ADCs shared
/// across columns a partly filled crossbar can finish in fewer conversion
/// rounds per stored value than a full one.
pub fn cim_peak_compute(cim: &CimSpec) -> f64 {
    let slices = cim.slices().max(1);
    let best = (1..=cim.crossbar_cols / slices)
        .map(|v| v as f64 / cim.adc_rounds(v * slices) as f64)
        .fold(0.0, f64::max);
    2.0 * cim.total_crossbars() as f64 * cim.wordlines_active as f64 * best * cim.cim_clock
        / cim.input_stream_bits as f64
}

/// Peak bandwidth an engine sees to the DRAM holding its operands (bytes/s).
pub fn peak_bandwidth(engine: Engine, hw: &HardwareSpec) -> f64 {
    match engine {
        Engine::Cid => {
            let cid = &hw.cid;
            cid.total_banks() as f64 * cid.row_size_bytes as f64 / cid.row_stream_time()
        }
        Engine::Cim | Engine::Sa => hw.cid.external_bandwidth().min(hw.interposer.bandwidth),
        Engine::Vector => hw.cid.external_bandwidth().min(hw.tsv.bandwidth),
    }
}

use serde::{Deserialize, Serialize};

use super::{Bound, CostModel, Residency};
use crate::error::Result;
use crate::hardware::{cim_peak_compute, peak_bandwidth, peak_compute, Engine};
use crate::workload::{arithmetic_intensity, op_flops, Operator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub op: String,
    pub engine: Engine,
    /// FLOP per byte moved.
    pub intensity: f64,
    pub peak_compute: f64,
    pub peak_bandwidth: f64,
    /// min(peak compute, intensity x peak bandwidth), FLOP/s.
    pub attainable: f64,
    /// FLOPs over modelled latency.
    pub achieved: f64,
    pub bound: Bound,
}

impl RooflinePoint {
    /// Whether the bandwidth roof sits below the compute roof at this
    /// intensity.
    pub fn roof_is_memory(&self) -> bool {
        self.intensity * self.peak_bandwidth < self.peak_compute
    }
}

/// Places `op` executed on `engine` against that engine's roofline. CiM
/// weights are assumed to be loaded for this op.
pub fn roofline_point(op: &Operator, engine: Engine, model: &CostModel) -> Result<RooflinePoint> {
    let cost = model.op_cost(op, engine, Residency::Reloaded)?;
    let intensity = arithmetic_intensity(op);
    let pc = match engine {
        Engine::Cim => cim_peak_compute(model.cim()),
        e => peak_compute(e, model.hw),
    };
    let pb = peak_bandwidth(engine, model.hw);
    let flops = op_flops(op) as f64;
    Ok(RooflinePoint {
        op: op.name.clone(),
        engine,
        intensity,
        peak_compute: pc,
        peak_bandwidth: pb,
        attainable: pc.min(intensity * pb),
        achieved: if cost.latency > 0.0 {
            flops / cost.latency
        } else {
            0.0
        },
        bound: cost.bound,
    })
}

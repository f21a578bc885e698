use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Simulator;
use crate::cost::roofline_point;
use crate::error::Result;
use crate::hardware::Engine;
use crate::workload::{Phase, PhaseRequest};

/// Which roof caps an op at its intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ceiling {
    Memory,
    Compute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineRow {
    pub op: String,
    pub engine: Engine,
    pub phase: Phase,
    pub batch: u64,
    pub intensity: f64,
    pub achieved: f64,
    pub attainable: f64,
    pub ceiling: Ceiling,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RooflineTable {
    pub rows: Vec<RooflineRow>,
}

impl RooflineTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("op,engine,phase,batch,intensity,achieved,attainable,ceiling\n");
        for r in &self.rows {
            let ceiling = match r.ceiling {
                Ceiling::Memory => "memory",
                Ceiling::Compute => "compute",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{ceiling}",
                r.op, r.engine, r.phase, r.batch, r.intensity, r.achieved, r.attainable
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("roofline table serializes");
        s.push('\n');
        s
    }
}

/// Roofline placement of every op in the given phase graphs. With `engine`
/// set, ops that engine can run are placed on its roofline; otherwise each
/// op goes on the engine the simulator's strategy assigns it.
pub fn roofline_table(
    sim: &Simulator,
    requests: &[PhaseRequest],
    engine: Option<Engine>,
) -> Result<RooflineTable> {
    let model = sim.cost_model();
    let mut rows = Vec::new();
    for req in requests {
        let (graph, plan) = sim.plan(req)?;
        for op in &graph.ops {
            let e = match engine {
                Some(e) if (e == Engine::Vector) != op.kind.is_matmul() => e,
                Some(_) => continue,
                None => plan.assignment[&op.id],
            };
            let p = roofline_point(op, e, &model)?;
            rows.push(RooflineRow {
                ceiling: if p.roof_is_memory() {
                    Ceiling::Memory
                } else {
                    Ceiling::Compute
                },
                op: p.op,
                engine: e,
                phase: req.phase,
                batch: req.batch,
                intensity: p.intensity,
                achieved: p.achieved,
                attainable: p.attainable,
            });
        }
    }
    Ok(RooflineTable { rows })
}

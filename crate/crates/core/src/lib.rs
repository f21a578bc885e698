//! Analytical latency and energy model for LLM inference on a heterogeneous
//! accelerator: compute-in-DRAM HBM stacks, an analog compute-in-memory die
//! on the interposer, vector units on the stack logic dies, and an optional
//! systolic-array replacement for the CiM units.
//!
//! The pipeline is: [`workload`] builds operator graphs per phase,
//! [`mapper`] assigns ops to engines under a [`mapper::MappingStrategy`],
//! [`cost`] prices each op, and [`engine`] accumulates phase and
//! end-to-end results and runs sweeps.

pub mod config;
pub mod cost;
pub mod engine;
pub mod error;
pub mod hardware;
pub mod mapper;
pub mod workload;

pub use cost::{Bound, CostModel, OpCost, Residency, RooflinePoint, Stage, StageCost};
pub use engine::{
    OpClass, PhaseResult, ResultTable, SimResult, Simulator, SweepSpec,
};
pub use error::{Error, Result};
pub use mapper::{MappingPlan, MappingStrategy, StrategyName};
pub use hardware::{CostTable, Engine, HardwareSpec};
pub use workload::{ModelSpec, OpKind, Operator, OperatorGraph, Phase, PhaseRequest};

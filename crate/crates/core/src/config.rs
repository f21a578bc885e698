//! TOML loading for model, hardware, cost-table and sweep files.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::hardware::{CostTable, HardwareSpec};
use crate::workload::ModelSpec;

pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config {
        path: origin.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_toml(&text, path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let model: ModelSpec = load_toml(path.as_ref())?;
    model.validate().map_err(|e| Error::Config {
        path: path.as_ref().to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(model)
}

pub fn load_hardware(path: impl AsRef<Path>) -> Result<HardwareSpec> {
    load_toml(path)
}

pub fn load_cost_table(path: impl AsRef<Path>) -> Result<CostTable> {
    let path = path.as_ref();
    let table: CostTable = load_toml(path)?;
    let bad = table.negative_fields();
    if !bad.is_empty() {
        return Err(Error::Config {
            path: path.to_path_buf(),
            msg: format!("cost entries must be >= 0: {}", bad.join(", ")),
        });
    }
    Ok(table)
}

/// The configuration files shipped under `configs/`, compiled in.
pub mod presets {
    use std::path::Path;

    use super::parse_toml;
    use crate::hardware::{CostTable, HardwareSpec};
    use crate::workload::ModelSpec;

    pub const LLAMA2_7B: &str = include_str!("../../../configs/models/llama2-7b.toml");
    pub const QWEN3_8B: &str = include_str!("../../../configs/models/qwen3-8b.toml");
    pub const HARDWARE: &str = include_str!("../../../configs/hardware/halo.toml");
    pub const COST_TABLE: &str = include_str!("../../../configs/cost/default.toml");

    fn parse<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> T {
        parse_toml(text, Path::new(name)).expect("shipped config parses")
    }

    pub fn llama2_7b() -> ModelSpec {
        parse(LLAMA2_7B, "configs/models/llama2-7b.toml")
    }

    pub fn qwen3_8b() -> ModelSpec {
        parse(QWEN3_8B, "configs/models/qwen3-8b.toml")
    }

    pub fn model(name: &str) -> Option<ModelSpec> {
        match name {
            "llama2-7b" => Some(llama2_7b()),
            "qwen3-8b" => Some(qwen3_8b()),
            _ => None,
        }
    }

    pub fn hardware() -> HardwareSpec {
        parse(HARDWARE, "configs/hardware/halo.toml")
    }

    pub fn cost_table() -> CostTable {
        parse(COST_TABLE, "configs/cost/default.toml")
    }
}

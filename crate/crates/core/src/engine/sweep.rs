use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{OpClass, SimResult, Simulator};
use crate::config::{self, presets};
use crate::error::{Error, Result};
use crate::hardware::{CostTable, HardwareSpec};
use crate::mapper::StrategyName;
use crate::workload::{GraphOptions, ModelSpec, Phase};

/// Grid definition read from a sweep file. Model, hardware and cost entries
/// are either shipped preset names or paths relative to the sweep file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub models: Vec<String>,
    pub strategies: Vec<StrategyName>,
    pub l_in: Vec<u64>,
    pub l_out: Vec<u64>,
    #[serde(default = "default_batch")]
    pub batch: Vec<u64>,
    #[serde(default = "default_hardware")]
    pub hardware: Vec<String>,
    #[serde(default = "default_name")]
    pub cost: String,
    /// Strategy pairs `[a, b]` whose geomean speedup of `a` over `b` is
    /// reported by `compare`.
    #[serde(default)]
    pub compare: Vec<[StrategyName; 2]>,
    #[serde(default)]
    pub options: GraphOptions,
}

fn default_batch() -> Vec<u64> {
    vec![1]
}

fn default_hardware() -> Vec<String> {
    vec![default_name()]
}

fn default_name() -> String {
    "default".to_string()
}

fn resolve(base: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Sweep inputs with every file loaded.
#[derive(Debug, Clone)]
pub struct ResolvedSweep {
    pub models: Vec<ModelSpec>,
    pub hardware: Vec<(String, HardwareSpec)>,
    pub table: CostTable,
    pub spec: SweepSpec,
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<SweepSpec> {
        config::load_toml(path)
    }

    pub fn parse(text: &str) -> Result<SweepSpec> {
        config::parse_toml(text, Path::new("<sweep>"))
    }

    /// Loads the referenced files; relative paths are taken from `base`.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedSweep> {
        let models = self
            .models
            .iter()
            .map(|m| match presets::model(m) {
                Some(spec) => Ok(spec),
                None => config::load_model(resolve(base, m)),
            })
            .collect::<Result<Vec<_>>>()?;
        let hardware = self
            .hardware
            .iter()
            .map(|h| {
                if h == "default" {
                    Ok((h.clone(), presets::hardware()))
                } else {
                    let path = resolve(base, h);
                    let label = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| h.clone());
                    Ok((label, config::load_hardware(path)?))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let table = if self.cost == "default" {
            presets::cost_table()
        } else {
            config::load_cost_table(resolve(base, &self.cost))?
        };
        Ok(ResolvedSweep {
            models,
            hardware,
            table,
            spec: self.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SweepPoint {
    pub model: String,
    pub hardware: String,
    pub strategy: StrategyName,
    pub l_in: u64,
    pub l_out: u64,
    pub batch: u64,
}

impl SweepPoint {
    fn same_setting(&self, other: &SweepPoint) -> bool {
        self.model == other.model
            && self.hardware == other.hardware
            && self.l_in == other.l_in
            && self.l_out == other.l_out
            && self.batch == other.batch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub point: SweepPoint,
    pub result: Option<SimResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

const PHASES: [Phase; 2] = [Phase::Prefill, Phase::Decode];

pub static CSV_HEADER: std::sync::LazyLock<String> = std::sync::LazyLock::new(|| {
    let mut cols: Vec<String> = [
        "model",
        "strategy",
        "l_in",
        "l_out",
        "batch",
        "ttft_s",
        "tpot_mean_s",
        "e2e_s",
        "prefill_J",
        "decode_J",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for phase in PHASES {
        for class in OpClass::ALL {
            cols.push(format!("{phase}_{class}_s"));
            cols.push(format!("{phase}_{class}_J"));
        }
    }
    cols.extend(["hardware", "status", "error"].map(String::from));
    cols.join(",")
});

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let p = &row.point;
            let mut f: Vec<String> = vec![
                csv_field(&p.model),
                p.strategy.to_string(),
                p.l_in.to_string(),
                p.l_out.to_string(),
                p.batch.to_string(),
            ];
            match &row.result {
                Some(r) => {
                    for v in [r.ttft, r.tpot_mean, r.end_to_end, r.prefill.energy, r.decode.energy] {
                        f.push(v.to_string());
                    }
                    for phase in [&r.prefill, &r.decode] {
                        for class in OpClass::ALL {
                            let c = phase.class(class);
                            f.push(c.time.to_string());
                            f.push(c.energy.to_string());
                        }
                    }
                }
                None => f.extend(std::iter::repeat_n(String::new(), 5 + 4 * OpClass::ALL.len())),
            }
            f.push(csv_field(&p.hardware));
            f.push(if row.result.is_some() { "ok" } else { "failed" }.to_string());
            f.push(csv_field(row.error.as_deref().unwrap_or("")));
            let _ = writeln!(out, "{}", f.join(","));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result table serializes");
        s.push('\n');
        s
    }

    pub fn get(&self, point: &SweepPoint) -> Option<&SimResult> {
        self.rows
            .iter()
            .find(|r| &r.point == point)
            .and_then(|r| r.result.as_ref())
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_none()).count()
    }
}

/// Runs every grid point, in parallel on `threads` workers (all cores when
/// `None`). Rows come back in grid order; per-point errors become failed
/// rows.
pub fn sweep(resolved: &ResolvedSweep, threads: Option<usize>) -> Result<ResultTable> {
    let spec = &resolved.spec;
    let mut points = Vec::new();
    for model in &resolved.models {
        for (hw_label, _) in &resolved.hardware {
            for &strategy in &spec.strategies {
                for &l_in in &spec.l_in {
                    for &l_out in &spec.l_out {
                        for &batch in &spec.batch {
                            points.push(SweepPoint {
                                model: model.name.clone(),
                                hardware: hw_label.clone(),
                                strategy,
                                l_in,
                                l_out,
                                batch,
                            });
                        }
                    }
                }
            }
        }
    }
    let run = |p: &SweepPoint| -> ResultRow {
        let model = resolved
            .models
            .iter()
            .find(|m| m.name == p.model)
            .expect("point built from models");
        let (_, hw) = resolved
            .hardware
            .iter()
            .find(|(l, _)| *l == p.hardware)
            .expect("point built from hardware");
        let mut sim = Simulator::new(model, hw, &resolved.table, p.strategy.strategy());
        sim.options = spec.options;
        match sim.run_end_to_end(p.l_in, p.l_out, p.batch) {
            Ok(r) => ResultRow {
                point: p.clone(),
                result: Some(r),
                error: None,
            },
            Err(e) => ResultRow {
                point: p.clone(),
                result: None,
                error: Some(e.to_string()),
            },
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidRequest(e.to_string()))?;
    let rows = pool.install(|| points.par_iter().map(run).collect());
    Ok(ResultTable { rows })
}

/// exp(mean(ln x)); `None` for an empty input.
pub fn geomean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let s: f64 = values.iter().map(|v| v.ln()).sum();
    Some((s / values.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EndToEnd,
    Ttft,
    TpotMean,
    Energy,
    PrefillEnergy,
    DecodeEnergy,
}

impl Metric {
    pub fn of(self, r: &SimResult) -> f64 {
        match self {
            Metric::EndToEnd => r.end_to_end,
            Metric::Ttft => r.ttft,
            Metric::TpotMean => r.tpot_mean,
            Metric::Energy => r.energy(),
            Metric::PrefillEnergy => r.prefill.energy,
            Metric::DecodeEnergy => r.decode.energy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EndToEnd => "e2e",
            Metric::Ttft => "ttft",
            Metric::TpotMean => "tpot",
            Metric::Energy => "energy",
            Metric::PrefillEnergy => "prefill_energy",
            Metric::DecodeEnergy => "decode_energy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "e2e" | "end_to_end" => Metric::EndToEnd,
            "ttft" => Metric::Ttft,
            "tpot" | "tpot_mean" => Metric::TpotMean,
            "energy" => Metric::Energy,
            "prefill_energy" => Metric::PrefillEnergy,
            "decode_energy" => Metric::DecodeEnergy,
            _ => return Err(Error::InvalidRequest(format!("unknown metric `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRatio {
    pub point: SweepPoint,
    pub value_a: f64,
    pub value_b: f64,
    /// `value_b / value_a`: above 1 when `a` is better.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: StrategyName,
    pub b: StrategyName,
    pub metric: Metric,
    pub points: Vec<PointRatio>,
    /// Points where either side failed.
    pub excluded: usize,
    pub geomean: Option<f64>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} vs {} ({}): ratio = {} / {}\n",
            self.a, self.b, self.metric, self.b, self.a
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "{} {} l_in={} l_out={} batch={}: {}",
                p.point.model, p.point.hardware, p.point.l_in, p.point.l_out, p.point.batch, p.ratio
            );
        }
        match self.geomean {
            Some(g) => {
                let _ = writeln!(out, "geomean {g} over {} points", self.points.len());
            }
            None => out.push_str("geomean n/a (no comparable points)\n"),
        }
        if self.excluded > 0 {
            let _ = writeln!(out, "excluded {} failed points", self.excluded);
        }
        out
    }
}

/// Per-point `metric(b) / metric(a)` over the points both strategies share,
/// and their geometric mean. Failed points are dropped pairwise.
pub fn compare(table: &ResultTable, a: StrategyName, b: StrategyName, metric: Metric) -> Comparison {
    let mut points = Vec::new();
    let mut excluded = 0;
    for row in table.rows.iter().filter(|r| r.point.strategy == a) {
        let Some(other) = table
            .rows
            .iter()
            .find(|r| r.point.strategy == b && r.point.same_setting(&row.point))
        else {
            continue;
        };
        match (&row.result, &other.result) {
            (Some(ra), Some(rb)) => {
                let (va, vb) = (metric.of(ra), metric.of(rb));
                points.push(PointRatio {
                    point: row.point.clone(),
                    value_a: va,
                    value_b: vb,
                    ratio: vb / va,
                });
            }
            _ => excluded += 1,
        }
    }
    let ratios: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    Comparison {
        a,
        b,
        metric,
        geomean: geomean(&ratios),
        points,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> ResolvedSweep {
        SweepSpec::parse(text).unwrap().resolve(Path::new(".")).unwrap()
    }

    #[test]
    fn geomean_basics() {
        assert_eq!(geomean(&[]), None);
        assert!((geomean(&[2.0, 8.0]).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_grid_is_header_only() {
        let r = spec("models = [\"llama2-7b\"]\nstrategies = []\nl_in = [128]\nl_out = [1]\n");
        let t = sweep(&r, Some(1)).unwrap();
        assert_eq!(t.to_csv(), format!("{}\n", *CSV_HEADER));
    }

    #[test]
    fn single_point_matches_direct_run() {
        let r = spec("models = [\"llama2-7b\"]\nstrategies = [\"Halo1\"]\nl_in = [64]\nl_out = [4]\n");
        let t = sweep(&r, Some(2)).unwrap();
        let hw = presets::hardware();
        let table = presets::cost_table();
        let m = presets::llama2_7b();
        let direct = Simulator::new(&m, &hw, &table, StrategyName::Halo1.strategy())
            .run_end_to_end(64, 4, 1)
            .unwrap();
        assert_eq!(t.rows[0].result.as_ref(), Some(&direct));
    }

    #[test]
    fn failures_are_rows_and_order_is_stable() {
        let r = spec(
            "models = [\"llama2-7b\"]\nstrategies = [\"Halo1\", \"FullyCiD\"]\n\
             l_in = [16, 8192]\nl_out = [2]\nbatch = [1, 512]\n",
        );
        let t = sweep(&r, Some(4)).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert!(t.failed() > 0);
        let order: Vec<_> = t.rows.iter().map(|r| (r.point.strategy, r.point.l_in, r.point.batch)).collect();
        assert_eq!(order[0], (StrategyName::Halo1, 16, 1));
        assert_eq!(order[1], (StrategyName::Halo1, 16, 512));
        assert_eq!(order[7], (StrategyName::FullyCiD, 8192, 512));
        assert_eq!(t.to_csv(), sweep(&r, Some(1)).unwrap().to_csv());
        let c = compare(&t, StrategyName::Halo1, StrategyName::FullyCiD, Metric::EndToEnd);
        assert_eq!(c.points.len() + c.excluded, 4);
    }

    #[test]
    fn unknown_sweep_key_rejected() {
        assert!(SweepSpec::parse("models=[]\nstrategies=[]\nl_in=[]\nl_out=[]\nseed=3\n").is_err());
    }
}

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use halo_core::config::{self, presets};
use halo_core::engine::{compare, roofline_table, sweep, Metric, ResultRow, SweepPoint};
use halo_core::hardware::{self, Engine};
use halo_core::{
    CostTable, HardwareSpec, ModelSpec, PhaseRequest, ResultTable, Simulator, StrategyName,
    SweepSpec,
};

/// Latency and energy simulator for LLM inference on a CiD + CiM
/// heterogeneous accelerator.
#[derive(Parser)]
#[command(name = "halo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (model, strategy, l_in, l_out, batch) point end to end.
    Simulate(SimulateArgs),
    /// Run every point of a sweep spec file.
    Sweep(SweepArgs),
    /// Place every op of a prefill and decode graph on a roofline.
    Roofline(RooflineArgs),
    /// Per-point ratios and geometric mean of two strategies over a sweep.
    Compare(CompareArgs),
    /// Print the engine assignment, tiling and transfers of one phase graph.
    Map(MapArgs),
    /// Print the cost breakdown of one op.
    CostExplain(CostExplainArgs),
    /// Check hardware, model and cost files; exits nonzero on violations.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Prefill,
    Decode,
}

#[derive(Args)]
struct ConfigArgs {
    /// Model: a shipped name (llama2-7b, qwen3-8b) or a model TOML file.
    #[arg(long, default_value = "llama2-7b")]
    model: String,
    /// Hardware TOML file; the shipped configuration when omitted.
    #[arg(long)]
    hardware: Option<PathBuf>,
    /// Cost-table TOML file; the shipped table when omitted.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Mapping strategy: Halo1, Halo2, FullyCiD (CENT), FullyCiM, AttAcc1,
    /// AttAcc2 or HaloSA.
    #[arg(long, default_value = "Halo1")]
    strategy: StrategyName,
}

struct Loaded {
    model: ModelSpec,
    hw_label: String,
    hw: HardwareSpec,
    table: CostTable,
    strategy: StrategyName,
}

impl ConfigArgs {
    fn load(&self) -> Result<Loaded> {
        let model = match presets::model(&self.model) {
            Some(m) => m,
            None => config::load_model(&self.model)?,
        };
        let (hw_label, hw) = match &self.hardware {
            Some(p) => (label(p), config::load_hardware(p)?),
            None => ("default".to_string(), presets::hardware()),
        };
        let table = match &self.cost {
            Some(p) => config::load_cost_table(p)?,
            None => presets::cost_table(),
        };
        Ok(Loaded {
            model,
            hw_label,
            hw,
            table,
            strategy: self.strategy,
        })
    }
}

impl Loaded {
    fn simulator(&self) -> Simulator<'_> {
        Simulator::new(&self.model, &self.hw, &self.table, self.strategy.strategy())
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn stdout(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Args)]
struct OutputArgs {
    /// Write results to this file instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Output encoding.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl OutputArgs {
    fn emit(&self, csv: impl FnOnce() -> String, json: impl FnOnce() -> String) -> Result<()> {
        let text = match self.format {
            Format::Csv => csv(),
            Format::Json => json(),
        };
        match &self.output {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => stdout(&text),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Prompt length in tokens.
    #[arg(long, default_value_t = 2048)]
    l_in: u64,
    /// Generated tokens.
    #[arg(long, default_value_t = 128)]
    l_out: u64,
    /// Sequences processed together.
    #[arg(long, default_value_t = 1)]
    batch: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec TOML file; relative paths inside it resolve against its
    /// directory.
    spec: PathBuf,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct RooflineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Prompt length of the prefill graph and KV length of the decode graphs.
    #[arg(long, default_value_t = 512)]
    l_in: u64,
    /// Decode batch sizes; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 16])]
    decode_batch: Vec<u64>,
    /// Prefill batch size.
    #[arg(long, default_value_t = 1)]
    prefill_batch: u64,
    /// Place ops on this engine's roofline (cid, cim, sa, vector) instead of
    /// the engine the strategy assigns; ops it cannot run are skipped.
    #[arg(long)]
    engine: Option<Engine>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Sweep spec TOML file.
    spec: PathBuf,
    /// Baseline strategy (denominator of the speedup).
    #[arg(long)]
    a: StrategyName,
    /// Strategy compared against the baseline; ratios are metric(b) / metric(a).
    #[arg(long)]
    b: StrategyName,
    /// Metric: e2e, ttft, tpot, energy, prefill_energy or decode_energy.
    #[arg(long, default_value = "e2e")]
    metric: Metric,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct PhaseArgs {
    /// Phase graph to build.
    #[arg(long, value_enum, default_value = "prefill")]
    phase: PhaseArg,
    /// Prompt length in tokens.
    #[arg(long, default_value_t = 2048)]
    l_in: u64,
    /// Generated tokens (decode only).
    #[arg(long, default_value_t = 128)]
    l_out: u64,
    /// Sequences processed together.
    #[arg(long, default_value_t = 1)]
    batch: u64,
    /// Decode step, 0-based (decode only).
    #[arg(long, default_value_t = 0)]
    step: u64,
}

impl PhaseArgs {
    fn request(&self) -> PhaseRequest {
        match self.phase {
            PhaseArg::Prefill => PhaseRequest::prefill(self.l_in, self.batch),
            PhaseArg::Decode => PhaseRequest::decode(self.l_in, self.l_out, self.batch, self.step),
        }
    }
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    phase: PhaseArgs,
}

#[derive(Args)]
struct CostExplainArgs {
    /// Op name as printed by `map`, e.g. L0.q_proj or lm_head.
    op: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    phase: PhaseArgs,
}

#[derive(Args)]
struct ValidateArgs {
    /// Hardware TOML file; the shipped configuration when omitted.
    hardware: Option<PathBuf>,
    /// Also load and check this model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also load and check this cost-table file.
    #[arg(long)]
    cost: Option<PathBuf>,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let r = cfg.simulator().run_end_to_end(a.l_in, a.l_out, a.batch)?;
    eprintln!(
        "{} {} l_in={} l_out={} batch={}: TTFT {:e} s, TPOT mean {:e} s, E2E {:e} s, energy {:e} J",
        r.model,
        r.strategy,
        a.l_in,
        a.l_out,
        a.batch,
        r.ttft,
        r.tpot_mean,
        r.end_to_end,
        r.energy()
    );
    let table = ResultTable {
        rows: vec![ResultRow {
            point: SweepPoint {
                model: cfg.model.name.clone(),
                hardware: cfg.hw_label.clone(),
                strategy: cfg.strategy,
                l_in: a.l_in,
                l_out: a.l_out,
                batch: a.batch,
            },
            result: Some(r),
            error: None,
        }],
    };
    a.out.emit(|| table.to_csv(), || table.to_json())
}

fn run_spec(spec: &Path, threads: Option<usize>) -> Result<(SweepSpec, ResultTable)> {
    let s = SweepSpec::load(spec)?;
    let base = spec.parent().unwrap_or(Path::new("."));
    let resolved = s.resolve(base)?;
    Ok((s, sweep(&resolved, threads)?))
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    if a.threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let (spec, table) = run_spec(&a.spec, a.threads)?;
    a.out.emit(|| table.to_csv(), || table.to_json())?;
    if a.out.output.is_some() {
        for [x, y] in &spec.compare {
            stdout(&compare(&table, *x, *y, Metric::EndToEnd).render())?;
        }
    }
    if table.failed() > 0 {
        eprintln!("{} of {} points failed", table.failed(), table.rows.len());
    }
    Ok(())
}

fn roofline_cmd(a: &RooflineArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let mut reqs = vec![PhaseRequest::prefill(a.l_in, a.prefill_batch)];
    for &b in &a.decode_batch {
        reqs.push(PhaseRequest::decode(a.l_in, 1, b, 0));
    }
    let t = roofline_table(&cfg.simulator(), &reqs, a.engine)?;
    a.out.emit(|| t.to_csv(), || t.to_json())
}

fn compare_cmd(a: &CompareArgs) -> Result<()> {
    let (_, table) = run_spec(&a.spec, a.threads)?;
    stdout(&compare(&table, a.a, a.b, a.metric).render())?;
    Ok(())
}

fn map_cmd(a: &MapArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let (graph, plan) = cfg.simulator().plan(&a.phase.request())?;
    stdout(&plan.render(&graph))?;
    Ok(())
}

fn cost_explain(a: &CostExplainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let req = a.phase.request();
    let records = cfg.simulator().op_records(&req)?;
    let Some(rec) = records.iter().find(|r| r.name == a.op) else {
        bail!(
            "no op named `{}` in the {} graph; run `halo map` to list op names",
            a.op,
            req.phase
        );
    };
    println!("op {} on {} ({})", rec.name, rec.engine, rec.class);
    print!("{}", rec.cost.explain());
    Ok(())
}

fn validate_cmd(a: &ValidateArgs) -> Result<ExitCode> {
    let hw = match &a.hardware {
        Some(p) => config::load_hardware(p)?,
        None => presets::hardware(),
    };
    if let Some(p) = &a.model {
        config::load_model(p)?;
        println!("model {}: ok", p.display());
    }
    if let Some(p) = &a.cost {
        config::load_cost_table(p)?;
        println!("cost table {}: ok", p.display());
    }
    let report = hardware::validate(&hw);
    println!("cid area overhead {:.4}", report.area_overhead);
    for v in &report.violations {
        println!("violation: {v}");
    }
    if report.is_valid() {
        println!("hardware: ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("hardware: {} violations", report.violations.len());
        Ok(ExitCode::FAILURE)
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Sweep(a) => sweep_cmd(a)?,
        Command::Roofline(a) => roofline_cmd(a)?,
        Command::Compare(a) => compare_cmd(a)?,
        Command::Map(a) => map_cmd(a)?,
        Command::CostExplain(a) => cost_explain(a)?,
        Command::Validate(a) => return validate_cmd(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}


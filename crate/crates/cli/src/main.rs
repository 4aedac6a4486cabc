//! `ranklab`: data prep, training, evaluation, sweeps, bound tables,
//! bound verification and the loss-cost benchmark.
//!
//! Exit codes: 0 success, 1 other failure (including a failed `verify`),
//! 2 input or usage error, 3 divergence, 4 incompatible inputs.

mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ranklab::bench::{bench_one, CSV_HEADER};
use ranklab::bounds::{
    bound_grid, log_spaced, theorem_bound, verify_all, BatteryConfig, BoundEstimate, BoundQuery, REFERENCE_CATALOG,
};
use ranklab::datasets::{k_core_filter, leave_one_out_split, load_tsv, synth_generate, InteractionLog, SynthConfig};
use ranklab::metrics::Metric;
use ranklab::models::{load_checkpoint, save_checkpoint};
use ranklab::training::{evaluate, fit, metrics_csv, sweep, GridAxis, Phase, TrainConfig};
use ranklab::Error;
use serde::Serialize;

use crate::run::{args_hash, RunDir};

#[derive(Parser)]
#[command(name = "ranklab", version, about = "Ranking-loss laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a TSV log (or generate a synthetic one) into a dataset file.
    Prep(PrepArgs),
    /// Train a model and write its checkpoint, history and test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test split.
    Eval(EvalArgs),
    /// Train over a parameter grid and seeds; one CSV row per run.
    Sweep(SweepArgs),
    /// Bounding-probability grids, one CSV per α.
    Bounds(BoundsArgs),
    /// Run the bound verification suites and the Monte Carlo battery.
    Verify(VerifyArgs),
    /// Time full-catalog against sampled loss steps.
    Bench(BenchArgs),
}

#[derive(Args, Serialize)]
struct PrepArgs {
    /// Tab-separated `user item timestamp` file.
    #[arg(long, required_unless_present = "synth", conflicts_with = "synth")]
    input: Option<PathBuf>,
    /// Synthetic generator settings, e.g. `users=2000,items=500,seed=1`.
    #[arg(long)]
    synth: Option<String>,
    #[arg(long, default_value_t = 5)]
    k_core: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON file with TrainConfig fields.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    phase: String,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    ks: Vec<usize>,
    /// Also write the report into a run directory here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Base TrainConfig JSON.
    #[arg(long)]
    config: PathBuf,
    /// Axis as `key=v1,v2,...`; repeat for more axes.
    #[arg(long = "grid", required = true)]
    grid: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BoundsArgs {
    #[arg(long, default_value_t = REFERENCE_CATALOG)]
    catalog_size: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    #[arg(long, default_value = "ndcg")]
    metric: String,
    /// Rows of the grid; defaults to 1, 2, 5, 10, ... up to 1000.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    /// Columns of the grid; same default as `--ranks`.
    #[arg(long = "k", alias = "K", value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// `default` or a JSON battery file.
    #[arg(long, default_value = "default")]
    battery: String,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    prop1_instances: usize,
    #[arg(long, default_value_t = 10_000)]
    sce_floor_instances: usize,
    #[arg(long)]
    out: PathBuf,
    /// Replace the bound with `1 − (1 − p)^K` (negative control).
    #[arg(long, hide = true)]
    corrupt_bound: bool,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "500000,1000000")]
    catalog_sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long = "k", alias = "K", value_delimiter = ',', default_value = "100")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Incompatible(_) => 4,
        Error::Shape(_) | Error::Index { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("ranklab: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Prep(a) => prep(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Bounds(a) => bounds(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("ranklab: usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("ranklab: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verification) => ExitCode::from(1),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("RANKLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RANKLAB_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig, Error> {
    let mut cfg = TrainConfig::from_json(&read_text(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn pretty(value: &impl Serialize) -> Result<String, Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn prep(a: PrepArgs) -> CmdResult {
    let (log, seed) = match (&a.input, &a.synth) {
        (Some(path), _) => (k_core_filter(&load_tsv(path)?, a.k_core)?, None),
        (None, Some(spec)) => {
            let cfg: SynthConfig = spec.parse()?;
            let raw = synth_generate(&cfg)?.to_raw();
            (k_core_filter(&raw, a.k_core)?, Some(cfg.seed))
        }
        (None, None) => return Err(Failure::Usage("one of --input or --synth is required".into())),
    };
    let mut run = RunDir::create(&a.out, "prep", &args_hash("prep", &a)?, seed)?;
    if let Some(path) = &a.input {
        run.input(path)?;
    }
    let path = run.output_path("dataset.json");
    log.save(&path)?;
    let stats = pretty(&log.stats())?;
    run.write("stats.json", &stats)?;
    print!("{stats}");
    run.finish()?;
    Ok(())
}

fn load_split(path: &Path) -> Result<ranklab::datasets::Split, Error> {
    leave_one_out_split(&InteractionLog::load(path)?)
}

fn train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(&a.config, a.seed)?;
    let split = load_split(&a.data)?;
    let result = fit(&cfg, &split)?;
    let hash = cfg.hash();
    let mut run = RunDir::create(&a.out, "train", &hash, Some(cfg.seed))?;
    run.input(&a.data)?;
    run.input(&a.config)?;
    run.write("config.json", pretty(&cfg)?)?;
    let ckpt = run.output_path("checkpoint.bin");
    save_checkpoint(&ckpt, &result.params, cfg.max_len, cfg.seed, &hash)?;
    run.write("history.json", pretty(&result.history)?)?;
    let csv = metrics_csv(&result.history.test);
    run.write("metrics.csv", &csv)?;
    print!("{csv}");
    eprintln!("best epoch {}", result.history.best_epoch);
    run.finish()?;
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let phase: Phase = a.phase.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(Failure::Usage("--ks needs positive cut-offs".into()));
    }
    let (params, header) = load_checkpoint(&a.checkpoint)?;
    let split = load_split(&a.data)?;
    let report = evaluate(&params, &split, phase, &a.ks, header.max_len)?;
    let csv = metrics_csv(&report);
    print!("{csv}");
    if let Some(out) = &a.out {
        let mut run = RunDir::create(out, "eval", &args_hash("eval", &a)?, Some(header.seed))?;
        run.input(&a.checkpoint)?;
        run.input(&a.data)?;
        run.write("metrics.csv", &csv)?;
        run.finish()?;
    }
    Ok(())
}

fn parse_axis(spec: &str) -> Result<GridAxis, Failure> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("grid axis {spec:?} is not key=v1,v2,...")))?;
    let values: Vec<String> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    if values.is_empty() {
        return Err(Failure::Usage(format!("grid axis {name:?} has no values")));
    }
    Ok(GridAxis {
        name: name.trim().into(),
        values,
    })
}

fn run_sweep(a: SweepArgs) -> CmdResult {
    let base = load_config(&a.config, None)?;
    let grid = a.grid.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>()?;
    if a.seeds.is_empty() {
        return Err(Failure::Usage("--seeds is empty".into()));
    }
    let split = load_split(&a.data)?;
    let result = sweep(&base, &grid, &a.seeds, &split, |row| {
        eprintln!("{} seed {} {:?}: {}", row.loss, row.seed, row.params, row.status);
    })?;
    let hash = args_hash("sweep", &(&base, &grid, &a.seeds))?;
    let mut run = RunDir::create(&a.out, "sweep", &hash, None)?;
    run.input(&a.data)?;
    run.input(&a.config)?;
    let csv = result.to_csv();
    run.write("sweep.csv", &csv)?;
    print!("{csv}");
    run.finish()?;
    Ok(())
}

fn bounds(a: BoundsArgs) -> CmdResult {
    if a.alpha.is_empty() {
        return Err(Failure::Usage("--alpha needs at least one value".into()));
    }
    let metric: Metric = a.metric.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let axis = |given: &[usize]| {
        if given.is_empty() {
            log_spaced(1000)
        } else {
            given.to_vec()
        }
    };
    let (ranks, ks) = (axis(&a.ranks), axis(&a.ks));
    let grids = a
        .alpha
        .iter()
        .map(|&alpha| bound_grid(a.catalog_size, alpha, &ranks, &ks, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let mut run = RunDir::create(&a.out, "bounds", &args_hash("bounds", &a)?, None)?;
    for (alpha, grid) in a.alpha.iter().zip(&grids) {
        let name = format!("bounds_{}_alpha{alpha}.csv", metric.to_string().to_lowercase());
        run.write(&name, grid.to_csv())?;
        println!("{name}");
    }
    run.finish()?;
    Ok(())
}

fn corrupted_bound(q: &BoundQuery, _: Metric) -> ranklab::Result<BoundEstimate> {
    let raw = 1.0 - (1.0 - q.hit_probability()).powf(q.k as f64);
    Ok(BoundEstimate {
        probability: raw.clamp(0.0, 1.0),
        raw,
    })
}

fn verify(a: VerifyArgs) -> CmdResult {
    let mut battery = if a.battery == "default" {
        BatteryConfig::default()
    } else {
        serde_json::from_str(&read_text(Path::new(&a.battery))?).map_err(|e| Error::Config(e.to_string()))?
    };
    if let Some(t) = a.trials {
        battery.trials = t;
    }
    if let Some(s) = a.seed {
        battery.seed = s;
    }
    if battery.trials < 1000 {
        return Err(Failure::Usage(format!(
            "at least 1000 Monte Carlo trials are needed, got {}",
            battery.trials
        )));
    }
    let report = if a.corrupt_bound {
        verify_all(&battery, a.prop1_instances, a.sce_floor_instances, &corrupted_bound)?
    } else {
        verify_all(&battery, a.prop1_instances, a.sce_floor_instances, &theorem_bound)?
    };
    let hash = args_hash(
        "verify",
        &(&battery, a.prop1_instances, a.sce_floor_instances, a.corrupt_bound),
    )?;
    let mut run = RunDir::create(&a.out, "verify", &hash, Some(battery.seed))?;
    if a.battery != "default" {
        run.input(Path::new(&a.battery))?;
    }
    run.write("verify.json", pretty(&report)?)?;
    let failed = report.cells.iter().filter(|c| !c.pass).count();
    println!(
        "prop1 {} sce-floor {} tail-bound {} battery {}/{} cells -> {}",
        verdict(report.prop1.pass),
        verdict(report.sce_floor.pass),
        verdict(report.tail_bound.pass),
        report.cells.len() - failed,
        report.cells.len(),
        verdict(report.pass)
    );
    run.finish()?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn bench(a: BenchArgs) -> CmdResult {
    if a.catalog_sizes.is_empty() || a.ks.is_empty() {
        return Err(Failure::Usage("--catalog-sizes and --k need values".into()));
    }
    if let Some((&size, &k)) = a
        .catalog_sizes
        .iter()
        .flat_map(|s| a.ks.iter().map(move |k| (s, k)))
        .find(|(s, k)| s < k)
    {
        return Err(Failure::Usage(format!("catalog size {size} is smaller than K = {k}")));
    }
    let mut csv = format!("{CSV_HEADER}\n");
    println!("{CSV_HEADER}");
    for &size in &a.catalog_sizes {
        for &k in &a.ks {
            let row = bench_one(size, a.d, k, a.reps, a.seed)?;
            println!("{}", row.csv_line());
            csv.push_str(&row.csv_line());
            csv.push('\n');
        }
    }
    let mut run = RunDir::create(&a.out, "bench", &args_hash("bench", &a)?, Some(a.seed))?;
    run.write("bench.csv", &csv)?;
    run.finish()?;
    Ok(())
}

//! Command-line front end: `fit`, `simulate`, `benchmark` and `rank`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, exposure_residuals, EffectEstimate, EffectMode, EstimatorConfig, Learner, Method};
use crate::factor::{select_rank, RankMethod, RankOptions, RankSelection};
use crate::panel::{load_panel_dir, orient, write_panel, NeighborhoodSpec, Orientation, PanelData, Schema};
use crate::sim::{generate, run_benchmark, BenchEstimator, SimScenario};

pub const ESTIMATE_FILE: &str = "estimate.json";
pub const RANK_FILE: &str = "rank.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const NEIGHBOR_FILE: &str = "neighbors.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const BENCHMARK_RAW_FILE: &str = "benchmark_raw.csv";
pub const BENCHMARK_TABLE_FILE: &str = "benchmark.txt";

#[derive(Parser, Debug)]
#[command(name = "factconf", version, about = "Causal effects under factor confounding")]
struct Cli {
    /// Worker threads (default: available parallelism; 1 is serial).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file whose keys mirror the flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an estimator to a panel directory.
    Fit(FitArgs),
    /// Generate a simulated panel.
    Simulate(SimArgs),
    /// Monte-Carlo comparison of estimators.
    Benchmark(BenchArgs),
    /// Select the number of latent factors.
    Rank(RankArgs),
}

#[derive(Args, Debug, Default)]
struct FitArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    /// none | knn:k | file:path
    #[arg(long)]
    neighbors: Option<String>,
    /// linear | ridge:lambda | spline:df
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// pooled | per-unit
    #[arg(long)]
    mode: Option<String>,
    /// Spline df for per-unit exposure curves.
    #[arg(long)]
    curve_df: Option<usize>,
    /// time (replicates are time points) | space (replicates are units)
    #[arg(long)]
    orientation: Option<String>,
    /// Exposure shifts for the average treatment effect.
    #[arg(long, value_delimiter = ',')]
    shifts: Option<Vec<f64>>,
    #[arg(long)]
    n_init: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct SimArgs {
    #[arg(long)]
    scenario: Option<String>,
    /// TOML scenario file (kind plus overrides).
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    scenario: Option<Vec<String>>,
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Also write per-replication estimates.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Debug, Default)]
struct RankArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    max_rank: Option<usize>,
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Config-file keys; each mirrors a flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    method: Option<String>,
    rank: Option<usize>,
    neighbors: Option<String>,
    learner: Option<String>,
    folds: Option<usize>,
    bootstrap: Option<usize>,
    mode: Option<String>,
    curve_df: Option<usize>,
    orientation: Option<String>,
    shifts: Option<Vec<f64>>,
    n_init: Option<usize>,
    scenario: Option<Vec<String>>,
    scenario_file: Option<PathBuf>,
    estimators: Option<Vec<String>>,
    reps: Option<usize>,
    max_rank: Option<usize>,
    raw: Option<bool>,
}

/// Document written by `fit`. The timestamp sits alone on the second line.
#[derive(Debug, Serialize)]
struct FitDocument<'a> {
    generated_at_unix: u64,
    input: String,
    orientation: Orientation,
    config: &'a EstimatorConfig,
    estimate: &'a EffectEstimate,
}

#[derive(Debug, Serialize)]
struct RankDocument<'a> {
    generated_at_unix: u64,
    input: String,
    learner: Learner,
    selection: &'a RankSelection,
}

#[derive(Debug, Serialize)]
struct TruthDocument<'a> {
    scenario: &'a SimScenario,
    seed: u64,
    targets: &'a std::collections::BTreeMap<String, f64>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_neighbors(spec: &str, panel: &PanelData) -> Result<Option<NeighborhoodSpec>> {
    if spec == "none" {
        return Ok(None);
    }
    if let Some(k) = spec.strip_prefix("knn:") {
        let k: usize = k.parse().map_err(|_| Error::Config(format!("bad neighbor count in {spec:?}")))?;
        if panel.orientation != Orientation::ReplicateOverTime {
            return Err(Error::Config("knn neighborhoods need units as coordinates (--orientation time)".into()));
        }
        if panel.coords.ncols() == 0 {
            return Err(Error::Config("knn neighborhoods need a coords.csv file".into()));
        }
        return Ok(Some(NeighborhoodSpec::k_nearest(&panel.coords, k)?));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let ids = match panel.orientation {
            Orientation::ReplicateOverTime => &panel.unit_ids,
            Orientation::ReplicateOverSpace => &panel.time_ids,
        };
        return Ok(Some(NeighborhoodSpec::from_file(Path::new(path), ids)?));
    }
    Err(Error::Config(format!("--neighbors must be none, knn:k or file:path, got {spec:?}")))
}

fn parse_mode(s: &str) -> Result<EffectMode> {
    match s {
        "pooled" => Ok(EffectMode::Pooled),
        "per-unit" | "unit" => Ok(EffectMode::PerUnit),
        _ => Err(Error::Config(format!("--mode must be pooled or per-unit, got {s:?}"))),
    }
}

fn parse_orientation(s: &str) -> Result<Orientation> {
    match s {
        "time" => Ok(Orientation::ReplicateOverTime),
        "space" => Ok(Orientation::ReplicateOverSpace),
        _ => Err(Error::Config(format!("--orientation must be time or space, got {s:?}"))),
    }
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn run_fit(args: FitArgs, file: FileConfig) -> Result<()> {
    let input = required(args.input.or(file.input), "in")?;
    let out = required(args.out.or(file.out), "out")?;
    let orientation = parse_orientation(args.orientation.or(file.orientation).as_deref().unwrap_or("time"))?;
    let panel = orient(&load_panel_dir(&input, &Schema::default())?, orientation);

    let method: Method = args.method.or(file.method).as_deref().unwrap_or("fc").parse()?;
    let mut config =
        EstimatorConfig::new(method, args.rank.or(file.rank).unwrap_or(if method.uses_rank() { 1 } else { 0 }));
    config.seed = args.seed.or(file.seed).unwrap_or(0);
    config.factor_opts.seed = config.seed;
    if let Some(l) = args.learner.or(file.learner) {
        config.learner = l.parse()?;
    }
    config.folds = args.folds.or(file.folds).unwrap_or(config.folds);
    config.bootstrap_reps = args.bootstrap.or(file.bootstrap).unwrap_or(0);
    config.n_init = args.n_init.or(file.n_init).unwrap_or(config.n_init);
    if let Some(m) = args.mode.or(file.mode) {
        config.effect_mode = parse_mode(&m)?;
    }
    config.curve_df = args.curve_df.or(file.curve_df).unwrap_or(config.curve_df);
    if let Some(s) = args.shifts.or(file.shifts) {
        config.shifts = s;
    }
    config.neighborhoods = parse_neighbors(args.neighbors.or(file.neighbors).as_deref().unwrap_or("none"), &panel)?;
    log::info!("fit: input {} seed {} config {}", input.display(), config.seed, serde_json::to_string(&config)?);

    let est = estimate(&panel, &config)?;
    let doc = FitDocument {
        generated_at_unix: now_unix(),
        input: input.display().to_string(),
        orientation,
        config: &config,
        estimate: &est,
    };
    write_text(&out.join(ESTIMATE_FILE), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    for c in 0..est.dose_summaries.len() {
        let mut s = String::from("exposure,effect,lower,upper\n");
        for (x, v, lo, hi) in est.curve_band(c) {
            s.push_str(&format!("{x},{v},{lo},{hi}\n"));
        }
        write_text(&out.join(format!("curve_{c}.csv")), &s)?;
    }
    let names: Vec<String> = est.beta_names.iter().zip(&est.beta).map(|(n, b)| format!("{n}={b:.6}")).collect();
    println!("{} {} acd={:.6}", est.method, names.join(" "), est.acd);
    Ok(())
}

fn scenario_from(name: Option<&str>, path: Option<&Path>, seed: u64) -> Result<SimScenario> {
    match (name, path) {
        (_, Some(p)) => SimScenario::from_toml_file(p),
        (Some(n), None) => SimScenario::from_name(n, seed),
        (None, None) => Err(Error::Config("missing required flag --scenario or --scenario-file".into())),
    }
}

fn run_simulate(args: SimArgs, file: FileConfig) -> Result<()> {
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = required(args.out.or(file.out), "out")?;
    let name = args.scenario.or_else(|| file.scenario.and_then(|v| v.into_iter().next()));
    let scenario = scenario_from(name.as_deref(), args.scenario_file.or(file.scenario_file).as_deref(), seed)?;
    log::info!("simulate: seed {seed} scenario {}", serde_json::to_string(&scenario)?);
    let draw = generate(&scenario, seed)?;
    write_panel(&out, &draw.panel)?;
    if let Some(nb) = &draw.neighborhoods {
        let mut s = String::from("unit_id,neighbor_id\n");
        for (i, list) in nb.neighbors.iter().enumerate() {
            for &j in list {
                s.push_str(&format!("{},{}\n", draw.panel.unit_ids[i], draw.panel.unit_ids[j]));
            }
        }
        write_text(&out.join(NEIGHBOR_FILE), &s)?;
    }
    let truth = TruthDocument { scenario: &scenario, seed, targets: &draw.targets };
    write_text(&out.join(TRUTH_FILE), &(serde_json::to_string_pretty(&truth)? + "\n"))?;
    println!("wrote {} x {} panel to {}", draw.panel.n_units(), draw.panel.n_times(), out.display());
    Ok(())
}

fn run_benchmark_cmd(args: BenchArgs, file: FileConfig) -> Result<()> {
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = required(args.out.or(file.out), "out")?;
    let reps = args.reps.or(file.reps).unwrap_or(100);
    let mut scenarios = Vec::new();
    if let Some(p) = args.scenario_file.or(file.scenario_file) {
        scenarios.push(SimScenario::from_toml_file(&p)?);
    }
    for name in args.scenario.or(file.scenario).unwrap_or_default() {
        scenarios.push(SimScenario::from_name(&name, 0)?);
    }
    if scenarios.is_empty() {
        return Err(Error::Config("missing required flag --scenario or --scenario-file".into()));
    }
    let mut base = EstimatorConfig::default();
    if let Some(l) = args.learner.or(file.learner) {
        base.learner = l.parse()?;
    }
    base.folds = args.folds.or(file.folds).unwrap_or(base.folds);
    let labels = required(args.estimators.or(file.estimators), "estimators")?;
    let estimators: Vec<BenchEstimator> =
        labels.iter().map(|l| BenchEstimator::parse_with(l, &base)).collect::<Result<_>>()?;
    log::info!(
        "benchmark: seed {seed} reps {reps} estimators {labels:?} scenarios {}",
        serde_json::to_string(&scenarios)?
    );
    let result = run_benchmark(&scenarios, &estimators, reps, seed)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join(BENCHMARK_FILE);
    result.write_csv(fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
    if args.raw || file.raw.unwrap_or(false) {
        let path = out.join(BENCHMARK_RAW_FILE);
        result.write_raw_csv(fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
    }
    let table = result.to_table();
    write_text(&out.join(BENCHMARK_TABLE_FILE), &table)?;
    print!("{table}");
    Ok(())
}

fn run_rank(args: RankArgs, file: FileConfig) -> Result<()> {
    let input = required(args.input.or(file.input), "in")?;
    let method: RankMethod = args.method.or(file.method).as_deref().unwrap_or("eigenratio").parse()?;
    let max_rank = args.max_rank.or(file.max_rank).unwrap_or(10);
    let learner: Learner = match args.learner.or(file.learner) {
        Some(l) => l.parse()?,
        None => Learner::default(),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    log::info!("rank: input {} method {method:?} max-rank {max_rank} seed {seed}", input.display());
    let panel = load_panel_dir(&input, &Schema::default())?;
    let resid = exposure_residuals(&panel, learner)?;
    let selection = select_rank(&resid, method, max_rank, &RankOptions { seed, ..Default::default() })?;
    if let Some(out) = args.out.or(file.out) {
        let doc = RankDocument {
            generated_at_unix: now_unix(),
            input: input.display().to_string(),
            learner,
            selection: &selection,
        };
        write_text(&out.join(RANK_FILE), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    println!("rank {}", selection.rank);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = read_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Fit(a) => run_fit(a, file),
        Command::Simulate(a) => run_simulate(a, file),
        Command::Benchmark(a) => run_benchmark_cmd(a, file),
        Command::Rank(a) => run_rank(a, file),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code:
/// 0 success, 1 usage or validation error, 2 numerical failure.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

//! Command-line front end.
//!
//! ```text
//! dress simulate --d 2 --n 500 --nprime 5000 --sigma 0.2 --delta-grid 0,1,2,5,10 \
//!                --ratio poly:1 --eta qin --reps 200 --seed 7 --out runs/sim
//! dress classify --data spambase.data --n 800 --nprime 2000 --D 20 --splits 50 --seed 1 --out runs/spam
//! dress diff --d 2 --eps 0.0447 --basis poly:1 --n 500 --nprime 5000 --mode eta-phi --validate
//! ```
//!
//! Every subcommand also takes `--config PATH`, a JSON object with the same
//! keys as the long flags (snake_case); flags given on the command line win.
//! With `--out DIR` results are written as CSV/JSON next to a `manifest.json`.
//!
//! Exit codes: 0 ok, 1 other failure, 2 unstable experiment, 3 rank or
//! singularity failure, 64 usage, 66 input file, 74 output I/O.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::asymptotics::{diff_eta_phi, diff_general, diff_optimal, optimal_phitilde, psd_margin};
use crate::data::{load_csv, LabelColumn, SPAMBASE_PROVENANCE};
use crate::density_ratio::{Basis, RidgeSelection};
use crate::error::{DressError, Result};
use crate::simulation::classification::{run_classification, ClassificationConfig};
use crate::simulation::{
    delta, eps_for_delta, eval_covariates, regression_ubar, run_improvement_experiment, validate_eta_phi, EtaKind, RatioSpec,
    RegressionConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_UNSTABLE: i32 = 2;
pub const EXIT_RANK: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INPUT: i32 = 66;
pub const EXIT_IO: i32 = 74;

/// Tolerance on the minimum eigenvalue when checking `A ⪰ B`.
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "dress", version, about = "Semi-supervised weighted MLE with density-ratio weights")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, env = "DRESS_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regression improvement of DRESS over least squares across misspecification levels.
    Simulate(SimulateArgs),
    /// Repeated-split logistic classification benchmark on a CSV dataset.
    Classify(ClassifyArgs),
    /// Asymptotic variance improvement formulas, optionally checked by Monte Carlo.
    Diff(DiffArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    nprime: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Misspecification levels δ; converted to ε.
    #[arg(long, value_delimiter = ',', conflicts_with = "eps_grid")]
    delta_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    /// Ratio models, `poly:L` or `kulsif`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "poly:1")]
    ratio: Vec<String>,
    /// Moment function for polynomial ratios.
    #[arg(long, default_value_t = EtaKind::Qin)]
    eta: EtaKind,
    /// KuLSIF ridge parameter.
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    /// KuLSIF bandwidth (default: median heuristic).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Choose the KuLSIF ridge by cross-validation instead of --lambda.
    #[arg(long)]
    cv: bool,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyArgs {
    /// CSV file: numeric features and one binary label column.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    nprime: usize,
    /// Use the first D feature columns.
    #[arg(long = "D", default_value_t = 20)]
    dims: usize,
    #[arg(long, default_value_t = 50)]
    splits: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Label column: header name or 0-based index (default: last column).
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long, default_value = "1")]
    positive_label: String,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    cv: bool,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    EtaPhi,
    Optimal,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum GeneralEta {
    /// η = φ.
    Phi,
    /// η = φ + φ̃ with the optimal φ̃.
    PhiPlusOptimal,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffArgs {
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Misspecification ε of the regression function.
    #[arg(long, conflicts_with = "delta")]
    eps: Option<f64>,
    /// Misspecification level δ (uses --n and --sigma).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Ratio basis `poly:L`.
    #[arg(long, default_value = "poly:1")]
    basis: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    nprime: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::EtaPhi)]
    mode: ModeArg,
    /// Moment function for --mode general.
    #[arg(long, value_enum, default_value_t = GeneralEta::Phi)]
    eta: GeneralEta,
    #[arg(long, default_value_t = 100_000)]
    eval_samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Compare with a Monte Carlo estimate from replicated fits (eta-phi mode).
    #[arg(long)]
    validate: bool,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Relative Frobenius tolerance for --validate.
    #[arg(long, default_value_t = 0.25)]
    tolerance: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Map an error to its process exit code.
pub fn exit_code(err: &DressError) -> i32 {
    match err.root() {
        DressError::ExperimentUnstable { .. } => EXIT_UNSTABLE,
        DressError::SingularSystem { .. } | DressError::RankDeficient { .. } => EXIT_RANK,
        DressError::Contract(_) => EXIT_USAGE,
        DressError::Ingest { .. } => EXIT_INPUT,
        DressError::Io(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match run(cli, sub) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let DressError::Ingest { line: 0, .. } = e.root() {
                eprintln!("expected data source: {SPAMBASE_PROVENANCE}");
            }
            exit_code(&e)
        }
    }
}

fn run(cli: Cli, sub: &ArgMatches) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(DressError::contract("--threads must be at least 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DressError::contract(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => {
            let a = with_config(a.clone(), a.config.as_deref(), sub)?;
            cmd_simulate(a)
        }
        Command::Classify(a) => {
            let a = with_config(a.clone(), a.config.as_deref(), sub)?;
            cmd_classify(a)
        }
        Command::Diff(a) => {
            let a = with_config(a.clone(), a.config.as_deref(), sub)?;
            cmd_diff(a)
        }
    })
}

/// Overlay keys from a JSON config file onto arguments not given on the command line.
fn with_config<T>(args: T, path: Option<&Path>, matches: &ArgMatches) -> Result<T>
where
    T: Serialize + DeserializeOwned + HasOutputs,
{
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(path).map_err(|e| DressError::Ingest {
        path: path.to_path_buf(),
        line: 0,
        column: None,
        message: e.to_string(),
    })?;
    let file: Value = serde_json::from_str(&text).map_err(|e| DressError::Ingest {
        path: path.to_path_buf(),
        line: e.line(),
        column: Some(e.column().to_string()),
        message: e.to_string(),
    })?;
    let Value::Object(file) = file else {
        return Err(DressError::contract("config file must hold a JSON object"));
    };
    let mut merged = serde_json::to_value(&args).map_err(|e| DressError::contract(e.to_string()))?;
    let obj = merged.as_object_mut().expect("arguments serialize to an object");
    for (k, v) in file {
        if !obj.contains_key(&k) {
            return Err(DressError::contract(format!("unknown config key '{k}'")));
        }
        if matches.value_source(&k) != Some(ValueSource::CommandLine) {
            obj.insert(k, v);
        }
    }
    let mut out: T =
        serde_json::from_value(merged).map_err(|e| DressError::contract(format!("invalid config: {e}")))?;
    out.carry_over(&args);
    Ok(out)
}

trait HasOutputs {
    /// Restore the fields that are not part of the config schema.
    fn carry_over(&mut self, from: &Self);
}

macro_rules! has_outputs {
    ($($t:ty),*) => {$(
        impl HasOutputs for $t {
            fn carry_over(&mut self, from: &Self) {
                self.out = from.out.clone();
                self.config = from.config.clone();
            }
        }
    )*};
}
has_outputs!(SimulateArgs, ClassifyArgs, DiffArgs);

fn ridge(cv: bool, lambda: f64) -> RidgeSelection {
    if cv {
        RidgeSelection::CrossValidated
    } else {
        RidgeSelection::Fixed { lambda }
    }
}

fn parse_poly(s: &str) -> Result<usize> {
    s.strip_prefix("poly:")
        .and_then(|l| l.parse().ok())
        .ok_or_else(|| DressError::contract(format!("expected poly:L, got '{s}'")))
}

fn parse_ratio(s: &str, a: &SimulateArgs) -> Result<RatioSpec> {
    if s == "kulsif" {
        return Ok(RatioSpec::Kernel {
            bandwidth: a.bandwidth,
            ridge: ridge(a.cv, a.lambda),
        });
    }
    Ok(RatioSpec::Parametric {
        degree: parse_poly(s)?,
        eta: a.eta,
    })
}

struct Outputs {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Outputs {
    fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Outputs {
            dir,
            written: Vec::new(),
            started: unix_now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(d) = &self.dir {
            let p = d.join(name);
            fs::write(&p, bytes)?;
            self.written.push(p);
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| DressError::contract(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn finish<T: Serialize>(mut self, command: &str, config: &T, seed: u64) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let manifest = json!({
            "command": command,
            "config": config,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "started_at_unix": self.started,
            "finished_at_unix": unix_now(),
            "outputs": self.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        self.json("manifest.json", &manifest)
    }
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| DressError::contract(e.to_string()))?;
    }
    w.into_inner().map_err(|e| DressError::contract(e.to_string()))
}

#[derive(Serialize)]
struct SimulateRow {
    delta: f64,
    eps: f64,
    ratio: String,
    eta: String,
    mean_improvement: f64,
    std_error: f64,
    p_value: f64,
    reps_used: usize,
    reps_failed: usize,
    d: usize,
    n: usize,
    nprime: usize,
    sigma: f64,
    seed: u64,
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let eps_grid: Vec<f64> = match (&a.delta_grid, &a.eps_grid) {
        (Some(_), Some(_)) => return Err(DressError::contract("give only one of --delta-grid and --eps-grid")),
        (Some(ds), None) => ds.iter().map(|&dl| eps_for_delta(dl, a.n, a.sigma, a.d)).collect(),
        (None, Some(es)) => es.clone(),
        (None, None) => return Err(DressError::contract("one of --delta-grid or --eps-grid is required")),
    };
    if eps_grid.is_empty() || a.ratio.is_empty() {
        return Err(DressError::contract("empty grid"));
    }
    let specs = a.ratio.iter().map(|s| parse_ratio(s, &a)).collect::<Result<Vec<_>>>()?;
    let mut outputs = Outputs::new(a.out.clone())?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for spec in &specs {
        for &eps in &eps_grid {
            let config = RegressionConfig {
                d: a.d,
                n: a.n,
                nprime: a.nprime,
                sigma: a.sigma,
                eps,
                ratio: *spec,
                reps: a.reps,
                seed: a.seed,
            };
            let s = run_improvement_experiment(&config)?;
            rows.push(SimulateRow {
                delta: s.delta,
                eps,
                ratio: spec.label(),
                eta: match spec {
                    RatioSpec::Parametric { eta, .. } => eta.to_string(),
                    RatioSpec::Kernel { .. } => "-".into(),
                },
                mean_improvement: s.mean_improvement,
                std_error: s.std_error,
                p_value: s.p_value,
                reps_used: s.reps_used,
                reps_failed: s.reps_failed,
                d: a.d,
                n: a.n,
                nprime: a.nprime,
                sigma: a.sigma,
                seed: a.seed,
            });
            summaries.push(json!({ "config": config, "summary": s }));
        }
    }
    let csv = csv_bytes(&rows)?;
    print!("{}", String::from_utf8_lossy(&csv));
    outputs.write("simulate.csv", &csv)?;
    outputs.json("simulate.json", &json!({ "config": &a, "results": summaries }))?;
    outputs.finish("simulate", &a, a.seed)
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let Some(path) = a.data.clone() else {
        eprintln!("expected data source: {SPAMBASE_PROVENANCE}");
        return Err(DressError::contract("--data PATH is required"));
    };
    let label = match &a.label_column {
        None => LabelColumn::Last,
        Some(s) => match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.clone()),
        },
    };
    let ds = load_csv(&path, &label, &a.positive_label)?;
    eprintln!(
        "loaded {} rows ({} rejected), {} features",
        ds.len(),
        ds.rejected_rows,
        ds.dim()
    );
    let cfg = ClassificationConfig {
        n: a.n,
        nprime: a.nprime,
        dims: a.dims,
        splits: a.splits,
        seed: a.seed,
        bandwidth: a.bandwidth,
        ridge: ridge(a.cv, a.lambda),
    };
    let mut outputs = Outputs::new(a.out.clone())?;
    let s = run_classification(&ds, &cfg)?;
    println!("n={} n'={} D={} splits={}", a.n, a.nprime, a.dims, s.splits.len());
    println!("DRESS  {:.2} ± {:.2}", s.dress_mean, s.dress_sd);
    println!("MLE    {:.2} ± {:.2}", s.mle_mean, s.mle_sd);
    println!("p-value (DRESS < MLE, paired one-tailed) {:.3}", s.test.p_one_tailed);
    outputs.write("classify_splits.csv", &csv_bytes(&s.splits)?)?;
    outputs.json("classify.json", &json!({ "config": &a, "summary": &s }))?;
    outputs.finish("classify", &a, a.seed)
}

fn cmd_diff(a: DiffArgs) -> Result<()> {
    let eps = match (a.eps, a.delta) {
        (Some(e), None) => e,
        (None, Some(dl)) => eps_for_delta(dl, a.n, a.sigma, a.d),
        (None, None) => return Err(DressError::contract("one of --eps or --delta is required")),
        (Some(_), Some(_)) => return Err(DressError::contract("give only one of --eps and --delta")),
    };
    if !(eps >= 0.0) || a.d == 0 || a.n == 0 || a.nprime == 0 {
        return Err(DressError::contract("need eps ≥ 0 and positive d, n, nprime"));
    }
    if a.eval_samples < 2 {
        return Err(DressError::contract("--eval-samples must be at least 2"));
    }
    let degree = parse_poly(&a.basis)?;
    let basis = Basis::polynomial(a.d, degree)?;
    let mut outputs = Outputs::new(a.out.clone())?;

    let xs = eval_covariates(a.d, a.eval_samples, a.seed);
    let ubar = regression_ubar(eps, a.d).samples(&xs)?;
    let phi = basis.matrix(&xs)?;

    let eta_phi = diff_eta_phi(&ubar, &phi, a.n, a.nprime)?;
    let report = match a.mode {
        ModeArg::EtaPhi => eta_phi.clone(),
        ModeArg::Optimal => diff_optimal(&ubar, &phi, a.n, a.nprime)?,
        ModeArg::General => match a.eta {
            GeneralEta::Phi => diff_general(&ubar, &phi, &phi, a.n, a.nprime)?,
            GeneralEta::PhiPlusOptimal => {
                let opt = optimal_phitilde(&ubar, &phi, a.n, a.nprime)?;
                diff_general(&ubar, &phi, &(&phi + opt.phitilde), a.n, a.nprime)?
            }
        },
    };
    // the optimum needs a full-row-rank projection; report dominance only when defined
    let dominance = match diff_optimal(&ubar, &phi, a.n, a.nprime) {
        Ok(opt) => {
            let margin = psd_margin(&opt.diff_matrix, &eta_phi.diff_matrix);
            json!({ "min_eigenvalue_optimal_minus_eta_phi": margin, "optimal_dominates_eta_phi": margin >= -PSD_TOL })
        }
        Err(e) => json!({ "unavailable": e.to_string() }),
    };

    let validation = if a.validate {
        if a.mode != ModeArg::EtaPhi {
            return Err(DressError::contract("--validate is only available with --mode eta-phi"));
        }
        let config = RegressionConfig {
            d: a.d,
            n: a.n,
            nprime: a.nprime,
            sigma: a.sigma,
            eps,
            ratio: RatioSpec::Parametric {
                degree,
                eta: EtaKind::Naive,
            },
            reps: a.reps,
            seed: a.seed,
        };
        let v = validate_eta_phi(&config, a.eval_samples)?;
        println!(
            "validation: relative Frobenius error {:.4} (tolerance {}) over {} replications",
            v.relative_frobenius, a.tolerance, v.reps_used
        );
        Some(json!({ "within_tolerance": v.relative_frobenius <= a.tolerance, "tolerance": a.tolerance, "result": v }))
    } else {
        None
    };

    println!("eps {eps} (delta {:.4}), mode {:?}", delta(eps, a.n, a.sigma, a.d), a.mode);
    for r in report.diff_matrix.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.6e}")).collect();
        println!("  [{}]", cells.join(", "));
    }
    println!("trace {:.6e}, min eigenvalue {:.6e}", report.trace(), report.min_eigenvalue());

    let doc = json!({
        "config": &a,
        "eps": eps,
        "delta": delta(eps, a.n, a.sigma, a.d),
        "report": report,
        "dominance": dominance,
        "validation": validation,
    });
    outputs.json("diff.json", &doc)?;
    outputs.finish("diff", &a, a.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("dress").chain(args.iter().copied()))
    }

    #[test]
    fn zero_reps_is_usage_error() {
        assert_eq!(code(&["simulate", "--delta-grid", "0", "--reps", "0"]), EXIT_USAGE);
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert_eq!(code(&["simulate", "--bogus"]), EXIT_USAGE);
        assert_eq!(code(&["simulate", "--delta-grid", "1", "--ratio", "poly:x"]), EXIT_USAGE);
        assert_eq!(code(&["simulate", "--reps", "3"]), EXIT_USAGE);
        assert_eq!(code(&["--help"]), EXIT_OK);
    }

    #[test]
    fn missing_data_file_is_input_error() {
        assert_eq!(code(&["classify", "--data", "/nonexistent/spambase.data"]), EXIT_INPUT);
    }

    #[test]
    fn diff_rank_failure_exit_code() {
        // with eps = 0 the projection coefficient B vanishes
        assert_eq!(
            code(&["diff", "--d", "2", "--eps", "0", "--mode", "optimal", "--eval-samples", "200"]),
            EXIT_RANK
        );
    }

    #[test]
    fn exit_codes_follow_root_error() {
        let e = DressError::RankDeficient { rank: 1, required: 2 }.at(crate::error::Stage::Ratio);
        assert_eq!(exit_code(&e), EXIT_RANK);
        assert_eq!(exit_code(&DressError::ExperimentUnstable { failed: 3, total: 10 }), EXIT_UNSTABLE);
    }
}

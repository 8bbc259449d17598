//! `cca` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::read_matrix_csv;
use crate::harness::{self, CellResult, ExperimentConfig};
use crate::linalg::Matrix;
use crate::losses::principal_angles;
use crate::model::{build_joint, conditioned_spec, population_cca, CanonicalSpec};
use crate::plot::rate_plot_svg;
use crate::theory::{self, AuditReport, RateParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONSTRAINT: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_EMPTY: i32 = 5;
pub const EXIT_VIOLATION: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "cca", version, about = "Sample CCA subspace-loss experiments and theory audits")]
pub struct Cli {
    /// Worker threads (falls back to CCA_THREADS, then all cores).
    #[arg(long, global = true, env = "CCA_THREADS")]
    pub threads: Option<usize>,
    /// Increase log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a model JSON file.
    GenModel(GenModelArgs),
    /// Run a Monte-Carlo sweep from a JSON config.
    Sweep(SweepArgs),
    /// Run randomized checks of the theoretical bounds.
    VerifyTheory(VerifyArgs),
    /// Principal-angle distances between two reducers.
    Losses(LossesArgs),
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long)]
    pub p1: usize,
    #[arg(long)]
    pub p2: usize,
    /// Comma-separated descending canonical correlations.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub kappa_x: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa_y: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample size used for the printed sample-size ratio.
    #[arg(long, default_value_t = 1000)]
    pub reference_n: usize,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON config file.
    pub config: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON mirror of the results.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// SVG rate plot.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub kl: bool,
    #[arg(long)]
    pub hadamard: bool,
    #[arg(long)]
    pub wedin: bool,
    #[arg(long)]
    pub bmatrix: bool,
    #[arg(long)]
    pub metric_identities: bool,
    /// Trials per audit; each audit has its own default.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub scale_a2_bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long)]
    pub u1: PathBuf,
    #[arg(long)]
    pub u2: PathBuf,
    /// Covariance of x; identity when absent.
    #[arg(long)]
    pub sigma_x: Option<PathBuf>,
    /// CSV files start with a header row.
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sweep config file: the experiment plus optional outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default)]
    pub verbosity: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub audits: Vec<AuditReport>,
    pub total_violations: usize,
}

/// Maps a library error to the documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Parse(_) => EXIT_USAGE,
        Error::AllReplicatesFailed(_) => EXIT_EMPTY,
        _ => EXIT_CONSTRAINT,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let verbose = cli.verbose;
    let outcome = match cli.threads {
        Some(0) => Err(Error::InvalidParams("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParams(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(cli.command, verbose))),
        None => dispatch(cli.command, verbose),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, verbose: u8) -> Result<i32> {
    match command {
        Command::GenModel(a) => gen_model(&a),
        Command::Sweep(a) => sweep(&a, verbose),
        Command::VerifyTheory(a) => verify_theory(&a, verbose),
        Command::Losses(a) => losses(&a),
    }
}

fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn gen_model(a: &GenModelArgs) -> Result<i32> {
    let spec = conditioned_spec(a.p1, a.p2, a.lambdas.clone(), Some(a.k), (a.kappa_x, a.kappa_y), a.seed)?;
    let cov = build_joint(&spec)?;
    population_cca(&cov)?;
    let json = serde_json::to_string_pretty(&spec)? + "\n";
    emit(a.out.as_deref(), &json)?;
    let delta = spec.delta().unwrap_or(f64::NAN);
    let condition = spec
        .lambda_k()
        .zip(spec.lambda_k1())
        .and_then(|(lk, lk1)| RateParams::new(a.p1, a.p2, a.reference_n, a.k, lk, lk1).ok())
        .and_then(|p| theory::sample_size_condition(&p).ok());
    eprintln!("delta = {delta}");
    match condition {
        Some(c) => eprintln!("sample_size_condition(n = {}) = {c}", a.reference_n),
        None => eprintln!("sample_size_condition(n = {}) = n/a", a.reference_n),
    }
    eprintln!("kappa_x = {}, kappa_y = {}", cov.kappa_x()?, cov.kappa_y()?);
    Ok(EXIT_OK)
}

fn load_config(path: &Path) -> Result<CliConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn sweep(a: &SweepArgs, verbose: u8) -> Result<i32> {
    let mut config = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.experiment.master_seed = seed;
    }
    let verbose = verbose.max(config.verbosity);
    let outcomes = harness::run_sweep(&config.experiment)?;
    for o in &outcomes {
        match &o.result {
            Err(e) => eprintln!("cell {} (model {}, n = {}) failed: {e}", o.cell_index, o.model_index, o.n),
            Ok(c) if verbose > 0 => eprintln!("cell {} done: {} failures", c.cell_index, c.failures),
            Ok(_) => {}
        }
    }
    let cells: Vec<CellResult> = harness::successful(&outcomes);
    if cells.is_empty() {
        eprintln!("error: every cell failed");
        return Ok(EXIT_EMPTY);
    }
    let mut csv = Vec::new();
    harness::write_results_csv(&cells, &mut csv)?;
    let csv = String::from_utf8(csv).map_err(|e| Error::Io(e.to_string()))?;
    let csv_path = a.out.clone().or(config.outputs.csv.clone());
    emit(csv_path.as_deref(), &csv)?;
    if let Some(p) = a.json.clone().or(config.outputs.json.clone()) {
        fs::write(p, serde_json::to_string_pretty(&cells)? + "\n")?;
    }
    if let Some(p) = a.plot.clone().or(config.outputs.plot.clone()) {
        fs::write(p, rate_plot_svg(&cells))?;
    }
    Ok(EXIT_OK)
}

fn verify_theory(a: &VerifyArgs, verbose: u8) -> Result<i32> {
    let any = a.kl || a.hadamard || a.wedin || a.bmatrix || a.metric_identities;
    let trials = |default: usize| a.trials.unwrap_or(default);
    let mut audits = Vec::new();
    if a.kl || !any {
        audits.push(theory::kl_audit(trials(50), crate::seeds::derive(a.seed, &[0]))?);
    }
    if a.hadamard || !any {
        let scale = [1.0, a.scale_a2_bound.unwrap_or(1.0), 1.0];
        audits.extend(theory::hadamard_audit(trials(10_000), crate::seeds::derive(a.seed, &[1]), 30, 0.1, scale)?);
    }
    if a.wedin || !any {
        audits.push(theory::wedin_audit(trials(1000), crate::seeds::derive(a.seed, &[2]), 0.5, 0.2)?);
    }
    if a.bmatrix || !any {
        let mut lambdas = vec![0.9, 0.8, 0.3];
        lambdas.resize(10, 0.0);
        let cov = build_joint(&CanonicalSpec::standard(10, 10, lambdas, Some(2))?)?;
        let (report, _) = theory::b_matrix_audit(&cov, 2000, 2, trials(1000), crate::seeds::derive(a.seed, &[3]))?;
        audits.push(report);
    }
    if a.metric_identities || !any {
        audits.push(theory::metric_identity_audit(trials(1000), crate::seeds::derive(a.seed, &[4]))?);
    }
    let total_violations = audits.iter().map(|r| r.violations).sum();
    if verbose > 0 {
        for r in &audits {
            eprintln!("{}: {} violations over {} trials", r.name, r.violations, r.trials);
        }
    }
    let report = TheoryReport {
        seed: a.seed,
        audits,
        total_violations,
    };
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(if total_violations == 0 { EXIT_OK } else { EXIT_VIOLATION })
}

fn losses(a: &LossesArgs) -> Result<i32> {
    let u1 = read_matrix_csv(&a.u1, a.header)?;
    let u2 = read_matrix_csv(&a.u2, a.header)?;
    let sigma_x = match &a.sigma_x {
        Some(p) => read_matrix_csv(p, a.header)?,
        None => Matrix::identity(u1.nrows(), u1.nrows()),
    };
    let d = principal_angles(&u1, &u2, &sigma_x)?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&d)? + "\n"))?;
    Ok(EXIT_OK)
}

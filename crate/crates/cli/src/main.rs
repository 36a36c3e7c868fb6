//! `wbsr`: command line front end for weighted block-sparse recovery.
//!
//! Exit codes: 0 on success, 1 on I/O or internal failures, 2 on invalid input
//! or configuration, 3 when the solver stops before converging. `report-diff`
//! exits 1 when the reports differ.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use wbsr::multiindex::{cardinality_bound, enumerate_lambda, PolynomialBoundConstants};
use wbsr::pipeline::{report_differences, run_sweep, write_sweep_csv, Experiment, ExperimentConfig};
use wbsr::sensing::{empirical_wbrip, random_matrix, Ensemble};
use wbsr::solver::{kkt_certificate, solve_wg_bpdn, KktCertificate, SolveDiagnostics, DELTA_MAX};
use wbsr::{io, BlockStructure, Error, Result, SolveSettings, WeightRule, WeightSequence};

const EXIT_DIFFERENT: u8 = 1;
const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "wbsr", version, about = "Weighted block-sparse recovery experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate the index set and write it to `lambda.txt`.
    Lambda {
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Empirical restricted isometry constants of random matrices.
    RipCheck,
    /// Solve the weighted group program for CSV inputs `A` and `Y`.
    Recover {
        #[arg(long, value_name = "CSV")]
        a: PathBuf,
        #[arg(long, value_name = "CSV")]
        y: PathBuf,
        /// Noise radius of the constraint.
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        /// Rows of `Z` per block.
        #[arg(long, default_value_t = 1)]
        block_size: usize,
        /// One weight per block, one per line.
        #[arg(long, value_name = "CSV")]
        weights: Option<PathBuf>,
    },
    /// Recover a parametric diffusion solution end to end.
    PdeDemo {
        /// Comma-separated sparsity values; runs a sweep instead of a single experiment.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Seeds used by the sweep.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Compare two report files, ignoring timings.
    ReportDiff { left: PathBuf, right: PathBuf },
}

#[derive(Debug, Deserialize)]
struct LambdaConfig {
    weights: WeightRule,
    s: Option<f64>,
    tau: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RipConfig {
    ensemble: Ensemble,
    rows: Vec<usize>,
    blocks: usize,
    #[serde(default = "one_usize")]
    block_size: usize,
    /// One weight per block; all ones when absent.
    #[serde(default)]
    weights: Option<Vec<f64>>,
    s: f64,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: u64,
    /// Success means `δ < threshold`.
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn one_usize() -> usize {
    1
}

fn default_trials() -> usize {
    20
}

fn default_threshold() -> f64 {
    DELTA_MAX
}

#[derive(Debug, Default, Deserialize)]
struct RecoverConfig {
    #[serde(default)]
    solver: SolveSettings,
}

#[derive(Debug, Serialize)]
struct RipRow {
    m: usize,
    trial: usize,
    delta: f64,
    supports_checked: u64,
}

#[derive(Debug, Serialize)]
struct RecoverSummary {
    solver: SolveDiagnostics,
    certificate: KktCertificate,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(toml::from_str(&fs::read_to_string(path)?)?)
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Validation("this command needs --config".into()))
}

fn lambda(cli: &Cli, s: Option<f64>, tau: Option<usize>) -> Result<u8> {
    let cfg: LambdaConfig = read_toml(require_config(cli)?)?;
    let s = s.or(cfg.s).ok_or_else(|| Error::Validation("sparsity s is not set".into()))?;
    let tau = tau.or(cfg.tau).ok_or_else(|| Error::Validation("dimension tau is not set".into()))?;
    let set = enumerate_lambda(&cfg.weights, s, tau)?;
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("lambda.txt");
    fs::write(&path, set.to_text())?;
    let bound = cardinality_bound(&cfg.weights, s, PolynomialBoundConstants::default());
    println!("N = {} (bound {bound:.6}), written to {}", set.len(), path.display());
    Ok(0)
}

fn rip_check(cli: &Cli) -> Result<u8> {
    let mut cfg: RipConfig = read_toml(require_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let structure = BlockStructure::uniform(cfg.blocks, cfg.block_size)?;
    let weights = match cfg.weights.take() {
        Some(w) => WeightSequence::new(w)?,
        None => WeightSequence::ones(cfg.blocks),
    };
    weights.check_against(&structure)?;
    let mut rows = Vec::new();
    for (k, &m) in cfg.rows.iter().enumerate() {
        let mut hits = 0;
        for trial in 0..cfg.trials {
            let seed = cfg.seed.wrapping_add((k * cfg.trials + trial) as u64);
            let a = random_matrix(cfg.ensemble, m, structure.dim(), seed)?;
            let est = empirical_wbrip(&a, &structure, &weights, cfg.s)?;
            hits += usize::from(est.delta < cfg.threshold);
            rows.push(RipRow {
                m,
                trial,
                delta: est.delta,
                supports_checked: est.supports_checked,
            });
        }
        println!("m = {m}: δ < {:.4} in {hits}/{} trials", cfg.threshold, cfg.trials);
    }
    fs::create_dir_all(&cli.out)?;
    io::write_records(cli.out.join("rip.csv"), &rows)?;
    Ok(0)
}

fn recover(cli: &Cli, a: &Path, y: &Path, eta: f64, block_size: usize, weights: Option<&Path>) -> Result<u8> {
    let cfg: RecoverConfig = match &cli.config {
        Some(path) => read_toml(path)?,
        None => RecoverConfig::default(),
    };
    let a = io::read_matrix_file(a)?;
    let y = io::read_matrix_file(y)?;
    if block_size == 0 || a.ncols() % block_size != 0 {
        return Err(Error::Structure(format!("{} columns do not split into blocks of {block_size}", a.ncols())));
    }
    let structure = BlockStructure::uniform(a.ncols() / block_size, block_size)?;
    let weights = match weights {
        Some(path) => WeightSequence::new(io::read_matrix_file(path)?.iter().copied().collect())?,
        None => WeightSequence::ones(structure.num_blocks()),
    };
    let res = solve_wg_bpdn(&a, &y, &structure, &weights, eta, &cfg.solver)?;
    let certificate = kkt_certificate(&a, &y, &structure, &weights, eta, &res.z, Some(&res.dual))?;
    fs::create_dir_all(&cli.out)?;
    io::write_matrix_file(cli.out.join("Z.csv"), &res.z)?;
    let summary = RecoverSummary {
        solver: res.diagnostics(),
        certificate,
    };
    fs::write(cli.out.join("diagnostics.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{:?} after {} iterations, objective {:.6e}, KKT residual {:.3e}",
        res.status,
        res.iterations,
        res.objective,
        summary.certificate.max_residual()
    );
    Ok(if res.converged() { 0 } else { EXIT_NOT_CONVERGED })
}

fn pde_demo(cli: &Cli, sweep: &[f64], seeds: &[u64]) -> Result<u8> {
    let mut config = ExperimentConfig::from_file(require_config(cli)?)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    fs::create_dir_all(&cli.out)?;
    if !sweep.is_empty() {
        let rows = run_sweep(&config, sweep, seeds)?;
        let path = cli.out.join(&config.outputs.sweep);
        write_sweep_csv(&path, &rows)?;
        for r in &rows {
            println!("s = {:>6} seed = {:>3}  N = {:>4}  m = {:>6}  L∞ rel = {:.3e}", r.s, r.seed, r.n_lambda, r.m, r.linf_rel);
        }
        println!("sweep written to {}", path.display());
        return Ok(if rows.iter().any(|r| r.degraded) { EXIT_NOT_CONVERGED } else { 0 });
    }
    let exp = Experiment::run(&config)?;
    exp.write_outputs(&cli.out)?;
    let r = &exp.report;
    println!("tau = {}, N = {}, m = {}", r.tau, r.n_lambda, r.m);
    println!("held-out L∞ error {:.3e} (relative {:.3e})", r.errors.linf, r.errors.linf_rel);
    println!("held-out L² error {:.3e} (relative {:.3e})", r.errors.l2, r.errors.l2_rel);
    println!("solver: {:?} after {} iterations", r.solver.status, r.solver.iterations);
    println!("report written to {}", cli.out.join(&config.outputs.report).display());
    Ok(if r.degraded { EXIT_NOT_CONVERGED } else { 0 })
}

fn report_diff(left: &Path, right: &Path) -> Result<u8> {
    let read = |p: &Path| -> Result<serde_json::Value> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) };
    let diffs = report_differences(&read(left)?, &read(right)?);
    if diffs.is_empty() {
        println!("reports are identical apart from timings");
        return Ok(0);
    }
    for d in &diffs {
        println!("differs at {d}");
    }
    Ok(EXIT_DIFFERENT)
}

fn run(cli: &Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("cannot start {n} worker threads: {e}")))?;
    }
    match &cli.command {
        Command::Lambda { s, tau } => lambda(cli, *s, *tau),
        Command::RipCheck => rip_check(cli),
        Command::Recover {
            a,
            y,
            eta,
            block_size,
            weights,
        } => recover(cli, a, y, *eta, *block_size, weights.as_deref()),
        Command::PdeDemo { sweep, seeds } => pde_demo(cli, sweep, seeds),
        Command::ReportDiff { left, right } => report_diff(left, right),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_FAILURE })
        }
    }
}

//! `knr`: run experiments, estimate oracle costs, sweep seeds and verify
//! the supporting inequalities.
//!
//! Exit codes: 0 success, 1 runtime failure (or a failed check), 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use knr_core::analysis::{verify, LemmaId, VerifyOptions};
use knr_core::config::ExperimentConfig;
use knr_core::driver::{Experiment, OracleCache};
use knr_core::report::{run_sweep, write_run};
use knr_core::KnrError;

#[derive(Parser)]
#[command(name = "knr", version, about = "Online learning and control of kernelized nonlinear regulators")]
struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write results.csv and summary.json.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the supporting inequalities numerically.
    Verify {
        /// Checks to run (`all` or any of the check names); empty means all.
        lemmas: Vec<String>,
        /// Overrides the number of randomized trials per check.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate the true-model planner cost J*.
    Oracle {
        #[command(flatten)]
        source: ConfigSource,
        /// Also write oracle.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Run one experiment per seed and aggregate across seeds.
    Sweep {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated seeds; defaults to `driver.seeds` in the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset: maze, lqr-toy or pendulum-toy.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_path(path).map_err(|e| match e {
                KnrError::Io(io) => Failure::usage(format!("cannot read config {}: {io}", path.display())),
                other => Failure::from(other),
            }),
            (None, Some(name)) => Ok(ExperimentConfig::preset(name)?),
            (None, None) => Err(Failure::usage("one of --config or --preset is required")),
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<KnrError> for Failure {
    fn from(e: KnrError) -> Self {
        let code = match e {
            KnrError::Config { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Run { source, out, seed } => cmd_run(&source, &out, seed),
        Command::Verify { lemmas, trials, seed } => cmd_verify(&lemmas, trials, seed),
        Command::Oracle { source, out, rollouts } => cmd_oracle(&source, out.as_deref(), rollouts),
        Command::Sweep { source, out, seeds } => cmd_sweep(&source, &out, seeds),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(source: &ConfigSource, out: &Path, seed: Option<u64>) -> Result<u8, Failure> {
    let mut cfg = source.load()?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    let start = Instant::now();
    let report = Experiment::new(&cfg)?.run(&mut OracleCache::new())?;
    write_run(out, &report, &cfg, start.elapsed().as_secs_f64())?;
    let first = report
        .first_success
        .map_or_else(|| "none".to_string(), |t| t.to_string());
    println!(
        "episodes={} cum_regret={:.6} oracle={:.6}±{:.6} first_success={first} out={}",
        report.records.len(),
        report.final_cum_regret(),
        report.oracle.mean,
        report.oracle.std_err,
        out.display()
    );
    Ok(0)
}

fn cmd_verify(lemmas: &[String], trials: Option<usize>, seed: u64) -> Result<u8, Failure> {
    let mut ids = Vec::new();
    for name in lemmas {
        if name == "all" {
            ids.clear();
            break;
        }
        let id = LemmaId::parse(name).ok_or_else(|| {
            let known: Vec<&str> = LemmaId::ALL.iter().map(|id| id.name()).collect();
            Failure::usage(format!("unknown check `{name}`; expected all or one of {}", known.join(", ")))
        })?;
        ids.push(id);
    }
    let results = verify(&ids, &VerifyOptions { trials, seed })?;
    for r in &results {
        println!("{r}");
    }
    Ok(if results.iter().all(|r| r.passed()) { 0 } else { 1 })
}

fn cmd_oracle(source: &ConfigSource, out: Option<&Path>, rollouts: Option<usize>) -> Result<u8, Failure> {
    let mut cfg = source.load()?;
    if let Some(n) = rollouts {
        if n == 0 {
            return Err(Failure::usage("--rollouts must be at least 1"));
        }
        cfg.driver.oracle_rollouts = n;
    }
    let est = Experiment::new(&cfg)?.estimate_oracle_cost(&mut OracleCache::new())?;
    let json = serde_json::json!({ "mean": est.mean, "std_err": est.std_err, "rollouts": est.rollouts });
    println!("{json}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(KnrError::from)?;
        std::fs::write(dir.join("oracle.json"), format!("{json:#}\n")).map_err(KnrError::from)?;
    }
    Ok(0)
}

fn cmd_sweep(source: &ConfigSource, out: &Path, seeds: Vec<u64>) -> Result<u8, Failure> {
    let cfg = source.load()?;
    let seeds = if seeds.is_empty() { cfg.sweep_seeds() } else { seeds };
    let sweep = run_sweep(&cfg, &seeds, out)?;
    for (seed, report) in sweep.seeds.iter().zip(&sweep.reports) {
        println!("seed={seed} cum_regret={:.6}", report.final_cum_regret());
    }
    println!("wrote {} files to {}", sweep.files.len(), out.display());
    Ok(0)
}

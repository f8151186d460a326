use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reducible_sde::config::ModelConfig;
use reducible_sde::report::{self, FitReport};
use reducible_sde::run::{self, EXIT_NOT_CONVERGED};
use reducible_sde::simulate::SimulationSpec;
use reducible_sde::{Error, Strategy, TransformRegistry};

/// Estimate reducible SDE models by nonlinear least squares.
#[derive(Parser)]
#[command(name = "rsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model config and write a JSON report.
    Fit {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Convergence tolerance (overrides the config).
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// `single` or `two-stage`.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Simulate a dataset as `unit,t,x` CSV.
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG seed (overrides the spec).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the log-likelihood at given parameter values.
    Loglik {
        config: PathBuf,
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate AIC/BIC differences across reports.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with the exit status it maps to.
struct Failure(i32, String);

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure(2, e.to_string())
    }

    fn from_run(e: Error) -> Self {
        Failure(run::exit_code(&e), e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure(3, format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<ModelConfig, Failure> {
    // any failure reading the config itself is a config error
    ModelConfig::load(path).map_err(Failure::config)
}

fn execute(command: Command) -> Result<i32, Failure> {
    let registry = TransformRegistry::with_builtins();
    match command {
        Command::Fit {
            config,
            out,
            tol,
            max_iter,
            strategy,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = tol {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Failure::config("--tol must be positive"));
                }
                cfg.fit.tol = t;
            }
            if let Some(m) = max_iter {
                cfg.fit.max_iter = m;
            }
            if let Some(s) = strategy {
                cfg.fit.strategy = s;
            }
            let report = run::run_fit(&cfg, &registry).map_err(Failure::from_run)?;
            eprint!("{}", report.table());
            emit(out.as_deref(), &report.to_json())?;
            Ok(if report.fit.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Simulate { spec, out, seed } => {
            let mut spec = SimulationSpec::from_json(&read(&spec)?).map_err(Failure::config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let csv = run::run_simulate(&spec, &registry).map_err(Failure::config)?;
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(|e| Failure(3, format!("{}: {e}", p.display())))?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
        Command::Loglik { config, theta, out } => {
            let cfg = load_config(&config)?;
            let theta = run::parse_theta(&read(&theta)?).map_err(Failure::config)?;
            let r = run::run_loglik(&cfg, &theta, &registry).map_err(Failure::from_run)?;
            eprintln!("logLik {:.6}  rss {:.6}  n {}", r.log_likelihood, r.rss, r.n);
            let text = serde_json::to_string_pretty(&r).expect("loglik report serializes");
            emit(out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Compare { reports, out } => {
            let mut loaded = Vec::with_capacity(reports.len());
            for p in &reports {
                let r = FitReport::from_json(&read(p)?)
                    .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
                loaded.push((p.display().to_string(), r));
            }
            let rows = report::compare(&loaded);
            eprint!("{}", report::compare_table(&rows));
            let text = serde_json::to_string_pretty(&rows).expect("comparison serializes");
            emit(out.as_deref(), &text)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure(code, msg)) => {
            eprintln!("rsde: {msg}");
            ExitCode::from(code as u8)
        }
    }
}

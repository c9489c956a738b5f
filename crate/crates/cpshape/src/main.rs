use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use cpshape::campaign::Check;
use cpshape::{ExperimentConfig, RunError, Subcommand};
use cpshape_core::environment::EnvironmentLaw;

/// Contact process in random environment: simulation campaigns.
#[derive(Parser, Debug)]
#[command(name = "cpshape", version)]
enum Cli {
    /// Run a campaign and write its artifacts.
    Run(RunArgs),
    /// Print the default configuration of a subcommand as JSON.
    Preset { subcommand: Subcommand },
}

#[derive(Args, Debug)]
struct RunArgs {
    subcommand: Subcommand,
    /// JSON configuration; the subcommand's preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Box radius L.
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    survival_horizon: Option<f64>,
    /// Environment law as JSON, e.g. '{"kind":"constant","rate":2.0}'.
    #[arg(long)]
    law: Option<String>,
    /// Sites as `x1,x2;y1,y2;...`.
    #[arg(long)]
    sites: Option<String>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sample_times: Option<Vec<f64>>,
    #[arg(long)]
    aux_replicas: Option<u64>,
    #[arg(long)]
    max_attempts: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_sites(text: &str) -> Result<Vec<Vec<i32>>, RunError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.split(',')
                .map(|c| c.trim().parse::<i32>().map_err(|e| RunError::Validation(vec![format!("site coordinate {c:?}: {e}")])))
                .collect()
        })
        .collect()
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(a.subcommand),
    };
    cfg.subcommand = a.subcommand;
    if let Some(v) = a.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = a.replicas {
        cfg.replicas = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.radius {
        cfg.radius = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = a.survival_horizon {
        cfg.survival_horizon = v;
    }
    if let Some(v) = &a.law {
        cfg.law = serde_json::from_str::<EnvironmentLaw>(v).map_err(|e| RunError::Validation(vec![format!("--law: {e}")]))?;
    }
    if let Some(v) = &a.sites {
        cfg.sites = parse_sites(v)?;
    }
    if let Some(v) = &a.epsilons {
        cfg.epsilons = v.clone();
    }
    if let Some(v) = &a.sample_times {
        cfg.sample_times = v.clone();
    }
    if let Some(v) = a.aux_replicas {
        cfg.params.aux_replicas = v;
    }
    if let Some(v) = a.max_attempts {
        cfg.params.max_attempts = v;
    }
    Ok(cfg)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        emit(&format!("[{}] criterion {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail));
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli {
        Cli::Preset { subcommand } => match ExperimentConfig::preset(subcommand).to_json() {
            Ok(s) => {
                emit(&s);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(3)
            }
        },
        Cli::Run(args) => {
            if let Some(n) = args.threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("{e}");
                    return ExitCode::from(3);
                }
            }
            let outcome = build_config(&args).and_then(|cfg| cpshape::run(&cfg));
            match outcome {
                Ok(o) => {
                    print_checks(&o.checks);
                    emit(&format!("artifacts in {}", o.dir.display()));
                    ExitCode::from(o.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}

use clap::Parser;
use hrg_cli::commands::{execute, Command, RunError};
use hrg_cli::config::{load_config, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Hierarchical RG engine for the two-dimensional hierarchical Anderson equation.
#[derive(Debug, Parser)]
#[command(name = "hrg", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "Nmax")]
    nmax: Option<usize>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long = "kappa-s")]
    kappa_s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "out")]
    out: Option<PathBuf>,
    #[arg(long = "dense-cap")]
    dense_cap: Option<usize>,
    #[arg(long = "condition-threshold")]
    condition_threshold: Option<f64>,
    #[arg(long = "distance-kappa")]
    distance_kappa: Option<f64>,
    /// Worker threads for the Monte Carlo harness; outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Overrides {
        l: cli.l,
        d: cli.d,
        nmax: cli.nmax,
        g: cli.g,
        r: cli.r,
        kappa_s: cli.kappa_s,
        seed: cli.seed,
        samples: cli.samples,
        output_dir: cli.out,
        dense_cap: cli.dense_cap,
        condition_threshold: cli.condition_threshold,
        distance_kappa: cli.distance_kappa,
    };
    let cfg = match load_config(cli.command.default_config(), cli.config.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hrg: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("hrg: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command, &cfg) {
        Ok(out) => {
            println!("{}", out.summary);
            if out.passed() {
                ExitCode::SUCCESS
            } else {
                for c in out.criteria.iter().filter(|c| !c.pass) {
                    eprintln!("hrg: FAILED {}: {}", c.name, c.detail);
                }
                ExitCode::from(1)
            }
        }
        Err(RunError::Usage(msg)) => {
            eprintln!("hrg: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("hrg: {} failed: {e}", cli.command.name());
            ExitCode::from(1)
        }
    }
}

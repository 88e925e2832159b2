use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;

use piezoctrl::harness::{
    run_control_study, run_convergence_study, run_simulation, run_verification, Experiment,
    RunConfig,
};
use piezoctrl::Error;

/// Optimal boundary control of transient piezoelectric elastodynamics.
#[derive(Parser, Debug)]
#[command(name = "piezoctrl", version)]
struct Cli {
    /// convergence, control, simulation or verify
    experiment: String,
    /// Flat `key = value` file; experiment defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subdivisions per cube edge.
    #[arg(long)]
    mesh: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Published problem sizes; much longer runtimes.
    #[arg(long)]
    full_scale: bool,
}

const EXIT_VERIFICATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn load(cli: &Cli) -> piezoctrl::Result<RunConfig> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::defaults(experiment),
    };
    if cfg.experiment != experiment {
        return Err(Error::Config(format!(
            "config is for '{}', not '{experiment}'",
            cfg.experiment
        )));
    }
    if cli.full_scale && !cfg.full_scale {
        cfg.apply_full_scale();
    }
    if let Some(m) = cli.mesh {
        cfg.mesh = m;
    }
    if let Some(k) = cli.degree {
        cfg.degree = k;
    }
    if let Some(n) = cli.steps {
        cfg.steps = Some(n);
    }
    if let Some(a) = cli.alpha {
        cfg.alpha = a;
    }
    if let Some(dir) = &cli.out {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sci(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let outcome = match cfg.experiment {
        Experiment::Convergence => run_convergence_study(&cfg).map(|t| {
            for r in t.rates() {
                println!(
                    "rates u_l2 {:.3} u_h1 {:.3} psi_l2 {:.3} psi_h1 {:.3}",
                    r[0], r[1], r[2], r[3]
                );
            }
            true
        }),
        Experiment::Control => run_control_study(&cfg).map(|s| {
            println!("iterations {:?}", s.iterations());
            println!("eps_z {}", sci(&s.eps_z()));
            println!("eps_j {}", sci(&s.eps_j()));
            println!("side gaps {}", sci(&s.side_gaps()));
            true
        }),
        Experiment::Simulation => run_simulation(&cfg).map(|s| {
            println!(
                "iterations {}, misfit {:.4e} (zero control {:.4e})",
                s.iterations, s.misfit_opt, s.misfit_zero
            );
            true
        }),
        Experiment::Verify => run_verification(&cfg).map(|r| {
            for line in r.lines() {
                println!("{line}");
            }
            r.passed()
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFICATION),
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srn_lna::experiment::{self, Experiment, Truth};
use srn_lna::observation::read_dataset;

/// Bayesian inference for partially observed stochastic reaction networks.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one synthetic dataset per replication.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every sampler cell on every dataset in a directory.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients at prior draws.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// RMSE table and convergence traces from a directory of chains.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_dir(exp: &Experiment, out: Option<PathBuf>) -> Result<PathBuf, String> {
    out.or_else(|| exp.config.output_dir.clone())
        .ok_or_else(|| "no --out given and the config has no output_dir".to_string())
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let err = |e: srn_lna::Error| e.to_string();
    match cli.command {
        Command::Simulate { config, out } => {
            let exp = Experiment::load(&config).map_err(err)?;
            let out = out_dir(&exp, out)?;
            let files = experiment::simulate(&exp, &out).map_err(err)?;
            eprintln!("wrote {} files to {} (config {})", files.len(), out.display(), exp.config_hash);
        }
        Command::Infer { config, data, out } => {
            let exp = Experiment::load(&config).map_err(err)?;
            let out = out_dir(&exp, out)?;
            let summaries = experiment::infer(&exp, &data, &out).map_err(err)?;
            for s in &summaries {
                eprintln!("{} rep {:03}: acceptance {:.3}", s.cell, s.replication, s.acceptance_rate);
            }
        }
        Command::Gradcheck {
            config,
            data,
            draws,
            threshold,
        } => {
            let exp = Experiment::load(&config).map_err(err)?;
            let ds = read_dataset(&data).map_err(err)?;
            let report = experiment::gradcheck(&exp, &ds, draws, threshold).map_err(err)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            eprintln!("max relative error {:e} over {} draws (threshold {:e})", report.max_rel_error, draws, threshold);
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Evaluate { input, truth, out } => {
            let truth = Truth::read(Path::new(&truth)).map_err(err)?;
            let report = experiment::evaluate(&input, &truth, &out).map_err(err)?;
            for r in &report.rows {
                let hw = r.half_width.map_or("n/a".to_string(), |h| format!("{h:.3}"));
                eprintln!("{:<24} {:<16} {:.3} ± {hw}", r.cell, r.coordinate, r.mean);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

//! Command-line front end: simulate / validate / compare / plot.
//!
//! Exit codes: 0 on success, 1 on configuration or theorem-inequality
//! violations, 2 on runtime failures.

use clap::{Parser, Subcommand};
use iidob::runner::{
    compare, emit_csv, emit_report, emit_svg, parse_csv, run, validate, RunOutcome, RunnerError,
    SimConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "iidob",
    about = "Disturbance-observer and safe-control simulation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation and write trajectory CSV plus a report.
    Simulate {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `out_dir` or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log oracle channels (true disturbance, scaled error, envelopes).
        #[arg(long)]
        oracle: bool,
    },
    /// Check gain and rate inequalities without simulating.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run all three controllers on one configuration and tabulate metrics.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render selected CSV channels to an SVG line plot.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        /// Comma-separated channel names, e.g. x1,xhat1,h1.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: &PathBuf) -> Result<SimConfig, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SimConfig::from_json(&text)
}

fn exit_for(err: &RunnerError) -> ExitCode {
    match err {
        RunnerError::Config(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunnerError> {
    match cli.command {
        Command::Simulate { config, out, oracle } => {
            let mut cfg = read_config(&config)?;
            if oracle {
                cfg.oracle = true;
            }
            let out_dir = out
                .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out_dir).map_err(|source| RunnerError::Io {
                path: out_dir.display().to_string(),
                source,
            })?;
            let output = run(&cfg)?;
            let stem = format!(
                "{}_{}",
                cfg.scenario,
                cfg.controller
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "iidob-cbf-qp".into())
            );
            let csv_path = out_dir.join(format!("{stem}.csv"));
            let report_path = out_dir.join(format!("{stem}_report.txt"));
            emit_csv(&output.log, &csv_path)?;
            emit_report(&output.checks, &report_path)?;
            for c in &output.checks {
                println!("{} {} — {}", c.status(), c.name, c.detail);
            }
            println!("wrote {} ({} rows)", csv_path.display(), output.log.rows.len());
            match output.outcome {
                RunOutcome::Completed => Ok(ExitCode::SUCCESS),
                RunOutcome::Aborted { step, reason } => {
                    eprintln!("run aborted at step {step}: {reason}");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Validate { config } => {
            let cfg = read_config(&config)?;
            let checks = validate(&cfg)?;
            let mut hard_pass = true;
            for c in &checks {
                hard_pass &= c.pass || c.warn_only;
                println!("{} {} — {}", c.status(), c.name, c.detail);
            }
            Ok(if hard_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Compare { config } => {
            let cfg = read_config(&config)?;
            let rows = compare(&cfg)?;
            println!(
                "{:<14} {:>22} {:>18} {:>14} {:>6} {:>10}",
                "controller", "track err (inactive)", "track err (tail)", "min h", "safe", "completed"
            );
            for r in &rows {
                println!(
                    "{:<14} {:>22.6e} {:>18.6e} {:>14.6e} {:>6} {:>10}",
                    r.controller,
                    r.avg_tracking_err_inactive,
                    r.avg_tracking_err_tail,
                    r.min_h,
                    r.safe,
                    r.completed
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { csv, channels, out } => {
            let log = parse_csv(&csv)?;
            emit_svg(&log, &channels, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

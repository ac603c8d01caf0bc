use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twophase_cli::{execute_check_energy, execute_dump_mesh, execute_refine, execute_run, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "twophase", version, about = "Two-phase MHD Galerkin solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration and certify its energy ledger.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixed-point tolerance (overrides the config).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Rerun at kmax, 2 kmax, ... and report the final observables.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-verify the energy inequality on a ledger CSV.
    CheckEnergy {
        ledger: PathBuf,
        /// Initial energy (defaults to the ledger's E0 column).
        #[arg(long)]
        e0: Option<f64>,
        /// Allowed excess tau (defaults to tau_E from a neighbouring summary.json).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Write the initial interface mesh and varifold.
    DumpMesh {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&config.output.directory))
}

fn dispatch(cmd: Command) -> Result<u8, CliError> {
    match cmd {
        Command::Run { config, out, tol } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(t) = tol {
                cfg.solver.tol = t;
            }
            let dir = out_dir(out, &cfg);
            let a = execute_run(&cfg, &dir)?;
            let s = &a.summary;
            println!(
                "windows {} (halvings {}), max |u - K(u)| {:.3e}, galerkin residual {:.3e}",
                s.windows, s.halvings, s.max_fixed_point_residual, s.galerkin_residual
            );
            println!(
                "E0 {:.6e}, worst margin {:.6e} at t = {:.6}, tau_E {:.6e}: {}",
                s.e0,
                s.worst_margin,
                s.worst_time,
                s.tau_e,
                if s.pass { "pass" } else { "FAIL" }
            );
            Ok(if s.pass { 0 } else { 1 })
        }
        Command::Refine { config, levels, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(out, &cfg);
            let report = execute_refine(&cfg, levels, &dir)?;
            print!("{}", report.to_csv());
            println!(
                "successive differences decreasing: |u| {}, perimeter {}",
                report.decreasing(|l| l.u_norm),
                report.decreasing(|l| l.perimeter)
            );
            Ok(0)
        }
        Command::CheckEnergy { ledger, e0, tol } => {
            let r = execute_check_energy(&ledger, e0, tol)?;
            for v in &r.violations {
                println!(
                    "row {} (t = {}): margin {:.6e} exceeds tau {:.6e}",
                    v.row, v.t, v.margin, r.tau
                );
            }
            for row in &r.non_monotone {
                println!("row {row}: cumulative dissipation decreases");
            }
            println!(
                "worst margin {:.6e} at t = {} (row {}): {}",
                r.worst_margin,
                r.worst_time,
                r.worst_row,
                if r.pass { "pass" } else { "FAIL" }
            );
            Ok(if r.pass { 0 } else { 1 })
        }
        Command::DumpMesh { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(out, &cfg);
            for p in execute_dump_mesh(&cfg, &dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

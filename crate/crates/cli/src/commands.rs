//! Subcommand implementations. Every function returns data; printing and exit
//! codes are left to `main`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use twophase_core::energy::{self, EnergyLedger, InequalityReport};
use twophase_core::galerkin::{self, GalerkinState, RunFailure, RunOutput};
use twophase_core::geom;
use twophase_core::interface::{self, InterfaceMesh};
use twophase_core::varifold;

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Round to 12 significant digits so JSON output is stable across platforms.
fn r12(x: f64) -> f64 {
    if x.is_finite() {
        geom::fmt12(x).parse().unwrap_or(x)
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub t: f64,
    pub u_norm: f64,
    pub b_norm: f64,
    pub perimeter: f64,
    pub volume: f64,
}

impl Observables {
    pub fn of(state: &GalerkinState) -> Self {
        Self {
            t: r12(state.t),
            u_norm: r12(state.u.norm()),
            b_norm: r12(state.b.norm()),
            perimeter: r12(interface::perimeter(&state.mesh)),
            volume: r12(state.mesh.signed_volume()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBoundSummary {
    pub c_hat: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfig,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub worst_margin: f64,
    pub worst_time: f64,
    pub pass: bool,
    #[serde(rename = "tau_E")]
    pub tau_e: f64,
    pub windows: usize,
    pub halvings: usize,
    pub initial_window: f64,
    pub max_step: f64,
    pub quadrature_order: usize,
    pub max_fixed_point_residual: f64,
    pub galerkin_residual: f64,
    pub galerkin_residual_bound: f64,
    pub cancellation_defect: f64,
    pub n_bound: NBoundSummary,
    #[serde(rename = "final")]
    pub final_state: Observables,
}

impl Summary {
    fn new(config: &RunConfig, out: &RunOutput, report: &InequalityReport) -> Self {
        Self {
            config: config.clone(),
            e0: r12(report.e0),
            worst_margin: r12(report.worst_margin),
            worst_time: r12(report.worst_time),
            pass: report.pass,
            tau_e: r12(report.tau),
            windows: out.windows.len(),
            halvings: out.halvings(),
            initial_window: r12(out.initial_window),
            max_step: r12(out.max_step),
            quadrature_order: out.quadrature_order,
            max_fixed_point_residual: r12(out.max_fixed_point_residual()),
            galerkin_residual: r12(out.galerkin_residual),
            galerkin_residual_bound: r12(out.windows.len() as f64 * config.solver.tol),
            cancellation_defect: r12(out.cancellation_defect),
            n_bound: NBoundSummary {
                c_hat: r12(out.n_bound.c_hat),
                samples: out.n_bound.samples,
                max_ratio: r12(out.n_bound.max_ratio),
                violations: out.n_bound.violations,
            },
            final_state: Observables::of(out.final_state()),
        }
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub output: RunOutput,
    pub report: InequalityReport,
    pub summary: Summary,
    pub out_dir: PathBuf,
}

impl RunArtifacts {
    pub fn ledger_path(&self) -> PathBuf {
        self.out_dir.join("ledger.csv")
    }
}

fn write_ledger(ledger: &EnergyLedger, dir: &Path) -> Result<(), CliError> {
    let path = dir.join("ledger.csv");
    ledger.write_csv(create(&path)?)?;
    Ok(())
}

fn write_interface(mesh: &InterfaceMesh, dir: &Path) -> Result<(), CliError> {
    let path = dir.join(interface::dump_filename(mesh));
    let mut w = create(&path)?;
    interface::write_mesh(mesh, &mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    let vpath = dir.join(varifold::dump_filename(mesh.t));
    let v = varifold::lift(mesh).map_err(|e| CliError::Solver(e.to_string()))?;
    let mut w = create(&vpath)?;
    varifold::write_csv(&v, &mut w).map_err(io_err(&vpath))?;
    w.flush().map_err(io_err(&vpath))
}

fn write_windows(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    let path = dir.join("windows.csv");
    let mut w = create(&path)?;
    let mut lines = vec!["t_start,delta,iterations,residual".to_string()];
    for win in &out.windows {
        lines.push(format!(
            "{},{},{},{}",
            geom::fmt12(win.t_start),
            geom::fmt12(win.delta),
            win.iterations,
            geom::fmt12(*win.residual_history.last().unwrap_or(&0.0))
        ));
    }
    writeln!(w, "{}", lines.join("\n")).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))
}

fn write_state_dump(fail: &RunFailure, dir: &Path) -> Result<(), CliError> {
    let state = fail.last_state.as_ref().map(|s| {
        json!({
            "t": s.t,
            "u": s.u.coefficients,
            "b": s.b.coefficients,
            "mesh_vertices": s.mesh.vertices.iter().map(|v| v[..s.mesh.dim].to_vec()).collect::<Vec<_>>(),
        })
    });
    let failures: Vec<_> = fail
        .failures
        .iter()
        .map(|f| json!({"t": f.t, "delta": f.delta, "relaxation": f.relaxation, "reason": f.reason}))
        .collect();
    let dump = json!({
        "error": fail.error.to_string(),
        "accepted_windows": fail.windows.len(),
        "failures": failures,
        "last_state": state,
    });
    let path = dir.join("state_dump.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &dump).map_err(|e| CliError::Solver(e.to_string()))?;
    w.flush().map_err(io_err(&path))?;
    if let Some(ledger) = &fail.ledger {
        write_ledger(ledger, dir)?;
    }
    Ok(())
}

/// Run a configuration and write ledger, summary, window log and interface
/// dumps into `out_dir`.
pub fn execute_run(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts, CliError> {
    let problem = config.to_problem()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let output = match galerkin::run(&problem) {
        Ok(out) => out,
        Err(fail) => {
            write_state_dump(&fail, out_dir)?;
            return Err(CliError::Solver(fail.error.to_string()));
        }
    };
    let report = output.check_energy();
    write_ledger(&output.ledger, out_dir)?;
    write_windows(&output, out_dir)?;

    let cadence = config.output.cadence;
    let last = output.states.len() - 1;
    let mut next_dump = 0.0;
    for (i, s) in output.states.iter().enumerate() {
        let due = cadence > 0.0 && s.t >= next_dump - 1e-9 * cadence;
        if i == 0 || i == last || due {
            write_interface(&s.mesh, out_dir)?;
        }
        if due {
            while next_dump <= s.t + 1e-9 * cadence {
                next_dump += cadence;
            }
        }
    }

    let summary = Summary::new(config, &output, &report);
    let path = out_dir.join("summary.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| CliError::Solver(e.to_string()))?;
    writeln!(w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    info!("wrote outputs to {}", out_dir.display());
    Ok(RunArtifacts {
        output,
        report,
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineLevel {
    pub kmax: u32,
    pub u_norm: f64,
    pub b_norm: f64,
    pub perimeter: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub levels: Vec<RefineLevel>,
}

impl RefineReport {
    /// `|f(level i+1) − f(level i)|`
    pub fn differences(&self, f: impl Fn(&RefineLevel) -> f64) -> Vec<f64> {
        self.levels.windows(2).map(|w| (f(&w[1]) - f(&w[0])).abs()).collect()
    }

    /// Successive differences never grow.
    pub fn decreasing(&self, f: impl Fn(&RefineLevel) -> f64) -> bool {
        self.differences(f).windows(2).all(|d| d[1] <= d[0])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kmax,u_norm,b_norm,perimeter,volume,d_u_norm,d_b_norm,d_perimeter,d_volume\n");
        for (i, l) in self.levels.iter().enumerate() {
            let vals = [l.u_norm, l.b_norm, l.perimeter, l.volume];
            let mut row: Vec<String> = vec![l.kmax.to_string()];
            row.extend(vals.iter().map(|&v| geom::fmt12(v)));
            if i == 0 {
                row.extend(std::iter::repeat_n(String::new(), 4));
            } else {
                let p = &self.levels[i - 1];
                let prev = [p.u_norm, p.b_norm, p.perimeter, p.volume];
                row.extend(vals.iter().zip(prev).map(|(a, b)| geom::fmt12((a - b).abs())));
            }
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Run the config at `kmax, 2 kmax, …` (`levels` runs) and collect the final
/// observables.
pub fn execute_refine(config: &RunConfig, levels: usize, out_dir: &Path) -> Result<RefineReport, CliError> {
    if levels < 2 {
        return Err(CliError::Config(format!(
            "refine needs at least 2 levels, got {levels}"
        )));
    }
    let mut report = RefineReport { levels: Vec::new() };
    for i in 0..levels {
        let mut c = config.clone();
        c.kmax = config.kmax << i;
        let problem = c.to_problem()?;
        info!("refine level {i}: kmax = {}", c.kmax);
        let out = galerkin::run(&problem).map_err(|f| CliError::Solver(f.error.to_string()))?;
        let s = out.final_state();
        report.levels.push(RefineLevel {
            kmax: c.kmax,
            u_norm: s.u.norm(),
            b_norm: s.b.norm(),
            perimeter: interface::perimeter(&s.mesh),
            volume: s.mesh.signed_volume(),
        });
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("refine.csv");
    fs::write(&path, report.to_csv()).map_err(io_err(&path))?;
    Ok(report)
}

/// Re-check a ledger file. Without `tau` the `tau_E` of a `summary.json`
/// next to the ledger is used, or zero when there is none.
pub fn execute_check_energy(
    ledger_path: &Path,
    e0: Option<f64>,
    tau: Option<f64>,
) -> Result<InequalityReport, CliError> {
    let file = File::open(ledger_path).map_err(io_err(ledger_path))?;
    let ledger = EnergyLedger::read_csv(file)?;
    let tau = match tau {
        Some(t) => t,
        None => ledger_path
            .parent()
            .map(|d| d.join("summary.json"))
            .and_then(|p| fs::read_to_string(p).ok())
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| v.get("tau_E").and_then(|t| t.as_f64()))
            .unwrap_or(0.0),
    };
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(CliError::Config(format!("tolerance must be nonnegative, got {tau}")));
    }
    Ok(energy::check_inequality(&ledger, tau, e0))
}

/// Write the initial interface mesh and its varifold lift.
pub fn execute_dump_mesh(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let problem = config.to_problem()?;
    let mesh = interface::mesh_initial(&problem.phase, problem.mesh_resolution)
        .map_err(|e| CliError::Config(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_interface(&mesh, out_dir)?;
    Ok(vec![
        out_dir.join(interface::dump_filename(&mesh)),
        out_dir.join(varifold::dump_filename(mesh.t)),
    ])
}

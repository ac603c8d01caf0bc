use std::path::Path;
use std::process::{Command, Output};

use twophase_cli::{RunConfig, Summary};

fn twophase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twophase"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, c: &RunConfig) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, c.to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

fn short_reference() -> RunConfig {
    let mut c = RunConfig::reference();
    c.t_end = 0.1;
    c.solver.mesh_resolution = Some(64);
    c
}

#[test]
fn zero_horizon_run_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::reference();
    c.t_end = 0.0;
    let cfg = write_config(tmp.path(), &c);
    let out_dir = tmp.path().join("out");
    let o = twophase(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = std::fs::read_to_string(out_dir.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 2);
}

#[test]
fn zero_diffusivity_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::reference();
    c.sigma = 0.0;
    let cfg = write_config(tmp.path(), &c);
    let o = twophase(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma > 0"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    let text = RunConfig::reference()
        .to_json()
        .replacen('{', "{\"viscosity\": 1.0, ", 1);
    std::fs::write(&p, text).unwrap();
    let o = twophase(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_outputs_and_check_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &short_reference());
    let out_dir = tmp.path().join("run");
    let o = twophase(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ledger.csv", "windows.csv", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let dumps = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("varifold_t")
        })
        .count();
    assert!(dumps >= 2);

    let text = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    let summary: Summary = serde_json::from_str(&text).unwrap();
    assert!(summary.pass);
    assert_eq!(RunConfig::from_json(&text).unwrap(), short_reference());

    let ledger = out_dir.join("ledger.csv");
    let o = twophase(&["check-energy", ledger.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    // Inflate the kinetic energy of the third row past the allowance.
    let text = std::fs::read_to_string(&ledger).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[3].split(',').map(String::from).collect();
    cols[1] = format!("{:.11e}", cols[1].parse::<f64>().unwrap() + 1.0);
    lines[3] = cols.join(",");
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = twophase(&["check-energy", bad.to_str().unwrap(), "--tol", "1e-6"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("row 2 "));

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(
        twophase(&["check-energy", empty.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        twophase(&["check-energy", "/nonexistent/ledger.csv"]).status.code(),
        Some(2)
    );
}

#[test]
fn refine_with_zero_data_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::reference();
    c.u0 = serde_json::from_str(r#"{"type": "zero"}"#).unwrap();
    c.b0 = serde_json::from_str(r#"{"type": "zero"}"#).unwrap();
    c.kmax = 1;
    c.t_end = 0.05;
    c.kappa = 0.0;
    let cfg = write_config(tmp.path(), &c);
    let out_dir = tmp.path().join("refine");
    let o = twophase(&[
        "refine",
        "--config",
        &cfg,
        "--levels",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out_dir.join("refine.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn dump_mesh_writes_initial_interface() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &RunConfig::reference());
    let out_dir = tmp.path().join("mesh");
    let o = twophase(&["dump-mesh", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 2);
    for line in stdout.lines() {
        assert!(Path::new(line).exists());
    }
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["reference.json", "sphere3d.json"] {
        let c = RunConfig::load(&root.join(name)).unwrap();
        c.to_problem().unwrap();
    }
    let reference = RunConfig::load(&root.join("reference.json")).unwrap();
    assert_eq!(reference.to_problem().unwrap().t_end, RunConfig::reference().t_end);
}

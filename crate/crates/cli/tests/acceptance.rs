use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use twophase_cli::{execute_refine, execute_run, RunArtifacts, RunConfig};
use twophase_core::basis::{FourierBasis, Phase, SolenoidalBasis, SpectralField};
use twophase_core::flowmap::{flow_with_jacobian, SteadyField, TaylorGreen, ZeroVelocity};
use twophase_core::galerkin::run;
use twophase_core::geom::{self, Mat3, Vec3};
use twophase_core::induction::{lorentz_power, solve_b_interval, transport_pairing};
use twophase_core::interface::{advect, enclosed_volume, mesh_initial, InitialPhase};
use twophase_core::varifold::{coupling_residual, first_variation, lift};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_field(bs: &Arc<dyn SolenoidalBasis>, rng: &mut StdRng) -> SpectralField {
    let scale = 1.0 / (bs.len() as f64).sqrt();
    let c = (0..bs.len()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    SpectralField::new(bs.clone(), c).unwrap()
}

fn volume_preservation() -> Outcome {
    let bs = FourierBasis::new(2, 3).unwrap().into_shared();
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let u = SteadyField(random_field(&bs, &mut rng));
        for _ in 0..8 {
            let x0 = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI), 0.0];
            let (_, jac) = flow_with_jacobian(&u, x0, 0.0, 1.0, 1e-2).unwrap();
            worst = worst.max((geom::det(2, &jac) - 1.0).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max |det - 1| = {worst:.3e}"))
}

fn volume_drift(resolution: usize, h: f64) -> f64 {
    let tg = TaylorGreen { amplitude: 1.0 };
    let mesh = mesh_initial(&InitialPhase::disk([PI, PI], 1.0), resolution).unwrap();
    let v0 = enclosed_volume(&mesh).unwrap();
    let moved = advect(&mesh, &tg, 0.5, h).unwrap();
    ((enclosed_volume(&moved).unwrap() - v0) / v0).abs()
}

fn mass_conservation() -> Outcome {
    let coarse = volume_drift(256, 2.5e-3);
    let fine = volume_drift(512, 1.25e-3);
    let ratio = coarse / fine;
    outcome(
        coarse <= 1e-3 && ratio >= 2.0,
        format!("drift {coarse:.3e} -> {fine:.3e} after halving, reduction {ratio:.2}"),
    )
}

/// `φ(y) = (y₁³ + y₂, y₁² y₂, y₂² y₃)` about the center; its flux through a
/// sphere of radius `R` is `π R⁴` in 2D and `4π R⁵ / 3` in 3D.
fn cubic_phi(c: Vec3) -> impl Fn(Vec3) -> (Vec3, Mat3) {
    move |x| {
        let y = geom::sub(x, c);
        let v = [y[0].powi(3) + y[1], y[0] * y[0] * y[1], y[1] * y[1] * y[2]];
        let g = [
            [3.0 * y[0] * y[0], 1.0, 0.0],
            [2.0 * y[0] * y[1], y[0] * y[0], 0.0],
            [0.0, 2.0 * y[1] * y[2], y[1] * y[1]],
        ];
        (v, g)
    }
}

fn cubic_oracle(dim: usize, r: f64) -> f64 {
    // (d − 1)/R times the outward flux of φ.
    if dim == 2 {
        PI * r.powi(4) / r
    } else {
        2.0 / r * 4.0 * PI * r.powi(5) / 3.0
    }
}

fn first_variation_error(phase: &InitialPhase, dim: usize, r: f64, resolution: usize) -> f64 {
    let v = lift(&mesh_initial(phase, resolution).unwrap()).unwrap();
    let exact = cubic_oracle(dim, r);
    ((first_variation(&v, cubic_phi([PI; 3])) - exact) / exact).abs()
}

fn first_variation_oracle() -> Outcome {
    let identity = |dim| move |x: Vec3| (x, geom::identity(dim));
    let mut worst_identity: f64 = 0.0;
    for r in [0.5, 1.0] {
        let v = lift(&mesh_initial(&InitialPhase::disk([PI, PI], r), 256).unwrap()).unwrap();
        let area = 2.0 * PI * r;
        worst_identity = worst_identity.max(((first_variation(&v, identity(2)) - area) / area).abs());
    }
    let sphere = lift(&mesh_initial(&InitialPhase::ball([PI; 3], 1.0), 5).unwrap()).unwrap();
    let area = 4.0 * PI;
    worst_identity = worst_identity.max(((first_variation(&sphere, identity(3)) - 2.0 * area) / (2.0 * area)).abs());

    let disk = InitialPhase::disk([PI, PI], 1.0);
    let e2: Vec<f64> = [256, 512, 1024]
        .iter()
        .map(|&n| first_variation_error(&disk, 2, 1.0, n))
        .collect();
    let ball = InitialPhase::ball([PI; 3], 1.0);
    let e3: Vec<f64> = [4, 5, 6]
        .iter()
        .map(|&l| first_variation_error(&ball, 3, 1.0, l))
        .collect();
    let order = |e: &[f64]| (e[0] / e[1]).log2().min((e[1] / e[2]).log2());
    let (o2, o3) = (order(&e2), order(&e3));
    outcome(
        worst_identity <= 1e-3 && e2[0] <= 1e-2 && e3[0] <= 1e-2 && o2 >= 1.8 && o3 >= 1.8,
        format!(
            "identity rel err {worst_identity:.3e}; cubic rel err circle {:.3e} (order {o2:.2}), sphere {:.3e} (order {o3:.2})",
            e2[0], e3[0]
        ),
    )
}

fn coupling_identity() -> Outcome {
    let mesh = mesh_initial(&InitialPhase::ellipse([PI, PI], [1.1, 0.7]), 256).unwrap();
    let v = lift(&mesh).unwrap();
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let (k1, k2) = (rng.gen_range(1..4) as f64, rng.gen_range(1..4) as f64);
        let psi = |x: Vec3| {
            [
                a[0] * (k1 * x[1]).sin() + a[1] * x[0] + a[2],
                a[3] * (k2 * x[0]).cos() + a[4] * x[0] * x[1] + a[5],
                0.0,
            ]
        };
        worst = worst.max(coupling_residual(&v, &mesh, psi));
    }
    outcome(worst <= 1e-12, format!("max residual {worst:.3e} over 20 fields"))
}

fn induction_decay() -> Outcome {
    let fb = FourierBasis::new(2, 2).unwrap();
    let j = fb
        .modes()
        .iter()
        .position(|m| m.wavevector == [1, 0, 0] && m.phase == Phase::Sine)
        .unwrap();
    let bs = fb.into_shared();
    let quad = bs.quadrature(bs.default_quadrature_order());
    let b0 = SpectralField::unit(bs.clone(), j);
    let u = ZeroVelocity { domain: bs.domain() };
    let traj = solve_b_interval(&u, &b0, 0.0, 1.0, 1e-3, 1.0, &quad).unwrap();
    let ratio = traj.last().norm() / b0.norm();
    let decay_err = (ratio - (-1.0f64).exp()).abs();

    let mut rng = StdRng::seed_from_u64(9);
    let mut defect: f64 = 0.0;
    for _ in 0..5 {
        let uf = SteadyField(random_field(&bs, &mut rng));
        let b = random_field(&bs, &mut rng);
        let t = transport_pairing(&uf, 0.0, &b, &quad);
        let work: f64 = t.iter().zip(&b.coefficients).map(|(x, y)| x * y).sum();
        defect = defect.max((work - lorentz_power(&uf, 0.0, &b, &quad)).abs());
    }
    outcome(
        decay_err <= 1e-3 && defect <= 1e-8,
        format!("|B(1)|/|B(0)| = {ratio:.6} (error {decay_err:.2e}); antisymmetry defect {defect:.2e}"),
    )
}

fn certificate(a: &RunArtifacts) -> Outcome {
    let s = &a.summary;
    let tol = s.config.solver.tol;
    let all_below = a
        .output
        .windows
        .iter()
        .all(|w| *w.residual_history.last().unwrap() < tol);
    outcome(
        all_below && s.galerkin_residual <= s.galerkin_residual_bound,
        format!(
            "{} windows, max |u - K(u)| {:.3e} < {tol:e}; galerkin residual {:.3e} <= {:.3e}",
            s.windows, s.max_fixed_point_residual, s.galerkin_residual, s.galerkin_residual_bound
        ),
    )
}

fn smooth_defect(n_sub: usize) -> f64 {
    let mut c = RunConfig::reference();
    c.nu_minus = c.nu_plus;
    c.kappa = 0.0;
    c.solver.trust_region = false;
    c.solver.window = 0.05;
    c.solver.n_sub = n_sub;
    c.solver.dt_b = 0.05 / n_sub as f64;
    c.solver.mesh_resolution = Some(64);
    let out = run(&c.to_problem().unwrap()).unwrap();
    out.ledger.rows().iter().map(|r| r.margin().abs()).fold(0.0, f64::max)
}

fn energy_inequality(a: &RunArtifacts) -> Outcome {
    let r = &a.report;
    let d: Vec<f64> = [4, 8, 16].iter().map(|&n| smooth_defect(n)).collect();
    let ratios = [d[0] / d[1], d[1] / d[2]];
    let in_range = ratios.iter().all(|q| (1.7..=4.5).contains(q));
    outcome(
        r.pass && in_range,
        format!(
            "worst margin {:.3e} at t = {:.4} vs tau_E {:.3e}; smooth defect {:.3e}, {:.3e}, {:.3e}, ratios {:.3}, {:.3}",
            r.worst_margin, r.worst_time, r.tau, d[0], d[1], d[2], ratios[0], ratios[1]
        ),
    )
}

fn n_bound(a: &RunArtifacts) -> Outcome {
    let n = &a.summary.n_bound;
    outcome(
        n.violations == 0 && n.samples > 0,
        format!(
            "C = {:.4}, {} samples, max ratio {:.4}, {} violations",
            n.c_hat, n.samples, n.max_ratio, n.violations
        ),
    )
}

fn refinement(dir: &std::path::Path) -> Outcome {
    let report = execute_refine(&RunConfig::reference(), 3, dir).unwrap();
    let du = report.differences(|l| l.u_norm);
    let dp = report.differences(|l| l.perimeter);
    let pass = report.decreasing(|l| l.u_norm) && report.decreasing(|l| l.perimeter);
    let kmax: Vec<u32> = report.levels.iter().map(|l| l.kmax).collect();
    let list = |d: &[f64]| d.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ");
    outcome(
        pass,
        format!(
            "kmax {kmax:?}: |u| differences {}, perimeter differences {}",
            list(&du),
            list(&dp)
        ),
    )
}

fn determinism(a: &RunArtifacts, dir: &std::path::Path) -> Outcome {
    let b = execute_run(&RunConfig::reference(), dir).unwrap();
    let first = std::fs::read(a.ledger_path()).unwrap();
    let second = std::fs::read(b.ledger_path()).unwrap();
    outcome(
        first == second,
        format!(
            "{} and {} ledger bytes identical: {}",
            first.len(),
            second.len(),
            first == second
        ),
    )
}

/// `shared` is time already spent on a run the criterion reuses.
fn report(n: usize, budget: Option<Duration>, shared: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed() + shared;
    let pass = o.pass && budget.is_none_or(|b| elapsed <= b);
    let limit = budget.map_or("free".to_string(), |b| format!("{} s", b.as_secs()));
    println!(
        "criterion {n} [{}] {} ({:.2} s, budget {limit})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
    );
    pass
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let secs = |s| Some(Duration::from_secs(s));
    let none = Duration::ZERO;
    let mut ok = true;
    ok &= report(1, secs(10), none, volume_preservation);
    ok &= report(2, secs(30), none, mass_conservation);
    ok &= report(3, secs(10), none, first_variation_oracle);
    ok &= report(4, secs(5), none, coupling_identity);
    ok &= report(5, secs(10), none, induction_decay);

    let start = Instant::now();
    let reference = execute_run(&RunConfig::reference(), &tmp.path().join("reference")).unwrap();
    let run_time = start.elapsed();
    ok &= report(6, secs(300), run_time, || certificate(&reference));
    ok &= report(7, secs(600), run_time, || energy_inequality(&reference));
    ok &= report(8, None, none, || n_bound(&reference));
    ok &= report(9, secs(1800), none, || refinement(&tmp.path().join("refine")));
    ok &= report(10, secs(300), run_time, || {
        determinism(&reference, &tmp.path().join("again"))
    });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Galerkin driver: the forcing functional `N`, the iteration map `K` and the
//! windowed damped Picard iteration that chains windows up to the final time.
//!
//! With an orthonormal basis the mass matrix is the identity, so on a window
//! `[t_m, t_m + Δ]` the map is `K(u)(t) = u(t_m) + ∫_{t_m}^t N(u) ds`, with
//! `N(u) = (u⊗u, ∇η) − (B⊗B, ∇η) − 2(ν(χ)Du, Dη) − κ∫P_τ:∇η d|∇χ|`, where `B`
//! and `χ` are recomputed from the candidate velocity on every iterate.

use std::sync::Arc;

use log::{debug, info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{BasisError, Coefficients, Quadrature, SolenoidalBasis, SpectralField};
use crate::energy::{self, EnergyLedger, InequalityReport};
use crate::flowmap::{FlowError, SpectralTrajectory, SteadyField, VelocitySampler};
use crate::geom::{self, Mat3, Vec3};
use crate::induction::{self, InductionError};
use crate::interface::{self, IndicatorMethod, InitialPhase, InterfaceError, InterfaceMesh, PhaseViscosity};

/// Quadrature points handled per parallel task; fixed so that the reduction
/// order does not depend on the number of workers.
const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GalerkinError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Interface(#[from] InterfaceError),
    #[error(transparent)]
    Induction(#[from] InductionError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("non-finite forcing at t = {t}: {detail}")]
    NonFinite { t: f64, detail: String },
    #[error("window at t = {t} with length {delta} failed: {reason}")]
    WindowFailure {
        t: f64,
        delta: f64,
        reason: String,
        residuals: Vec<f64>,
    },
    #[error(
        "no convergence at t = {t}: window {delta} fell below the minimum {min_window} after {attempts} attempts (last failure: {last_reason})"
    )]
    NonConvergence {
        t: f64,
        delta: f64,
        min_window: f64,
        attempts: usize,
        last_reason: String,
        residuals: Vec<f64>,
    },
}

impl GalerkinError {
    /// Failures that a shorter window may cure.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GalerkinError::WindowFailure { .. }
                | GalerkinError::NonFinite { .. }
                | GalerkinError::Flow(_)
                | GalerkinError::Induction(InductionError::NonFinite { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub viscosity: PhaseViscosity,
    pub sigma: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Requested window length Δ.
    pub window: f64,
    pub n_sub: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Picard relaxation ω.
    pub relaxation: f64,
    /// Per-axis quadrature order; `None` takes the basis default.
    pub quadrature_order: Option<usize>,
    pub h_flow: f64,
    pub dt_b: f64,
    pub min_window: f64,
    /// Cap the initial window by the a-priori bound on `N`.
    pub trust_region: bool,
    pub indicator: IndicatorMethod,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            window: 0.1,
            n_sub: 8,
            tol: 1e-8,
            max_iter: 50,
            relaxation: 1.0,
            quadrature_order: None,
            h_flow: 2.5e-3,
            dt_b: 2.5e-3,
            min_window: 1e-6,
            trust_region: true,
            indicator: IndicatorMethod::Hybrid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinState {
    pub t: f64,
    pub u: SpectralField,
    pub b: SpectralField,
    pub mesh: InterfaceMesh,
    pub params: PhysicalParams,
}

impl GalerkinState {
    pub fn validate(&self) -> Result<(), GalerkinError> {
        if self.u.len() != self.b.len() || self.u.domain() != self.b.domain() {
            return Err(GalerkinError::Config("u and B must share one basis".into()));
        }
        if self.mesh.t != self.t {
            return Err(GalerkinError::Config(format!(
                "mesh time {} differs from state time {}",
                self.mesh.t, self.t
            )));
        }
        if !(self.u.is_finite() && self.b.is_finite() && self.t.is_finite()) {
            return Err(GalerkinError::NonFinite {
                t: self.t,
                detail: "state coefficients".into(),
            });
        }
        Ok(())
    }
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub basis: Arc<dyn SolenoidalBasis>,
    pub u0: SpectralField,
    pub b0: SpectralField,
    pub phase: InitialPhase,
    pub mesh_resolution: usize,
    pub params: PhysicalParams,
    pub settings: SolverSettings,
    pub t_end: f64,
}

fn positive(name: &str, v: f64) -> Result<(), GalerkinError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(GalerkinError::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<(), GalerkinError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(GalerkinError::Config(format!(
            "{name} must be nonnegative and finite, got {v}"
        )))
    }
}

impl Problem {
    pub fn quadrature_order(&self) -> usize {
        self.settings
            .quadrature_order
            .unwrap_or_else(|| self.basis.default_quadrature_order())
    }

    pub fn quadrature(&self) -> Quadrature {
        self.basis.quadrature(self.quadrature_order())
    }

    pub fn validate(&self) -> Result<(), GalerkinError> {
        let p = &self.params;
        let s = &self.settings;
        nonnegative("t_end", self.t_end)?;
        if !(p.sigma.is_finite() && p.sigma > 0.0) {
            return Err(GalerkinError::Config(format!(
                "sigma must satisfy sigma > 0 (magnetic diffusivity), got {}",
                p.sigma
            )));
        }
        nonnegative("kappa", p.kappa)?;
        nonnegative("nu_plus", p.viscosity.nu_plus)?;
        nonnegative("nu_minus", p.viscosity.nu_minus)?;
        let b_nonzero = self.b0.coefficients.iter().any(|&c| c != 0.0);
        if p.viscosity.max() == 0.0 && (b_nonzero || p.kappa > 0.0) {
            return Err(GalerkinError::Config(
                "nu_plus = nu_minus = 0 is not allowed with a magnetic field or surface tension".into(),
            ));
        }
        positive("tol", s.tol)?;
        if !(s.relaxation > 0.0 && s.relaxation <= 1.0) {
            return Err(GalerkinError::Config(format!(
                "relaxation must lie in (0, 1], got {}",
                s.relaxation
            )));
        }
        positive("window", s.window)?;
        positive("min_window", s.min_window)?;
        positive("h_flow", s.h_flow)?;
        positive("dt_b", s.dt_b)?;
        if s.n_sub < 2 {
            return Err(GalerkinError::Config(format!(
                "n_sub must be at least 2, got {}",
                s.n_sub
            )));
        }
        if s.max_iter == 0 {
            return Err(GalerkinError::Config("max_iter must be at least 1".into()));
        }
        let q = self.quadrature_order();
        let qmin = self.basis.min_quadrature_order();
        if q < qmin {
            return Err(GalerkinError::Config(format!(
                "quadrature order {q} is below the minimum {qmin} for this basis"
            )));
        }
        if 2 * q < 3 * (qmin - 1) + 2 {
            warn!("quadrature order {q} does not integrate the quadratic terms exactly");
        }
        for (name, f) in [("u0", &self.u0), ("B0", &self.b0)] {
            if f.len() != self.basis.len() || f.domain() != self.basis.domain() {
                return Err(GalerkinError::Config(format!(
                    "{name} does not live on the solver basis"
                )));
            }
            if !f.is_finite() {
                return Err(GalerkinError::Config(format!("{name} has non-finite coefficients")));
            }
        }
        self.phase.validate(&self.basis.domain())?;
        Ok(())
    }

    pub fn initial_state(&self) -> Result<GalerkinState, GalerkinError> {
        let mesh = interface::mesh_initial(&self.phase, self.mesh_resolution)?;
        Ok(GalerkinState {
            t: 0.0,
            u: self.u0.clone(),
            b: self.b0.clone(),
            mesh,
            params: self.params,
        })
    }
}

/// The four contributions to `⟨N, η_j⟩` plus the dissipation `∫ 2ν(χ)|Du|²`
/// from the same quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct NTerms {
    pub inertia: Vec<f64>,
    pub lorentz: Vec<f64>,
    pub viscous: Vec<f64>,
    pub capillary: Vec<f64>,
    pub dissipation: f64,
}

impl NTerms {
    fn zeros(n: usize) -> Self {
        Self {
            inertia: vec![0.0; n],
            lorentz: vec![0.0; n],
            viscous: vec![0.0; n],
            capillary: vec![0.0; n],
            dissipation: 0.0,
        }
    }

    fn add(&mut self, other: &NTerms) {
        for (a, b) in [
            (&mut self.inertia, &other.inertia),
            (&mut self.lorentz, &other.lorentz),
            (&mut self.viscous, &other.viscous),
            (&mut self.capillary, &other.capillary),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.dissipation += other.dissipation;
    }

    pub fn total(&self) -> Vec<f64> {
        (0..self.inertia.len())
            .map(|j| self.inertia[j] + self.lorentz[j] + self.viscous[j] + self.capillary[j])
            .collect()
    }
}

fn scaled(m: &Mat3, s: f64) -> Mat3 {
    let mut out = *m;
    out.iter_mut().flatten().for_each(|v| *v *= s);
    out
}

/// `⟨N, η_j⟩` for every mode. `chi` is the phase at each quadrature point;
/// `None` is accepted only for uniform viscosity.
pub fn apply_n(state: &GalerkinState, chi: Option<&[bool]>, quad: &Quadrature) -> Result<NTerms, GalerkinError> {
    let basis = state.u.basis().clone();
    let n = basis.len();
    let visc = state.params.viscosity;
    if chi.is_none() && !visc.is_uniform() {
        return Err(GalerkinError::Config(
            "phase indicator required for two-phase viscosity".into(),
        ));
    }
    if let Some(c) = chi {
        if c.len() != quad.points.len() {
            return Err(GalerkinError::Config(
                "indicator length does not match quadrature".into(),
            ));
        }
    }
    let u_zero = state.u.coefficients.iter().all(|&c| c == 0.0);
    let b_zero = state.b.coefficients.iter().all(|&c| c == 0.0);
    let w = quad.weight;

    let mut terms = NTerms::zeros(n);
    if !(u_zero && b_zero) {
        let partials: Vec<NTerms> = quad
            .points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, pts)| {
                let mut acc = NTerms::zeros(n);
                for (k, &x) in pts.iter().enumerate() {
                    let q = ci * CHUNK + k;
                    if !u_zero {
                        let (uv, gu) = basis.evaluate_with_gradient(Coefficients::Single(&state.u.coefficients), x);
                        let nu = visc.at(chi.is_none_or(|c| c[q]));
                        basis.accumulate_pairing(x, &scaled(&geom::outer(uv, uv), w), &mut acc.inertia);
                        basis.accumulate_pairing(x, &scaled(&geom::sym(&gu), -2.0 * nu * w), &mut acc.viscous);
                        acc.dissipation += w * energy::dissipation_density(nu, &gu);
                    }
                    if !b_zero {
                        let bv = basis.evaluate(Coefficients::Single(&state.b.coefficients), x);
                        basis.accumulate_pairing(x, &scaled(&geom::outer(bv, bv), -w), &mut acc.lorentz);
                    }
                }
                acc
            })
            .collect();
        for p in &partials {
            terms.add(p);
        }
    }
    let kappa = state.params.kappa;
    if kappa > 0.0 {
        let mesh = &state.mesh;
        for e in 0..mesh.element_count() {
            let g = mesh.element_geometry(e);
            let p = geom::tangential_projector(mesh.dim, g.normal);
            basis.accumulate_pairing(g.centroid, &scaled(&p, -kappa * g.measure), &mut terms.capillary);
        }
    }
    let finite = terms
        .inertia
        .iter()
        .chain(&terms.lorentz)
        .chain(&terms.viscous)
        .chain(&terms.capillary)
        .all(|v| v.is_finite())
        && terms.dissipation.is_finite();
    if !finite {
        return Err(GalerkinError::NonFinite {
            t: state.t,
            detail: format!("|u| = {}, |B| = {}", state.u.norm(), state.b.norm()),
        });
    }
    Ok(terms)
}

/// Where the phase indicator comes from: the accepted velocity history
/// (starting at `t = 0`) and the initial shape.
#[derive(Clone, Copy)]
pub struct WindowContext<'a> {
    pub params: &'a PhysicalParams,
    pub settings: &'a SolverSettings,
    pub phase: &'a InitialPhase,
    pub history: &'a SpectralTrajectory,
    pub quad: &'a Quadrature,
}

/// `χ` at the quadrature points of `state`, or `None` when the viscosity is
/// uniform and the phase does not enter the volume terms.
pub fn phase_at_quadrature(
    state: &GalerkinState,
    u: &dyn VelocitySampler,
    ctx: &WindowContext<'_>,
) -> Result<Option<Vec<bool>>, GalerkinError> {
    if state.params.viscosity.is_uniform() {
        return Ok(None);
    }
    let chi = interface::indicator_field(
        &ctx.quad.points,
        state.t,
        u,
        ctx.phase,
        ctx.settings.h_flow,
        &state.mesh,
        ctx.settings.indicator,
    )?;
    Ok(Some(chi))
}

/// Accepted history up to `t_m` followed by a candidate window trajectory.
struct ChainedVelocity<'a> {
    history: &'a SpectralTrajectory,
    window: &'a SpectralTrajectory,
    t_m: f64,
}

impl VelocitySampler for ChainedVelocity<'_> {
    fn domain(&self) -> crate::basis::Domain {
        self.history.domain()
    }
    fn velocity(&self, t: f64, x: Vec3) -> Vec3 {
        if t <= self.t_m {
            self.history.velocity(t, x)
        } else {
            self.window.velocity(t, x)
        }
    }
    fn gradient(&self, t: f64, x: Vec3) -> Mat3 {
        self.velocity_and_gradient(t, x).1
    }
    fn velocity_and_gradient(&self, t: f64, x: Vec3) -> (Vec3, Mat3) {
        if t <= self.t_m {
            self.history.velocity_and_gradient(t, x)
        } else {
            self.window.velocity_and_gradient(t, x)
        }
    }
}

/// `anchor + ∫ N` by the composite trapezoidal rule on `t_grid`.
pub fn trapezoid_integral(anchor: &[f64], t_grid: &[f64], n_values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(t_grid.len());
    let mut acc = anchor.to_vec();
    out.push(acc.clone());
    for s in 1..t_grid.len() {
        let half = 0.5 * (t_grid[s] - t_grid[s - 1]);
        for (j, a) in acc.iter_mut().enumerate() {
            *a += half * (n_values[s - 1][j] + n_values[s][j]);
        }
        out.push(acc.clone());
    }
    out
}

/// `K(u)` together with the dependents it was computed from.
#[derive(Debug, Clone)]
pub struct KEvaluation {
    pub k_trajectory: Vec<Vec<f64>>,
    pub b_fields: Vec<SpectralField>,
    pub meshes: Vec<InterfaceMesh>,
    pub n_terms: Vec<NTerms>,
    pub resistive_increments: Vec<f64>,
}

/// One application of `K` to the candidate `u_traj` on `t_grid`. The first
/// entry of `u_traj` must be the anchor; `anchor_n` is `N` at the anchor.
pub fn apply_k(
    ctx: &WindowContext<'_>,
    anchor: &GalerkinState,
    anchor_n: &NTerms,
    t_grid: &[f64],
    u_traj: &[Vec<f64>],
) -> Result<KEvaluation, GalerkinError> {
    let basis = anchor.u.basis().clone();
    let mut window = SpectralTrajectory::new(basis.clone());
    for (t, c) in t_grid.iter().zip(u_traj) {
        window.push(*t, c.clone());
    }
    let sampler = ChainedVelocity {
        history: ctx.history,
        window: &window,
        t_m: anchor.t,
    };
    let b_traj = induction::solve_b(
        &sampler,
        &anchor.b,
        t_grid,
        ctx.settings.dt_b,
        ctx.params.sigma,
        ctx.quad,
    )?;
    let mut meshes = Vec::with_capacity(t_grid.len());
    meshes.push(anchor.mesh.clone());
    for &t in &t_grid[1..] {
        let next = interface::advect(meshes.last().unwrap(), &sampler, t, ctx.settings.h_flow)?;
        meshes.push(next);
    }
    let mut n_terms = Vec::with_capacity(t_grid.len());
    n_terms.push(anchor_n.clone());
    for s in 1..t_grid.len() {
        let state = GalerkinState {
            t: t_grid[s],
            u: SpectralField::new(basis.clone(), u_traj[s].clone())?,
            b: b_traj.fields[s].clone(),
            mesh: meshes[s].clone(),
            params: *ctx.params,
        };
        let chi = phase_at_quadrature(&state, &sampler, ctx)?;
        n_terms.push(apply_n(&state, chi.as_deref(), ctx.quad)?);
    }
    let totals: Vec<Vec<f64>> = n_terms.iter().map(NTerms::total).collect();
    Ok(KEvaluation {
        k_trajectory: trapezoid_integral(&anchor.u.coefficients, t_grid, &totals),
        b_fields: b_traj.fields,
        meshes,
        n_terms,
        resistive_increments: b_traj.resistive_increments,
    })
}

/// An accepted window.
#[derive(Debug, Clone)]
pub struct WindowSolve {
    pub t_grid: Vec<f64>,
    pub u_trajectory: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub b_fields: Vec<SpectralField>,
    pub meshes: Vec<InterfaceMesh>,
    pub n_terms: Vec<NTerms>,
    pub resistive_increments: Vec<f64>,
}

impl WindowSolve {
    /// `sup_t ‖u − K(u)‖` of the accepted trajectory.
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().expect("at least one iterate")
    }

    pub fn state(&self, s: usize, params: PhysicalParams) -> GalerkinState {
        GalerkinState {
            t: self.t_grid[s],
            u: SpectralField::new(self.b_fields[s].basis().clone(), self.u_trajectory[s].clone())
                .expect("consistent length"),
            b: self.b_fields[s].clone(),
            mesh: self.meshes[s].clone(),
            params,
        }
    }
}

/// Sub-step times `t_m + Δ s / n_sub`, ending exactly at `t_m + Δ`.
pub fn window_grid(t_m: f64, delta: f64, n_sub: usize) -> Vec<f64> {
    (0..=n_sub)
        .map(|s| {
            if s == n_sub {
                t_m + delta
            } else {
                t_m + delta * s as f64 / n_sub as f64
            }
        })
        .collect()
}

/// Damped Picard iteration `u ← (1 − ω) u + ω K(u)` on `[t_m, t_m + Δ]`,
/// starting from the constant trajectory. Accepts the first iterate with
/// `sup ‖u − K(u)‖ < tol`; fails when `max_iter` is exhausted or when the
/// residuals stop decreasing after the first iterate.
pub fn fixed_point_window(
    ctx: &WindowContext<'_>,
    anchor: &GalerkinState,
    anchor_n: &NTerms,
    delta: f64,
    relaxation: f64,
) -> Result<WindowSolve, GalerkinError> {
    let s = ctx.settings;
    let t_grid = window_grid(anchor.t, delta, s.n_sub);
    let mut u: Vec<Vec<f64>> = vec![anchor.u.coefficients.clone(); t_grid.len()];
    let mut residuals = Vec::new();
    let fail = |reason: String, residuals: &[f64]| GalerkinError::WindowFailure {
        t: anchor.t,
        delta,
        reason,
        residuals: residuals.to_vec(),
    };
    for _ in 0..s.max_iter {
        let eval = apply_k(ctx, anchor, anchor_n, &t_grid, &u)?;
        let r = u
            .iter()
            .zip(&eval.k_trajectory)
            .map(|(a, b)| geom::l2_dist(a, b))
            .fold(0.0, f64::max);
        if !r.is_finite() {
            return Err(fail("non-finite residual".into(), &residuals));
        }
        residuals.push(r);
        let k = residuals.len();
        if r < s.tol {
            return Ok(WindowSolve {
                t_grid,
                u_trajectory: u,
                iterations: k,
                residual_history: residuals,
                b_fields: eval.b_fields,
                meshes: eval.meshes,
                n_terms: eval.n_terms,
                resistive_increments: eval.resistive_increments,
            });
        }
        if k >= 3 && r >= residuals[k - 2] {
            return Err(fail(format!("residual stopped decreasing at iterate {k}"), &residuals));
        }
        for (us, ks) in u.iter_mut().zip(&eval.k_trajectory).skip(1) {
            for (a, b) in us.iter_mut().zip(ks) {
                *a = (1.0 - relaxation) * *a + relaxation * b;
            }
        }
    }
    Err(fail(format!("no convergence in {} iterations", s.max_iter), &residuals))
}

/// A-priori constant `Ĉ` with `‖N‖ ≤ Ĉ(‖u‖² + ‖u‖ + ‖B‖² + ‖χ‖_BV)`.
///
/// With `G = (Σ_j sup|∇η_j|²)^{1/2}` the inertia and Lorentz terms are bounded
/// by `G‖u‖²` and `G‖B‖²`, the viscous term by `ν_max λ_max ‖u‖` and the
/// capillary term by `κ √(d−1) G · perimeter`.
pub fn n_bound_constant(basis: &dyn SolenoidalBasis, params: &PhysicalParams) -> f64 {
    let g = (0..basis.len())
        .map(|j| basis.gradient_bound(j).powi(2))
        .sum::<f64>()
        .sqrt();
    let lambda_max = (0..basis.len()).map(|j| basis.eigenvalue(j)).fold(0.0, f64::max);
    let dim = basis.domain().dim as f64;
    let capillary = params.kappa * (dim - 1.0).sqrt() * g;
    g.max(params.viscosity.max() * lambda_max).max(capillary)
}

/// `‖u‖² + ‖u‖ + ‖B‖² + |Ω⁺| + perimeter`
pub fn n_bound_norm(state: &GalerkinState) -> f64 {
    let u = state.u.norm();
    let b = state.b.norm();
    let bv = state.mesh.signed_volume().abs() + interface::perimeter(&state.mesh);
    u * u + u + b * b + bv
}

/// Largest Δ with `a + Ĉ(R² + R + c)Δ ≤ R` for the best radius
/// `R = a + √(a² + a + c)`.
pub fn trust_region_window(c_hat: f64, a: f64, c: f64) -> f64 {
    let r = a + (a * a + a + c).sqrt();
    (r - a) / (c_hat * (r * r + r + c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub t_start: f64,
    pub delta: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureRecord {
    pub t: f64,
    pub delta: f64,
    pub relaxation: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NBoundAudit {
    pub c_hat: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// State at every accepted sub-step, starting with the initial state.
    pub states: Vec<GalerkinState>,
    pub ledger: EnergyLedger,
    pub windows: Vec<WindowRecord>,
    pub failures: Vec<FailureRecord>,
    pub n_bound: NBoundAudit,
    /// `max_{t,j} |u_j(t) − u0_j − ∫₀ᵗ N_j|`.
    pub galerkin_residual: f64,
    /// `max_t |(B⊗B, ∇u) − (u⊗B − B⊗u, ∇B)|`.
    pub cancellation_defect: f64,
    pub initial_window: f64,
    pub max_step: f64,
    pub quadrature_order: usize,
    pub u_history: SpectralTrajectory,
}

impl RunOutput {
    pub fn final_state(&self) -> &GalerkinState {
        self.states.last().expect("initial state is always present")
    }

    pub fn tau_e(&self) -> f64 {
        energy::default_tau(self.max_step, self.quadrature_order, self.ledger.e0())
    }

    pub fn check_energy(&self) -> InequalityReport {
        energy::check_inequality(&self.ledger, self.tau_e(), None)
    }

    pub fn max_fixed_point_residual(&self) -> f64 {
        self.windows
            .iter()
            .filter_map(|w| w.residual_history.last().copied())
            .fold(0.0, f64::max)
    }

    pub fn halvings(&self) -> usize {
        self.failures.len()
    }
}

/// What is known when a run aborts.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: GalerkinError,
    pub last_state: Option<GalerkinState>,
    pub ledger: Option<EnergyLedger>,
    pub windows: Vec<WindowRecord>,
    pub failures: Vec<FailureRecord>,
}

impl From<GalerkinError> for Box<RunFailure> {
    fn from(error: GalerkinError) -> Self {
        Box::new(RunFailure {
            error,
            last_state: None,
            ledger: None,
            windows: Vec::new(),
            failures: Vec::new(),
        })
    }
}

struct Audit {
    c_hat: f64,
    samples: usize,
    max_ratio: f64,
    violations: usize,
    cancellation: f64,
}

impl Audit {
    fn sample(&mut self, state: &GalerkinState, n: &NTerms, quad: &Quadrature) {
        let total = n.total();
        let denom = n_bound_norm(state);
        let ratio = geom::l2(&total) / denom;
        self.samples += 1;
        self.max_ratio = self.max_ratio.max(ratio);
        if ratio > self.c_hat {
            warn!("N bound exceeded at t = {}: ratio {ratio} > {}", state.t, self.c_hat);
            self.violations += 1;
        }
        let lorentz_power: f64 = -n
            .lorentz
            .iter()
            .zip(&state.u.coefficients)
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let transport = induction::transport_pairing(&SteadyField(state.u.clone()), state.t, &state.b, quad);
        let transport_power: f64 = transport.iter().zip(&state.b.coefficients).map(|(a, b)| a * b).sum();
        self.cancellation = self.cancellation.max((lorentz_power - transport_power).abs());
    }
}

/// Chain windows from `t = 0` to `t_end`.
pub fn run(problem: &Problem) -> Result<RunOutput, Box<RunFailure>> {
    problem.validate()?;
    let quad = problem.quadrature();
    let settings = problem.settings;
    let params = problem.params;
    let state0 = problem.initial_state()?;
    let mut ledger = EnergyLedger::start(0.0, &state0.u, &state0.b, &state0.mesh, params.kappa);
    let mut history = SpectralTrajectory::from_field(0.0, &state0.u);

    let c_hat = n_bound_constant(problem.basis.as_ref(), &params);
    let mut delta = settings.window;
    if settings.trust_region {
        let a = state0.u.norm();
        let c = state0.b.norm().powi(2) + state0.mesh.signed_volume().abs() + interface::perimeter(&state0.mesh);
        delta = delta.min(trust_region_window(c_hat, a, c));
    }
    let initial_window = delta;
    info!("C_hat = {c_hat:.6e}, initial window = {delta:.6e}, Q = {}", quad.order);

    let anchor_n = {
        let ctx = WindowContext {
            params: &params,
            settings: &settings,
            phase: &problem.phase,
            history: &history,
            quad: &quad,
        };
        let chi = phase_at_quadrature(&state0, &history, &ctx)?;
        apply_n(&state0, chi.as_deref(), &quad)?
    };
    let mut audit = Audit {
        c_hat,
        samples: 0,
        max_ratio: 0.0,
        violations: 0,
        cancellation: 0.0,
    };
    audit.sample(&state0, &anchor_n, &quad);

    let mut integral = vec![0.0; problem.basis.len()];
    let mut galerkin_residual: f64 = 0.0;
    let mut states = vec![state0];
    let mut anchor_n = anchor_n;
    let mut windows = Vec::new();
    let mut failures: Vec<FailureRecord> = Vec::new();
    let mut relaxation = settings.relaxation;
    let mut max_step: f64 = 0.0;
    let t_end = problem.t_end;
    let eps = 1e-12 * t_end.max(1.0);

    let abort = |error: GalerkinError,
                 states: &[GalerkinState],
                 ledger: &EnergyLedger,
                 windows: &[WindowRecord],
                 failures: &[FailureRecord]| {
        Box::new(RunFailure {
            error,
            last_state: states.last().cloned(),
            ledger: Some(ledger.clone()),
            windows: windows.to_vec(),
            failures: failures.to_vec(),
        })
    };

    while states.last().unwrap().t < t_end - eps {
        let anchor = states.last().unwrap().clone();
        let remaining = t_end - anchor.t;
        let span = if remaining - delta <= eps { remaining } else { delta };
        let ctx = WindowContext {
            params: &params,
            settings: &settings,
            phase: &problem.phase,
            history: &history,
            quad: &quad,
        };
        let solve = match fixed_point_window(&ctx, &anchor, &anchor_n, span, relaxation) {
            Ok(w) => w,
            Err(e) if e.is_retryable() => {
                failures.push(FailureRecord {
                    t: anchor.t,
                    delta: span,
                    relaxation,
                    reason: e.to_string(),
                });
                delta = span / 2.0;
                if failures.len().is_multiple_of(2) {
                    relaxation /= 2.0;
                }
                warn!("{e}; retrying with window {delta:.6e}, relaxation {relaxation}");
                if delta < settings.min_window {
                    let residuals = match &e {
                        GalerkinError::WindowFailure { residuals, .. } => residuals.clone(),
                        _ => Vec::new(),
                    };
                    let err = GalerkinError::NonConvergence {
                        t: anchor.t,
                        delta,
                        min_window: settings.min_window,
                        attempts: failures.len(),
                        last_reason: e.to_string(),
                        residuals,
                    };
                    return Err(abort(err, &states, &ledger, &windows, &failures));
                }
                continue;
            }
            Err(e) => return Err(abort(e, &states, &ledger, &windows, &failures)),
        };
        debug!(
            "window [{:.6}, {:.6}] accepted after {} iterates, residual {:.3e}",
            anchor.t,
            anchor.t + span,
            solve.iterations,
            solve.residual()
        );

        let totals: Vec<Vec<f64>> = solve.n_terms.iter().map(NTerms::total).collect();
        for s in 1..solve.t_grid.len() {
            let dt = solve.t_grid[s] - solve.t_grid[s - 1];
            max_step = max_step.max(dt);
            let state = solve.state(s, params);
            for (j, acc) in integral.iter_mut().enumerate() {
                *acc += 0.5 * dt * (totals[s - 1][j] + totals[s][j]);
            }
            for (j, acc) in integral.iter().enumerate() {
                let defect = state.u.coefficients[j] - problem.u0.coefficients[j] - acc;
                galerkin_residual = galerkin_residual.max(defect.abs());
            }
            let viscous = 0.5 * dt * (solve.n_terms[s - 1].dissipation + solve.n_terms[s].dissipation);
            ledger.record(
                state.t,
                &state.u,
                &state.b,
                &state.mesh,
                params.kappa,
                viscous,
                solve.resistive_increments[s - 1],
            );
            audit.sample(&state, &solve.n_terms[s], &quad);
            history.push(state.t, state.u.coefficients.clone());
            states.push(state);
        }
        anchor_n = solve.n_terms.last().unwrap().clone();
        windows.push(WindowRecord {
            t_start: anchor.t,
            delta: span,
            iterations: solve.iterations,
            residual_history: solve.residual_history,
        });
    }
    info!(
        "run finished: {} windows, {} failures, galerkin residual {:.3e}",
        windows.len(),
        failures.len(),
        galerkin_residual
    );
    Ok(RunOutput {
        states,
        ledger,
        windows,
        failures,
        n_bound: NBoundAudit {
            c_hat,
            samples: audit.samples,
            max_ratio: audit.max_ratio,
            violations: audit.violations,
        },
        galerkin_residual,
        cancellation_defect: audit.cancellation,
        initial_window,
        max_step,
        quadrature_order: quad.order,
        u_history: history,
    })
}

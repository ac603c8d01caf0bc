//! Magnetic solution operator `B(u)`.
//!
//! The induction equation is advanced in the same divergence-free basis as
//! the velocity with IMEX Euler: the transport pairing
//! `T_j = (u⊗B − B⊗u, ∇η_j)` is explicit, diffusion is implicit and diagonal
//! in the eigenbasis, `c_j ← (c_j + dt T_j) / (1 + σ λ_j dt)`.

use thiserror::Error;

use crate::basis::{Quadrature, SpectralField};
use crate::flowmap::VelocitySampler;
use crate::geom;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InductionError {
    #[error("non-finite transport pairing at t = {t}: {detail}")]
    NonFinite { t: f64, detail: String },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("magnetic diffusivity must be positive, got {0}")]
    InvalidSigma(f64),
}

/// `T_j = (u⊗B − B⊗u, ∇η_j)` by quadrature, `u` sampled at time `t`.
pub fn transport_pairing(u: &dyn VelocitySampler, t: f64, b: &SpectralField, quad: &Quadrature) -> Vec<f64> {
    let basis = b.basis();
    let mut out = vec![0.0; basis.len()];
    if b.coefficients.iter().all(|&c| c == 0.0) {
        return out;
    }
    for &x in &quad.points {
        let uv = u.velocity(t, x);
        let bv = b.evaluate(x);
        let mut m = geom::outer(uv, bv);
        let bu = geom::outer(bv, uv);
        for i in 0..3 {
            for l in 0..3 {
                m[i][l] = quad.weight * (m[i][l] - bu[i][l]);
            }
        }
        basis.accumulate_pairing(x, &m, &mut out);
    }
    out
}

/// Lorentz power `(B⊗B, ∇u) = ∫ Σ B_i B_l ∂_i u_l`.
pub fn lorentz_power(u: &dyn VelocitySampler, t: f64, b: &SpectralField, quad: &Quadrature) -> f64 {
    quad.points
        .iter()
        .map(|&x| {
            let bv = b.evaluate(x);
            let j = u.gradient(t, x);
            quad.weight * geom::dot(bv, geom::mat_vec(&j, bv))
        })
        .sum()
}

/// One IMEX Euler step and its energy bookkeeping.
#[derive(Debug, Clone)]
pub struct InductionStep {
    pub field: SpectralField,
    /// `dt Σ_j T_j c_j` with the explicit (old) coefficients; equals
    /// `dt (B⊗B, ∇u)` when the quadrature is exact.
    pub transport_work: f64,
    /// `dt σ ‖∇B_new‖²`.
    pub resistive: f64,
}

pub fn step_b(
    b: &SpectralField,
    u: &dyn VelocitySampler,
    t: f64,
    sigma: f64,
    dt: f64,
    quad: &Quadrature,
) -> Result<InductionStep, InductionError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(InductionError::InvalidStep(dt));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(InductionError::InvalidSigma(sigma));
    }
    let transport = transport_pairing(u, t, b, quad);
    if let Some(j) = transport.iter().position(|v| !v.is_finite()) {
        return Err(InductionError::NonFinite {
            t,
            detail: format!("mode {j} of {}, |B| = {}", transport.len(), b.norm()),
        });
    }
    let basis = b.basis();
    let mut next = b.clone();
    let mut transport_work = 0.0;
    for (j, c) in next.coefficients.iter_mut().enumerate() {
        transport_work += dt * transport[j] * *c;
        *c = (*c + dt * transport[j]) / (1.0 + sigma * basis.eigenvalue(j) * dt);
    }
    let resistive = dt * sigma * next.gradient_norm_sq();
    Ok(InductionStep {
        field: next,
        transport_work,
        resistive,
    })
}

/// `B` recorded on a time grid; increments refer to consecutive records.
#[derive(Debug, Clone)]
pub struct MagneticTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
    pub sigma: f64,
    /// `σ ∫ ‖∇B‖²` over each record interval (`len = times.len() − 1`).
    pub resistive_increments: Vec<f64>,
    /// `∫ (B⊗B, ∇u)` over each record interval, explicit-in-time.
    pub transport_work: Vec<f64>,
}

impl MagneticTrajectory {
    pub fn last(&self) -> &SpectralField {
        self.fields.last().expect("nonempty trajectory")
    }
}

/// Chain [`step_b`] across `grid`, taking `ceil(Δt / max_dt)` equal steps
/// inside every grid interval. `grid[0]` is the time of `b0`.
pub fn solve_b(
    u: &dyn VelocitySampler,
    b0: &SpectralField,
    grid: &[f64],
    max_dt: f64,
    sigma: f64,
    quad: &Quadrature,
) -> Result<MagneticTrajectory, InductionError> {
    if !(max_dt.is_finite() && max_dt > 0.0) {
        return Err(InductionError::InvalidStep(max_dt));
    }
    let mut fields = vec![b0.clone()];
    let mut resistive_increments = Vec::with_capacity(grid.len().saturating_sub(1));
    let mut transport_work = Vec::with_capacity(grid.len().saturating_sub(1));
    let mut b = b0.clone();
    for w in grid.windows(2) {
        let span = w[1] - w[0];
        let n = ((span / max_dt) - 1e-9).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        let (mut res, mut work) = (0.0, 0.0);
        for k in 0..n {
            let step = step_b(&b, u, w[0] + k as f64 * dt, sigma, dt, quad)?;
            res += step.resistive;
            work += step.transport_work;
            b = step.field;
        }
        resistive_increments.push(res);
        transport_work.push(work);
        fields.push(b.clone());
    }
    Ok(MagneticTrajectory {
        times: grid.to_vec(),
        fields,
        sigma,
        resistive_increments,
        transport_work,
    })
}

/// [`solve_b`] on a uniform grid with spacing `dt` over `[t0, t1]`.
pub fn solve_b_interval(
    u: &dyn VelocitySampler,
    b0: &SpectralField,
    t0: f64,
    t1: f64,
    dt: f64,
    sigma: f64,
    quad: &Quadrature,
) -> Result<MagneticTrajectory, InductionError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(InductionError::InvalidStep(dt));
    }
    let n = (((t1 - t0) / dt) - 1e-9).ceil().max(1.0) as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| {
            if i == n {
                t1
            } else {
                t0 + i as f64 * (t1 - t0) / n as f64
            }
        })
        .collect();
    solve_b(u, b0, &grid, dt, sigma, quad)
}

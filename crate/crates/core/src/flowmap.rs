//! Characteristic flow map `d/dt X(t,x) = u(t, X(t,x))`.
//!
//! Integration is classical RK4 with a fixed step; the final step is shortened
//! so every call lands exactly on its target time. Positions are integrated on
//! the unwrapped periodic lift and only wrapped back into the cell when handed
//! out as a [`ParticleCloud`].

use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{Coefficients, Domain, SolenoidalBasis, SpectralField};
use crate::geom::{self, Mat3, Vec3};
use std::sync::Arc;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("non-finite velocity sample at t = {t}, x = {x:?}")]
    NonFinite { t: f64, x: Vec3 },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Time-dependent velocity field `(t, x) ↦ u(t, x)`.
pub trait VelocitySampler: Send + Sync {
    fn domain(&self) -> Domain;
    fn velocity(&self, t: f64, x: Vec3) -> Vec3;
    /// Jacobian `J[i][j] = ∂u_i/∂x_j`.
    fn gradient(&self, t: f64, x: Vec3) -> Mat3;

    fn velocity_and_gradient(&self, t: f64, x: Vec3) -> (Vec3, Mat3) {
        (self.velocity(t, x), self.gradient(t, x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroVelocity {
    pub domain: Domain,
}

impl VelocitySampler for ZeroVelocity {
    fn domain(&self) -> Domain {
        self.domain
    }
    fn velocity(&self, _t: f64, _x: Vec3) -> Vec3 {
        geom::ZERO
    }
    fn gradient(&self, _t: f64, _x: Vec3) -> Mat3 {
        geom::ZERO_MAT
    }
}

/// Planar rigid rotation `u = ω (−(y − c_y), x − c_x)` about `center`.
#[derive(Debug, Clone, Copy)]
pub struct RigidRotation {
    pub center: Vec3,
    pub omega: f64,
}

impl VelocitySampler for RigidRotation {
    fn domain(&self) -> Domain {
        Domain::periodic(2).expect("2D domain")
    }
    fn velocity(&self, _t: f64, x: Vec3) -> Vec3 {
        [
            -self.omega * (x[1] - self.center[1]),
            self.omega * (x[0] - self.center[0]),
            0.0,
        ]
    }
    fn gradient(&self, _t: f64, _x: Vec3) -> Mat3 {
        [[0.0, -self.omega, 0.0], [self.omega, 0.0, 0.0], [0.0; 3]]
    }
}

/// Steady 2D Taylor–Green vortex `A (sin x cos y, −cos x sin y)`.
#[derive(Debug, Clone, Copy)]
pub struct TaylorGreen {
    pub amplitude: f64,
}

impl TaylorGreen {
    /// Stream function `A sin x sin y`, constant along trajectories.
    pub fn stream_function(&self, x: Vec3) -> f64 {
        self.amplitude * x[0].sin() * x[1].sin()
    }
}

impl VelocitySampler for TaylorGreen {
    fn domain(&self) -> Domain {
        Domain::periodic(2).expect("2D domain")
    }
    fn velocity(&self, _t: f64, x: Vec3) -> Vec3 {
        let a = self.amplitude;
        [a * x[0].sin() * x[1].cos(), -a * x[0].cos() * x[1].sin(), 0.0]
    }
    fn gradient(&self, _t: f64, x: Vec3) -> Mat3 {
        let a = self.amplitude;
        let (sx, cx) = x[0].sin_cos();
        let (sy, cy) = x[1].sin_cos();
        [
            [a * cx * cy, -a * sx * sy, 0.0],
            [a * sx * sy, -a * cx * cy, 0.0],
            [0.0; 3],
        ]
    }
}

/// A time-independent spectral velocity field.
#[derive(Debug, Clone)]
pub struct SteadyField(pub SpectralField);

impl VelocitySampler for SteadyField {
    fn domain(&self) -> Domain {
        self.0.domain()
    }
    fn velocity(&self, _t: f64, x: Vec3) -> Vec3 {
        self.0.evaluate(x)
    }
    fn gradient(&self, _t: f64, x: Vec3) -> Mat3 {
        self.0.evaluate_gradient(x)
    }
    fn velocity_and_gradient(&self, _t: f64, x: Vec3) -> (Vec3, Mat3) {
        self.0.evaluate_with_gradient(x)
    }
}

/// Coefficient snapshots at increasing times, linearly interpolated in `t`.
///
/// Outside the recorded interval the nearest snapshot is held constant.
/// Linear blending of divergence-free fields stays divergence-free.
#[derive(Debug, Clone)]
pub struct SpectralTrajectory {
    basis: Arc<dyn SolenoidalBasis>,
    times: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
}

impl SpectralTrajectory {
    pub fn new(basis: Arc<dyn SolenoidalBasis>) -> Self {
        Self {
            basis,
            times: Vec::new(),
            coefficients: Vec::new(),
        }
    }

    pub fn from_field(t: f64, field: &SpectralField) -> Self {
        let mut tr = Self::new(field.basis().clone());
        tr.push(t, field.coefficients.clone());
        tr
    }

    /// Append a snapshot. A snapshot at the current final time replaces it.
    pub fn push(&mut self, t: f64, coefficients: Vec<f64>) {
        assert_eq!(coefficients.len(), self.basis.len(), "coefficient length");
        if let Some(&last) = self.times.last() {
            assert!(t >= last, "trajectory times must be nondecreasing");
            if t == last {
                *self.coefficients.last_mut().unwrap() = coefficients;
                return;
            }
        }
        self.times.push(t);
        self.coefficients.push(coefficients);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn basis(&self) -> &Arc<dyn SolenoidalBasis> {
        &self.basis
    }

    fn coefficients_at(&self, t: f64) -> Coefficients<'_> {
        let n = self.times.len();
        assert!(n > 0, "empty trajectory");
        if n == 1 || t <= self.times[0] {
            return Coefficients::Single(&self.coefficients[0]);
        }
        if t >= self.times[n - 1] {
            return Coefficients::Single(&self.coefficients[n - 1]);
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let wb = (t - t0) / (t1 - t0);
        if wb == 0.0 {
            return Coefficients::Single(&self.coefficients[i]);
        }
        Coefficients::Blend {
            a: &self.coefficients[i],
            b: &self.coefficients[i + 1],
            wa: 1.0 - wb,
            wb,
        }
    }

    /// Interpolated field at time `t`.
    pub fn at(&self, t: f64) -> SpectralField {
        let c = self.coefficients_at(t);
        let values = (0..self.basis.len()).map(|j| c.get(j)).collect();
        SpectralField::new(self.basis.clone(), values).expect("consistent length")
    }
}

impl VelocitySampler for SpectralTrajectory {
    fn domain(&self) -> Domain {
        self.basis.domain()
    }
    fn velocity(&self, t: f64, x: Vec3) -> Vec3 {
        let d = self.basis.domain();
        self.basis.evaluate(self.coefficients_at(t), d.wrap(x))
    }
    fn gradient(&self, t: f64, x: Vec3) -> Mat3 {
        self.velocity_and_gradient(t, x).1
    }
    fn velocity_and_gradient(&self, t: f64, x: Vec3) -> (Vec3, Mat3) {
        let d = self.basis.domain();
        self.basis.evaluate_with_gradient(self.coefficients_at(t), d.wrap(x))
    }
}

/// Discrete carrier of `X(t, ·)`: a set of points at a common time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub positions: Vec<Vec3>,
    pub t: f64,
}

fn sample(u: &dyn VelocitySampler, t: f64, x: Vec3) -> Result<Vec3, FlowError> {
    let v = u.velocity(t, x);
    if geom::is_finite(v) {
        Ok(v)
    } else {
        Err(FlowError::NonFinite { t, x })
    }
}

fn sample_with_gradient(u: &dyn VelocitySampler, t: f64, x: Vec3) -> Result<(Vec3, Mat3), FlowError> {
    let (v, g) = u.velocity_and_gradient(t, x);
    if geom::is_finite(v) && g.iter().all(|r| geom::is_finite(*r)) {
        Ok((v, g))
    } else {
        Err(FlowError::NonFinite { t, x })
    }
}

/// Step boundaries from `t0` to `t1` with nominal step `h`; the last step
/// absorbs the remainder and ends exactly on `t1`.
fn step_times(t0: f64, t1: f64, h: f64) -> Result<impl Iterator<Item = (f64, f64)>, FlowError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(FlowError::InvalidStep(h));
    }
    let span = t1 - t0;
    let n = if span == 0.0 {
        0
    } else {
        ((span.abs() / h) - 1e-9).ceil().max(1.0) as usize
    };
    let s = span.signum() * h;
    Ok((0..n).map(move |i| {
        let a = t0 + i as f64 * s;
        let b = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * s };
        (a, b)
    }))
}

/// Integrate one trajectory from `(t0, x0)` to `t1` (either direction) on the
/// unwrapped lift.
pub fn flow(u: &dyn VelocitySampler, x0: Vec3, t0: f64, t1: f64, h: f64) -> Result<Vec3, FlowError> {
    let mut x = x0;
    for (a, b) in step_times(t0, t1, h)? {
        let dt = b - a;
        let tm = a + 0.5 * dt;
        let k1 = sample(u, a, x)?;
        let k2 = sample(u, tm, geom::axpy(x, 0.5 * dt, k1))?;
        let k3 = sample(u, tm, geom::axpy(x, 0.5 * dt, k2))?;
        let k4 = sample(u, b, geom::axpy(x, dt, k3))?;
        for i in 0..3 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(x)
}

/// Position and deformation gradient `∇X` integrated together; the
/// variational equation is `d/dt ∇X = ∇u(t, X) ∇X`.
pub fn flow_with_jacobian(
    u: &dyn VelocitySampler,
    x0: Vec3,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<(Vec3, Mat3), FlowError> {
    let dim = u.domain().dim;
    let mut x = x0;
    let mut jac = geom::identity(dim);
    for (a, b) in step_times(t0, t1, h)? {
        let dt = b - a;
        let tm = a + 0.5 * dt;
        let (v1, g1) = sample_with_gradient(u, a, x)?;
        let k1 = geom::mat_mul(&g1, &jac);
        let (v2, g2) = sample_with_gradient(u, tm, geom::axpy(x, 0.5 * dt, v1))?;
        let k2 = geom::mat_mul(&g2, &geom::mat_add_scaled(&jac, 0.5 * dt, &k1));
        let (v3, g3) = sample_with_gradient(u, tm, geom::axpy(x, 0.5 * dt, v2))?;
        let k3 = geom::mat_mul(&g3, &geom::mat_add_scaled(&jac, 0.5 * dt, &k2));
        let (v4, g4) = sample_with_gradient(u, b, geom::axpy(x, dt, v3))?;
        let k4 = geom::mat_mul(&g4, &geom::mat_add_scaled(&jac, dt, &k3));
        for i in 0..3 {
            x[i] += dt / 6.0 * (v1[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            for j in 0..3 {
                jac[i][j] += dt / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
    }
    Ok((x, jac))
}

/// Advance every particle of `cloud` to `t1`.
pub fn advance(cloud: &ParticleCloud, u: &dyn VelocitySampler, t1: f64, h: f64) -> Result<ParticleCloud, FlowError> {
    let domain = u.domain();
    let positions = cloud
        .positions
        .par_iter()
        .map(|&x| flow(u, x, cloud.t, t1, h).map(|y| domain.wrap(y)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParticleCloud { positions, t: t1 })
}

/// `X_t⁻¹(x)`: integrate backwards from time `t` to time 0.
pub fn backtrace(x: Vec3, t: f64, u: &dyn VelocitySampler, h: f64) -> Result<Vec3, FlowError> {
    let y = flow(u, x, t, 0.0, h)?;
    Ok(u.domain().wrap(y))
}

/// `∇X_t(x0)` for the flow started at time 0.
pub fn jacobian(x0: Vec3, u: &dyn VelocitySampler, t: f64, h: f64) -> Result<Mat3, FlowError> {
    flow_with_jacobian(u, x0, 0.0, t, h).map(|(_, j)| j)
}

/// Sampled estimate of `sup_x |∇u(t, x)|_F` on a uniform grid.
pub fn gradient_sup_estimate(u: &dyn VelocitySampler, t: f64, per_axis: usize) -> f64 {
    let d = u.domain();
    let q = crate::basis::Quadrature::uniform(&d, per_axis);
    q.points
        .iter()
        .map(|&x| geom::frobenius(&u.gradient(t, x)))
        .fold(0.0, f64::max)
}

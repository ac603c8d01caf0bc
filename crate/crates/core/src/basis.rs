//! Divergence-free spectral basis on the periodic cell.
//!
//! The Galerkin space is spanned by real trigonometric modes
//! `η(x) = N · p · cos(k·x)` or `N · p · sin(k·x)` with an integer wavevector
//! `k` taken from a canonical half-space and a polarization `p ⟂ k`. Each mode
//! is an eigenfunction of the Stokes operator with eigenvalue `|k|²`, and the
//! family is orthonormal in `L²` of the cell, so the mass functional is the
//! identity on coefficient vectors.
//!
//! Solver code only talks to the [`SolenoidalBasis`] trait, so a different
//! divergence-free eigenbasis can be plugged in without touching the rest of
//! the crate.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::geom::{self, Mat3, Vec3};

/// Largest supported per-axis wavenumber.
pub const MAX_KMAX: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("dimension must be 2 or 3, got {0}")]
    InvalidDimension(usize),
    #[error("kmax must be in 1..={MAX_KMAX}, got {0}")]
    InvalidKmax(u32),
    #[error("period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("expected {expected} coefficients, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("basis must contain at least one mode")]
    Empty,
}

/// The periodic cell `[0, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub dim: usize,
    pub period: f64,
}

impl Domain {
    /// The default cell `[0, 2π)^d`.
    pub fn periodic(dim: usize) -> Result<Self, BasisError> {
        Self::with_period(dim, 2.0 * PI)
    }

    pub fn with_period(dim: usize, period: f64) -> Result<Self, BasisError> {
        if dim != 2 && dim != 3 {
            return Err(BasisError::InvalidDimension(dim));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(BasisError::InvalidPeriod(period));
        }
        Ok(Self { dim, period })
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    pub fn center(&self) -> Vec3 {
        let mut c = geom::ZERO;
        for v in c.iter_mut().take(self.dim) {
            *v = 0.5 * self.period;
        }
        c
    }

    /// Map a point of the periodic lift back into the cell.
    pub fn wrap(&self, x: Vec3) -> Vec3 {
        let mut y = x;
        for v in y.iter_mut().take(self.dim) {
            *v = v.rem_euclid(self.period);
        }
        y
    }

    /// Physical wavenumber of integer wavevector component 1.
    pub fn base_wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Cosine,
    Sine,
}

/// One divergence-free eigenmode.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMode {
    pub wavevector: [i32; 3],
    pub phase: Phase,
    pub polarization: usize,
    /// Integer-valued direction orthogonal to the wavevector (not normalized).
    pub direction: Vec3,
    /// Scale making the mode `L²`-unit; already includes `1/|direction|`.
    pub normalization: f64,
}

impl BasisMode {
    pub fn unit_polarization(&self) -> Vec3 {
        geom::scale(self.direction, 1.0 / geom::norm(self.direction))
    }

    /// `normalization · direction`, the vector multiplying the trigonometric factor.
    pub fn amplitude(&self) -> Vec3 {
        geom::scale(self.direction, self.normalization)
    }

    pub fn wavevector_sq(&self) -> i64 {
        self.wavevector.iter().map(|&k| (k as i64) * (k as i64)).sum()
    }
}

fn in_half_space(k: [i32; 3]) -> bool {
    match k.iter().find(|&&c| c != 0) {
        Some(&c) => c > 0,
        None => false,
    }
}

fn polarizations(dim: usize, k: [i32; 3]) -> Vec<Vec3> {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    if dim == 2 {
        return vec![[-kf[1], kf[0], 0.0]];
    }
    // Cross with the axis carrying the smallest |k_i|; never parallel to k.
    let axis = (0..3).min_by_key(|&i| k[i].abs()).unwrap_or(0);
    let mut e = geom::ZERO;
    e[axis] = 1.0;
    let p1 = geom::cross(kf, e);
    let p2 = geom::cross(kf, p1);
    vec![p1, p2]
}

/// All modes with `0 < max|k_i| ≤ kmax` on the `2π`-periodic cell, ordered by
/// `(|k|², k, polarization, phase)` so eigenvalues are nondecreasing.
pub fn enumerate_modes(dim: usize, kmax: u32) -> Result<Vec<BasisMode>, BasisError> {
    enumerate_modes_in(&Domain::periodic(dim)?, kmax)
}

pub fn enumerate_modes_in(domain: &Domain, kmax: u32) -> Result<Vec<BasisMode>, BasisError> {
    if kmax == 0 || kmax > MAX_KMAX {
        return Err(BasisError::InvalidKmax(kmax));
    }
    let dim = domain.dim;
    let km = kmax as i32;
    let range = -km..=km;
    let mut waves = Vec::new();
    for a in range.clone() {
        for b in range.clone() {
            let cs: Vec<i32> = if dim == 3 { range.clone().collect() } else { vec![0] };
            for &c in &cs {
                let k = [a, b, c];
                if in_half_space(k) {
                    waves.push(k);
                }
            }
        }
    }
    waves.sort_by_key(|k| (k.iter().map(|&c| (c * c) as i64).sum::<i64>(), *k));

    let unit = (2.0 / domain.volume()).sqrt();
    let mut modes = Vec::with_capacity(waves.len() * 2 * (dim - 1));
    for k in waves {
        for (polarization, p) in polarizations(dim, k).into_iter().enumerate() {
            for phase in [Phase::Cosine, Phase::Sine] {
                modes.push(BasisMode {
                    wavevector: k,
                    phase,
                    polarization,
                    direction: p,
                    normalization: unit / geom::norm(p),
                });
            }
        }
    }
    Ok(modes)
}

/// Quadrature rule on the periodic cell: uniform tensor grid, equal weights.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub dim: usize,
    pub order: usize,
    pub points: Vec<Vec3>,
    pub weight: f64,
}

impl Quadrature {
    /// Trapezoidal rule with `order` nodes per axis; exact for trigonometric
    /// polynomials of per-axis degree below `order`.
    pub fn uniform(domain: &Domain, order: usize) -> Self {
        let order = order.max(1);
        let h = domain.period / order as f64;
        let mut points = Vec::with_capacity(order.pow(domain.dim as u32));
        if domain.dim == 2 {
            for i in 0..order {
                for j in 0..order {
                    points.push([i as f64 * h, j as f64 * h, 0.0]);
                }
            }
        } else {
            for i in 0..order {
                for j in 0..order {
                    for l in 0..order {
                        points.push([i as f64 * h, j as f64 * h, l as f64 * h]);
                    }
                }
            }
        }
        Self {
            dim: domain.dim,
            order,
            points,
            weight: h.powi(domain.dim as i32),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Coefficient access that can blend two stored vectors without allocating.
#[derive(Debug, Clone, Copy)]
pub enum Coefficients<'a> {
    Single(&'a [f64]),
    Blend {
        a: &'a [f64],
        b: &'a [f64],
        wa: f64,
        wb: f64,
    },
}

impl Coefficients<'_> {
    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        match *self {
            Coefficients::Single(c) => c[j],
            Coefficients::Blend { a, b, wa, wb } => wa * a[j] + wb * b[j],
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            Coefficients::Single(c) => c.len(),
            Coefficients::Blend { a, .. } => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A finite orthonormal family of divergence-free Stokes eigenfunctions.
///
/// Tensor pairings use the convention `M : ∇η = Σ_il M_il ∂_i η_l`, under
/// which `(a⊗b) : ∇η = Σ a_i b_l ∂_i η_l`.
pub trait SolenoidalBasis: Send + Sync + fmt::Debug {
    fn domain(&self) -> Domain;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Stokes eigenvalue of mode `j`.
    fn eigenvalue(&self, j: usize) -> f64;
    /// Smallest per-axis quadrature order integrating products of two modes exactly.
    fn min_quadrature_order(&self) -> usize;
    fn default_quadrature_order(&self) -> usize;
    fn quadrature(&self, order: usize) -> Quadrature;
    /// `sup_x |∇η_j(x)|_F`.
    fn gradient_bound(&self, j: usize) -> f64;

    fn mode_values(&self, x: Vec3, out: &mut [Vec3]);
    fn evaluate(&self, c: Coefficients<'_>, x: Vec3) -> Vec3;
    fn evaluate_with_gradient(&self, c: Coefficients<'_>, x: Vec3) -> (Vec3, Mat3);
    /// `out_j += v · η_j(x)`
    fn accumulate_projection(&self, x: Vec3, v: Vec3, out: &mut [f64]);
    /// `out_j += M : ∇η_j(x)`
    fn accumulate_pairing(&self, x: Vec3, m: &Mat3, out: &mut [f64]);
}

#[derive(Debug, Clone)]
struct WaveGroup {
    k: [i32; 3],
    kphys: Vec3,
    start: usize,
    end: usize,
}

/// Real trigonometric divergence-free basis on the periodic cell.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    domain: Domain,
    kmax: u32,
    modes: Vec<BasisMode>,
    amplitudes: Vec<Vec3>,
    groups: Vec<WaveGroup>,
}

type AxisTable = [[(f64, f64); MAX_KMAX as usize + 1]; 3];

impl FourierBasis {
    pub fn new(dim: usize, kmax: u32) -> Result<Self, BasisError> {
        let domain = Domain::periodic(dim)?;
        Self::from_modes(domain, enumerate_modes_in(&domain, kmax)?)
    }

    /// Basis made of an arbitrary subset of modes. Modes sharing a wavevector
    /// should be contiguous for best performance.
    pub fn from_modes(domain: Domain, modes: Vec<BasisMode>) -> Result<Self, BasisError> {
        if modes.is_empty() {
            return Err(BasisError::Empty);
        }
        let kmax = modes
            .iter()
            .flat_map(|m| m.wavevector.iter().map(|c| c.unsigned_abs()))
            .max()
            .unwrap_or(0);
        if kmax == 0 || kmax > MAX_KMAX {
            return Err(BasisError::InvalidKmax(kmax));
        }
        let scale = domain.base_wavenumber();
        let mut groups: Vec<WaveGroup> = Vec::new();
        for (j, m) in modes.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.k == m.wavevector => g.end = j + 1,
                _ => groups.push(WaveGroup {
                    k: m.wavevector,
                    kphys: [
                        scale * m.wavevector[0] as f64,
                        scale * m.wavevector[1] as f64,
                        scale * m.wavevector[2] as f64,
                    ],
                    start: j,
                    end: j + 1,
                }),
            }
        }
        let amplitudes = modes.iter().map(BasisMode::amplitude).collect();
        Ok(Self {
            domain,
            kmax,
            modes,
            amplitudes,
            groups,
        })
    }

    pub fn kmax(&self) -> u32 {
        self.kmax
    }

    pub fn modes(&self) -> &[BasisMode] {
        &self.modes
    }

    pub fn into_shared(self) -> Arc<dyn SolenoidalBasis> {
        Arc::new(self)
    }

    fn axis_table(&self, x: Vec3) -> AxisTable {
        let mut t = [[(1.0, 0.0); MAX_KMAX as usize + 1]; 3];
        let scale = self.domain.base_wavenumber();
        for (a, row) in t.iter_mut().enumerate().take(self.domain.dim) {
            let (s1, c1) = (scale * x[a]).sin_cos();
            for m in 1..=self.kmax as usize {
                let (c, s) = row[m - 1];
                row[m] = (c * c1 - s * s1, s * c1 + c * s1);
            }
        }
        t
    }

    /// `(cos k·x, sin k·x)` for one wavevector.
    #[inline]
    fn phase_of(&self, table: &AxisTable, k: [i32; 3]) -> (f64, f64) {
        let mut c = 1.0;
        let mut s = 0.0;
        for a in 0..self.domain.dim {
            let ka = k[a];
            if ka == 0 {
                continue;
            }
            let (ca, mut sa) = table[a][ka.unsigned_abs() as usize];
            if ka < 0 {
                sa = -sa;
            }
            let nc = c * ca - s * sa;
            s = s * ca + c * sa;
            c = nc;
        }
        (c, s)
    }

    /// Calls `f(j, φ_j, φ'_j, group)` for every mode at `x`, where `φ_j` is the
    /// trigonometric factor and `φ'_j` its derivative with respect to `k·x`.
    #[inline]
    fn for_each_group<F: FnMut(&WaveGroup, f64, f64)>(&self, x: Vec3, mut f: F) {
        let table = self.axis_table(x);
        for g in &self.groups {
            let (c, s) = self.phase_of(&table, g.k);
            f(g, c, s);
        }
    }

    #[inline]
    fn factors(&self, j: usize, c: f64, s: f64) -> (f64, f64) {
        match self.modes[j].phase {
            Phase::Cosine => (c, -s),
            Phase::Sine => (s, c),
        }
    }
}

impl SolenoidalBasis for FourierBasis {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn len(&self) -> usize {
        self.modes.len()
    }

    fn eigenvalue(&self, j: usize) -> f64 {
        let k2 = self.modes[j].wavevector_sq() as f64;
        k2 * self.domain.base_wavenumber().powi(2)
    }

    fn min_quadrature_order(&self) -> usize {
        2 * self.kmax as usize + 1
    }

    fn default_quadrature_order(&self) -> usize {
        4 * self.kmax as usize
    }

    fn quadrature(&self, order: usize) -> Quadrature {
        Quadrature::uniform(&self.domain, order)
    }

    fn gradient_bound(&self, j: usize) -> f64 {
        let m = &self.modes[j];
        m.normalization * geom::norm(m.direction) * self.eigenvalue(j).sqrt()
    }

    fn mode_values(&self, x: Vec3, out: &mut [Vec3]) {
        self.for_each_group(x, |g, c, s| {
            for j in g.start..g.end {
                let (phi, _) = self.factors(j, c, s);
                out[j] = geom::scale(self.amplitudes[j], phi);
            }
        });
    }

    fn evaluate(&self, coef: Coefficients<'_>, x: Vec3) -> Vec3 {
        let mut v = geom::ZERO;
        self.for_each_group(x, |g, c, s| {
            for j in g.start..g.end {
                let (phi, _) = self.factors(j, c, s);
                v = geom::axpy(v, coef.get(j) * phi, self.amplitudes[j]);
            }
        });
        v
    }

    fn evaluate_with_gradient(&self, coef: Coefficients<'_>, x: Vec3) -> (Vec3, Mat3) {
        let mut v = geom::ZERO;
        let mut grad = geom::ZERO_MAT;
        self.for_each_group(x, |g, c, s| {
            let mut a = geom::ZERO;
            for j in g.start..g.end {
                let (phi, dphi) = self.factors(j, c, s);
                let cj = coef.get(j);
                v = geom::axpy(v, cj * phi, self.amplitudes[j]);
                a = geom::axpy(a, cj * dphi, self.amplitudes[j]);
            }
            for (i, row) in grad.iter_mut().enumerate() {
                for (l, entry) in row.iter_mut().enumerate() {
                    *entry += a[i] * g.kphys[l];
                }
            }
        });
        (v, grad)
    }

    fn accumulate_projection(&self, x: Vec3, v: Vec3, out: &mut [f64]) {
        self.for_each_group(x, |g, c, s| {
            for j in g.start..g.end {
                let (phi, _) = self.factors(j, c, s);
                out[j] += phi * geom::dot(self.amplitudes[j], v);
            }
        });
    }

    fn accumulate_pairing(&self, x: Vec3, m: &Mat3, out: &mut [f64]) {
        self.for_each_group(x, |g, c, s| {
            // Σ_il M_il k_i p_l = (Mᵀ k) · p
            let k = g.kphys;
            let w = [
                m[0][0] * k[0] + m[1][0] * k[1] + m[2][0] * k[2],
                m[0][1] * k[0] + m[1][1] * k[1] + m[2][1] * k[2],
                m[0][2] * k[0] + m[1][2] * k[1] + m[2][2] * k[2],
            ];
            for j in g.start..g.end {
                let (_, dphi) = self.factors(j, c, s);
                out[j] += dphi * geom::dot(w, self.amplitudes[j]);
            }
        });
    }
}

/// A vector field in the span of a basis (velocity or magnetic field).
#[derive(Clone)]
pub struct SpectralField {
    basis: Arc<dyn SolenoidalBasis>,
    pub coefficients: Vec<f64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("modes", &self.basis.len())
            .field("coefficients", &self.coefficients)
            .finish()
    }
}

impl SpectralField {
    pub fn zeros(basis: Arc<dyn SolenoidalBasis>) -> Self {
        let n = basis.len();
        Self {
            basis,
            coefficients: vec![0.0; n],
        }
    }

    pub fn new(basis: Arc<dyn SolenoidalBasis>, coefficients: Vec<f64>) -> Result<Self, BasisError> {
        if coefficients.len() != basis.len() {
            return Err(BasisError::LengthMismatch {
                expected: basis.len(),
                got: coefficients.len(),
            });
        }
        Ok(Self { basis, coefficients })
    }

    /// Unit coefficient on mode `j`.
    pub fn unit(basis: Arc<dyn SolenoidalBasis>, j: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coefficients[j] = 1.0;
        f
    }

    pub fn basis(&self) -> &Arc<dyn SolenoidalBasis> {
        &self.basis
    }

    pub fn domain(&self) -> Domain {
        self.basis.domain()
    }

    pub fn dim(&self) -> usize {
        self.basis.domain().dim
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn evaluate(&self, x: Vec3) -> Vec3 {
        self.basis
            .evaluate(Coefficients::Single(&self.coefficients), self.domain().wrap(x))
    }

    pub fn evaluate_gradient(&self, x: Vec3) -> Mat3 {
        self.evaluate_with_gradient(x).1
    }

    pub fn evaluate_with_gradient(&self, x: Vec3) -> (Vec3, Mat3) {
        self.basis
            .evaluate_with_gradient(Coefficients::Single(&self.coefficients), self.domain().wrap(x))
    }

    /// `L²` norm; equals the Euclidean coefficient norm by orthonormality.
    pub fn norm(&self) -> f64 {
        geom::l2(&self.coefficients)
    }

    /// `‖∇·‖²_{L²} = Σ λ_j c_j²`.
    pub fn gradient_norm_sq(&self) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(j, c)| self.basis.eigenvalue(j) * c * c)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients.iter().all(|c| c.is_finite())
    }
}

/// Result of an `L²` projection onto a basis.
#[derive(Debug, Clone)]
pub struct Projection {
    pub field: SpectralField,
    /// Set when the quadrature order is below the basis resolution; the
    /// projection is still returned.
    pub underresolved: bool,
}

/// `c_j = ∫ sampler · η_j dx` by the uniform rule of the given order.
pub fn project_l2<F>(sampler: F, basis: &Arc<dyn SolenoidalBasis>, order: usize) -> Projection
where
    F: Fn(Vec3) -> Vec3,
{
    let underresolved = order < basis.min_quadrature_order();
    if underresolved {
        log::warn!(
            "projection quadrature order {} below basis resolution {}",
            order,
            basis.min_quadrature_order()
        );
    }
    let quad = basis.quadrature(order);
    let mut c = vec![0.0; basis.len()];
    for &x in &quad.points {
        let v = geom::scale(sampler(x), quad.weight);
        basis.accumulate_projection(x, v, &mut c);
    }
    Projection {
        field: SpectralField {
            basis: basis.clone(),
            coefficients: c,
        },
        underresolved,
    }
}

/// Quadrature Gram matrix `G_ij = ∫ η_i · η_j dx` (row-major rows).
pub fn gram_matrix(basis: &dyn SolenoidalBasis, order: usize) -> Vec<Vec<f64>> {
    let n = basis.len();
    let quad = basis.quadrature(order);
    let mut g = vec![vec![0.0; n]; n];
    let mut values = vec![geom::ZERO; n];
    for &x in &quad.points {
        basis.mode_values(x, &mut values);
        for i in 0..n {
            for j in 0..n {
                g[i][j] += quad.weight * geom::dot(values[i], values[j]);
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shared(dim: usize, kmax: u32) -> Arc<dyn SolenoidalBasis> {
        FourierBasis::new(dim, kmax).unwrap().into_shared()
    }

    #[test]
    fn kmax_zero_is_rejected() {
        assert_eq!(enumerate_modes(2, 0), Err(BasisError::InvalidKmax(0)));
        assert_eq!(enumerate_modes(4, 1), Err(BasisError::InvalidDimension(4)));
    }

    /// Brute-force count: every integer vector in the cube, deduplicated by ±k.
    fn brute_force_count(dim: usize, kmax: i32) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        let r = -kmax..=kmax;
        for a in r.clone() {
            for b in r.clone() {
                for c in if dim == 3 { r.clone() } else { 0..=0 } {
                    if (a, b, c) == (0, 0, 0) {
                        continue;
                    }
                    let neg = (-a, -b, -c);
                    if !seen.contains(&neg) {
                        seen.insert((a, b, c));
                    }
                }
            }
        }
        seen.len() * 2 * (dim - 1)
    }

    #[test]
    fn mode_counts_match_enumeration_oracle() {
        assert_eq!(brute_force_count(2, 1), 8);
        assert_eq!(brute_force_count(3, 1), 52);
        assert_eq!(enumerate_modes(2, 1).unwrap().len(), 8);
        assert_eq!(enumerate_modes(3, 1).unwrap().len(), 52);
        for kmax in 1..=3 {
            assert_eq!(
                enumerate_modes(2, kmax).unwrap().len(),
                brute_force_count(2, kmax as i32)
            );
            assert_eq!(
                enumerate_modes(3, kmax).unwrap().len(),
                brute_force_count(3, kmax as i32)
            );
        }
    }

    #[test]
    fn modes_are_ordered_and_orthogonal_to_wavevector() {
        for dim in [2, 3] {
            let modes = enumerate_modes(dim, 3).unwrap();
            for w in modes.windows(2) {
                assert!(w[0].wavevector_sq() <= w[1].wavevector_sq());
            }
            for m in &modes {
                let k = [m.wavevector[0] as f64, m.wavevector[1] as f64, m.wavevector[2] as f64];
                assert_eq!(geom::dot(k, m.direction), 0.0);
                assert!(m.normalization > 0.0);
                assert!(in_half_space(m.wavevector));
            }
        }
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let f = SpectralField::zeros(shared(2, 2));
        assert_eq!(f.evaluate([1.0, 2.0, 0.0]), geom::ZERO);
        assert_eq!(f.evaluate_gradient([1.0, 2.0, 0.0]), geom::ZERO_MAT);
    }

    #[test]
    fn single_cosine_mode_at_origin() {
        let basis = FourierBasis::new(2, 1).unwrap();
        let j = basis
            .modes()
            .iter()
            .position(|m| m.wavevector == [1, 0, 0] && m.phase == Phase::Cosine)
            .unwrap();
        let expected = basis.modes()[j].amplitude();
        let f = SpectralField::unit(basis.into_shared(), j);
        let v = f.evaluate([0.0, 0.0, 0.0]);
        for i in 0..3 {
            assert_abs_diff_eq!(v[i], expected[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let basis = shared(3, 2);
        let n = basis.len();
        let coeffs: Vec<f64> = (0..n).map(|j| ((j * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let f = SpectralField::new(basis, coeffs).unwrap();
        let x = [0.7, 2.1, 4.4];
        let g = f.evaluate_gradient(x);
        let h = 1e-5;
        for l in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            let (vp, vm) = (f.evaluate(xp), f.evaluate(xm));
            for i in 0..3 {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - g[i][l]).abs() <= 1e-8 * g[i][l].abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_mode_gram_is_one() {
        let domain = Domain::periodic(2).unwrap();
        let modes = enumerate_modes(2, 1).unwrap();
        let b = FourierBasis::from_modes(domain, vec![modes[3].clone()]).unwrap();
        let g = gram_matrix(&b, 8);
        assert_eq!(g.len(), 1);
        assert_abs_diff_eq!(g[0][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_is_identity_in_2d_kmax1() {
        let b = FourierBasis::new(2, 1).unwrap();
        let g = gram_matrix(&b, 8);
        for (i, row) in g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() <= 1e-10, "G[{i}][{j}] = {v}");
                assert_eq!(v, g[j][i]);
            }
        }
    }

    #[test]
    fn eigenvalues_are_nondecreasing() {
        let b = FourierBasis::new(3, 2).unwrap();
        let ev: Vec<f64> = (0..b.len()).map(|j| b.eigenvalue(j)).collect();
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_recovers_basis_mode() {
        let basis = shared(2, 2);
        let target = SpectralField::unit(basis.clone(), 3);
        let p = project_l2(|x| target.evaluate(x), &basis, 8);
        assert!(!p.underresolved);
        for (j, c) in p.field.coefficients.iter().enumerate() {
            let e = if j == 3 { 1.0 } else { 0.0 };
            assert!((c - e).abs() <= 1e-10);
        }
        let zero = project_l2(|_| geom::ZERO, &basis, 8);
        assert!(zero.field.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn coarse_projection_is_flagged() {
        let basis = shared(2, 4);
        assert!(project_l2(|_| geom::ZERO, &basis, 4).underresolved);
    }

    #[test]
    fn taylor_green_projects_onto_two_modes() {
        let basis = FourierBasis::new(2, 2).unwrap();
        let modes = basis.modes().to_vec();
        let basis = basis.into_shared();
        let tg = |x: Vec3| [x[0].sin() * x[1].cos(), -x[0].cos() * x[1].sin(), 0.0];
        let p = project_l2(tg, &basis, 8).field;
        // sin x cos y = ½[sin(x+y) + sin(x−y)]: with η = (1/2π)(−1,1) sin(x+y)
        // and η = (1/2π)(1,1) sin(x−y) the coefficients are −π and +π.
        for (j, m) in modes.iter().enumerate() {
            let expected = match (m.wavevector, m.phase) {
                ([1, 1, 0], Phase::Sine) => -PI,
                ([1, -1, 0], Phase::Sine) => PI,
                _ => 0.0,
            };
            assert!((p.coefficients[j] - expected).abs() <= 1e-10, "mode {j}");
        }
        let v = p.evaluate([PI / 2.0, 0.0, 0.0]);
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn wrap_maps_into_cell() {
        let d = Domain::periodic(2).unwrap();
        let y = d.wrap([-0.5, 7.0, 0.0]);
        assert!(y[0] >= 0.0 && y[0] < d.period);
        assert!(y[1] >= 0.0 && y[1] < d.period);
        assert_eq!(y[2], 0.0);
    }
}

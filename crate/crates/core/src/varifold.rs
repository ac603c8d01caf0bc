//! Atomic varifolds lifted from interface meshes.
//!
//! A varifold here is a finite list of weighted `(point, unit normal)` atoms.
//! Lifting a mesh puts one atom at each element quadrature node carrying the
//! element normal and measure, so the lift's mass, first variation and
//! coupling with `∇χ` reuse exactly the numbers the interface module uses.
//!
//! Sign convention: normals are outward from the `χ = 1` phase, so
//! `−∇χ = n dH^{d−1}` and the coupling identity
//! `∫ s·ψ dV = −∫ ψ d∇χ` compares `Σ w s·ψ` against `Σ |e| n·ψ`.

use std::io::{self, Write};

use thiserror::Error;

use crate::geom::{self, Mat3, Vec3};
use crate::interface::{InterfaceError, InterfaceMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarifoldError {
    #[error("atom {index}: direction is not a unit vector (|s| = {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("atom {index}: weight must be positive and finite, got {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error(transparent)]
    Mesh(#[from] InterfaceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: Vec3,
    pub s: Vec3,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Varifold {
    pub dim: usize,
    atoms: Vec<Atom>,
}

impl Varifold {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self, VarifoldError> {
        for (index, a) in atoms.iter().enumerate() {
            let norm = geom::norm(a.s);
            if !((norm - 1.0).abs() <= 1e-12) {
                return Err(VarifoldError::NotUnit { index, norm });
            }
            if !(a.w.is_finite() && a.w > 0.0) {
                return Err(VarifoldError::BadWeight { index, weight: a.w });
            }
        }
        Ok(Self { dim, atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `‖V‖ = Σ w_i`
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// Same atoms with every weight multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self, VarifoldError> {
        let atoms = self.atoms.iter().map(|a| Atom { w: a.w * factor, ..*a }).collect();
        Self::new(self.dim, atoms)
    }
}

/// One atom per element: centroid, outward normal, element measure.
pub fn lift(mesh: &InterfaceMesh) -> Result<Varifold, VarifoldError> {
    mesh.check_quality()?;
    let atoms = mesh
        .geometries()
        .into_iter()
        .map(|g| Atom {
            x: g.centroid,
            s: g.normal,
            w: g.measure,
        })
        .collect();
    Varifold::new(mesh.dim, atoms)
}

/// `⟨δV, φ⟩ = Σ w_i (I − s_i⊗s_i) : ∇φ(x_i)`; `phi` returns `(φ(x), ∇φ(x))`.
pub fn first_variation<F>(v: &Varifold, phi: F) -> f64
where
    F: Fn(Vec3) -> (Vec3, Mat3),
{
    let mut total = 0.0;
    for a in &v.atoms {
        let p = geom::tangential_projector(v.dim, a.s);
        total += a.w * geom::contract(&p, &phi(a.x).1);
    }
    total
}

/// `|Σ w_i s_i·ψ(x_i) − Σ_e |e| n_e·ψ(c_e)|`, the defect in
/// `∫ s·ψ dV = −∫ ψ d∇χ`.
pub fn coupling_residual<F>(v: &Varifold, mesh: &InterfaceMesh, psi: F) -> f64
where
    F: Fn(Vec3) -> Vec3,
{
    let lhs: f64 = v.atoms.iter().map(|a| a.w * geom::dot(a.s, psi(a.x))).sum();
    let rhs: f64 = (0..mesh.element_count())
        .map(|e| {
            let g = mesh.element_geometry(e);
            g.measure * geom::dot(g.normal, psi(g.centroid))
        })
        .sum();
    (lhs - rhs).abs()
}

/// `varifold_t{time:.6f}.csv`
pub fn dump_filename(t: f64) -> String {
    format!("varifold_t{:.6}.csv", t)
}

/// CSV with columns `x1..xd, s1..sd, w`.
pub fn write_csv<W: Write>(v: &Varifold, mut w: W) -> io::Result<()> {
    let d = v.dim;
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend((1..=d).map(|i| format!("s{i}")));
    header.push("w".into());
    writeln!(w, "{}", header.join(","))?;
    for a in &v.atoms {
        let mut row: Vec<String> = a.x[..d].iter().map(|&c| geom::fmt12(c)).collect();
        row.extend(a.s[..d].iter().map(|&c| geom::fmt12(c)));
        row.push(geom::fmt12(a.w));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

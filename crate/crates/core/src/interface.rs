//! The phase interface `Γ(t)` and the indicator `χ(t)`.
//!
//! The initial region is analytic (disk, ball, ellipse, ellipsoid). Its
//! boundary is discretized once into a closed Lagrangian mesh whose vertices
//! ride the flow map. The indicator at later times is `χ₀(X_t⁻¹(x))`, obtained
//! by back-tracing to time 0; a geometric point-in-mesh test is kept as an
//! independent cross-check.
//!
//! Normals are outward from the `χ = 1` phase. 2D meshes are counter-clockwise
//! polygons; 3D meshes are triangle surfaces with counter-clockwise faces seen
//! from outside.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::basis::Domain;
use crate::flowmap::{self, FlowError, VelocitySampler};
use crate::geom::{self, Mat3, Vec3};

/// Elements with measure below this are treated as degenerate.
pub const MIN_ELEMENT_MEASURE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterfaceError {
    #[error("initial phase does not fit inside the cell with the required margin: {0}")]
    OutsideCell(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid mesh resolution {resolution} for dimension {dim}")]
    InvalidResolution { resolution: usize, dim: usize },
    #[error("mesh is not closed: {0}")]
    NotClosed(String),
    #[error("degenerate element {element} (measure {measure:e})")]
    Degenerate { element: usize, measure: f64 },
    #[error("mesh orientation is inward (signed volume {volume:e})")]
    Inverted { volume: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Axis-aligned ellipse/ellipsoid describing `Ω₀⁺`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialPhase {
    pub dim: usize,
    pub center: Vec3,
    pub semi_axes: Vec3,
}

impl InitialPhase {
    pub fn disk(center: [f64; 2], radius: f64) -> Self {
        Self::ellipse(center, [radius, radius])
    }

    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2]) -> Self {
        Self {
            dim: 2,
            center: [center[0], center[1], 0.0],
            semi_axes: [semi_axes[0], semi_axes[1], 0.0],
        }
    }

    pub fn ball(center: Vec3, radius: f64) -> Self {
        Self::ellipsoid(center, [radius; 3])
    }

    pub fn ellipsoid(center: Vec3, semi_axes: Vec3) -> Self {
        Self {
            dim: 3,
            center,
            semi_axes,
        }
    }

    /// The closure must sit inside the open cell with a margin of at least a
    /// tenth of the largest semi-axis.
    pub fn validate(&self, domain: &Domain) -> Result<(), InterfaceError> {
        if self.dim != domain.dim {
            return Err(InterfaceError::InvalidShape(format!(
                "phase dimension {} does not match domain dimension {}",
                self.dim, domain.dim
            )));
        }
        let axes = &self.semi_axes[..self.dim];
        if axes.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(InterfaceError::InvalidShape(format!(
                "semi-axes must be positive, got {:?}",
                axes
            )));
        }
        let margin = axes.iter().cloned().fold(0.0, f64::max) / 10.0;
        for i in 0..self.dim {
            let lo = self.center[i] - self.semi_axes[i];
            let hi = self.center[i] + self.semi_axes[i];
            if !(lo >= margin && hi <= domain.period - margin) {
                return Err(InterfaceError::OutsideCell(format!(
                    "axis {i}: extent [{lo}, {hi}] needs margin {margin} inside [0, {}]",
                    domain.period
                )));
            }
        }
        Ok(())
    }

    /// Membership in the open region.
    pub fn contains(&self, x: Vec3) -> bool {
        let mut s = 0.0;
        for i in 0..self.dim {
            let r = (x[i] - self.center[i]) / self.semi_axes[i];
            s += r * r;
        }
        s < 1.0
    }

    pub fn volume(&self) -> f64 {
        let a = self.semi_axes;
        if self.dim == 2 {
            PI * a[0] * a[1]
        } else {
            4.0 / 3.0 * PI * a[0] * a[1] * a[2]
        }
    }
}

/// Phase-dependent viscosity `ν(χ) = ν⁺χ + ν⁻(1 − χ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseViscosity {
    pub nu_plus: f64,
    pub nu_minus: f64,
}

impl PhaseViscosity {
    pub fn at(&self, inside: bool) -> f64 {
        if inside {
            self.nu_plus
        } else {
            self.nu_minus
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.nu_plus == self.nu_minus
    }

    pub fn max(&self) -> f64 {
        self.nu_plus.max(self.nu_minus)
    }

    pub fn min(&self) -> f64 {
        self.nu_plus.min(self.nu_minus)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    /// Oriented segments `a → b`.
    Polygon(Vec<[usize; 2]>),
    /// Oriented triangles.
    Triangles(Vec<[usize; 3]>),
}

/// Closed oriented Lagrangian mesh of the interface at time `t`.
///
/// Vertices live on the unwrapped periodic lift, so the mesh stays
/// geometrically connected even if it drifts across a cell face.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceMesh {
    pub dim: usize,
    pub vertices: Vec<Vec3>,
    pub topology: Topology,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub centroid: Vec3,
    /// Unit outward normal (NaN for degenerate elements).
    pub normal: Vec3,
    /// Length (2D) or area (3D).
    pub measure: f64,
}

impl InterfaceMesh {
    pub fn element_count(&self) -> usize {
        match &self.topology {
            Topology::Polygon(s) => s.len(),
            Topology::Triangles(t) => t.len(),
        }
    }

    pub fn element_geometry(&self, e: usize) -> ElementGeometry {
        match &self.topology {
            Topology::Polygon(segs) => {
                let [a, b] = segs[e];
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                let t = geom::sub(pb, pa);
                let measure = geom::norm(t);
                ElementGeometry {
                    centroid: geom::scale(geom::add(pa, pb), 0.5),
                    normal: [t[1] / measure, -t[0] / measure, 0.0],
                    measure,
                }
            }
            Topology::Triangles(tris) => {
                let [a, b, c] = tris[e];
                let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                let n = geom::cross(geom::sub(pb, pa), geom::sub(pc, pa));
                let len = geom::norm(n);
                ElementGeometry {
                    centroid: geom::scale(geom::add(geom::add(pa, pb), pc), 1.0 / 3.0),
                    normal: geom::scale(n, 1.0 / len),
                    measure: 0.5 * len,
                }
            }
        }
    }

    pub fn geometries(&self) -> Vec<ElementGeometry> {
        (0..self.element_count()).map(|e| self.element_geometry(e)).collect()
    }

    /// First element whose measure is below [`MIN_ELEMENT_MEASURE`].
    pub fn check_quality(&self) -> Result<(), InterfaceError> {
        for e in 0..self.element_count() {
            let m = self.element_geometry(e).measure;
            if !(m >= MIN_ELEMENT_MEASURE) {
                return Err(InterfaceError::Degenerate { element: e, measure: m });
            }
        }
        Ok(())
    }

    fn check_closed(&self) -> Result<(), InterfaceError> {
        match &self.topology {
            Topology::Polygon(segs) => {
                let n = self.vertices.len();
                let mut out_deg = vec![0usize; n];
                let mut in_deg = vec![0usize; n];
                for &[a, b] in segs {
                    if a >= n || b >= n || a == b {
                        return Err(InterfaceError::NotClosed(format!("bad segment [{a}, {b}]")));
                    }
                    out_deg[a] += 1;
                    in_deg[b] += 1;
                }
                for v in 0..n {
                    if out_deg[v] != 1 || in_deg[v] != 1 {
                        return Err(InterfaceError::NotClosed(format!(
                            "vertex {v} has {} outgoing and {} incoming segments",
                            out_deg[v], in_deg[v]
                        )));
                    }
                }
                Ok(())
            }
            Topology::Triangles(tris) => {
                let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
                for &[a, b, c] in tris {
                    for e in [(a, b), (b, c), (c, a)] {
                        *edges.entry(e).or_default() += 1;
                    }
                }
                for (&(a, b), &count) in &edges {
                    if count != 1 {
                        return Err(InterfaceError::NotClosed(format!(
                            "directed edge ({a}, {b}) used {count} times"
                        )));
                    }
                    if edges.get(&(b, a)) != Some(&1) {
                        return Err(InterfaceError::NotClosed(format!(
                            "edge ({a}, {b}) has no oppositely oriented neighbour"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Closedness, element quality and outward orientation.
    pub fn validate(&self) -> Result<(), InterfaceError> {
        self.check_closed()?;
        self.check_quality()?;
        let volume = self.signed_volume();
        if !(volume > 0.0) {
            return Err(InterfaceError::Inverted { volume });
        }
        Ok(())
    }

    /// Divergence-theorem volume (area in 2D); positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        match &self.topology {
            Topology::Polygon(segs) => {
                0.5 * segs
                    .iter()
                    .map(|&[a, b]| {
                        let (p, q) = (self.vertices[a], self.vertices[b]);
                        p[0] * q[1] - q[0] * p[1]
                    })
                    .sum::<f64>()
            }
            Topology::Triangles(tris) => {
                tris.iter()
                    .map(|&[a, b, c]| geom::dot(self.vertices[a], geom::cross(self.vertices[b], self.vertices[c])))
                    .sum::<f64>()
                    / 6.0
            }
        }
    }

    pub fn max_edge_length(&self) -> f64 {
        let mut m: f64 = 0.0;
        match &self.topology {
            Topology::Polygon(segs) => {
                for &[a, b] in segs {
                    m = m.max(geom::dist(self.vertices[a], self.vertices[b]));
                }
            }
            Topology::Triangles(tris) => {
                for &[a, b, c] in tris {
                    for (p, q) in [(a, b), (b, c), (c, a)] {
                        m = m.max(geom::dist(self.vertices[p], self.vertices[q]));
                    }
                }
            }
        }
        m
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Vertices in polygon order starting from the first segment (2D only).
    fn polygon_order(&self) -> Vec<usize> {
        let Topology::Polygon(segs) = &self.topology else {
            return Vec::new();
        };
        let mut next = vec![usize::MAX; self.vertices.len()];
        for &[a, b] in segs {
            next[a] = b;
        }
        let Some(&[start, _]) = segs.first() else {
            return Vec::new();
        };
        let mut order = vec![start];
        let mut v = next[start];
        while v != start && v != usize::MAX && order.len() <= self.vertices.len() {
            order.push(v);
            v = next[v];
        }
        order
    }
}

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let v = v.into_iter().map(|p| geom::scale(p, 1.0 / geom::norm(p))).collect();
    (v, f)
}

/// Unit icosphere after `level` midpoint subdivisions.
pub fn icosphere(level: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let (mut verts, mut faces) = icosahedron();
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = geom::scale(geom::add(verts[a], verts[b]), 0.5);
                verts.push(geom::scale(m, 1.0 / geom::norm(m)));
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Discretize `∂Ω₀⁺`. In 2D `resolution` is the vertex count (≥ 8); in 3D it
/// is the icosphere subdivision level (1..=7). Vertices lie exactly on the
/// analytic boundary.
pub fn mesh_initial(phase: &InitialPhase, resolution: usize) -> Result<InterfaceMesh, InterfaceError> {
    phase.validate(&Domain::periodic(phase.dim).map_err(|e| InterfaceError::InvalidShape(e.to_string()))?)?;
    mesh_initial_unchecked(phase, resolution)
}

/// As [`mesh_initial`] but without the cell-containment check (the phase is
/// still required to have positive semi-axes).
pub fn mesh_initial_unchecked(phase: &InitialPhase, resolution: usize) -> Result<InterfaceMesh, InterfaceError> {
    let c = phase.center;
    let a = phase.semi_axes;
    match phase.dim {
        2 => {
            if resolution < 8 {
                return Err(InterfaceError::InvalidResolution { resolution, dim: 2 });
            }
            let vertices = (0..resolution)
                .map(|i| {
                    let th = 2.0 * PI * i as f64 / resolution as f64;
                    [c[0] + a[0] * th.cos(), c[1] + a[1] * th.sin(), 0.0]
                })
                .collect();
            let segs = (0..resolution).map(|i| [i, (i + 1) % resolution]).collect();
            Ok(InterfaceMesh {
                dim: 2,
                vertices,
                topology: Topology::Polygon(segs),
                t: 0.0,
            })
        }
        3 => {
            if !(1..=7).contains(&resolution) {
                return Err(InterfaceError::InvalidResolution { resolution, dim: 3 });
            }
            let (unit, faces) = icosphere(resolution);
            let vertices = unit
                .into_iter()
                .map(|p| [c[0] + a[0] * p[0], c[1] + a[1] * p[1], c[2] + a[2] * p[2]])
                .collect();
            Ok(InterfaceMesh {
                dim: 3,
                vertices,
                topology: Topology::Triangles(faces),
                t: 0.0,
            })
        }
        d => Err(InterfaceError::InvalidShape(format!("dimension {d}"))),
    }
}

/// Transport the vertices with the flow map to `t1`; connectivity is kept.
pub fn advect(mesh: &InterfaceMesh, u: &dyn VelocitySampler, t1: f64, h: f64) -> Result<InterfaceMesh, InterfaceError> {
    let vertices = mesh
        .vertices
        .par_iter()
        .map(|&x| flowmap::flow(u, x, mesh.t, t1, h))
        .collect::<Result<Vec<_>, _>>()?;
    let out = InterfaceMesh {
        dim: mesh.dim,
        vertices,
        topology: mesh.topology.clone(),
        t: t1,
    };
    out.check_quality()?;
    Ok(out)
}

/// `χ(x, t) = χ₀(X_t⁻¹(x))`.
pub fn indicator(
    x: Vec3,
    t: f64,
    u: &dyn VelocitySampler,
    phase: &InitialPhase,
    h: f64,
) -> Result<bool, InterfaceError> {
    let y = flowmap::backtrace(x, t, u, h)?;
    Ok(phase.contains(y))
}

/// Total variation of `∇χ` for the meshed interface: total edge length (2D)
/// or total area (3D).
pub fn perimeter(mesh: &InterfaceMesh) -> f64 {
    (0..mesh.element_count())
        .map(|e| mesh.element_geometry(e).measure)
        .sum()
}

/// Per-element unit outward normals; the mesh must pass [`InterfaceMesh::validate`].
pub fn normals(mesh: &InterfaceMesh) -> Result<Vec<Vec3>, InterfaceError> {
    mesh.validate()?;
    Ok(mesh.geometries().into_iter().map(|g| g.normal).collect())
}

/// `∫ P_τ : ∇η d|∇χ|` with `P_τ = I − n⊗n`, one quadrature node per element
/// (segment midpoint / triangle centroid).
pub fn curvature_pairing<F>(mesh: &InterfaceMesh, grad_eta: F) -> f64
where
    F: Fn(Vec3) -> Mat3,
{
    let mut s = 0.0;
    for e in 0..mesh.element_count() {
        let g = mesh.element_geometry(e);
        let p = geom::tangential_projector(mesh.dim, g.normal);
        s += g.measure * geom::contract(&p, &grad_eta(g.centroid));
    }
    s
}

/// Enclosed volume (area in 2D); the mesh must be closed.
pub fn enclosed_volume(mesh: &InterfaceMesh) -> Result<f64, InterfaceError> {
    mesh.check_closed()?;
    Ok(mesh.signed_volume())
}

/// Geometric membership test by winding number (2D) or generalized winding
/// number (3D). Independent of the flow map.
pub fn contains_point(mesh: &InterfaceMesh, x: Vec3) -> bool {
    winding_number(mesh, x).abs() > 0.5
}

pub fn winding_number(mesh: &InterfaceMesh, x: Vec3) -> f64 {
    match &mesh.topology {
        Topology::Polygon(segs) => {
            let mut total = 0.0;
            for &[a, b] in segs {
                let p = geom::sub(mesh.vertices[a], x);
                let q = geom::sub(mesh.vertices[b], x);
                total += (p[0] * q[1] - p[1] * q[0]).atan2(p[0] * q[0] + p[1] * q[1]);
            }
            total / (2.0 * PI)
        }
        Topology::Triangles(tris) => {
            let mut total = 0.0;
            for &[i, j, k] in tris {
                let a = geom::sub(mesh.vertices[i], x);
                let b = geom::sub(mesh.vertices[j], x);
                let c = geom::sub(mesh.vertices[k], x);
                let (la, lb, lc) = (geom::norm(a), geom::norm(b), geom::norm(c));
                let num = geom::dot(a, geom::cross(b, c));
                let den = la * lb * lc + geom::dot(a, b) * lc + geom::dot(b, c) * la + geom::dot(c, a) * lb;
                total += 2.0 * num.atan2(den);
            }
            total / (4.0 * PI)
        }
    }
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = geom::sub(b, a);
    let len2 = geom::dot(ab, ab);
    let s = if len2 > 0.0 {
        (geom::dot(geom::sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    geom::dist(p, geom::axpy(a, s, ab))
}

/// Closest-point distance from `p` to triangle `abc`.
fn triangle_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = geom::sub(b, a);
    let ac = geom::sub(c, a);
    let ap = geom::sub(p, a);
    let d1 = geom::dot(ab, ap);
    let d2 = geom::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return geom::dist(p, a);
    }
    let bp = geom::sub(p, b);
    let d3 = geom::dot(ab, bp);
    let d4 = geom::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return geom::dist(p, b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return segment_distance(p, a, b);
    }
    let cp = geom::sub(p, c);
    let d5 = geom::dot(ab, cp);
    let d6 = geom::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return geom::dist(p, c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return segment_distance(p, a, c);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return segment_distance(p, b, c);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = geom::axpy(geom::axpy(a, v, ab), w, ac);
    geom::dist(p, q)
}

/// Unsigned distance from `x` to the mesh.
pub fn distance_to_mesh(mesh: &InterfaceMesh, x: Vec3) -> f64 {
    match &mesh.topology {
        Topology::Polygon(segs) => segs
            .iter()
            .map(|&[a, b]| segment_distance(x, mesh.vertices[a], mesh.vertices[b]))
            .fold(f64::INFINITY, f64::min),
        Topology::Triangles(tris) => tris
            .iter()
            .map(|&[a, b, c]| triangle_distance(x, mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// How [`indicator_field`] evaluates `χ` at many points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndicatorMethod {
    /// Back-trace every point to time 0.
    Backtrace,
    /// Back-trace only points within `2 × max edge length` of the mesh; farther
    /// points take the winding-number answer, which agrees there.
    #[default]
    Hybrid,
}

/// `χ(t)` at a batch of points. `mesh` must be the interface at time `t`
/// (only consulted by [`IndicatorMethod::Hybrid`]).
pub fn indicator_field(
    points: &[Vec3],
    t: f64,
    u: &dyn VelocitySampler,
    phase: &InitialPhase,
    h: f64,
    mesh: &InterfaceMesh,
    method: IndicatorMethod,
) -> Result<Vec<bool>, InterfaceError> {
    let domain = u.domain();
    let band = 2.0 * mesh.max_edge_length();
    // Periodic images of the mesh are ignored by the geometric test, so it is
    // only trusted while the mesh (plus band) stays inside the cell.
    let (lo, hi) = mesh.bounding_box();
    let inside_cell = (0..domain.dim).all(|i| lo[i] - band > 0.0 && hi[i] + band < domain.period);
    let use_mesh = method == IndicatorMethod::Hybrid && inside_cell && mesh.t == t;
    points
        .par_iter()
        .map(|&x| {
            if use_mesh && distance_to_mesh(mesh, x) > band {
                Ok(contains_point(mesh, x))
            } else {
                indicator(x, t, u, phase, h)
            }
        })
        .collect()
}

/// Gronwall factor `exp(∫ sup|∇u| ds)` bounding perimeter growth, with the
/// supremum sampled on a grid at the given times (trapezoidal in time).
pub fn perimeter_growth_bound(u: &dyn VelocitySampler, times: &[f64], per_axis: usize) -> f64 {
    let sups: Vec<f64> = times
        .iter()
        .map(|&t| flowmap::gradient_sup_estimate(u, t, per_axis))
        .collect();
    let integral: f64 = times
        .windows(2)
        .zip(sups.windows(2))
        .map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0] + s[1]))
        .sum();
    integral.exp()
}

/// `interface_t{time:.6f}.{csv|obj}`
pub fn dump_filename(mesh: &InterfaceMesh) -> String {
    let ext = if mesh.dim == 2 { "csv" } else { "obj" };
    format!("interface_t{:.6}.{}", mesh.t, ext)
}

/// 2D polyline as CSV (`x,y`), closed by repeating the first vertex.
pub fn write_polyline_csv<W: Write>(mesh: &InterfaceMesh, mut w: W) -> io::Result<()> {
    writeln!(w, "x,y")?;
    let order = mesh.polygon_order();
    for &v in order.iter().chain(order.first()) {
        let p = mesh.vertices[v];
        writeln!(w, "{},{}", geom::fmt12(p[0]), geom::fmt12(p[1]))?;
    }
    Ok(())
}

/// Wavefront OBJ (vertices and 1-based faces).
pub fn write_obj<W: Write>(mesh: &InterfaceMesh, mut w: W) -> io::Result<()> {
    writeln!(w, "# interface t = {}", geom::fmt12(mesh.t))?;
    for p in &mesh.vertices {
        writeln!(w, "v {} {} {}", geom::fmt12(p[0]), geom::fmt12(p[1]), geom::fmt12(p[2]))?;
    }
    match &mesh.topology {
        Topology::Triangles(tris) => {
            for &[a, b, c] in tris {
                writeln!(w, "f {} {} {}", a + 1, b + 1, c + 1)?;
            }
        }
        Topology::Polygon(segs) => {
            for &[a, b] in segs {
                writeln!(w, "l {} {}", a + 1, b + 1)?;
            }
        }
    }
    Ok(())
}

/// Write the mesh in its dimension's format.
pub fn write_mesh<W: Write>(mesh: &InterfaceMesh, w: W) -> io::Result<()> {
    if mesh.dim == 2 {
        write_polyline_csv(mesh, w)
    } else {
        write_obj(mesh, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmap::{RigidRotation, TaylorGreen, ZeroVelocity};

    fn unit_disk() -> InitialPhase {
        InitialPhase::disk([PI, PI], 1.0)
    }

    fn unit_ball() -> InitialPhase {
        InitialPhase::ball([PI, PI, PI], 1.0)
    }

    #[test]
    fn circle_measures() {
        let m = mesh_initial(&unit_disk(), 256).unwrap();
        m.validate().unwrap();
        assert!((perimeter(&m) - 2.0 * PI).abs() <= 1e-3);
        assert!((enclosed_volume(&m).unwrap() - PI).abs() <= 1e-3);
        for v in &m.vertices {
            assert!((geom::dist(*v, [PI, PI, 0.0]) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sphere_measures() {
        let m = mesh_initial(&unit_ball(), 4).unwrap();
        m.validate().unwrap();
        // relative: the level-4 icosphere area deficit is 1.2e-3 of 4π
        assert!((perimeter(&m) - 4.0 * PI).abs() <= 1e-2 * 4.0 * PI);
        assert!((enclosed_volume(&m).unwrap() - 4.0 / 3.0 * PI).abs() <= 1e-2);
    }

    #[test]
    fn shapes_touching_the_boundary_are_rejected() {
        let touching = InitialPhase::disk([1.0, PI], 1.0);
        assert!(matches!(
            mesh_initial(&touching, 64),
            Err(InterfaceError::OutsideCell(_))
        ));
        let thin_margin = InitialPhase::disk([1.05, PI], 1.0);
        assert!(mesh_initial(&thin_margin, 64).is_err());
        assert!(matches!(
            mesh_initial(&unit_disk(), 4),
            Err(InterfaceError::InvalidResolution { .. })
        ));
    }

    #[test]
    fn circle_normals_point_outward() {
        let n = 256;
        let m = mesh_initial(&unit_disk(), n).unwrap();
        let ns = normals(&m).unwrap();
        for (e, normal) in ns.iter().enumerate() {
            assert!((geom::norm(*normal) - 1.0).abs() <= 1e-12);
            // element e spans vertex angles θ_e and θ_{e+1}
            let mid = 2.0 * PI * (e as f64 + 0.5) / n as f64;
            assert!(geom::dist(*normal, [mid.cos(), mid.sin(), 0.0]) <= 1e-12);
        }
        for v in 0..n {
            let th = 2.0 * PI * v as f64 / n as f64;
            let avg = geom::add(ns[v], ns[(v + n - 1) % n]);
            let avg = geom::scale(avg, 1.0 / geom::norm(avg));
            assert!(geom::dist(avg, [th.cos(), th.sin(), 0.0]) <= 1e-2);
            assert!(geom::dist(ns[v], [th.cos(), th.sin(), 0.0]) <= 2e-2);
        }
    }

    #[test]
    fn sphere_north_pole_normal() {
        let m = mesh_initial(&unit_ball(), 7).unwrap();
        let ns = normals(&m).unwrap();
        let geoms = m.geometries();
        let top = (0..geoms.len())
            .max_by(|&a, &b| geoms[a].centroid[2].total_cmp(&geoms[b].centroid[2]))
            .unwrap();
        assert!(geom::dist(ns[top], [0.0, 0.0, 1.0]) <= 1e-2);
    }

    #[test]
    fn flipped_orientation_is_rejected() {
        let mut m = mesh_initial(&unit_disk(), 32).unwrap();
        if let Topology::Polygon(segs) = &mut m.topology {
            for s in segs.iter_mut() {
                s.swap(0, 1);
            }
        }
        assert!(matches!(normals(&m), Err(InterfaceError::Inverted { .. })));
        let mut s = mesh_initial(&unit_ball(), 1).unwrap();
        if let Topology::Triangles(tris) = &mut s.topology {
            for t in tris.iter_mut() {
                t.swap(1, 2);
            }
        }
        assert!(matches!(normals(&s), Err(InterfaceError::Inverted { .. })));
    }

    #[test]
    fn open_mesh_is_not_closed() {
        let mut m = mesh_initial(&unit_disk(), 32).unwrap();
        if let Topology::Polygon(segs) = &mut m.topology {
            segs.pop();
        }
        assert!(matches!(enclosed_volume(&m), Err(InterfaceError::NotClosed(_))));
        let mut s = mesh_initial(&unit_ball(), 1).unwrap();
        if let Topology::Triangles(tris) = &mut s.topology {
            tris.pop();
        }
        assert!(matches!(enclosed_volume(&s), Err(InterfaceError::NotClosed(_))));
    }

    #[test]
    fn pairing_with_identity_gradient_is_scaled_perimeter() {
        let r = 0.7;
        let m = mesh_initial(&InitialPhase::disk([PI, PI], r), 128).unwrap();
        let id2 = geom::identity(2);
        assert!((curvature_pairing(&m, |_| id2) - perimeter(&m)).abs() <= 1e-12);
        let s = mesh_initial(&InitialPhase::ball([PI, PI, PI], r), 3).unwrap();
        let id3 = geom::identity(3);
        assert!((curvature_pairing(&s, |_| id3) - 2.0 * perimeter(&s)).abs() <= 1e-12);
        assert!((curvature_pairing(&s, |_| id3) - 8.0 * PI * r * r).abs() <= 1e-1);
    }

    #[test]
    fn zero_velocity_advection_is_identity() {
        let m = mesh_initial(&unit_disk(), 64).unwrap();
        let u = ZeroVelocity {
            domain: Domain::periodic(2).unwrap(),
        };
        let m1 = advect(&m, &u, 0.7, 1e-2).unwrap();
        assert_eq!(m1.vertices, m.vertices);
        assert_eq!(m1.t, 0.7);
    }

    #[test]
    fn rotation_brings_vertices_back_and_keeps_perimeter() {
        let phase = InitialPhase::disk([PI + 0.5, PI], 1.0);
        let m = mesh_initial(&phase, 128).unwrap();
        let u = RigidRotation {
            center: [PI, PI, 0.0],
            omega: 1.0,
        };
        let quarter = advect(&m, &u, PI / 2.0, 1e-3).unwrap();
        assert!((perimeter(&quarter) - perimeter(&m)).abs() <= 1e-6);
        let full = advect(&m, &u, 2.0 * PI, 1e-3).unwrap();
        for (a, b) in full.vertices.iter().zip(&m.vertices) {
            assert!(geom::dist(*a, *b) <= 1e-5);
        }
    }

    #[test]
    fn indicator_at_time_zero_is_membership() {
        let u = TaylorGreen { amplitude: 1.0 };
        let phase = unit_disk();
        assert!(indicator([PI, PI, 0.0], 0.0, &u, &phase, 1e-2).unwrap());
        assert!(!indicator([PI + 1.5, PI, 0.0], 0.0, &u, &phase, 1e-2).unwrap());
    }

    #[test]
    fn indicator_follows_rotation() {
        let phase = InitialPhase::disk([PI, PI], 1.0);
        let u = RigidRotation {
            center: [PI, PI, 0.0],
            omega: 1.0,
        };
        let t = 1.3_f64;
        let p = [0.6, 0.4];
        let (s, c) = t.sin_cos();
        let x = [PI + c * p[0] - s * p[1], PI + s * p[0] + c * p[1], 0.0];
        assert!(indicator(x, t, &u, &phase, 1e-3).unwrap());
    }

    #[test]
    fn sphere_winding_number() {
        let m = mesh_initial(&unit_ball(), 2).unwrap();
        assert!((winding_number(&m, [PI, PI, PI]) - 1.0).abs() < 1e-9);
        assert!(winding_number(&m, [PI + 2.0, PI, PI]).abs() < 1e-9);
        assert!(contains_point(&m, [PI + 0.3, PI - 0.2, PI + 0.1]));
    }

    #[test]
    fn triangle_distance_cases() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        let c = [0.0, 1.0, 0.0];
        assert!((triangle_distance([0.2, 0.2, 0.5], a, b, c) - 0.5).abs() < 1e-15);
        assert!((triangle_distance([-1.0, 0.0, 0.0], a, b, c) - 1.0).abs() < 1e-15);
        assert!((triangle_distance([0.5, -2.0, 0.0], a, b, c) - 2.0).abs() < 1e-15);
        assert!((triangle_distance([1.0, 1.0, 0.0], a, b, c) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dumps_are_well_formed() {
        let m = mesh_initial(&unit_disk(), 8).unwrap();
        let mut buf = Vec::new();
        write_mesh(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 8 + 1);
        assert_eq!(dump_filename(&m), "interface_t0.000000.csv");
        let s = mesh_initial(&unit_ball(), 1).unwrap();
        let mut buf = Vec::new();
        write_mesh(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 42);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 80);
        assert!(dump_filename(&s).ends_with(".obj"));
    }
}

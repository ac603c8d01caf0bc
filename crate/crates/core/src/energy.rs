//! Energy ledger and the generalized energy inequality.
//!
//! Each row holds the instantaneous energies and the cumulative dissipation
//! up to `t`. The inequality check compares
//! `kinetic + magnetic + tension + viscous_cum + resistive_cum` against
//! `E0 + tau`. The viscous column is the raw dissipation `∫∫ 2ν(χ)|Du|²`,
//! used with factor one.

use std::io::{Read, Write};

use thiserror::Error;

use crate::basis::{Quadrature, SpectralField};
use crate::geom::{self, Mat3};
use crate::interface::{perimeter, InterfaceMesh, PhaseViscosity};

pub const LEDGER_HEADER: [&str; 7] = [
    "t",
    "kinetic",
    "magnetic",
    "tension",
    "viscous_cum",
    "resistive_cum",
    "E0",
];

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger is empty")]
    Empty,
    #[error("ledger header must be {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error("ledger row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `½‖u0‖² + ½‖B0‖² + κ·perimeter(mesh0)`
pub fn initial_energy(u0: &SpectralField, b0: &SpectralField, mesh0: &InterfaceMesh, kappa: f64) -> f64 {
    let (kinetic, magnetic) = (half_sq(u0), half_sq(b0));
    kinetic + magnetic + kappa * perimeter(mesh0)
}

fn half_sq(f: &SpectralField) -> f64 {
    0.5 * f.coefficients.iter().map(|c| c * c).sum::<f64>()
}

/// `2ν|Du|²` from the velocity gradient.
#[inline]
pub fn dissipation_density(nu: f64, grad: &Mat3) -> f64 {
    let d = geom::sym(grad);
    2.0 * nu * geom::contract(&d, &d)
}

/// `∫ 2ν(χ)|Du|²` by quadrature. `chi` holds the phase at each quadrature
/// point; `None` is only meaningful for uniform viscosity.
pub fn viscous_dissipation(
    u: &SpectralField,
    chi: Option<&[bool]>,
    viscosity: &PhaseViscosity,
    quad: &Quadrature,
) -> f64 {
    quad.points
        .iter()
        .enumerate()
        .map(|(q, &x)| {
            let inside = chi.is_none_or(|c| c[q]);
            quad.weight * dissipation_density(viscosity.at(inside), &u.evaluate_gradient(x))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub kinetic: f64,
    pub magnetic: f64,
    pub tension: f64,
    pub viscous_cum: f64,
    pub resistive_cum: f64,
    pub e0: f64,
}

impl LedgerRow {
    /// Left-hand side of the inequality.
    pub fn total(&self) -> f64 {
        self.kinetic + self.magnetic + self.tension + self.viscous_cum + self.resistive_cum
    }

    pub fn margin(&self) -> f64 {
        self.total() - self.e0
    }

    fn values(&self) -> [f64; 7] {
        [
            self.t,
            self.kinetic,
            self.magnetic,
            self.tension,
            self.viscous_cum,
            self.resistive_cum,
            self.e0,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// Ledger whose first row is the initial state; `E0` is taken from that row.
    pub fn start(t: f64, u: &SpectralField, b: &SpectralField, mesh: &InterfaceMesh, kappa: f64) -> Self {
        let (kinetic, magnetic) = (half_sq(u), half_sq(b));
        let tension = kappa * perimeter(mesh);
        let row = LedgerRow {
            t,
            kinetic,
            magnetic,
            tension,
            viscous_cum: 0.0,
            resistive_cum: 0.0,
            e0: kinetic + magnetic + tension,
        };
        Self { rows: vec![row] }
    }

    /// Rows as given; must be nonempty with finite, nonnegative entries.
    pub fn from_rows(rows: Vec<LedgerRow>) -> Result<Self, LedgerError> {
        if rows.is_empty() {
            return Err(LedgerError::Empty);
        }
        for (i, r) in rows.iter().enumerate() {
            if let Some(v) = r.values().iter().find(|v| !v.is_finite()) {
                return Err(LedgerError::Malformed {
                    row: i,
                    reason: format!("non-finite entry {v}"),
                });
            }
            if r.values()[1..].iter().any(|&v| v < 0.0) {
                return Err(LedgerError::Malformed {
                    row: i,
                    reason: "negative energy or dissipation".into(),
                });
            }
        }
        Ok(Self { rows })
    }

    /// Append a row; the cumulative columns advance by the given increments.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        t: f64,
        u: &SpectralField,
        b: &SpectralField,
        mesh: &InterfaceMesh,
        kappa: f64,
        viscous_increment: f64,
        resistive_increment: f64,
    ) {
        let last = *self.rows.last().expect("ledger is started with a row");
        self.rows.push(LedgerRow {
            t,
            kinetic: half_sq(u),
            magnetic: half_sq(b),
            tension: kappa * perimeter(mesh),
            viscous_cum: last.viscous_cum + viscous_increment,
            resistive_cum: last.resistive_cum + resistive_increment,
            e0: last.e0,
        });
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [LedgerRow] {
        &mut self.rows
    }

    pub fn e0(&self) -> f64 {
        self.rows[0].e0
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LedgerError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(LEDGER_HEADER)?;
        for r in &self.rows {
            out.write_record(r.values().iter().map(|&v| geom::fmt12(v)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, LedgerError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(LedgerError::Empty),
            Some(h) => h?,
        };
        let found: Vec<&str> = header.iter().map(str::trim).collect();
        if found != LEDGER_HEADER {
            return Err(LedgerError::Header {
                expected: LEDGER_HEADER.join(","),
                found: found.join(","),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in records.enumerate() {
            let rec = rec.map_err(|e| LedgerError::Malformed {
                row: i,
                reason: e.to_string(),
            })?;
            let mut v = [0.0; 7];
            for (k, field) in rec.iter().enumerate() {
                if k >= 7 {
                    break;
                }
                v[k] = field.trim().parse().map_err(|_| LedgerError::Malformed {
                    row: i,
                    reason: format!("column {} is not a number: {field:?}", LEDGER_HEADER[k]),
                })?;
            }
            rows.push(LedgerRow {
                t: v[0],
                kinetic: v[1],
                magnetic: v[2],
                tension: v[3],
                viscous_cum: v[4],
                resistive_cum: v[5],
                e0: v[6],
            });
        }
        Self::from_rows(rows)
    }
}

/// `10 (dt + 1/Q) E0`
pub fn default_tau(max_dt: f64, quadrature_order: usize, e0: f64) -> f64 {
    10.0 * (max_dt + 1.0 / quadrature_order as f64) * e0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub t: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub pass: bool,
    pub e0: f64,
    pub tau: f64,
    /// Largest `total − E0` over the rows.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub worst_row: usize,
    pub violations: Vec<Violation>,
    /// Rows where a cumulative column decreased.
    pub non_monotone: Vec<usize>,
}

/// Check every row against `E0 + tau`. With `e0 = None` the ledger's own
/// `E0` column is used row by row.
pub fn check_inequality(ledger: &EnergyLedger, tau: f64, e0: Option<f64>) -> InequalityReport {
    let mut worst = (f64::NEG_INFINITY, 0.0, 0usize);
    let mut violations = Vec::new();
    let mut non_monotone = Vec::new();
    for (i, r) in ledger.rows.iter().enumerate() {
        let margin = r.total() - e0.unwrap_or(r.e0);
        if margin > worst.0 {
            worst = (margin, r.t, i);
        }
        if margin > tau {
            violations.push(Violation { row: i, t: r.t, margin });
        }
        if i > 0 {
            let p = &ledger.rows[i - 1];
            if r.viscous_cum < p.viscous_cum || r.resistive_cum < p.resistive_cum {
                non_monotone.push(i);
            }
        }
    }
    InequalityReport {
        pass: violations.is_empty() && non_monotone.is_empty(),
        e0: e0.unwrap_or_else(|| ledger.e0()),
        tau,
        worst_margin: worst.0,
        worst_time: worst.1,
        worst_row: worst.2,
        violations,
        non_monotone,
    }
}

//! JSON run configuration.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use twophase_core::basis::{project_l2, FourierBasis, SolenoidalBasis, SpectralField};
use twophase_core::galerkin::{PhysicalParams, Problem, SolverSettings};
use twophase_core::geom::Vec3;
use twophase_core::interface::{IndicatorMethod, InitialPhase, PhaseViscosity};

use crate::CliError;

/// Initial velocity or magnetic field. Analytic fields are projected onto the
/// basis, so the result is divergence-free by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// `A (sin x cos y, −cos x sin y)`; in 3D multiplied by `cos z`.
    TaylorGreen {
        amplitude: f64,
    },
    /// Arnold–Beltrami–Childress flow (3D only).
    Abc {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `A (sin y, 0, 0)`.
    Shear {
        amplitude: f64,
    },
    /// `A η_index`.
    Mode {
        index: usize,
        amplitude: f64,
    },
    Coefficients {
        values: Vec<f64>,
    },
}

impl FieldSpec {
    pub fn build(&self, basis: &Arc<dyn SolenoidalBasis>, order: usize) -> Result<SpectralField, CliError> {
        let dim = basis.domain().dim;
        let field = match *self {
            FieldSpec::Zero => SpectralField::zeros(basis.clone()),
            FieldSpec::TaylorGreen { amplitude: a } => {
                project_l2(
                    |x: Vec3| {
                        let z = if dim == 3 { x[2].cos() } else { 1.0 };
                        [a * x[0].sin() * x[1].cos() * z, -a * x[0].cos() * x[1].sin() * z, 0.0]
                    },
                    basis,
                    order,
                )
                .field
            }
            FieldSpec::Abc { a, b, c } => {
                if dim != 3 {
                    return Err(CliError::Config("the abc field needs dimension 3".into()));
                }
                project_l2(
                    |x: Vec3| {
                        [
                            a * x[2].sin() + c * x[1].cos(),
                            b * x[0].sin() + a * x[2].cos(),
                            c * x[1].sin() + b * x[0].cos(),
                        ]
                    },
                    basis,
                    order,
                )
                .field
            }
            FieldSpec::Shear { amplitude } => {
                project_l2(|x: Vec3| [amplitude * x[1].sin(), 0.0, 0.0], basis, order).field
            }
            FieldSpec::Mode { index, amplitude } => {
                if index >= basis.len() {
                    return Err(CliError::Config(format!(
                        "mode index {index} out of range (basis has {} modes)",
                        basis.len()
                    )));
                }
                let mut f = SpectralField::unit(basis.clone(), index);
                f.coefficients[index] = amplitude;
                f
            }
            FieldSpec::Coefficients { ref values } => SpectralField::new(basis.clone(), values.clone())
                .map_err(|e| CliError::Config(format!("coefficient list: {e}")))?,
        };
        if !field.is_finite() {
            return Err(CliError::Config("initial field is not finite".into()));
        }
        Ok(field)
    }
}

/// Initial region `Ω₀⁺`: a disk/ball (`radius`) or an axis-aligned
/// ellipse/ellipsoid (`semi_axes`). The center defaults to the cell center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_axes: Option<Vec<f64>>,
}

impl PhaseSpec {
    pub fn build(&self, dim: usize) -> Result<InitialPhase, CliError> {
        let center = match &self.center {
            Some(c) if c.len() == dim => c.clone(),
            Some(c) => {
                return Err(CliError::Config(format!(
                    "phase center has {} components, expected {dim}",
                    c.len()
                )))
            }
            None => vec![PI; dim],
        };
        let axes = match (&self.radius, &self.semi_axes) {
            (Some(r), None) => vec![*r; dim],
            (None, Some(a)) if a.len() == dim => a.clone(),
            (None, Some(a)) => {
                return Err(CliError::Config(format!(
                    "phase semi_axes has {} components, expected {dim}",
                    a.len()
                )))
            }
            _ => {
                return Err(CliError::Config(
                    "phase needs exactly one of radius or semi_axes".into(),
                ))
            }
        };
        Ok(if dim == 2 {
            InitialPhase::ellipse([center[0], center[1]], [axes[0], axes[1]])
        } else {
            InitialPhase::ellipsoid([center[0], center[1], center[2]], [axes[0], axes[1], axes[2]])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorSpec {
    #[default]
    Hybrid,
    Backtrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub window: f64,
    pub n_sub: usize,
    pub tol: f64,
    pub relaxation: f64,
    pub max_iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature_order: Option<usize>,
    pub h_flow: f64,
    pub dt_b: f64,
    /// Polygon vertex count (2D) or icosphere level (3D).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_resolution: Option<usize>,
    pub min_window: f64,
    pub trust_region: bool,
    pub indicator: IndicatorSpec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            window: s.window,
            n_sub: s.n_sub,
            tol: s.tol,
            relaxation: s.relaxation,
            max_iter: s.max_iter,
            quadrature_order: None,
            h_flow: s.h_flow,
            dt_b: s.dt_b,
            mesh_resolution: None,
            min_window: s.min_window,
            trust_region: s.trust_region,
            indicator: IndicatorSpec::Hybrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// Time between mesh and varifold dumps; `0` writes only the initial and
    /// final interface.
    pub cadence: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            cadence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub kmax: u32,
    pub t_end: f64,
    pub u0: FieldSpec,
    pub b0: FieldSpec,
    pub phase: PhaseSpec,
    pub nu_plus: f64,
    pub nu_minus: f64,
    pub sigma: f64,
    pub kappa: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parse a config, or the `config` member of a run summary.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed JSON: {e}")))?;
        let inner = match value.get("config") {
            Some(c) if value.get("dimension").is_none() => c.clone(),
            _ => value,
        };
        let config: RunConfig =
            serde_json::from_value(inner).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<(), CliError> {
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(CliError::Config(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(CliError::Config(format!(
                "sigma must satisfy sigma > 0 (magnetic diffusivity), got {}",
                self.sigma
            )));
        }
        if !(self.output.cadence.is_finite() && self.output.cadence >= 0.0) {
            return Err(CliError::Config("output cadence must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn mesh_resolution(&self) -> usize {
        self.solver
            .mesh_resolution
            .unwrap_or(if self.dimension == 2 { 256 } else { 4 })
    }

    /// Resolve the config into a validated solver problem.
    pub fn to_problem(&self) -> Result<Problem, CliError> {
        self.check()?;
        let basis = FourierBasis::new(self.dimension, self.kmax)
            .map_err(|e| CliError::Config(e.to_string()))?
            .into_shared();
        let s = &self.solver;
        let settings = SolverSettings {
            window: s.window,
            n_sub: s.n_sub,
            tol: s.tol,
            max_iter: s.max_iter,
            relaxation: s.relaxation,
            quadrature_order: s.quadrature_order,
            h_flow: s.h_flow,
            dt_b: s.dt_b,
            min_window: s.min_window,
            trust_region: s.trust_region,
            indicator: match s.indicator {
                IndicatorSpec::Hybrid => IndicatorMethod::Hybrid,
                IndicatorSpec::Backtrace => IndicatorMethod::Backtrace,
            },
        };
        let order = s
            .quadrature_order
            .unwrap_or_else(|| basis.default_quadrature_order())
            .max(basis.min_quadrature_order());
        let problem = Problem {
            u0: self.u0.build(&basis, order)?,
            b0: self.b0.build(&basis, order)?,
            phase: self.phase.build(self.dimension)?,
            basis,
            mesh_resolution: self.mesh_resolution(),
            params: PhysicalParams {
                viscosity: PhaseViscosity {
                    nu_plus: self.nu_plus,
                    nu_minus: self.nu_minus,
                },
                sigma: self.sigma,
                kappa: self.kappa,
            },
            settings,
            t_end: self.t_end,
        };
        problem.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(problem)
    }

    /// The two-phase reference configuration: unit disk in the plane,
    /// Taylor–Green velocity, shear magnetic field.
    pub fn reference() -> Self {
        Self {
            dimension: 2,
            kmax: 2,
            t_end: 0.5,
            u0: FieldSpec::TaylorGreen { amplitude: 0.5 },
            b0: FieldSpec::Shear { amplitude: 0.2 },
            phase: PhaseSpec {
                center: None,
                radius: Some(1.0),
                semi_axes: None,
            },
            nu_plus: 0.1,
            nu_minus: 0.05,
            sigma: 0.1,
            kappa: 0.1,
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

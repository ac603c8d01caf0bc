//! Spectral Galerkin solver for two-phase incompressible MHD with surface
//! tension on the periodic cell `[0, 2π)^d`, `d ∈ {2, 3}`.
//!
//! Velocity and magnetic field live in a divergence-free Fourier basis, the
//! phase is carried by a Lagrangian interface mesh and by back-tracing the flow
//! map, and the nonlinear system is solved window by window with a damped
//! Picard iteration. An energy ledger certifies the generalized energy
//! inequality along the run.

pub mod basis;
pub mod energy;
pub mod flowmap;
pub mod galerkin;
pub mod geom;
pub mod induction;
pub mod interface;
pub mod varifold;

pub use basis::{Domain, FourierBasis, SolenoidalBasis, SpectralField};
pub use energy::{check_inequality, EnergyLedger, InequalityReport};
pub use flowmap::VelocitySampler;
pub use galerkin::{run, GalerkinError, GalerkinState, PhysicalParams, Problem, RunOutput, SolverSettings};
pub use interface::{InitialPhase, InterfaceMesh, PhaseViscosity};

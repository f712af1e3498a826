//! Optimal control of quasi-1D Bose gases in moving-wall box potentials.
//!
//! The longitudinal mean field of an elongated condensate obeys the
//! non-polynomial Schrödinger equation (npSE). This crate propagates it with a
//! norm-conserving Crank–Nicolson scheme, computes ground states, evaluates
//! state- and energy-based cost functionals, and optimizes the wall
//! displacement `λ(t)` either through the adjoint optimality system with an
//! H¹ (Sobolev) gradient, or through a small harmonic basis on top of a linear
//! ramp.
//!
//! Units follow the usual normalization for these experiments: ħ = 1, time in
//! ms, space in µm.

pub mod adjoint;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optimize;
pub mod potential;

pub use num_complex::Complex64;

pub use adjoint::{AdjointField, CostKind, CostSpec};
pub use dynamics::{GroundStateConfig, GroundStateResult, NpseStepperConfig, Trajectory};
pub use error::{Error, Result};
pub use grid::{PhysicalParams, SpatialGrid, TimeGrid, WaveFunction};
pub use optimize::{
    BfaOptions, BfaReport, ControlProblem, CostBreakdown, GradientField, IterationRecord, OptimizationReport,
    ProblemSetup, StopCriteria, Termination,
};
pub use potential::{BfaCoefficients, BoxPotential, ControlPotential, ControlTrajectory};

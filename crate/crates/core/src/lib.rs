//! Transient mean and covariance of non-stationary, state-dependent
//! Markovian queueing networks.
//!
//! Three analytic approximations share one model description:
//!
//! * the **fluid** limit, an ODE for the mean driven by the rates evaluated
//!   at the mean;
//! * the **Gaussian-adjusted** method, which replaces every rate by its
//!   expectation under a normal surrogate with the current mean and
//!   covariance and integrates mean and covariance together;
//! * the **measure-zero** baseline, a fluid mean with the linear-noise
//!   covariance equation using one-sided derivatives at kinks.
//!
//! The [`sim`] module provides ground truth: exact event-driven simulation
//! and, for small state spaces, transient moments of the truncated chain.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod closure;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod schedule;
pub mod sim;
pub mod zoo;

pub use closure::{quad_expected_kernel, ClosedTerms, GaussianClosure, MomentPoint, DEFAULT_QUAD_ORDER};
pub use engine::{solve, solve_adjusted, solve_fluid, solve_measure_zero, Method, MomentTrajectory, SolverConfig};
pub use error::{Error, Result};
pub use model::{NetworkModel, RateKernel, RateTerm, Transition, ValidationReport, Violation};
pub use normal::{normal_cdf, normal_pdf};
pub use quadrature::{PiecewiseGaussian, QuadratureRule};
pub use schedule::TimeSchedule;
pub use sim::{exact_transient_moments, simulate_ensemble, simulate_path, EnsembleStats, RngStream};

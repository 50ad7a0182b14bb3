//! Strong-solution integrators for Itô stochastic differential equations.
//!
//! The Runge-Kutta schemes here treat a strong solution as a smooth function
//! of time and the driving Wiener processes. One step feeds the *increment
//! function* `f = ã·Δt + Σ_k b_k·ΔW^k` through an ordinary Runge-Kutta tableau,
//! where `ã` is the drift corrected by half the diffusion-Jacobian contraction.
//! The classical four-stage tableau gives strong order 2 and the twelve-stage
//! eighth-order tableau gives strong order 4 with an embedded error estimate.
//!
//! Modules:
//! - [`system`]: the SDE abstraction, modified drift and increment function.
//! - [`noise`]: seeded Gaussian streams, Wiener grids and bridge splitting.
//! - [`schemes`]: Euler-Maruyama, derivative-free Milstein, `Srk2`, `Srk4`.
//! - [`adaptive`]: fixed-step and adaptive drivers.
//! - [`problems`]: exact-solution benchmark SDEs and their oracles.
//! - [`qsd`]: quantum-state-diffusion nonlinear absorber ensembles.
//! - [`harness`]: error-vs-time comparisons, convergence studies, CSV output.

// `!(a > b)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod error;
pub mod harness;
pub mod noise;
pub mod problems;
pub mod qsd;
pub mod schemes;
pub mod system;
mod exact_sum;

pub use adaptive::{
    error_norm, integrate_adaptive, integrate_adaptive_partial, integrate_adaptive_with, integrate_fixed,
    integrate_fixed_partial, AdaptiveOptions, FixedStepConfig, NoiseSource, StepController, Trajectory,
};
pub use error::SdeError;
pub use noise::{bridge_split, coarsen, sample_increment, BridgeRule, RngStream, WienerGrid};
pub use qsd::{run_ensemble, AbsorberModel, EnsembleConfig, EnsembleStats, FockState, NoiseKind};
pub use problems::{make_problem, BenchmarkProblem, OracleTracker, PathAccumulator, ProblemId};
pub use schemes::{step, ButcherTableau, SchemeId};
pub use system::{
    fd_contraction, increment_function, modified_drift, FnSystem, NoiseIncrement,
    NoiseStructure, SdeSystem, StepResult, Vector,
};

//! Optimal two-stage adaptive sensing for estimating the amplitudes of a
//! sparse signal.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] — Bernoulli–Gaussian prior, effort-scaled observations and the
//!   Bayesian belief recursion.
//! * [`allocation`] — second-stage allocations (optimal water-filling and the
//!   proportional rule), first-stage budget fraction selectors, and the
//!   non-adaptive / oracle baselines.
//! * [`bounds`] — Chernoff coefficients (exact and upper bounds), the gain
//!   lower bound, tail probabilities and high-SNR / vanishing-sparsity
//!   asymptotics.
//! * [`harness`] — seeded, parallel Monte Carlo trials and sweep tables.
//!
//! Budgets are normalized so that the total effort equals the dimension `N`;
//! a first-stage fraction `λ` therefore spends `λ` on every component.

pub mod allocation;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;

pub use allocation::{Allocation, FirstStageChoice, FirstStageMethod};
pub use bounds::{BoundReport, ChernoffInputs, CoefficientSource};
pub use error::{Error, Result};
pub use model::{BeliefState, ModelConfig, Observation, SignalRealization};

/// `10·log10(x)`.
pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Inverse of [`to_db`].
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

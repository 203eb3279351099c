//! Detectability bounds.
//!
//! How much an adaptive second stage can gain depends on how well the first
//! stage separates "signal present" (`f1`) from the marginal (`fp`), measured
//! by the Chernoff coefficient `C_p^γ = ∫ f1^γ fp^{1−γ}`. This module computes
//! it exactly (adaptive quadrature) and through two closed-form upper bounds,
//! and turns any of them into a lower bound on the asymptotic two-stage gain.
//!
//! All Chernoff quantities are invariant to rescaling `y`, so they depend on
//! the prior only through `p`, `s = μ²/σ²`, `γ` and the first-stage SNR
//! `x = rλ`.

pub mod asymptotics;
mod chernoff;
mod gain;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub use chernoff::{
    chernoff_closed_form_c0, chernoff_exact, prop1_upper, prop2_upper, region_boundaries,
    Prop1Bound, Prop2Bound, RegionProbs, Regions, ZValues,
};
pub use gain::{
    coefficient, finite_n_probability, gain_lower_bound, j0_upper_bound, BoundReport,
};

/// Arguments of the Chernoff coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChernoffInputs {
    pub p: f64,
    pub r: f64,
    pub lambda_frac: f64,
    pub s: f64,
    pub gamma: f64,
}

impl ChernoffInputs {
    /// `gamma` may equal 1 so that second moments `C_p^{2γ}` with `γ = 1/2`
    /// can be formed; every other argument is checked against its domain.
    pub fn new(p: f64, r: f64, lambda_frac: f64, s: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain("p", format!("must lie in [0, 1], got {p}")));
        }
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::domain("r", format!("must be finite and >= 0, got {r}")));
        }
        if !(0.0..=1.0).contains(&lambda_frac) {
            return Err(Error::domain("lambda", format!("must lie in [0, 1], got {lambda_frac}")));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::domain("s", format!("must be finite and >= 0, got {s}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::domain("gamma", format!("must lie in (0, 1], got {gamma}")));
        }
        Ok(ChernoffInputs {
            p,
            r,
            lambda_frac,
            s,
            gamma,
        })
    }

    /// Inputs parameterized directly by the first-stage SNR `x = rλ`.
    pub fn at_snr(p: f64, x: f64, s: f64, gamma: f64) -> Result<Self> {
        Self::new(p, x, 1.0, s, gamma)
    }

    pub fn from_config(config: &ModelConfig, lambda_frac: f64) -> Result<Self> {
        Self::new(config.p, config.r(), lambda_frac, config.s(), config.gamma())
    }

    /// First-stage SNR `rλ`.
    pub fn snr(&self) -> f64 {
        self.r * self.lambda_frac
    }

    /// `η = log((1 − p)/p)`; infinite at `p ∈ {0, 1}`.
    pub fn eta(&self) -> f64 {
        (-self.p).ln_1p() - self.p.ln()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.p, self.r, self.lambda_frac, self.s, gamma)
    }
}

/// Where the Chernoff coefficient (or its upper bound) comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    /// Exact value by adaptive quadrature.
    Quadrature,
    /// The Gaussian-CDF bound valid for every `γ`.
    Prop1,
    /// The tighter small-SNR bound, valid only for `γ = 1/2` (`q = 2`).
    Prop2,
}

impl CoefficientSource {
    /// The closed-form bound used for a given loss exponent: the `γ = 1/2`
    /// bound for squared error, the general one otherwise.
    pub fn default_for(q: f64) -> Self {
        if q == 2.0 {
            CoefficientSource::Prop2
        } else {
            CoefficientSource::Prop1
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoefficientSource::Quadrature => "quadrature",
            CoefficientSource::Prop1 => "prop1",
            CoefficientSource::Prop2 => "prop2",
        }
    }
}

impl std::str::FromStr for CoefficientSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrature" | "exact" => Ok(CoefficientSource::Quadrature),
            "prop1" => Ok(CoefficientSource::Prop1),
            "prop2" => Ok(CoefficientSource::Prop2),
            other => Err(Error::Usage(format!(
                "unknown coefficient source '{other}' (expected quadrature, prop1 or prop2)"
            ))),
        }
    }
}

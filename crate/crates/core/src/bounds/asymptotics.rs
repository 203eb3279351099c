//! High-SNR and vanishing-sparsity expansions of the optimal gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// `A1(q) = (q+3)(q+2)^{(q+2)/(2(q+3))} / (2 q^{q/(2(q+3))})`.
pub fn a1(q: f64) -> f64 {
    let e = q + 3.0;
    e * (q + 2.0).powf((q + 2.0) / (2.0 * e)) / (2.0 * q.powf(q / (2.0 * e)))
}

/// `A2(q) = (q+2)^{(q+2)/(2(q+3))} / q^{3(q+2)/(2(q+3))}`.
pub fn a2(q: f64) -> f64 {
    let e = q + 3.0;
    (q + 2.0).powf((q + 2.0) / (2.0 * e)) / q.powf(3.0 * (q + 2.0) / (2.0 * e))
}

/// `C3(q) = q^{(3q+2)/4} / ((q+2)^{(q+2)/4} (q+1)^{(q+1)/2})`.
pub fn c3(q: f64) -> f64 {
    q.powf((3.0 * q + 2.0) / 4.0) / ((q + 2.0).powf((q + 2.0) / 4.0) * (q + 1.0).powf((q + 1.0) / 2.0))
}

fn check_p(config: &ModelConfig) -> Result<()> {
    config.validate()?;
    if !(config.p > 0.0 && config.p < 1.0) {
        return Err(Error::domain("p", format!("needs 0 < p < 1, got {}", config.p)));
    }
    Ok(())
}

/// Unclamped high-SNR first-stage fraction
/// `A2(q) p^{−q/(q+3)} (1−p)^{−2/(q+3)} e^{−s/(q+3)} r^{−1/(q+3)}`.
pub fn lambda_star_fixed_p(config: &ModelConfig) -> Result<f64> {
    check_p(config)?;
    let (p, q) = (config.p, config.q);
    let e = q + 3.0;
    Ok(a2(q) * p.powf(-q / e) * (1.0 - p).powf(-2.0 / e) * (-config.s() / e).exp()
        * config.r().powf(-1.0 / e))
}

/// Leading-order high-SNR behaviour of the optimal gain at fixed sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Rate {
    /// `(1/p)^{q/2}(1 − A1 (1−p)^{(q+1)/(q+3)} p^{−q/(q+3)} e^{−s/(q+3)} r^{−1/(q+3)})`.
    pub gain_leading: f64,
    /// First-stage fraction achieving the rate, clamped to `[0, 1]`.
    pub lambda_star: f64,
    /// True when the unclamped fraction exceeded 1 (r too small for the
    /// expansion).
    pub clamped: bool,
    pub a1: f64,
    pub a2: f64,
}

pub fn theorem2_rate(config: &ModelConfig) -> Result<Theorem2Rate> {
    check_p(config)?;
    let (p, q) = (config.p, config.q);
    let e = q + 3.0;
    let deficit = a1(q) * (1.0 - p).powf((q + 1.0) / e) * p.powf(-q / e) * (-config.s() / e).exp()
        * config.r().powf(-1.0 / e);
    let raw = lambda_star_fixed_p(config)?;
    Ok(Theorem2Rate {
        gain_leading: p.powf(-0.5 * q) * (1.0 - deficit),
        lambda_star: raw.clamp(0.0, 1.0),
        clamped: raw > 1.0,
        a1: a1(q),
        a2: a2(q),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem3Regime {
    LowR,
    HighR,
}

/// Leading gain in the vanishing-sparsity regime: `1 + (1−γ)s r²/8` for
/// small `r`, `C3(q) e^{s/2} √r` for large `r`.
pub fn theorem3_gain(config: &ModelConfig, regime: Theorem3Regime) -> Result<f64> {
    config.validate()?;
    let (r, s) = (config.r(), config.s());
    Ok(match regime {
        Theorem3Regime::LowR => 1.0 + (1.0 - config.gamma()) * s * r * r / 8.0,
        Theorem3Regime::HighR => c3(config.q) * (0.5 * s).exp() * r.sqrt(),
    })
}

/// First-stage fraction in the vanishing-sparsity regime.
pub fn theorem3_lambda(q: f64, regime: Theorem3Regime) -> f64 {
    match regime {
        Theorem3Regime::LowR => 0.5,
        Theorem3Regime::HighR => 1.0 / (q + 1.0),
    }
}

//! Gain lower bound and two-stage error upper bound driven by a Chernoff
//! coefficient, plus the finite-N concentration probability.

use serde::Serialize;

use super::chernoff::{self, RegionProbs, ZValues};
use super::{ChernoffInputs, CoefficientSource};
use crate::allocation::nonadaptive_error;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::golden;

/// Relative tolerance for quadrature inside the λ optimization.
const QUAD_REL_TOL: f64 = 1e-10;
/// Points in the coarse λ scan preceding golden-section refinement.
const SCAN_POINTS: usize = 33;
/// Final bracket width of the golden-section refinement.
const LAMBDA_TOL: f64 = 1e-6;
/// Objective values at or below this are treated as identically zero.
const FLAT_TOL: f64 = 1e-12;

/// `C_p^γ` (or an upper bound on it) from the chosen source, in `(0, 1]`.
pub fn coefficient(inputs: &ChernoffInputs, source: CoefficientSource) -> Result<f64> {
    match source {
        CoefficientSource::Quadrature => chernoff::chernoff_exact(inputs, QUAD_REL_TOL),
        CoefficientSource::Prop1 => Ok(chernoff::prop1_upper(inputs)?.strong),
        CoefficientSource::Prop2 => Ok(chernoff::prop2_upper(inputs)?.value),
    }
}

/// Everything known about the bound at its maximizing first-stage fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub source: CoefficientSource,
    pub c0: f64,
    pub cp_exact: f64,
    pub cp_upper_prop1: f64,
    pub cp_upper_prop1_weak: f64,
    pub cp_upper_prop2: Option<f64>,
    pub region_probs: RegionProbs,
    pub z_values: ZValues,
    pub gain_lower_bound: f64,
    pub maximizing_lambda: f64,
    /// The bound is flat in λ (trivial coefficient everywhere); the reported
    /// fraction is 0 by convention.
    pub undetermined_lambda: bool,
}

fn check_config(config: &ModelConfig, source: CoefficientSource) -> Result<()> {
    config.validate()?;
    if !(config.p > 0.0 && config.p < 1.0) {
        return Err(Error::domain("p", format!("gain bounds need 0 < p < 1, got {}", config.p)));
    }
    if source == CoefficientSource::Prop2 && config.q != 2.0 {
        return Err(Error::Usage(format!(
            "prop2 applies only to q = 2, got q = {}",
            config.q
        )));
    }
    Ok(())
}

/// Maximize `f` on `[0, 1]`: coarse scan, then golden section on the cells
/// around the best scan point. Returns `(λ, f(λ), flat)`.
fn maximize_lambda<F: FnMut(f64) -> Result<f64>>(mut f: F) -> Result<(f64, f64, bool)> {
    let mut scan = Vec::with_capacity(SCAN_POINTS);
    for i in 0..SCAN_POINTS {
        let l = i as f64 / (SCAN_POINTS - 1) as f64;
        scan.push((l, f(l)?));
    }
    let (best, &(l_best, v_best)) = scan
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
        .expect("non-empty scan");
    if v_best <= FLAT_TOL && scan.iter().all(|(_, v)| v.abs() <= FLAT_TOL) {
        return Ok((0.0, 0.0, true));
    }
    let lo = scan[best.saturating_sub(1)].0;
    let hi = scan[(best + 1).min(SCAN_POINTS - 1)].0;
    let mut failure = None;
    let (l, v) = golden::maximize(
        |l| match f(l) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        lo,
        hi,
        LAMBDA_TOL,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(if v > v_best { (l, v, false) } else { (l_best, v_best, false) })
}

/// `(C^{−1/(1−γ)}/(1+ε) − 1)(1 − λ)` at fraction `λ`.
fn bracket(config: &ModelConfig, source: CoefficientSource, epsilon: f64, lambda: f64) -> Result<f64> {
    let inputs = ChernoffInputs::from_config(config, lambda)?;
    let c = coefficient(&inputs, source)?;
    let gamma = config.gamma();
    Ok((c.powf(-1.0 / (1.0 - gamma)) / (1.0 + epsilon) - 1.0) * (1.0 - lambda))
}

/// Asymptotic (`N → ∞`) lower bound on the optimal two-stage gain,
/// `[1 + r/(r+1)·max_λ (C_p^γ(rλ)^{−1/(1−γ)} − 1)(1 − λ)]^{q/2}`.
pub fn gain_lower_bound(config: &ModelConfig, source: CoefficientSource) -> Result<BoundReport> {
    check_config(config, source)?;
    let r = config.r();
    let (lambda, h, flat) = maximize_lambda(|l| bracket(config, source, 0.0, l))?;
    let gain = (1.0 + r / (r + 1.0) * h.max(0.0)).powf(0.5 * config.q);

    let inputs = ChernoffInputs::from_config(config, lambda)?;
    let prop1 = chernoff::prop1_upper(&inputs)?;
    let cp_upper_prop2 = if config.gamma() == 0.5 {
        Some(chernoff::prop2_upper(&inputs)?.value)
    } else {
        None
    };
    Ok(BoundReport {
        source,
        c0: chernoff::chernoff_closed_form_c0(&inputs),
        cp_exact: chernoff::chernoff_exact(&inputs, QUAD_REL_TOL)?,
        cp_upper_prop1: prop1.strong,
        cp_upper_prop1_weak: prop1.weak,
        cp_upper_prop2,
        region_probs: prop1.regions.probs,
        z_values: prop1.regions.z,
        gain_lower_bound: gain.max(1.0),
        maximizing_lambda: lambda,
        undetermined_lambda: flat,
    })
}

/// Upper bound on the optimal two-stage error holding with the finite-N
/// probability of [`finite_n_probability`]; `ε = 0` gives the asymptotic
/// bound, whose ratio to the non-adaptive error is the gain bound.
pub fn j0_upper_bound(config: &ModelConfig, epsilon: f64, source: CoefficientSource) -> Result<f64> {
    check_config(config, source)?;
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::domain("epsilon", format!("must be finite and >= 0, got {epsilon}")));
    }
    let r = config.r();
    let (_, g, _) = maximize_lambda(|l| bracket(config, source, epsilon, l))?;
    // λ = 1 gives zero, so the maximum is never negative.
    let g = g.max(0.0);
    let denom = (1.0 + r + r * g).powf(0.5 * config.q);
    Ok(nonadaptive_error(config) * (1.0 + r).powf(0.5 * config.q) / denom)
}

/// Probability, from Bernstein's inequality, that the first-stage average
/// `(1/N)Σ p_i^γ(1)` stays below `(1+ε) p^γ C_p^γ`.
///
/// For `γ ≤ 1/2` the variance uses the second coefficient `C_p^{2γ}`, which
/// must be supplied; above 1/2 it is bounded through `p_i ≤ 1`.
pub fn finite_n_probability(
    n: usize,
    p: f64,
    gamma: f64,
    epsilon: f64,
    cp_gamma: f64,
    cp_2gamma: Option<f64>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain("p", format!("must lie in [0, 1], got {p}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon", format!("must be positive, got {epsilon}")));
    }
    if !(cp_gamma > 0.0 && cp_gamma <= 1.0) {
        return Err(Error::domain("cp_gamma", format!("must lie in (0, 1], got {cp_gamma}")));
    }
    let c = cp_gamma;
    let pg = p.powf(gamma);
    let variance = if gamma <= 0.5 {
        let c2 = cp_2gamma.ok_or_else(|| {
            Error::Usage("gamma <= 1/2 requires the coefficient at exponent 2*gamma".into())
        })?;
        pg * (c2 - c * c)
    } else {
        p.powf(1.0 - gamma) - pg * c * c
    };
    let denom = 2.0 * (variance + epsilon * c / 3.0);
    let exponent = -c * c * n as f64 * pg * epsilon * epsilon / denom;
    if exponent.is_nan() {
        // ε = ∞ makes both numerator and denominator infinite.
        return Ok(1.0);
    }
    Ok((-exponent.exp_m1()).clamp(0.0, 1.0))
}

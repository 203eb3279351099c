//! Bernoulli–Gaussian signal prior, effort-scaled Gaussian observations and
//! the per-component Bayesian belief recursion.
//!
//! Every component `i` carries a belief triple `(p_i, μ_i, σ_i²)`: the
//! posterior probability that it is nonzero, and the mean and variance of its
//! amplitude conditional on being nonzero. Observing `y_i = x_i + n_i/√λ_i`
//! with `n_i ~ N(0, ν²)` updates the triple in closed form. The probability
//! update is carried out on the log-odds scale so that high-SNR observations
//! (likelihood ratios far outside the f64 range) do not underflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::numerics::normal;

/// Smallest posterior probability kept after an update.
pub const PROB_FLOOR: f64 = 1e-300;
/// Largest posterior probability kept after an update (rounds to `1 − 2⁻⁵³`).
pub const PROB_CEIL: f64 = 1.0 - 1e-16;
/// Relative slack allowed when checking that an allocation fits the budget.
pub const BUDGET_REL_TOL: f64 = 1e-9;

/// `m_q = E|z|^q` for a standard normal `z`, via `2^{q/2} Γ((q+1)/2) / √π`.
pub fn gaussian_moment(q: f64) -> Result<f64> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::domain("q", format!("must be positive and finite, got {q}")));
    }
    let ln = 0.5 * q * std::f64::consts::LN_2 + ln_gamma(0.5 * (q + 1.0))
        - 0.5 * std::f64::consts::PI.ln();
    Ok(ln.exp())
}

/// Prior and budget parameters of the sensing problem.
///
/// The total budget is normalized to `Λ(0) = N`, so `nu2` is the noise
/// variance after that rescaling. `nu2 = +∞` encodes `r = 0` for the analytic
/// formulas; simulation requires it to be finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Prior probability that a component is nonzero.
    pub p: f64,
    /// Prior mean of a nonzero amplitude.
    pub mu: f64,
    /// Prior variance of a nonzero amplitude.
    pub sigma2: f64,
    /// Noise variance per unit effort.
    pub nu2: f64,
    /// Signal dimension N.
    pub n_dim: usize,
    /// Loss exponent q of the mean q-th power error.
    pub q: f64,
}

impl ModelConfig {
    pub fn new(p: f64, mu: f64, sigma2: f64, nu2: f64, n_dim: usize, q: f64) -> Result<Self> {
        let cfg = ModelConfig {
            p,
            mu,
            sigma2,
            nu2,
            n_dim,
            q,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration with `σ² = 1`, `μ = √s` and `ν² = 1/r`.
    pub fn from_ratios(p: f64, s: f64, r: f64, q: f64, n_dim: usize) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::domain("s", format!("must be finite and >= 0, got {s}")));
        }
        if !(r >= 0.0) || r.is_nan() {
            return Err(Error::domain("r", format!("must be >= 0, got {r}")));
        }
        Self::new(p, s.sqrt(), 1.0, 1.0 / r, n_dim, q)
    }

    /// Same prior with a different SNR-budget ratio `r`.
    pub fn with_r(&self, r: f64) -> Result<Self> {
        if !(r >= 0.0) || r.is_nan() {
            return Err(Error::domain("r", format!("must be >= 0, got {r}")));
        }
        Self::new(self.p, self.mu, self.sigma2, self.sigma2 / r, self.n_dim, self.q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain("p", format!("must lie in [0, 1], got {}", self.p)));
        }
        if !self.mu.is_finite() {
            return Err(Error::domain("mu", "must be finite"));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::domain("sigma2", format!("must be positive, got {}", self.sigma2)));
        }
        if !(self.nu2 > 0.0) {
            return Err(Error::domain("nu2", format!("must be positive, got {}", self.nu2)));
        }
        if self.n_dim == 0 {
            return Err(Error::domain("n_dim", "must be at least 1"));
        }
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(Error::domain("q", format!("must be positive, got {}", self.q)));
        }
        Ok(())
    }

    /// SNR-budget ratio `r = σ²/ν²`.
    pub fn r(&self) -> f64 {
        self.sigma2 / self.nu2
    }

    /// Prior certainty ratio `s = μ²/σ²`.
    pub fn s(&self) -> f64 {
        self.mu * self.mu / self.sigma2
    }

    /// Chernoff exponent `γ = 2/(q+2)`.
    pub fn gamma(&self) -> f64 {
        2.0 / (self.q + 2.0)
    }

    pub fn m_q(&self) -> f64 {
        gaussian_moment(self.q).expect("validated q")
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// One draw of the sparse signal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalRealization {
    pub support: Vec<bool>,
    pub amplitudes: Vec<f64>,
}

impl SignalRealization {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

/// Posterior belief over the signal after `t` stages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefState {
    pub probs: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub budget_remaining: f64,
}

impl BeliefState {
    /// Uniform prior state with the full budget `Λ(0) = N`.
    pub fn prior(config: &ModelConfig) -> Self {
        let n = config.n_dim;
        BeliefState {
            probs: vec![config.p; n],
            means: vec![config.mu; n],
            variances: vec![config.sigma2; n],
            budget_remaining: n as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.probs.len();
        if self.means.len() != n || self.variances.len() != n {
            return Err(Error::domain("state", "belief vectors differ in length"));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::domain("state.probs", format!("{p} outside [0, 1]")));
        }
        if let Some(v) = self.variances.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::domain("state.variances", format!("{v} is not positive")));
        }
        if !(self.budget_remaining >= 0.0) {
            return Err(Error::domain("state.budget_remaining", "must be >= 0"));
        }
        Ok(())
    }
}

/// Noisy measurements from one stage; `observed[i]` is false where no effort
/// was spent, and `values[i]` is then meaningless (set to NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

/// Draw a signal: i.i.d. Bernoulli(p) support and `N(μ, σ²)` amplitudes on it.
pub fn sample_signal(config: &ModelConfig, seed: u64) -> Result<SignalRealization> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_signal_with(config, &mut rng))
}

pub(crate) fn sample_signal_with<R: Rng>(config: &ModelConfig, rng: &mut R) -> SignalRealization {
    let n = config.n_dim;
    let sigma = config.sigma();
    let mut support = Vec::with_capacity(n);
    let mut amplitudes = Vec::with_capacity(n);
    for _ in 0..n {
        let on = rng.random::<f64>() < config.p;
        let z: f64 = rng.sample(StandardNormal);
        support.push(on);
        amplitudes.push(if on { config.mu + sigma * z } else { 0.0 });
    }
    SignalRealization {
        support,
        amplitudes,
    }
}

/// Measure every component with positive effort: `y_i = x_i + n_i/√λ_i`.
///
/// One normal variate is consumed per component whether or not it is
/// observed, so two allocations under the same seed share their noise.
pub fn observe(
    signal: &SignalRealization,
    alloc: &Allocation,
    nu2: f64,
    seed: u64,
) -> Result<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    observe_with(signal, alloc, nu2, &mut rng)
}

pub(crate) fn observe_with<R: Rng>(
    signal: &SignalRealization,
    alloc: &Allocation,
    nu2: f64,
    rng: &mut R,
) -> Result<Observation> {
    if alloc.efforts.len() != signal.len() {
        return Err(Error::domain(
            "alloc",
            format!("{} entries for a signal of length {}", alloc.efforts.len(), signal.len()),
        ));
    }
    if !(nu2 >= 0.0) || !nu2.is_finite() {
        return Err(Error::domain("nu2", format!("must be finite and >= 0, got {nu2}")));
    }
    if let Some(l) = alloc.efforts.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::domain("alloc", format!("negative effort {l}")));
    }
    let noise_sd = nu2.sqrt();
    let mut values = Vec::with_capacity(signal.len());
    let mut observed = Vec::with_capacity(signal.len());
    for (&x, &lambda) in signal.amplitudes.iter().zip(&alloc.efforts) {
        let z: f64 = rng.sample(StandardNormal);
        if lambda > 0.0 {
            values.push(x + noise_sd * z / lambda.sqrt());
            observed.push(true);
        } else {
            values.push(f64::NAN);
            observed.push(false);
        }
    }
    Ok(Observation { values, observed })
}

/// Log densities of one observation under "absent", "present" and the
/// prior mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodTriple {
    pub ln_f0: f64,
    pub ln_f1: f64,
    pub ln_fp: f64,
}

impl LikelihoodTriple {
    /// `(f0, f1, fp)` as plain densities; may underflow to zero.
    pub fn densities(&self) -> (f64, f64, f64) {
        (self.ln_f0.exp(), self.ln_f1.exp(), self.ln_fp.exp())
    }
}

/// `f0 = φ(y; 0, ν²/λ)`, `f1 = φ(y; mean, var + ν²/λ)` and the mixture
/// `fp = prob·f1 + (1 − prob)·f0`, all in log space.
pub fn likelihood_triple(
    prob: f64,
    mean: f64,
    var: f64,
    lambda: f64,
    nu2: f64,
    y: f64,
) -> Result<LikelihoodTriple> {
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda", format!("must be positive, got {lambda}")));
    }
    if !(var > 0.0) {
        return Err(Error::domain("var", format!("must be positive, got {var}")));
    }
    if !(nu2 > 0.0) || !nu2.is_finite() {
        return Err(Error::domain("nu2", format!("must be positive and finite, got {nu2}")));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::domain("prob", format!("must lie in [0, 1], got {prob}")));
    }
    let v0 = nu2 / lambda;
    let ln_f0 = normal::ln_pdf(y, 0.0, v0);
    let ln_f1 = normal::ln_pdf(y, mean, var + v0);
    let ln_fp = normal::log_add_exp(prob.ln() + ln_f1, (1.0 - prob).ln() + ln_f0);
    Ok(LikelihoodTriple {
        ln_f0,
        ln_f1,
        ln_fp,
    })
}

/// `ln f1(y) − ln f0(y)` with `v0 = ν²/λ`.
#[inline]
pub(crate) fn log_likelihood_ratio(y: f64, mean: f64, var: f64, v0: f64) -> f64 {
    let v1 = var + v0;
    let d = y - mean;
    0.5 * (y * y / v0 - d * d / v1 + (v0 / v1).ln())
}

/// Posterior probability from a prior probability and a log-likelihood ratio.
/// Point masses at 0 and 1 are fixed points; everything else is clamped to
/// `[PROB_FLOOR, PROB_CEIL]`.
#[inline]
pub(crate) fn posterior_prob(prior: f64, llr: f64) -> f64 {
    if prior <= 0.0 || prior >= 1.0 {
        return prior;
    }
    let logit = prior.ln() - (-prior).ln_1p() + llr;
    let p = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// Apply one stage of the belief recursion.
pub fn update_state(
    state: &BeliefState,
    alloc: &Allocation,
    obs: &Observation,
    nu2: f64,
) -> Result<BeliefState> {
    let n = state.len();
    if alloc.efforts.len() != n || obs.values.len() != n || obs.observed.len() != n {
        return Err(Error::domain("alloc", "allocation, observation and state lengths differ"));
    }
    if let Some(l) = alloc.efforts.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::domain("alloc", format!("negative effort {l}")));
    }
    let spent: f64 = alloc.efforts.iter().sum();
    let budget = state.budget_remaining;
    if spent > budget + BUDGET_REL_TOL * budget.max(1.0) {
        return Err(Error::Constraint(format!(
            "stage spends {spent} but only {budget} remains"
        )));
    }
    if spent > 0.0 && !(nu2 > 0.0 && nu2.is_finite()) {
        return Err(Error::domain("nu2", format!("must be positive and finite, got {nu2}")));
    }

    let mut next = state.clone();
    for i in 0..n {
        let lambda = alloc.efforts[i];
        if lambda <= 0.0 {
            continue;
        }
        if !obs.observed[i] {
            return Err(Error::Constraint(format!(
                "component {i} has effort {lambda} but no observation"
            )));
        }
        let y = obs.values[i];
        let (p, m, v) = (state.probs[i], state.means[i], state.variances[i]);
        let v0 = nu2 / lambda;
        next.probs[i] = posterior_prob(p, log_likelihood_ratio(y, m, v, v0));
        let denom = nu2 + lambda * v;
        next.means[i] = (nu2 * m + lambda * v * y) / denom;
        next.variances[i] = nu2 * v / denom;
    }
    next.budget_remaining = (budget - spent).max(0.0);
    Ok(next)
}

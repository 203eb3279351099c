//! Sensing-effort allocation: the optimal and proportional second-stage
//! rules, first-stage budget fraction selectors, and the non-adaptive and
//! oracle baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, CoefficientSource};
use crate::error::{Error, Result};
use crate::harness::seed::mix;
use crate::model::{self, BeliefState, ModelConfig, Observation, SignalRealization};
use crate::numerics::golden;

/// Per-component sensing effort for one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub efforts: Vec<f64>,
    pub stage_budget: f64,
}

impl Allocation {
    /// Validated allocation: entries nonnegative and summing to `stage_budget`
    /// within `1e-9` relative.
    pub fn new(efforts: Vec<f64>, stage_budget: f64) -> Result<Self> {
        if let Some(l) = efforts.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::domain("alloc", format!("invalid effort {l}")));
        }
        let total: f64 = efforts.iter().sum();
        if (total - stage_budget).abs() > model::BUDGET_REL_TOL * stage_budget.max(1.0) {
            return Err(Error::Constraint(format!(
                "efforts sum to {total}, stage budget is {stage_budget}"
            )));
        }
        Ok(Allocation {
            efforts,
            stage_budget,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Allocation {
            efforts: vec![0.0; n],
            stage_budget: 0.0,
        }
    }

    /// `budget/n` on every component.
    pub fn uniform(n: usize, budget: f64) -> Self {
        Allocation {
            efforts: vec![budget / n as f64; n],
            stage_budget: budget,
        }
    }

    pub fn total(&self) -> f64 {
        self.efforts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.efforts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.efforts.is_empty()
    }
}

/// Optimal second-stage allocation together with its threshold structure.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill {
    pub allocation: Allocation,
    /// Number of components receiving effort.
    pub funded: usize,
    /// Common multiplier `C`: funded components get `C·p_i^γ − ν²/σ_i²`.
    pub multiplier: f64,
    /// Component indices in decreasing `p_i^γ σ_i²` order (ties by index).
    pub order: Vec<usize>,
}

/// Minimize `Σ p_i/(ν²/σ_i² + λ_i)^{q/2}` subject to `Σλ_i = budget`,
/// `λ_i ≥ 0`.
///
/// Components are ranked by `p_i^γ σ_i²` and the top `k` are funded, where
/// `k` is located on the non-decreasing breakpoint sequence
/// `b(k) = ν²·Σ_{j≤k} p_j^γ / (p_{k+1}^γ σ_{k+1}²) − Σ_{j≤k} ν²/σ_j²`.
pub fn water_fill(state: &BeliefState, budget: f64, q: f64, nu2: f64) -> Result<WaterFill> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::domain("budget", format!("must be finite and >= 0, got {budget}")));
    }
    if !(q > 0.0) {
        return Err(Error::domain("q", format!("must be positive, got {q}")));
    }
    if !(nu2 > 0.0) || !nu2.is_finite() {
        return Err(Error::domain("nu2", format!("must be positive and finite, got {nu2}")));
    }
    state.validate()?;
    let n = state.len();
    if n == 0 {
        return Err(Error::domain("state", "empty belief state"));
    }
    let gamma = 2.0 / (q + 2.0);

    let weights: Vec<f64> = state.probs.iter().map(|p| p.powf(gamma)).collect();
    let keys: Vec<f64> = weights
        .iter()
        .zip(&state.variances)
        .map(|(w, v)| w * v)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Unstable sort on (key desc, index asc) is a total order, so it matches
    // a stable sort by key alone.
    order.sort_unstable_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));

    if budget == 0.0 {
        return Ok(WaterFill {
            allocation: Allocation::zeros(n),
            funded: 0,
            multiplier: 0.0,
            order,
        });
    }
    if keys[order[0]] == 0.0 {
        // Every posterior is zero: the cost vanishes for any allocation.
        return Ok(WaterFill {
            allocation: Allocation::uniform(n, budget),
            funded: n,
            multiplier: 0.0,
            order,
        });
    }

    // Breakpoints b(1..n-1); b(n) = ∞ is implicit.
    let mut breaks = Vec::with_capacity(n.saturating_sub(1));
    let (mut wsum, mut isum) = (0.0, 0.0);
    let mut prev: f64 = 0.0;
    for k in 1..n {
        let i = order[k - 1];
        wsum += weights[i];
        isum += 1.0 / state.variances[i];
        let next_key = keys[order[k]];
        let b = if next_key > 0.0 {
            nu2 * (wsum / next_key - isum)
        } else {
            f64::INFINITY
        };
        // Tied keys give equal breakpoints up to rounding in the difference.
        if b < prev - 1e-9 * (nu2 * isum).max(prev.abs()) {
            return Err(Error::numerical(
                "water_fill",
                format!("breakpoints not monotone at k={k}: {b} < {prev}"),
            ));
        }
        prev = prev.max(b);
        breaks.push(prev);
    }

    // budget ∈ (b(k−1), b(k)]
    let k = 1 + breaks.partition_point(|&b| b < budget);
    let (mut wk, mut ik) = (0.0, 0.0);
    for &i in &order[..k] {
        wk += weights[i];
        ik += 1.0 / state.variances[i];
    }
    let c = (budget + nu2 * ik) / wk;

    let mut efforts = vec![0.0; n];
    let mut total = 0.0;
    for &i in &order[..k] {
        let l = (c * weights[i] - nu2 / state.variances[i]).max(0.0);
        efforts[i] = l;
        total += l;
    }
    if total > 0.0 && total != budget {
        let scale = budget / total;
        for &i in &order[..k] {
            efforts[i] *= scale;
        }
    }
    Ok(WaterFill {
        allocation: Allocation {
            efforts,
            stage_budget: budget,
        },
        funded: k,
        multiplier: c,
        order,
    })
}

/// Optimal second-stage allocation of `budget`.
pub fn second_stage_optimal(
    state: &BeliefState,
    budget: f64,
    q: f64,
    nu2: f64,
) -> Result<Allocation> {
    water_fill(state, budget, q, nu2).map(|w| w.allocation)
}

/// Effort proportional to `p_i^γ`.
pub fn second_stage_proportional(state: &BeliefState, budget: f64, gamma: f64) -> Result<Allocation> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::domain("budget", format!("must be finite and >= 0, got {budget}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    let weights: Vec<f64> = state.probs.iter().map(|p| p.powf(gamma)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all posterior probabilities are zero".into()));
    }
    Ok(Allocation {
        efforts: weights.iter().map(|w| budget * w / total).collect(),
        stage_budget: budget,
    })
}

/// Expected q-th power error after the stage: `m_q ν^q Σ p_i/(ν²/σ_i² + λ_i)^{q/2}`.
pub fn stage_cost(state: &BeliefState, alloc: &Allocation, q: f64, nu2: f64) -> Result<f64> {
    if alloc.len() != state.len() {
        return Err(Error::domain("alloc", "allocation and state lengths differ"));
    }
    let m_q = model::gaussian_moment(q)?;
    let half_q = 0.5 * q;
    // ν^q (ν²/σ² + λ)^{-q/2} = (1/σ² + λ/ν²)^{-q/2}, which stays finite as ν² → ∞.
    let sum: f64 = state
        .probs
        .iter()
        .zip(&state.variances)
        .zip(&alloc.efforts)
        .map(|((&p, &v), &l)| {
            if p == 0.0 {
                0.0
            } else {
                p * (1.0 / v + l / nu2).powf(-half_q)
            }
        })
        .sum();
    Ok(m_q * sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstStageMethod {
    ExactMc,
    BoundBased,
    AsymptoticFixedP,
    AsymptoticVanishingP,
}

/// Selected first-stage budget fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstStageChoice {
    pub lambda_frac: f64,
    pub method: FirstStageMethod,
    /// Estimated (exact MC) or bounded (bound-based) two-stage error at
    /// `lambda_frac`; NaN for the closed-form selectors.
    pub objective_value: f64,
    /// Monte Carlo standard error of `objective_value`, if estimated.
    pub std_error: Option<f64>,
    /// The objective does not discriminate between candidate fractions.
    pub undetermined: bool,
}

/// Default first-stage grid: 41 points evenly spaced on `[0, 1]`.
pub fn default_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 / 40.0).collect()
}

/// Relative spread below which the exact objective is reported as flat.
pub const FLAT_OBJECTIVE_REL: f64 = 1e-3;

/// Optimal second-stage cost after a uniform first stage, one draw per
/// component, using pre-drawn amplitudes `x` and unit noise `z`.
fn cost_to_go(config: &ModelConfig, lambda: f64, x: &[f64], z: &[f64]) -> Result<f64> {
    let n = config.n_dim;
    let prior = BeliefState::prior(config);
    let stage1 = Allocation::uniform(n, lambda * n as f64);
    let state = if lambda > 0.0 {
        let sd = (config.nu2 / lambda).sqrt();
        let obs = Observation {
            values: x.iter().zip(z).map(|(x, z)| x + sd * z).collect(),
            observed: vec![true; n],
        };
        model::update_state(&prior, &stage1, &obs, config.nu2)?
    } else {
        prior
    };
    let budget = state.budget_remaining;
    let wf = water_fill(&state, budget, config.q, config.nu2)?;
    stage_cost(&state, &wf.allocation, config.q, config.nu2)
}

/// Common-random-number draw `j` for [`first_stage_exact`].
fn exact_sample(config: &ModelConfig, seed: u64, j: usize) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, j as u64]));
    let signal = model::sample_signal_with(config, &mut rng);
    let z = (0..config.n_dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    (signal.amplitudes, z)
}

/// Mean and standard error of the cost-to-go at each `lambdas[i]`, averaged
/// over `mc_samples` shared draws.
pub fn expected_cost_to_go(
    config: &ModelConfig,
    lambdas: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    if !config.nu2.is_finite() {
        return Err(Error::domain("nu2", "simulation requires finite noise variance"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::domain("lambda", format!("{l} outside [0, 1]")));
    }
    let per_sample: Vec<Vec<f64>> = (0..mc_samples)
        .into_par_iter()
        .map(|j| {
            let (x, z) = exact_sample(config, seed, j);
            lambdas
                .iter()
                .map(|&l| cost_to_go(config, l, &x, &z))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let m = mc_samples as f64;
    Ok((0..lambdas.len())
        .map(|i| {
            let mean = per_sample.iter().map(|s| s[i]).sum::<f64>() / m;
            let var = if mc_samples > 1 {
                per_sample.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                f64::NAN
            };
            (mean, (var / m).sqrt())
        })
        .collect())
}

/// First-stage fraction minimizing the Monte Carlo estimate of the expected
/// optimal cost-to-go.
///
/// All grid points share the same `mc_samples` signal and noise draws, so
/// the estimated objective is a continuous function of `λ`; the grid argmin
/// is then refined by golden-section search on the neighbouring cells.
pub fn first_stage_exact(
    config: &ModelConfig,
    grid: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<FirstStageChoice> {
    if grid.is_empty() {
        return Err(Error::domain("grid", "empty first-stage grid"));
    }
    if mc_samples == 0 {
        return Err(Error::domain("mc_samples", "must be at least 1"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let values = expected_cost_to_go(config, &grid, mc_samples, seed)?;

    let (mut best, mut best_val) = (0, values[0]);
    for (i, v) in values.iter().enumerate() {
        if v.0 < best_val.0 {
            best = i;
            best_val = *v;
        }
    }
    let hi_val = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let undetermined = hi_val - best_val.0 <= FLAT_OBJECTIVE_REL * best_val.0;

    let (mut lambda, mut objective, mut se) = (grid[best], best_val.0, best_val.1);
    if grid.len() >= 3 && !undetermined {
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(grid.len() - 1)];
        let mut failure = None;
        let (l, v) = golden::minimize(
            |l| match expected_cost_to_go(config, &[l], mc_samples, seed) {
                Ok(v) => v[0].0,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            lo,
            hi,
            1e-3,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        if v < objective {
            lambda = l;
            objective = v;
            se = expected_cost_to_go(config, &[l], mc_samples, seed)?[0].1;
        }
    }
    Ok(FirstStageChoice {
        lambda_frac: lambda,
        method: FirstStageMethod::ExactMc,
        objective_value: objective,
        std_error: Some(se),
        undetermined,
    })
}

/// First-stage fraction maximizing the asymptotic gain lower bound with the
/// Chernoff coefficient taken from `source`.
pub fn first_stage_bound(config: &ModelConfig, source: CoefficientSource) -> Result<FirstStageChoice> {
    let report = bounds::gain_lower_bound(config, source)?;
    Ok(FirstStageChoice {
        lambda_frac: report.maximizing_lambda,
        method: FirstStageMethod::BoundBased,
        objective_value: nonadaptive_error(config) / report.gain_lower_bound,
        std_error: None,
        undetermined: report.undetermined_lambda,
    })
}

/// Regimes of the closed-form first-stage fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticRegime {
    /// Fixed sparsity, large `r`: `λ* ∝ r^{-1/(q+3)}`.
    FixedP,
    /// Vanishing sparsity, small `r`: `λ* = 1/2`.
    VanishingPLowR,
    /// Vanishing sparsity, large `r`: `λ* = 1/(q+1)`.
    VanishingPHighR,
}

pub fn first_stage_asymptotic(config: &ModelConfig, regime: AsymptoticRegime) -> Result<FirstStageChoice> {
    config.validate()?;
    let (lambda, method) = match regime {
        AsymptoticRegime::FixedP => (
            bounds::asymptotics::lambda_star_fixed_p(config)?.clamp(0.0, 1.0),
            FirstStageMethod::AsymptoticFixedP,
        ),
        AsymptoticRegime::VanishingPLowR => (0.5, FirstStageMethod::AsymptoticVanishingP),
        AsymptoticRegime::VanishingPHighR => {
            (1.0 / (config.q + 1.0), FirstStageMethod::AsymptoticVanishingP)
        }
    };
    Ok(FirstStageChoice {
        lambda_frac: lambda,
        method,
        objective_value: f64::NAN,
        std_error: None,
        undetermined: false,
    })
}

/// Expected error of uniform single-stage sensing, `m_q σ^q N p/(1+r)^{q/2}`.
pub fn nonadaptive_error(config: &ModelConfig) -> f64 {
    let q = config.q;
    config.m_q() * config.sigma2.powf(0.5 * q) * config.n_dim as f64 * config.p
        / (1.0 + config.r()).powf(0.5 * q)
}

/// Upper bound `((1 + r/p)/(1 + r))^{q/2}` on the oracle policy's gain.
pub fn oracle_gain_bound(config: &ModelConfig) -> Result<f64> {
    if !(config.p > 0.0) {
        return Err(Error::domain("p", "oracle gain is unbounded for p = 0"));
    }
    let r = config.r();
    Ok(((1.0 + r / config.p) / (1.0 + r)).powf(0.5 * config.q))
}

/// Posterior q-th power risk `m_q Σ_{support} σ_i^q(1)` after spending the
/// whole budget evenly on the true support.
pub fn oracle_policy_error(config: &ModelConfig, signal: &SignalRealization, seed: u64) -> Result<f64> {
    config.validate()?;
    let n = config.n_dim;
    if signal.len() != n {
        return Err(Error::domain("signal", "length differs from n_dim"));
    }
    let k = signal.support_size();
    if k == 0 {
        return Ok(0.0);
    }
    let share = n as f64 / k as f64;
    let efforts: Vec<f64> = signal
        .support
        .iter()
        .map(|&s| if s { share } else { 0.0 })
        .collect();
    let alloc = Allocation {
        efforts,
        stage_budget: n as f64,
    };
    let obs = model::observe(signal, &alloc, config.nu2, seed)?;
    let state = model::update_state(&BeliefState::prior(config), &alloc, &obs, config.nu2)?;
    let half_q = 0.5 * config.q;
    let risk: f64 = signal
        .support
        .iter()
        .zip(&state.variances)
        .filter(|(s, _)| **s)
        .map(|(_, v)| v.powf(half_q))
        .sum();
    Ok(config.m_q() * risk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn state(probs: Vec<f64>, variances: Vec<f64>) -> BeliefState {
        let n = probs.len();
        BeliefState {
            probs,
            means: vec![0.0; n],
            variances,
            budget_remaining: n as f64,
        }
    }

    #[test]
    fn uniform_state_gets_uniform_allocation() {
        let s = state(vec![0.3; 8], vec![2.0; 8]);
        let a = second_stage_optimal(&s, 4.0, 2.0, 1.0).unwrap();
        for l in &a.efforts {
            assert!((l - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_component_threshold() {
        let s = state(vec![0.81, 0.01], vec![1.0, 1.0]);
        let wf = water_fill(&s, 5.0, 2.0, 1.0).unwrap();
        assert_eq!(wf.funded, 1);
        assert!((wf.allocation.efforts[0] - 5.0).abs() < 1e-12);
        assert_eq!(wf.allocation.efforts[1], 0.0);

        // Independent check: the breakpoint is b(1) = ν²√p₁/(√p₂σ²) − ν²/σ² = 9 − 1.
        let b1 = (0.81f64).sqrt() / (0.01f64).sqrt() - 1.0;
        assert!((b1 - 8.0).abs() < 1e-12);

        // Grid search over λ₁ ∈ [0, 5] on the cost.
        let cost = |l1: f64| 0.81 / (1.0 + l1) + 0.01 / (1.0 + 5.0 - l1);
        let best = (0..=50_000)
            .map(|i| 5.0 * i as f64 / 50_000.0)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .unwrap();
        assert!((best - 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_budget_is_zero_allocation() {
        let s = state(vec![0.5, 0.2], vec![1.0, 3.0]);
        let a = second_stage_optimal(&s, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(a.efforts, vec![0.0, 0.0]);
        assert!(second_stage_optimal(&s, -1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn proportional_rule() {
        let s = state(vec![0.25, 0.01], vec![1.0, 1.0]);
        let a = second_stage_proportional(&s, 6.0, 0.5).unwrap();
        assert!((a.efforts[0] - 5.0).abs() < 1e-12);
        assert!((a.efforts[1] - 1.0).abs() < 1e-12);
        let zero = state(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            second_stage_proportional(&zero, 1.0, 0.5),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn stage_cost_limits() {
        let zero = state(vec![0.0; 4], vec![1.0; 4]);
        assert_eq!(stage_cost(&zero, &Allocation::uniform(4, 4.0), 2.0, 1.0).unwrap(), 0.0);

        // Prior state with the full budget spent uniformly is the
        // non-adaptive error.
        let cfg = ModelConfig::from_ratios(0.1, 16.0, 3.0, 2.0, 100).unwrap();
        let prior = BeliefState::prior(&cfg);
        let c = stage_cost(&prior, &Allocation::uniform(100, 100.0), 2.0, cfg.nu2).unwrap();
        assert!((c - nonadaptive_error(&cfg)).abs() < 1e-12);
    }

    #[test]
    fn nonadaptive_and_oracle_values() {
        let cfg = ModelConfig::new(0.1, 0.0, 1.0, 1.0 / 3.0, 100, 2.0).unwrap();
        assert!((nonadaptive_error(&cfg) - 2.5).abs() < 1e-12);
        let r0 = ModelConfig::new(1.0, 0.0, 1.0, f64::INFINITY, 10, 1.0).unwrap();
        assert!((nonadaptive_error(&r0) - 7.978_845_608).abs() < 1e-8);

        let o = ModelConfig::from_ratios(0.01, 16.0, 1.0, 2.0, 10).unwrap();
        assert!((oracle_gain_bound(&o).unwrap() - 50.5).abs() < 1e-12);
        let o0 = ModelConfig::from_ratios(0.01, 16.0, 0.0, 2.0, 10).unwrap();
        assert_eq!(oracle_gain_bound(&o0).unwrap(), 1.0);
        let big = ModelConfig::from_ratios(0.01, 16.0, 1e12, 2.0, 10).unwrap();
        assert!((oracle_gain_bound(&big).unwrap() - 100.0).abs() < 1e-6);
        let p0 = ModelConfig::from_ratios(0.0, 16.0, 1.0, 2.0, 10).unwrap();
        assert!(oracle_gain_bound(&p0).is_err());
    }

    #[test]
    fn oracle_error_cases() {
        let cfg = ModelConfig::from_ratios(0.0, 16.0, 2.0, 2.0, 50).unwrap();
        let sig = model::sample_signal(&cfg, 1).unwrap();
        assert_eq!(oracle_policy_error(&cfg, &sig, 2).unwrap(), 0.0);

        // Full support: each component gets unit effort, σ²(1) = 1/(1 + r).
        let full = ModelConfig::from_ratios(1.0, 16.0, 2.0, 2.0, 50).unwrap();
        let sig = model::sample_signal(&full, 1).unwrap();
        let e = oracle_policy_error(&full, &sig, 2).unwrap();
        assert!((e - 50.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn asymptotic_selectors() {
        let cfg = ModelConfig::from_ratios(0.01, 16.0, 1e4, 2.0, 10).unwrap();
        let low = first_stage_asymptotic(&cfg, AsymptoticRegime::VanishingPLowR).unwrap();
        assert_eq!(low.lambda_frac, 0.5);
        let high = first_stage_asymptotic(&cfg, AsymptoticRegime::VanishingPHighR).unwrap();
        assert!((high.lambda_frac - 1.0 / 3.0).abs() < 1e-15);
        let tiny_r = ModelConfig::from_ratios(0.01, 0.0, 1e-9, 2.0, 10).unwrap();
        let clamped = first_stage_asymptotic(&tiny_r, AsymptoticRegime::FixedP).unwrap();
        assert_eq!(clamped.lambda_frac, 1.0);
    }

    #[test]
    fn exact_first_stage_is_flat_at_tiny_r() {
        let cfg = ModelConfig::from_ratios(0.01, 16.0, 1e-6, 2.0, 2000).unwrap();
        let grid = default_grid();
        let v = expected_cost_to_go(&cfg, &grid, 4, 5).unwrap();
        let lo = v.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        let hi = v.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        assert!((hi - lo) / lo < 1e-3);
        let choice = first_stage_exact(&cfg, &grid, 4, 5).unwrap();
        assert!(choice.undetermined);
        assert!(first_stage_exact(&cfg, &[], 4, 5).is_err());
    }

    #[test]
    fn exact_first_stage_is_deterministic_and_consistent() {
        let cfg = ModelConfig::from_ratios(0.05, 16.0, 10.0, 2.0, 2000).unwrap();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let a = expected_cost_to_go(&cfg, &grid, 8, 9).unwrap();
        assert_eq!(a, expected_cost_to_go(&cfg, &grid, 8, 9).unwrap());
        // Doubling the sample count moves each estimate by < 3 pooled SE
        // (λ = 1 leaves nothing random in the cost).
        let b = expected_cost_to_go(&cfg, &grid, 16, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let pooled = (x.1 * x.1 + y.1 * y.1).sqrt();
            assert!((x.0 - y.0).abs() <= 3.0 * pooled + 1e-12 * x.0, "{x:?} vs {y:?}");
        }
    }

    fn random_state(rng: &mut impl Rng, n: usize) -> BeliefState {
        let probs = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                // Mix of tiny, moderate and near-one probabilities.
                match rng.random_range(0..3) {
                    0 => u * 1e-3,
                    1 => u,
                    _ => 1.0 - u * 1e-3,
                }
            })
            .collect();
        let variances = (0..n).map(|_| 0.05 + 3.0 * rng.random::<f64>()).collect();
        state(probs, variances)
    }

    #[test]
    fn beats_random_feasible_allocations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(1..=16);
            let s = random_state(&mut rng, n);
            let budget = 10.0 * rng.random::<f64>();
            let nu2 = 0.1 + rng.random::<f64>();
            let q = [1.0, 2.0, 3.0][rng.random_range(0..3)];
            let opt = second_stage_optimal(&s, budget, q, nu2).unwrap();
            let best = stage_cost(&s, &opt, q, nu2).unwrap();
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
                let t: f64 = raw.iter().sum();
                let alloc = Allocation::uniform(n, budget);
                let alloc = Allocation {
                    efforts: raw.iter().map(|x| budget * x / t).collect(),
                    ..alloc
                };
                assert!(best <= stage_cost(&s, &alloc, q, nu2).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn kkt_structure_and_conservation(
            seed in any::<u64>(),
            n in 1usize..30,
            budget in 0.0f64..50.0,
            q in 0.5f64..4.0,
            nu2 in 0.05f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_state(&mut rng, n);
            let wf = water_fill(&s, budget, q, nu2).unwrap();
            let a = &wf.allocation;
            prop_assert!(a.efforts.iter().all(|l| *l >= 0.0));
            prop_assert!((a.total() - budget).abs() <= 1e-9 * budget.max(1.0));
            if budget > 0.0 {
                let gamma = 2.0 / (q + 2.0);
                let key = |i: usize| s.probs[i].powf(gamma) * s.variances[i];
                let funded_min = wf.order[..wf.funded].iter().map(|&i| key(i)).fold(f64::INFINITY, f64::min);
                for &i in &wf.order[..wf.funded] {
                    let expect = wf.multiplier * s.probs[i].powf(gamma) - nu2 / s.variances[i];
                    prop_assert!((a.efforts[i] - expect.max(0.0)).abs() <= 1e-9 * (1.0 + expect.abs()));
                }
                for &i in &wf.order[wf.funded..] {
                    prop_assert_eq!(a.efforts[i], 0.0);
                    prop_assert!(key(i) <= funded_min);
                }
            }
        }

        #[test]
        fn permutation_equivariance(seed in any::<u64>(), n in 2usize..20, budget in 0.1f64..30.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_state(&mut rng, n);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = state(
                perm.iter().map(|&i| s.probs[i]).collect(),
                perm.iter().map(|&i| s.variances[i]).collect(),
            );
            let a = second_stage_optimal(&s, budget, 2.0, 1.0).unwrap();
            let b = second_stage_optimal(&permuted, budget, 2.0, 1.0).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert!((b.efforts[j] - a.efforts[i]).abs() <= 1e-12 * budget.max(1.0));
            }
        }

        #[test]
        fn proportional_never_beats_optimal(seed in any::<u64>(), n in 1usize..25, budget in 0.0f64..40.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_state(&mut rng, n);
            let opt = second_stage_optimal(&s, budget, 2.0, 0.7).unwrap();
            let prop = second_stage_proportional(&s, budget, 0.5).unwrap();
            let c_opt = stage_cost(&s, &opt, 2.0, 0.7).unwrap();
            let c_prop = stage_cost(&s, &prop, 2.0, 0.7).unwrap();
            prop_assert!(c_opt <= c_prop * (1.0 + 1e-12));
        }
    }
}

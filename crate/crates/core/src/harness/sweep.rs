//! Monte Carlo gain estimation over an SNR grid, first-stage fraction
//! comparisons, and the empirical tail check of the first-stage average.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::seed::{mix, trial_seed};
use super::trial::{run_trial, Policy, TrialOutcome};
use crate::allocation::{self, Allocation, AsymptoticRegime, FirstStageChoice};
use crate::bounds::{self, ChernoffInputs, CoefficientSource};
use crate::error::{Error, Result};
use crate::model::{self, BeliefState, ModelConfig};
use crate::{from_db, to_db};

/// Everything needed to reproduce a gain sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Prior and dimension; its noise level is replaced by each grid point.
    pub config: ModelConfig,
    /// SNR-budget ratios `r` in dB.
    pub r_db: Vec<f64>,
    pub policies: Vec<Policy>,
    pub trials: usize,
    pub base_seed: u64,
    /// Shared draws per λ when estimating the exact first-stage objective.
    pub mc_samples_first_stage: usize,
    /// Points of the first-stage λ grid on `[0, 1]`.
    pub lambda_grid_points: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trials == 0 {
            return Err(Error::domain("trials", "must be at least 1"));
        }
        if self.r_db.is_empty() || self.r_db.iter().any(|r| !r.is_finite()) {
            return Err(Error::domain("r_db", "grid must be non-empty and finite"));
        }
        if self.policies.is_empty() {
            return Err(Error::domain("policies", "at least one policy is required"));
        }
        if self.mc_samples_first_stage == 0 {
            return Err(Error::domain("mc_samples", "must be at least 1"));
        }
        if self.lambda_grid_points < 2 {
            return Err(Error::domain("lambda_grid_points", "must be at least 2"));
        }
        if !(self.config.p > 0.0 && self.config.p < 1.0) {
            return Err(Error::domain("p", "gain sweeps need 0 < p < 1"));
        }
        Ok(())
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        let k = self.lambda_grid_points - 1;
        (0..=k).map(|i| i as f64 / k as f64).collect()
    }
}

/// One `(policy, r)` row of a gain sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: Policy,
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub r_db: f64,
    pub lambda: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub gain_db: f64,
    pub bound_gain_db: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Diagnostics carried alongside each row but not part of the CSV layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDiagnostics {
    /// Standard error of `gain_db`, propagated from the error mean.
    pub gain_std_db: f64,
    pub mean_posterior_risk: f64,
    pub analytic_nonadaptive_error: f64,
    pub oracle_gain_bound_db: f64,
    pub lambda_undetermined: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    pub diagnostics: Vec<RowDiagnostics>,
    pub wall_time_s: f64,
}

impl ExperimentSummary {
    pub fn row(&self, policy: Policy, r_db: f64) -> Option<(&SummaryRow, &RowDiagnostics)> {
        self.rows
            .iter()
            .zip(&self.diagnostics)
            .find(|(r, _)| r.policy == policy && r.r_db == r_db)
    }
}

/// First-stage fractions selected at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaRow {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub r_db: f64,
    pub lambda_exact: f64,
    pub exact_objective: f64,
    pub exact_std_error: f64,
    pub exact_undetermined: bool,
    pub lambda_bound: f64,
    pub bound_undetermined: bool,
    pub lambda_asymptotic: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Seed for the exact first-stage objective at sweep point `r_index`.
fn first_stage_seed(base_seed: u64, r_index: usize) -> u64 {
    mix(&[base_seed, r_index as u64, u64::MAX])
}

struct PointChoices {
    exact: Option<FirstStageChoice>,
    bound: FirstStageChoice,
    asymptotic: FirstStageChoice,
    bound_gain: f64,
}

fn choose_fractions(spec: &ExperimentSpec, config: &ModelConfig, r_index: usize, need_exact: bool) -> Result<PointChoices> {
    let source = CoefficientSource::default_for(config.q);
    let report = bounds::gain_lower_bound(config, source)?;
    let bound = FirstStageChoice {
        lambda_frac: report.maximizing_lambda,
        method: allocation::FirstStageMethod::BoundBased,
        objective_value: allocation::nonadaptive_error(config) / report.gain_lower_bound,
        std_error: None,
        undetermined: report.undetermined_lambda,
    };
    let exact = if need_exact {
        Some(allocation::first_stage_exact(
            config,
            &spec.lambda_grid(),
            spec.mc_samples_first_stage,
            first_stage_seed(spec.base_seed, r_index),
        )?)
    } else {
        None
    };
    Ok(PointChoices {
        exact,
        bound,
        asymptotic: allocation::first_stage_asymptotic(config, AsymptoticRegime::FixedP)?,
        bound_gain: report.gain_lower_bound,
    })
}

/// Run every policy at every grid point, calling `on_row` as each row
/// completes (in grid order, then policy order).
pub fn estimate_gain_with<F>(spec: &ExperimentSpec, mut on_row: F) -> Result<ExperimentSummary>
where
    F: FnMut(&SummaryRow, &RowDiagnostics) -> Result<()>,
{
    spec.validate()?;
    let start = Instant::now();
    let need_exact = spec
        .policies
        .iter()
        .any(|p| matches!(p, Policy::OptimalTwoStage | Policy::SuboptSecondStage));
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();

    for (r_index, &r_db) in spec.r_db.iter().enumerate() {
        let config = spec.config.with_r(from_db(r_db))?;
        let choices = choose_fractions(spec, &config, r_index, need_exact)?;
        let j_na = allocation::nonadaptive_error(&config);
        let oracle_bound = allocation::oracle_gain_bound(&config)?;

        for &policy in &spec.policies {
            let row_start = Instant::now();
            let choice = match policy {
                Policy::OptimalTwoStage | Policy::SuboptSecondStage => choices.exact,
                Policy::SuboptFirstStage => Some(choices.bound),
                Policy::LargeRApprox => Some(choices.asymptotic),
                Policy::Nonadaptive | Policy::Oracle => None,
            };
            let lambda = choice.map_or(0.0, |c| c.lambda_frac);
            let outcomes: Vec<TrialOutcome> = (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(&config, policy, lambda, trial_seed(spec.base_seed, r_index, t)))
                .collect::<Result<_>>()?;
            let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
            let risks: Vec<f64> = outcomes.iter().map(|o| o.posterior_risk).collect();
            let (mean, se) = mean_and_se(&errors);
            let row = SummaryRow {
                policy,
                p: config.p,
                q: config.q,
                s: config.s(),
                r_db,
                lambda,
                mean_error: mean,
                std_error: se,
                gain_db: to_db(j_na / mean),
                bound_gain_db: to_db(choices.bound_gain),
                trials: spec.trials,
                seed: spec.base_seed,
            };
            let diag = RowDiagnostics {
                gain_std_db: 10.0 / std::f64::consts::LN_10 * se / mean,
                mean_posterior_risk: mean_and_se(&risks).0,
                analytic_nonadaptive_error: j_na,
                oracle_gain_bound_db: to_db(oracle_bound),
                lambda_undetermined: choice.is_some_and(|c| c.undetermined),
                wall_time_s: row_start.elapsed().as_secs_f64(),
            };
            on_row(&row, &diag)?;
            rows.push(row);
            diagnostics.push(diag);
        }
    }
    Ok(ExperimentSummary {
        rows,
        diagnostics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn estimate_gain(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    estimate_gain_with(spec, |_, _| Ok(()))
}

/// Exact, bound-based and closed-form first-stage fractions over the grid.
/// The exact Monte Carlo search is skipped when `mc_samples` is zero.
pub fn lambda_comparison(
    config: &ModelConfig,
    r_db: &[f64],
    grid: &[f64],
    mc_samples: usize,
    base_seed: u64,
) -> Result<Vec<LambdaRow>> {
    r_db.iter()
        .enumerate()
        .map(|(r_index, &db)| {
            let c = config.with_r(from_db(db))?;
            let bound = allocation::first_stage_bound(&c, CoefficientSource::default_for(c.q))?;
            let asym = allocation::first_stage_asymptotic(&c, AsymptoticRegime::FixedP)?;
            let exact = if mc_samples > 0 {
                Some(allocation::first_stage_exact(
                    &c,
                    grid,
                    mc_samples,
                    first_stage_seed(base_seed, r_index),
                )?)
            } else {
                None
            };
            Ok(LambdaRow {
                p: c.p,
                q: c.q,
                s: c.s(),
                r_db: db,
                lambda_exact: exact.map_or(f64::NAN, |e| e.lambda_frac),
                exact_objective: exact.map_or(f64::NAN, |e| e.objective_value),
                exact_std_error: exact.and_then(|e| e.std_error).unwrap_or(f64::NAN),
                exact_undetermined: exact.is_some_and(|e| e.undetermined),
                lambda_bound: bound.lambda_frac,
                bound_undetermined: bound.undetermined,
                lambda_asymptotic: asym.lambda_frac,
            })
        })
        .collect()
}

/// Result of the empirical check of the first-stage concentration bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCheck {
    /// Fraction of trials with `(1/N)Σp_i^γ(1) > (1+ε)p^γ C_p^γ`.
    pub empirical_freq: f64,
    /// `1 −` the Bernstein probability.
    pub bound_freq: f64,
    pub threshold: f64,
    pub cp_gamma: f64,
    pub cp_2gamma: Option<f64>,
    pub trials: usize,
}

impl TailCheck {
    pub fn passed(&self) -> bool {
        self.empirical_freq <= self.bound_freq
    }
}

/// Simulate the first stage `trials` times and count how often the average
/// of `p_i^γ(1)` exceeds `(1+ε)p^γ C_p^γ`.
pub fn tail_check_lemma1(
    config: &ModelConfig,
    lambda_frac: f64,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<TailCheck> {
    config.validate()?;
    if trials < 100 {
        return Err(Error::domain("trials", format!("need at least 100, got {trials}")));
    }
    if !(lambda_frac > 0.0 && lambda_frac <= 1.0) {
        return Err(Error::domain("lambda", format!("must lie in (0, 1], got {lambda_frac}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon", format!("must be positive, got {epsilon}")));
    }
    if !config.nu2.is_finite() {
        return Err(Error::domain("nu2", "simulation requires finite noise variance"));
    }
    let gamma = config.gamma();
    let inputs = ChernoffInputs::from_config(config, lambda_frac)?;
    let cp = bounds::chernoff_exact(&inputs, 1e-10)?;
    let cp2 = if gamma <= 0.5 {
        Some(bounds::chernoff_exact(&inputs.with_gamma(2.0 * gamma)?, 1e-10)?)
    } else {
        None
    };
    let threshold = (1.0 + epsilon) * config.p.powf(gamma) * cp;
    let n = config.n_dim;
    let stage1 = Allocation::uniform(n, lambda_frac * n as f64);
    let prior = BeliefState::prior(config);

    let exceed: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, t as u64]));
            let signal = model::sample_signal_with(config, &mut rng);
            let obs = model::observe_with(&signal, &stage1, config.nu2, &mut rng)?;
            let state = model::update_state(&prior, &stage1, &obs, config.nu2)?;
            let avg = state.probs.iter().map(|p| p.powf(gamma)).sum::<f64>() / n as f64;
            Ok(avg > threshold)
        })
        .collect::<Result<_>>()?;
    let hits = exceed.iter().filter(|&&e| e).count();
    let prob = bounds::finite_n_probability(n, config.p, gamma, epsilon, cp, cp2)?;
    Ok(TailCheck {
        empirical_freq: hits as f64 / trials as f64,
        bound_freq: 1.0 - prob,
        threshold,
        cp_gamma: cp,
        cp_2gamma: cp2,
        trials,
    })
}

/// One grid point of the analytic bounds table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsRow {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub r_db: f64,
    pub lambda_star: f64,
    pub c0: f64,
    pub cp_exact: f64,
    pub cp_prop1: f64,
    pub cp_prop1_weak: f64,
    /// NaN unless `q = 2`.
    pub cp_prop2: f64,
    pub gain_bound_db: f64,
    pub undetermined_lambda: bool,
}

/// Gain lower bound and Chernoff quantities at every grid point; no
/// simulation is involved.
pub fn bounds_table(config: &ModelConfig, r_db: &[f64], source: CoefficientSource) -> Result<Vec<BoundsRow>> {
    r_db.iter()
        .map(|&db| {
            let c = config.with_r(from_db(db))?;
            let rep = bounds::gain_lower_bound(&c, source)?;
            Ok(BoundsRow {
                p: c.p,
                q: c.q,
                s: c.s(),
                r_db: db,
                lambda_star: rep.maximizing_lambda,
                c0: rep.c0,
                cp_exact: rep.cp_exact,
                cp_prop1: rep.cp_upper_prop1,
                cp_prop1_weak: rep.cp_upper_prop1_weak,
                cp_prop2: rep.cp_upper_prop2.unwrap_or(f64::NAN),
                gain_bound_db: to_db(rep.gain_lower_bound),
                undetermined_lambda: rep.undetermined_lambda,
            })
        })
        .collect()
}

//! One seeded end-to-end trial of a sensing policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::seed::mix;
use crate::allocation::{self, Allocation};
use crate::error::{Error, Result};
use crate::model::{self, BeliefState, ModelConfig, SignalRealization};

/// Sensing policies compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Exact Monte Carlo first-stage fraction, optimal second stage.
    OptimalTwoStage,
    /// Bound-optimizing first-stage fraction, optimal second stage.
    SuboptFirstStage,
    /// Exact first-stage fraction, second stage proportional to `p_i^γ`.
    SuboptSecondStage,
    /// High-SNR closed-form first-stage fraction, optimal second stage.
    LargeRApprox,
    /// Whole budget spread uniformly in a single stage.
    Nonadaptive,
    /// Whole budget spread uniformly over the true support.
    Oracle,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::OptimalTwoStage,
        Policy::SuboptFirstStage,
        Policy::SuboptSecondStage,
        Policy::LargeRApprox,
        Policy::Nonadaptive,
        Policy::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::OptimalTwoStage => "optimal_two_stage",
            Policy::SuboptFirstStage => "subopt_first_stage",
            Policy::SuboptSecondStage => "subopt_second_stage",
            Policy::LargeRApprox => "large_r_approx",
            Policy::Nonadaptive => "nonadaptive",
            Policy::Oracle => "oracle",
        }
    }

    /// Whether the policy has a first stage whose fraction must be chosen.
    pub fn is_two_stage(&self) -> bool {
        !matches!(self, Policy::Nonadaptive | Policy::Oracle)
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown policy '{s}'")))
    }
}

/// Realized outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    /// `Σ_{support} |x̂_i − x_i|^q`.
    pub error: f64,
    /// `m_q Σ_{support} σ_i^q` of the final belief; a lower-variance
    /// estimate of the same expectation.
    pub posterior_risk: f64,
    pub support_size: usize,
    pub lambda_used: f64,
    pub seed: u64,
}

/// Belief states after each stage, for debugging a single trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<BeliefState>,
    pub allocations: Vec<Allocation>,
}

// Independent streams inside one trial.
const SIGNAL_STREAM: u64 = 1;
const STAGE1_STREAM: u64 = 2;
const STAGE2_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, id]))
}

/// Run `policy` once. `lambda_frac` is the first-stage fraction for the
/// two-stage policies and ignored by the single-stage ones.
pub fn run_trial(config: &ModelConfig, policy: Policy, lambda_frac: f64, seed: u64) -> Result<TrialOutcome> {
    run(config, policy, lambda_frac, seed, None)
}

/// [`run_trial`] that also records the belief trajectory.
pub fn run_trial_traced(
    config: &ModelConfig,
    policy: Policy,
    lambda_frac: f64,
    seed: u64,
) -> Result<(TrialOutcome, SignalRealization, Trajectory)> {
    let mut trace = Trajectory {
        states: Vec::new(),
        allocations: Vec::new(),
    };
    let mut rng = stream(seed, SIGNAL_STREAM);
    config.validate()?;
    let signal = model::sample_signal_with(config, &mut rng);
    let outcome = run(config, policy, lambda_frac, seed, Some(&mut trace))?;
    Ok((outcome, signal, trace))
}

fn run(
    config: &ModelConfig,
    policy: Policy,
    lambda_frac: f64,
    seed: u64,
    mut trace: Option<&mut Trajectory>,
) -> Result<TrialOutcome> {
    config.validate()?;
    if !config.nu2.is_finite() {
        return Err(Error::domain("nu2", "simulation requires finite noise variance"));
    }
    if !(0.0..=1.0).contains(&lambda_frac) {
        return Err(Error::domain("lambda", format!("must lie in [0, 1], got {lambda_frac}")));
    }
    let n = config.n_dim;
    let nu2 = config.nu2;
    let signal = model::sample_signal_with(config, &mut stream(seed, SIGNAL_STREAM));
    let mut state = BeliefState::prior(config);
    let mut record = |state: &BeliefState, alloc: Option<&Allocation>| {
        if let Some(t) = trace.as_deref_mut() {
            t.states.push(state.clone());
            if let Some(a) = alloc {
                t.allocations.push(a.clone());
            }
        }
    };
    record(&state, None);

    let stage = |state: &BeliefState, alloc: &Allocation, id: u64| -> Result<BeliefState> {
        let obs = model::observe_with(&signal, alloc, nu2, &mut stream(seed, id))?;
        model::update_state(state, alloc, &obs, nu2)
    };

    let lambda_used = match policy {
        Policy::Nonadaptive => {
            let alloc = Allocation::uniform(n, n as f64);
            state = stage(&state, &alloc, STAGE1_STREAM)?;
            record(&state, Some(&alloc));
            0.0
        }
        Policy::Oracle => {
            let k = signal.support_size();
            let alloc = if k == 0 {
                Allocation::zeros(n)
            } else {
                let share = n as f64 / k as f64;
                Allocation {
                    efforts: signal.support.iter().map(|&s| if s { share } else { 0.0 }).collect(),
                    stage_budget: n as f64,
                }
            };
            state = stage(&state, &alloc, STAGE1_STREAM)?;
            record(&state, Some(&alloc));
            0.0
        }
        _ => {
            if lambda_frac > 0.0 {
                let alloc = Allocation::uniform(n, lambda_frac * n as f64);
                state = stage(&state, &alloc, STAGE1_STREAM)?;
                record(&state, Some(&alloc));
            }
            let budget = state.budget_remaining;
            let alloc = if policy == Policy::SuboptSecondStage {
                // With every posterior at zero any split costs nothing.
                if state.probs.iter().all(|&p| p == 0.0) {
                    Allocation::uniform(n, budget)
                } else {
                    allocation::second_stage_proportional(&state, budget, config.gamma())?
                }
            } else {
                allocation::second_stage_optimal(&state, budget, config.q, nu2)?
            };
            if budget > 0.0 {
                state = stage(&state, &alloc, STAGE2_STREAM)?;
                record(&state, Some(&alloc));
            }
            lambda_frac
        }
    };

    let q = config.q;
    let half_q = 0.5 * q;
    let (mut error, mut risk) = (0.0, 0.0);
    for i in (0..n).filter(|&i| signal.support[i]) {
        let d = (state.means[i] - signal.amplitudes[i]).abs();
        error += if q == 2.0 { d * d } else { d.powf(q) };
        risk += state.variances[i].powf(half_q);
    }
    Ok(TrialOutcome {
        error,
        posterior_risk: config.m_q() * risk,
        support_size: signal.support_size(),
        lambda_used,
        seed,
    })
}

//! The semifactual properties and the gain/diversity metrics.
//!
//! Validity is a 0/1 constraint. Temporal distance, stochastic uncertainty,
//! fidelity and exceptionality all live in `[0, 1]` and are minimized.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::envs::{Action, EnvState, Environment};
use crate::error::{Error, Result};
use crate::policy::{action_distribution, QFunction};
use crate::seeding;

/// One executed step of a rollout, with the realized transition probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub state: EnvState,
    pub action: Action,
    pub step_seed: u64,
    pub prob: f64,
    pub next_state: EnvState,
}

/// An action sequence executed from `start_state` under fixed step seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub start_state: EnvState,
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    /// Executes `actions` with `seeds[t]` at step `t`, stopping early when a
    /// terminal state is reached.
    pub fn execute<E: Environment + ?Sized>(
        env: &E,
        start: &EnvState,
        actions: &[Action],
        seeds: &[u64],
    ) -> Result<Rollout> {
        if seeds.len() < actions.len() {
            return Err(Error::LengthMismatch { left: seeds.len(), right: actions.len() });
        }
        let mut steps = Vec::with_capacity(actions.len());
        let mut state = *start;
        for (&action, &seed) in actions.iter().zip(seeds) {
            if env.is_terminal(&state) {
                break;
            }
            let tr = env.step(&state, action, seed)?;
            steps.push(RolloutStep { state, action, step_seed: seed, prob: tr.prob, next_state: tr.next_state });
            state = tr.next_state;
        }
        Ok(Rollout { start_state: *start, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn end_state(&self) -> &EnvState {
        self.steps.last().map_or(&self.start_state, |s| &s.next_state)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn prefix(&self, len: usize) -> Rollout {
        Rollout { start_state: self.start_state, steps: self.steps[..len.min(self.steps.len())].to_vec() }
    }
}

/// Scores of one semifactual candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyScores {
    pub validity: bool,
    pub temporal_distance: f64,
    pub stochastic_uncertainty: f64,
    pub fidelity: f64,
    pub exceptionality: f64,
}

impl PropertyScores {
    /// Worst case on every minimized objective.
    pub const WORST: PropertyScores = PropertyScores {
        validity: true,
        temporal_distance: 1.0,
        stochastic_uncertainty: 1.0,
        fidelity: 1.0,
        exceptionality: 1.0,
    };

    /// Objective vector in the fixed order `[TD, SU, F, E]`.
    pub fn objectives(&self) -> [f64; 4] {
        [self.temporal_distance, self.stochastic_uncertainty, self.fidelity, self.exceptionality]
    }
}

/// Which states the softmax in [`fidelity`] is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMode {
    /// Each action is scored at the state it was taken in.
    #[default]
    PerStep,
    /// Every action is scored at one fixed state (the factual one).
    FactualState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn of<E: Environment + ?Sized>(env: &E, state: &EnvState) -> Self {
        FeatureVector(env.encode_features(state))
    }
}

/// 1 iff the policy picks the same action in both states.
pub fn validity<Q: QFunction + ?Sized>(q: &Q, s: &EnvState, s_prime: &EnvState) -> bool {
    q.greedy_action(s) == q.greedy_action(s_prime)
}

/// Rollout length normalized by the horizon.
pub fn temporal_distance(len: usize, horizon: usize) -> Result<f64> {
    if len == 0 {
        return Err(Error::EmptyRollout);
    }
    if len > horizon {
        return Err(Error::RolloutTooLong { len, horizon });
    }
    Ok(len as f64 / horizon as f64)
}

/// Monte-Carlo probability that re-running `actions` from `start` under
/// freshly sampled step seeds ends in a state where the policy still picks
/// its action at `factual`. Runs that hit a terminal state early count as
/// outcome changes.
pub fn stochastic_uncertainty<Q, E>(
    q: &Q,
    env: &E,
    factual: &EnvState,
    actions: &[Action],
    start: &EnvState,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidSampleCount);
    }
    let target = q.greedy_action(factual);
    let mut preserved = 0usize;
    for j in 0..samples {
        let mut state = *start;
        let mut cut_short = false;
        for (t, &action) in actions.iter().enumerate() {
            if env.is_terminal(&state) {
                cut_short = true;
                break;
            }
            state = env.step(&state, action, seeding::derive(seed, &[j as u64, t as u64]))?.next_state;
        }
        if !cut_short && !env.is_terminal(&state) && q.greedy_action(&state) == target {
            preserved += 1;
        }
    }
    Ok(preserved as f64 / samples as f64)
}

/// One minus the softmax probability of the rollout's action sequence, each
/// action scored at the state it was taken in.
pub fn fidelity<Q: QFunction + ?Sized>(q: &Q, rollout: &Rollout) -> Result<f64> {
    if rollout.is_empty() {
        return Err(Error::EmptyRollout);
    }
    let prob: f64 = rollout
        .steps
        .iter()
        .map(|s| action_distribution(q, &s.state)[s.action.0])
        .product();
    Ok(1.0 - prob)
}

/// Fidelity with every action scored at the single state `at`.
pub fn fidelity_at<Q: QFunction + ?Sized>(q: &Q, at: &EnvState, actions: &[Action]) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::EmptyRollout);
    }
    let dist = action_distribution(q, at);
    Ok(1.0 - actions.iter().map(|a| dist[a.0]).product::<f64>())
}

/// Mean realized transition probability along the rollout.
pub fn exceptionality(rollout: &Rollout) -> Result<f64> {
    if rollout.is_empty() {
        return Err(Error::EmptyRollout);
    }
    Ok(rollout.steps.iter().map(|s| s.prob).sum::<f64>() / rollout.len() as f64)
}

/// Euclidean feature distance.
pub fn gain(x: &[f64], x_prime: &[f64]) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: x_prime.len() });
    }
    Ok(libm::sqrt(x.iter().zip(x_prime).map(|(a, b)| (a - b) * (a - b)).sum()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    /// Mean distance from the factual features to each member.
    pub to_factual: f64,
    /// Mean distance over unordered pairs of members; 0 for singletons.
    pub pairwise: f64,
}

pub fn diversity(x: &[f64], set: &[Vec<f64>]) -> Result<Diversity> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut to_factual = 0.0;
    for member in set {
        to_factual += gain(x, member)?;
    }
    to_factual /= set.len() as f64;
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            pair_sum += gain(&set[i], &set[j])?;
            pairs += 1;
        }
    }
    let pairwise = if pairs == 0 { 0.0 } else { pair_sum / pairs as f64 };
    Ok(Diversity { to_factual, pairwise })
}

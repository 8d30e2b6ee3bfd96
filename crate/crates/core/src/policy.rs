//! Black-box policies seen through their Q-values.
//!
//! Everything downstream only needs [`QFunction`]; [`QTable`] trained by
//! tabular Q-learning is the default implementation.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, EnvState, Environment};
use crate::error::{Error, Result};
use crate::seeding;

pub trait QFunction {
    fn num_actions(&self) -> usize;

    fn q_values(&self, state: &EnvState) -> Vec<f64>;

    /// Argmax of the Q-values, lowest index on ties.
    fn greedy_action(&self, state: &EnvState) -> Action {
        Action(argmax(&self.q_values(state)))
    }
}

impl<Q: QFunction + ?Sized> QFunction for &Q {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn q_values(&self, state: &EnvState) -> Vec<f64> {
        (**self).q_values(state)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-1 softmax, shifted by the max for stability.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax policy distribution over actions at `state`.
pub fn action_distribution<Q: QFunction + ?Sized>(q: &Q, state: &EnvState) -> Vec<f64> {
    softmax(&q.q_values(state))
}

pub fn greedy_action<Q: QFunction + ?Sized>(q: &Q, state: &EnvState) -> Action {
    q.greedy_action(state)
}

/// Q-function given by a closure; handy for hand-built policies.
pub struct FnQ<F> {
    num_actions: usize,
    f: F,
}

impl<F: Fn(&EnvState) -> Vec<f64>> FnQ<F> {
    pub fn new(num_actions: usize, f: F) -> Self {
        FnQ { num_actions, f }
    }
}

impl<F: Fn(&EnvState) -> Vec<f64>> QFunction for FnQ<F> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn q_values(&self, state: &EnvState) -> Vec<f64> {
        (self.f)(state)
    }
}

/// Tabular Q-function; unseen states read as all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    num_actions: usize,
    table: BTreeMap<EnvState, Vec<f64>>,
}

impl QTable {
    pub fn new(num_actions: usize) -> Self {
        QTable { num_actions, table: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, state: &EnvState) -> Option<&[f64]> {
        self.table.get(state).map(Vec::as_slice)
    }

    pub fn insert(&mut self, state: EnvState, values: Vec<f64>) -> Result<()> {
        if values.len() != self.num_actions {
            return Err(Error::LengthMismatch { left: values.len(), right: self.num_actions });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("Q-values must be finite".to_string()));
        }
        self.table.insert(state, values);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EnvState, &[f64])> {
        self.table.iter().map(|(k, v)| (k, v.as_slice()))
    }

    fn entry(&mut self, state: EnvState) -> &mut Vec<f64> {
        let n = self.num_actions;
        self.table.entry(state).or_insert_with(|| vec![0.0; n])
    }
}

impl QFunction for QTable {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn q_values(&self, state: &EnvState) -> Vec<f64> {
        self.table.get(state).cloned().unwrap_or_else(|| vec![0.0; self.num_actions])
    }

    fn greedy_action(&self, state: &EnvState) -> Action {
        match self.table.get(state) {
            Some(q) => Action(argmax(q)),
            None => Action(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which epsilon decays linearly; `None` means half of `steps`.
    pub epsilon_decay_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 300_000,
            learning_rate: 0.1,
            discount: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        let decay = self.epsilon_decay_steps.unwrap_or(self.steps / 2);
        if decay == 0 || step >= decay {
            return self.epsilon_end;
        }
        let frac = step as f64 / decay as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Epsilon-greedy tabular Q-learning. Deterministic given `config.seed`.
pub fn train<E: Environment + ?Sized>(env: &E, config: &TrainingConfig) -> Result<QTable> {
    config.validate()?;
    let n = env.num_actions();
    let mut q = QTable::new(n);
    let mut rng = seeding::rng(config.seed);
    let mut state = env.initial_state();
    let mut episode_len = 0;
    for step in 0..config.steps {
        let action = if rng.gen::<f64>() < config.epsilon(step) {
            rng.gen_range(0..n)
        } else {
            q.greedy_action(&state).0
        };
        let tr = env.step(&state, Action(action), rng.gen())?;
        let bootstrap = if tr.terminal {
            0.0
        } else {
            q.get(&tr.next_state).map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        let target = tr.reward + config.discount * bootstrap;
        let slot = &mut q.entry(state)[action];
        *slot += config.learning_rate * (target - *slot);

        episode_len += 1;
        if tr.terminal || episode_len >= env.max_steps() {
            state = env.initial_state();
            episode_len = 0;
        } else {
            state = tr.next_state;
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvSpec, Pos};

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 6]);
        assert!(p.iter().all(|&x| approx(x, 1.0 / 6.0, 1e-15)));
        let e = core::f64::consts::E;
        let p = softmax(&[1.0, 0.0]);
        assert!(approx(p[0], e / (e + 1.0), 1e-15));
        assert!(approx(p[1], 1.0 / (e + 1.0), 1e-15));
        assert!(approx(p[0], 0.73106, 1e-5));
        let shifted = softmax(&[1001.0, 1000.0]);
        assert!(approx(shifted[0], p[0], 1e-12));
        let huge = softmax(&[1e300, -1e300, 0.0]);
        assert_eq!(huge, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn greedy_tie_break_is_lowest_index() {
        assert_eq!(argmax(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[3.0; 6]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        let q = FnQ::new(3, |_: &EnvState| vec![0.5, 0.5, 0.1]);
        let s = EnvSpec::from_name("frozen_lake").unwrap().build().unwrap().initial_state();
        assert_eq!(greedy_action(&q, &s), Action(0));
        let dist = action_distribution(&q, &s);
        assert!(approx(dist.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn zero_steps_gives_empty_table() {
        let env = EnvSpec::from_name("gridworld").unwrap().build().unwrap();
        let q = train(&env, &TrainingConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(q.is_empty());
        assert_eq!(q.q_values(&env.initial_state()), vec![0.0; 6]);
    }

    #[test]
    fn training_is_deterministic() {
        let env = EnvSpec::from_name("gridworld").unwrap().build().unwrap();
        let cfg = TrainingConfig { steps: 20_000, seed: 4, ..Default::default() };
        let a = train(&env, &cfg).unwrap();
        let b = train(&env, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&env, &TrainingConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_training_config() {
        let env = EnvSpec::from_name("frozen_lake").unwrap().build().unwrap();
        for cfg in [
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { learning_rate: 1.5, ..Default::default() },
            TrainingConfig { discount: -0.1, ..Default::default() },
        ] {
            assert!(matches!(train(&env, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainingConfig { steps: 100, ..Default::default() };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!(approx(cfg.epsilon(25), 0.525, 1e-12));
        assert_eq!(cfg.epsilon(50), 0.05);
        assert_eq!(cfg.epsilon(99), 0.05);
    }

    #[test]
    fn insert_validates_length() {
        let mut q = QTable::new(5);
        let s = EnvState { agent: Pos::new(0, 0), dragon: None, obstacles: Default::default(), done: false };
        assert!(q.insert(s, vec![0.0; 4]).is_err());
        assert!(q.insert(s, vec![f64::NAN; 5]).is_err());
        q.insert(s, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(q.greedy_action(&s), Action(2));
    }
}

//! Stochastic gridworld environments with seeded, replayable transitions.
//!
//! Every call to [`Environment::step`] is a pure function of
//! `(state, action, step_seed)`: all environment-controlled randomness in a
//! step is drawn from a generator seeded with `step_seed`. A trajectory's
//! per-step seeds therefore pin down its whole stochastic configuration.

mod frozen_lake;
mod gridworld;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use frozen_lake::{FrozenLake, FrozenLakeConfig, LakeAction};
pub use gridworld::{GridAction, Gridworld, GridworldConfig, ObstacleKind};

/// Grid cell, `(row, col)` with row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: u8,
    pub col: u8,
}

impl Pos {
    pub const fn new(row: u8, col: u8) -> Self {
        Pos { row, col }
    }

    /// Neighbouring cell in direction `(dr, dc)`, or `None` when it leaves a
    /// `size`×`size` grid.
    pub fn offset(self, dr: i8, dc: i8, size: u8) -> Option<Pos> {
        let r = self.row as i16 + dr as i16;
        let c = self.col as i16 + dc as i16;
        if r < 0 || c < 0 || r >= size as i16 || c >= size as i16 {
            None
        } else {
            Some(Pos::new(r as u8, c as u8))
        }
    }

    pub fn is_adjacent(self, other: Pos) -> bool {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col) == 1
    }
}

/// Discrete action index into the environment's action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub usize);

impl Action {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Bit set of obstacles, bit `i` set when the `i`-th layout obstacle is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObstacleMask(pub u32);

impl ObstacleMask {
    pub fn all(count: usize) -> Self {
        if count >= 32 {
            ObstacleMask(u32::MAX)
        } else {
            ObstacleMask((1u32 << count) - 1)
        }
    }

    pub fn is_present(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn with(self, i: usize, present: bool) -> Self {
        if present {
            ObstacleMask(self.0 | (1 << i))
        } else {
            ObstacleMask(self.0 & !(1 << i))
        }
    }
}

/// Full observable environment state.
///
/// Frozen Lake states leave `dragon` empty and the obstacle mask zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: Pos,
    #[serde(default)]
    pub dragon: Option<Pos>,
    #[serde(default)]
    pub obstacles: ObstacleMask,
    #[serde(default)]
    pub done: bool,
}

impl EnvState {
    /// Canonical text key, e.g. `2,3|4,4|15|0`, used by the Q-table format.
    pub fn key(&self) -> String {
        let dragon = match self.dragon {
            Some(d) => format!("{},{}", d.row, d.col),
            None => "-".to_string(),
        };
        format!(
            "{},{}|{}|{}|{}",
            self.agent.row, self.agent.col, dragon, self.obstacles.0, self.done as u8
        )
    }
}

impl fmt::Display for EnvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for EnvState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MalformedKey(s.to_string());
        let parse_pos = |p: &str| -> Result<Pos> {
            let (r, c) = p.split_once(',').ok_or_else(bad)?;
            Ok(Pos::new(r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
        };
        let parts: Vec<&str> = s.trim().split('|').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let agent = parse_pos(parts[0])?;
        let dragon = if parts[1] == "-" { None } else { Some(parse_pos(parts[1])?) };
        let obstacles = ObstacleMask(parts[2].parse().map_err(|_| bad())?);
        let done = match parts[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        Ok(EnvState { agent, dragon, obstacles, done })
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    /// Probability of `next_state` given the state and action.
    pub prob: f64,
}

/// One element of the full next-state distribution of `(state, action)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub prob: f64,
}

/// Simulator interface shared by the built-in environments and test doubles.
pub trait Environment {
    fn name(&self) -> &str;

    fn num_actions(&self) -> usize;

    fn action_name(&self, action: Action) -> &'static str;

    /// Episode length cap used by training and factual collection.
    fn max_steps(&self) -> usize;

    fn initial_state(&self) -> EnvState;

    /// Initial state; every built-in environment has a fixed start, so the
    /// seed does not change the result.
    fn reset(&self, _seed: u64) -> EnvState {
        self.initial_state()
    }

    fn is_terminal(&self, state: &EnvState) -> bool {
        state.done
    }

    fn step(&self, state: &EnvState, action: Action, step_seed: u64) -> Result<Transition>;

    /// Exhaustive next-state distribution; distinct entries have distinct
    /// next states and probabilities sum to one.
    fn outcomes(&self, state: &EnvState, action: Action) -> Result<Vec<Outcome>>;

    /// Exact probability of reaching `next` from `state` under `action`.
    /// Terminal or unreachable inputs give 0.
    fn transition_prob(&self, state: &EnvState, action: Action, next: &EnvState) -> f64 {
        match self.outcomes(state, action) {
            Ok(outs) => outs.iter().filter(|o| &o.next_state == next).map(|o| o.prob).sum(),
            Err(_) => 0.0,
        }
    }

    fn encode_features(&self, state: &EnvState) -> Vec<f64>;

    /// Inclusive integer range of each feature coordinate.
    fn feature_bounds(&self) -> Vec<(i32, i32)>;

    /// Inverse of [`Environment::encode_features`] restricted to states that
    /// satisfy the environment's invariants.
    fn decode_features(&self, features: &[f64]) -> Option<EnvState>;

    fn render(&self, state: &EnvState) -> String;

    fn check_action(&self, action: Action) -> Result<()> {
        if action.0 < self.num_actions() {
            Ok(())
        } else {
            Err(Error::InvalidAction { action: action.0, num_actions: self.num_actions() })
        }
    }
}

/// Named environment plus its layout constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Gridworld(GridworldConfig),
    FrozenLake(FrozenLakeConfig),
}

impl EnvSpec {
    /// Default layout for `gridworld` or `frozen_lake` (also accepts
    /// `frozenlake` and `frozen-lake`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "gridworld" | "stochastic_gridworld" => Ok(EnvSpec::Gridworld(GridworldConfig::default())),
            "deterministic_gridworld" => Ok(EnvSpec::Gridworld(GridworldConfig::deterministic())),
            "frozen_lake" | "frozenlake" => Ok(EnvSpec::FrozenLake(FrozenLakeConfig::default())),
            _ => Err(Error::UnknownEnvironment(name.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Gridworld(_) => "gridworld",
            EnvSpec::FrozenLake(_) => "frozen_lake",
        }
    }

    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvSpec::Gridworld(c) => Env::Gridworld(Gridworld::new(c.clone())?),
            EnvSpec::FrozenLake(c) => Env::FrozenLake(FrozenLake::new(c.clone())?),
        })
    }
}

/// Builds the environment named by `spec` and returns its initial state.
pub fn reset(spec: &EnvSpec, seed: u64) -> Result<EnvState> {
    Ok(spec.build()?.reset(seed))
}

/// Any built-in environment.
#[derive(Debug, Clone)]
pub enum Env {
    Gridworld(Gridworld),
    FrozenLake(FrozenLake),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Env::Gridworld($e) => $body,
            Env::FrozenLake($e) => $body,
        }
    };
}

impl Environment for Env {
    fn name(&self) -> &str {
        dispatch!(self, e => e.name())
    }
    fn num_actions(&self) -> usize {
        dispatch!(self, e => e.num_actions())
    }
    fn action_name(&self, action: Action) -> &'static str {
        dispatch!(self, e => e.action_name(action))
    }
    fn max_steps(&self) -> usize {
        dispatch!(self, e => e.max_steps())
    }
    fn initial_state(&self) -> EnvState {
        dispatch!(self, e => e.initial_state())
    }
    fn step(&self, state: &EnvState, action: Action, step_seed: u64) -> Result<Transition> {
        dispatch!(self, e => e.step(state, action, step_seed))
    }
    fn outcomes(&self, state: &EnvState, action: Action) -> Result<Vec<Outcome>> {
        dispatch!(self, e => e.outcomes(state, action))
    }
    fn transition_prob(&self, state: &EnvState, action: Action, next: &EnvState) -> f64 {
        dispatch!(self, e => e.transition_prob(state, action, next))
    }
    fn encode_features(&self, state: &EnvState) -> Vec<f64> {
        dispatch!(self, e => e.encode_features(state))
    }
    fn feature_bounds(&self) -> Vec<(i32, i32)> {
        dispatch!(self, e => e.feature_bounds())
    }
    fn decode_features(&self, features: &[f64]) -> Option<EnvState> {
        dispatch!(self, e => e.decode_features(features))
    }
    fn render(&self, state: &EnvState) -> String {
        dispatch!(self, e => e.render(state))
    }
}

/// One recorded environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: EnvState,
    pub action: Action,
    pub reward: f64,
    pub step_seed: u64,
    pub next_state: EnvState,
}

/// Recorded episode prefix. The step seeds are its stochastic configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: EnvState,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn new(initial_state: EnvState) -> Self {
        Trajectory { initial_state, steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State before step `index`; `index == len()` is the final state.
    pub fn state_at(&self, index: usize) -> Result<&EnvState> {
        match index {
            0 => Ok(&self.initial_state),
            i if i <= self.steps.len() => Ok(&self.steps[i - 1].next_state),
            i => Err(Error::IndexOutOfRange { index: i, len: self.steps.len() }),
        }
    }

    pub fn final_state(&self) -> &EnvState {
        self.steps.last().map(|s| &s.next_state).unwrap_or(&self.initial_state)
    }

    /// Executes `action` from the final state with `step_seed` and records it.
    pub fn advance<E: Environment + ?Sized>(
        &mut self,
        env: &E,
        action: Action,
        step_seed: u64,
    ) -> Result<Transition> {
        let state = *self.final_state();
        let tr = env.step(&state, action, step_seed)?;
        self.steps.push(TrajectoryStep {
            state,
            action,
            reward: tr.reward,
            step_seed,
            next_state: tr.next_state,
        });
        Ok(tr)
    }

    /// The first `n` steps.
    pub fn prefix(&self, n: usize) -> Result<Trajectory> {
        if n > self.steps.len() {
            return Err(Error::IndexOutOfRange { index: n, len: self.steps.len() });
        }
        Ok(Trajectory { initial_state: self.initial_state, steps: self.steps[..n].to_vec() })
    }

    /// Re-executes the recorded `(action, step_seed)` pairs from the initial
    /// state and returns the state before step `upto`.
    pub fn replay<E: Environment + ?Sized>(&self, env: &E, upto: usize) -> Result<EnvState> {
        if upto > self.steps.len() {
            return Err(Error::IndexOutOfRange { index: upto, len: self.steps.len() });
        }
        let mut state = self.initial_state;
        for step in &self.steps[..upto] {
            state = env.step(&state, step.action, step.step_seed)?.next_state;
        }
        Ok(state)
    }

    /// Checks that records chain and that replaying reproduces every state.
    pub fn validate<E: Environment + ?Sized>(&self, env: &E) -> Result<()> {
        let mut state = self.initial_state;
        for (i, step) in self.steps.iter().enumerate() {
            if step.state != state {
                return Err(Error::BrokenTrajectory { index: i });
            }
            let tr = env.step(&state, step.action, step.step_seed)?;
            if tr.next_state != step.next_state {
                return Err(Error::BrokenTrajectory { index: i });
            }
            state = tr.next_state;
        }
        Ok(())
    }

    /// Step seeds of steps `from..to`.
    pub fn seeds(&self, from: usize, to: usize) -> Vec<u64> {
        self.steps[from..to].iter().map(|s| s.step_seed).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_key_round_trips() {
        let s = EnvState {
            agent: Pos::new(2, 3),
            dragon: Some(Pos::new(4, 4)),
            obstacles: ObstacleMask(0b1011),
            done: false,
        };
        assert_eq!(s.key(), "2,3|4,4|11|0");
        assert_eq!(s.key().parse::<EnvState>().unwrap(), s);
        let lake = EnvState { agent: Pos::new(0, 1), dragon: None, obstacles: ObstacleMask(0), done: true };
        assert_eq!(lake.key().parse::<EnvState>().unwrap(), lake);
        assert!("1,2|x|0|0".parse::<EnvState>().is_err());
        assert!("1,2|-|0".parse::<EnvState>().is_err());
    }

    #[test]
    fn unknown_environment_is_rejected() {
        assert_eq!(
            EnvSpec::from_name("cartpole"),
            Err(Error::UnknownEnvironment("cartpole".into()))
        );
        assert!(EnvSpec::from_name("Frozen-Lake").is_ok());
    }

    #[test]
    fn reset_is_fixed_layout() {
        let lake = reset(&EnvSpec::from_name("frozen_lake").unwrap(), 11).unwrap();
        assert_eq!(lake.agent, Pos::new(0, 0));
        assert!(!lake.done);
        let spec = EnvSpec::from_name("gridworld").unwrap();
        let grid = reset(&spec, 3).unwrap();
        assert_eq!(grid.agent, Pos::new(0, 0));
        assert_eq!(grid.obstacles, ObstacleMask::all(4));
        assert_eq!(grid, reset(&spec, 3).unwrap());
        assert_eq!(grid, reset(&spec, 99).unwrap());
    }

    #[test]
    fn replay_reproduces_recorded_states() {
        let env = EnvSpec::from_name("frozen_lake").unwrap().build().unwrap();
        let mut traj = Trajectory::new(env.initial_state());
        let actions = [3, 3, 1, 1, 3, 2, 1, 0, 3, 1];
        for (t, &a) in actions.iter().enumerate() {
            traj.advance(&env, Action(a), crate::seeding::derive(5, &[t as u64])).unwrap();
        }
        for i in 0..=traj.len() {
            assert_eq!(traj.replay(&env, i).unwrap(), *traj.state_at(i).unwrap());
        }
        assert_eq!(traj.replay(&env, 0).unwrap(), traj.initial_state);
        assert_eq!(traj.replay(&env, traj.len()).unwrap(), *traj.final_state());
        assert!(matches!(traj.replay(&env, traj.len() + 1), Err(Error::IndexOutOfRange { .. })));
        traj.validate(&env).unwrap();

        let mut broken = traj.clone();
        broken.steps[4].next_state.agent = Pos::new(4, 0);
        assert!(broken.validate(&env).is_err());
    }
}

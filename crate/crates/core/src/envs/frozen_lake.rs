use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, EnvState, Environment, ObstacleMask, Outcome, Pos, Transition};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LakeAction {
    Up,
    Down,
    Left,
    Right,
    Exit,
}

impl LakeAction {
    pub const ALL: [LakeAction; 5] =
        [LakeAction::Up, LakeAction::Down, LakeAction::Left, LakeAction::Right, LakeAction::Exit];

    pub fn action(self) -> Action {
        Action(self as usize)
    }

    pub fn name(self) -> &'static str {
        match self {
            LakeAction::Up => "UP",
            LakeAction::Down => "DOWN",
            LakeAction::Left => "LEFT",
            LakeAction::Right => "RIGHT",
            LakeAction::Exit => "EXIT",
        }
    }

    fn delta(self) -> (i8, i8) {
        match self {
            LakeAction::Up => (-1, 0),
            LakeAction::Down => (1, 0),
            LakeAction::Left => (0, -1),
            LakeAction::Right => (0, 1),
            LakeAction::Exit => (0, 0),
        }
    }

    /// The two sideways slip directions, in draw order.
    fn perpendicular(self) -> [LakeAction; 2] {
        match self {
            LakeAction::Up | LakeAction::Down => [LakeAction::Left, LakeAction::Right],
            _ => [LakeAction::Up, LakeAction::Down],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenLakeConfig {
    pub size: u8,
    pub start: Pos,
    pub goal: Pos,
    /// Slippery cells; moves from them follow the slip model.
    pub frozen: Vec<Pos>,
    pub intended_prob: f64,
    /// Probability of each of the two perpendicular slips.
    pub side_prob: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

impl Default for FrozenLakeConfig {
    fn default() -> Self {
        FrozenLakeConfig {
            size: 5,
            start: Pos::new(0, 0),
            goal: Pos::new(4, 4),
            frozen: alloc::vec![
                Pos::new(0, 2),
                Pos::new(1, 1),
                Pos::new(1, 3),
                Pos::new(2, 1),
                Pos::new(3, 2),
                Pos::new(3, 3),
            ],
            intended_prob: 0.6,
            side_prob: 0.2,
            step_reward: -1.0,
            goal_reward: 10.0,
            max_steps: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrozenLake {
    config: FrozenLakeConfig,
}

impl FrozenLake {
    pub fn new(config: FrozenLakeConfig) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if config.size == 0 || config.size > 16 {
            return bad("frozen lake size must be in 1..=16");
        }
        let inside = |p: &Pos| p.row < config.size && p.col < config.size;
        if !inside(&config.start) || !inside(&config.goal) || !config.frozen.iter().all(inside) {
            return bad("layout cell outside the grid");
        }
        let total = config.intended_prob + 2.0 * config.side_prob;
        if config.intended_prob < 0.0 || config.side_prob < 0.0 || (total - 1.0).abs() > 1e-12 {
            return bad("slip probabilities must be non-negative and sum to 1");
        }
        Ok(FrozenLake { config })
    }

    pub fn config(&self) -> &FrozenLakeConfig {
        &self.config
    }

    pub fn is_frozen(&self, p: Pos) -> bool {
        self.config.frozen.contains(&p)
    }

    fn moved(&self, from: Pos, dir: LakeAction) -> Pos {
        let (dr, dc) = dir.delta();
        from.offset(dr, dc, self.config.size).unwrap_or(from)
    }

    /// Possible realized directions with their probabilities.
    fn directions(&self, state: &EnvState, act: LakeAction) -> [(LakeAction, f64); 3] {
        let [a, b] = act.perpendicular();
        if self.is_frozen(state.agent) {
            [(act, self.config.intended_prob), (a, self.config.side_prob), (b, self.config.side_prob)]
        } else {
            [(act, 1.0), (a, 0.0), (b, 0.0)]
        }
    }

    fn parse(&self, state: &EnvState, action: Action) -> Result<LakeAction> {
        if state.done {
            return Err(Error::TerminalState);
        }
        self.check_action(action)?;
        Ok(LakeAction::ALL[action.0])
    }
}

impl Environment for FrozenLake {
    fn name(&self) -> &str {
        "frozen_lake"
    }

    fn num_actions(&self) -> usize {
        LakeAction::ALL.len()
    }

    fn action_name(&self, action: Action) -> &'static str {
        LakeAction::ALL.get(action.0).map(|a| a.name()).unwrap_or("?")
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn initial_state(&self) -> EnvState {
        EnvState { agent: self.config.start, dragon: None, obstacles: ObstacleMask(0), done: false }
    }

    fn step(&self, state: &EnvState, action: Action, step_seed: u64) -> Result<Transition> {
        let act = self.parse(state, action)?;
        let mut next = *state;
        if act == LakeAction::Exit {
            let at_goal = state.agent == self.config.goal;
            next.done = at_goal;
            let reward = if at_goal { self.config.goal_reward } else { self.config.step_reward };
            return Ok(Transition { next_state: next, reward, terminal: at_goal, prob: 1.0 });
        }
        let dirs = self.directions(state, act);
        let realized = if self.is_frozen(state.agent) {
            let u: f64 = seeding::rng(step_seed).gen();
            if u < dirs[0].1 {
                dirs[0].0
            } else if u < dirs[0].1 + dirs[1].1 {
                dirs[1].0
            } else {
                dirs[2].0
            }
        } else {
            act
        };
        next.agent = self.moved(state.agent, realized);
        // Different slip directions can land on the same cell at the border.
        let prob = dirs
            .iter()
            .filter(|(d, _)| self.moved(state.agent, *d) == next.agent)
            .map(|(_, p)| p)
            .sum();
        Ok(Transition { next_state: next, reward: self.config.step_reward, terminal: false, prob })
    }

    fn outcomes(&self, state: &EnvState, action: Action) -> Result<Vec<Outcome>> {
        let act = self.parse(state, action)?;
        if act == LakeAction::Exit {
            let tr = self.step(state, action, 0)?;
            return Ok(alloc::vec![Outcome { next_state: tr.next_state, reward: tr.reward, prob: 1.0 }]);
        }
        let mut outs: Vec<Outcome> = Vec::with_capacity(3);
        for (dir, p) in self.directions(state, act) {
            if p == 0.0 {
                continue;
            }
            let next = EnvState { agent: self.moved(state.agent, dir), ..*state };
            match outs.iter_mut().find(|o| o.next_state == next) {
                Some(o) => o.prob += p,
                None => outs.push(Outcome { next_state: next, reward: self.config.step_reward, prob: p }),
            }
        }
        Ok(outs)
    }

    fn encode_features(&self, state: &EnvState) -> Vec<f64> {
        alloc::vec![state.agent.row as f64, state.agent.col as f64]
    }

    fn feature_bounds(&self) -> Vec<(i32, i32)> {
        let hi = self.config.size as i32 - 1;
        alloc::vec![(0, hi), (0, hi)]
    }

    fn decode_features(&self, features: &[f64]) -> Option<EnvState> {
        let hi = (self.config.size - 1) as f64;
        match features {
            [r, c] if libm::trunc(*r) == *r && libm::trunc(*c) == *c && (0.0..=hi).contains(r) && (0.0..=hi).contains(c) => {
                Some(EnvState { agent: Pos::new(*r as u8, *c as u8), ..self.initial_state() })
            }
            _ => None,
        }
    }

    fn render(&self, state: &EnvState) -> String {
        let mut out = String::new();
        for r in 0..self.config.size {
            for c in 0..self.config.size {
                let p = Pos::new(r, c);
                out.push(if p == state.agent {
                    'A'
                } else if p == self.config.goal {
                    'G'
                } else if self.is_frozen(p) {
                    '*'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        if state.done {
            out.push_str("(exited)\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lake() -> FrozenLake {
        FrozenLake::new(FrozenLakeConfig::default()).unwrap()
    }

    fn at(r: u8, c: u8) -> EnvState {
        EnvState { agent: Pos::new(r, c), ..lake().initial_state() }
    }

    #[test]
    fn plain_cells_are_deterministic() {
        let env = lake();
        for seed in 0..50 {
            let tr = env.step(&at(2, 2), LakeAction::Up.action(), seed).unwrap();
            assert_eq!(tr.next_state.agent, Pos::new(1, 2));
            assert_eq!(tr.prob, 1.0);
        }
    }

    #[test]
    fn frozen_cells_slip() {
        let env = lake();
        let s = at(1, 1);
        let mut seen = [0usize; 3];
        for seed in 0..3000 {
            let tr = env.step(&s, LakeAction::Up.action(), seed).unwrap();
            match (tr.next_state.agent.row, tr.next_state.agent.col) {
                (0, 1) => {
                    assert_eq!(tr.prob, 0.6);
                    seen[0] += 1
                }
                (1, 0) | (1, 2) => {
                    assert_eq!(tr.prob, 0.2);
                    seen[1 + (tr.next_state.agent.col == 2) as usize] += 1
                }
                other => panic!("unexpected cell {other:?}"),
            }
        }
        let frac = seen[0] as f64 / 3000.0;
        assert!((frac - 0.6).abs() < 0.04, "{frac}");
        assert_eq!(env.transition_prob(&s, LakeAction::Up.action(), &at(1, 2)), 0.2);
        assert_eq!(env.transition_prob(&s, LakeAction::Up.action(), &at(3, 3)), 0.0);
    }

    #[test]
    fn slip_into_border_merges_probabilities() {
        let env = lake();
        // (0,2) is frozen; LEFT slips UP (off-grid, stays) or DOWN.
        let s = at(0, 2);
        let outs = env.outcomes(&s, LakeAction::Left.action()).unwrap();
        assert_eq!(outs.len(), 3);
        let stay = outs.iter().find(|o| o.next_state == s).unwrap();
        assert!((stay.prob - 0.2).abs() < 1e-15);
        // UP from (0,2): intended stays (0.6), sideways to (0,1)/(0,3).
        let p = env.transition_prob(&s, LakeAction::Up.action(), &s);
        assert!((p - 0.6).abs() < 1e-15);
    }

    #[test]
    fn exit_only_pays_at_goal() {
        let env = lake();
        let tr = env.step(&at(4, 4), LakeAction::Exit.action(), 9).unwrap();
        assert!(tr.terminal);
        assert_eq!(tr.reward, 10.0);
        let tr = env.step(&at(2, 2), LakeAction::Exit.action(), 9).unwrap();
        assert!(!tr.terminal);
        assert_eq!(tr.reward, -1.0);
        assert_eq!(tr.next_state, at(2, 2));
        assert!(env.step(&EnvState { done: true, ..at(4, 4) }, Action(0), 0).is_err());
    }

    #[test]
    fn features_and_bad_config() {
        let env = lake();
        assert_eq!(env.encode_features(&at(2, 3)), alloc::vec![2.0, 3.0]);
        assert_eq!(env.decode_features(&[2.0, 3.0]), Some(at(2, 3)));
        assert_eq!(env.decode_features(&[5.0, 3.0]), None);
        assert!(FrozenLake::new(FrozenLakeConfig { intended_prob: 0.5, ..Default::default() }).is_err());
    }
}

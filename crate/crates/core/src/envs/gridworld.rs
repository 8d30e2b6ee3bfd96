use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, EnvState, Environment, ObstacleMask, Outcome, Pos, Transition};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
    Chop,
    Shoot,
}

impl GridAction {
    pub const ALL: [GridAction; 6] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::Chop,
        GridAction::Shoot,
    ];

    pub fn from_action(a: Action) -> Option<Self> {
        Self::ALL.get(a.0).copied()
    }

    pub fn action(self) -> Action {
        Action(self as usize)
    }

    pub fn name(self) -> &'static str {
        match self {
            GridAction::Up => "UP",
            GridAction::Down => "DOWN",
            GridAction::Left => "LEFT",
            GridAction::Right => "RIGHT",
            GridAction::Chop => "CHOP",
            GridAction::Shoot => "SHOOT",
        }
    }

    fn delta(self) -> Option<(i8, i8)> {
        match self {
            GridAction::Up => Some((-1, 0)),
            GridAction::Down => Some((1, 0)),
            GridAction::Left => Some((0, -1)),
            GridAction::Right => Some((0, 1)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Tree,
    Wall,
}

/// Layout and constants of the dragon-hunting gridworld.
///
/// Obstacles are indexed trees first, then walls, in listed order; that
/// index is the bit position in [`ObstacleMask`] and the feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridworldConfig {
    pub size: u8,
    pub start: Pos,
    pub dragon: Pos,
    pub trees: Vec<Pos>,
    pub walls: Vec<Pos>,
    /// Per-step probability that a removed tree grows back.
    pub tree_regrowth: f64,
    /// Per-step probability that a removed wall is rebuilt.
    pub wall_rebuild: f64,
    pub step_reward: f64,
    pub chop_tree_reward: f64,
    pub chop_wall_reward: f64,
    /// Reward for a CHOP with nothing adjacent or a blocked SHOOT.
    pub wasted_action_reward: f64,
    pub shoot_reward: f64,
    pub max_steps: usize,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        GridworldConfig {
            size: 5,
            start: Pos::new(0, 0),
            dragon: Pos::new(4, 4),
            trees: alloc::vec![Pos::new(3, 4), Pos::new(4, 3)],
            walls: alloc::vec![Pos::new(2, 4), Pos::new(4, 2)],
            tree_regrowth: 0.05,
            wall_rebuild: 0.02,
            step_reward: -1.0,
            chop_tree_reward: -2.0,
            chop_wall_reward: -5.0,
            wasted_action_reward: -3.0,
            shoot_reward: 50.0,
            max_steps: 50,
        }
    }
}

impl GridworldConfig {
    /// Same layout with regrowth disabled, so every transition is deterministic.
    pub fn deterministic() -> Self {
        GridworldConfig { tree_regrowth: 0.0, wall_rebuild: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    config: GridworldConfig,
    obstacles: Vec<(Pos, ObstacleKind)>,
}

impl Gridworld {
    pub fn new(config: GridworldConfig) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if config.size == 0 || config.size > 16 {
            return bad("gridworld size must be in 1..=16");
        }
        let obstacles: Vec<(Pos, ObstacleKind)> = config
            .trees
            .iter()
            .map(|&p| (p, ObstacleKind::Tree))
            .chain(config.walls.iter().map(|&p| (p, ObstacleKind::Wall)))
            .collect();
        if obstacles.len() > 32 {
            return bad("at most 32 obstacles");
        }
        let inside = |p: Pos| p.row < config.size && p.col < config.size;
        if !inside(config.start) || !inside(config.dragon) || obstacles.iter().any(|(p, _)| !inside(*p)) {
            return bad("layout cell outside the grid");
        }
        for (i, (p, _)) in obstacles.iter().enumerate() {
            if *p == config.start || *p == config.dragon || obstacles[..i].iter().any(|(q, _)| q == p) {
                return bad("obstacle overlaps start, dragon or another obstacle");
            }
        }
        if config.start == config.dragon {
            return bad("start and dragon share a cell");
        }
        for r in [config.tree_regrowth, config.wall_rebuild] {
            if !(0.0..=1.0).contains(&r) {
                return bad("regrowth rates must lie in [0, 1]");
            }
        }
        Ok(Gridworld { config, obstacles })
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.config
    }

    pub fn obstacles(&self) -> &[(Pos, ObstacleKind)] {
        &self.obstacles
    }

    fn obstacle_at(&self, state: &EnvState, cell: Pos) -> Option<usize> {
        self.obstacles
            .iter()
            .position(|(p, _)| *p == cell)
            .filter(|&i| state.obstacles.is_present(i))
    }

    fn rate(&self, i: usize) -> f64 {
        match self.obstacles[i].1 {
            ObstacleKind::Tree => self.config.tree_regrowth,
            ObstacleKind::Wall => self.config.wall_rebuild,
        }
    }

    /// True iff agent and dragon share a row or column with no present
    /// obstacle strictly between them.
    pub fn shoot_effective(&self, state: &EnvState) -> bool {
        let dragon = match state.dragon {
            Some(d) => d,
            None => return false,
        };
        let a = state.agent;
        if a == dragon || (a.row != dragon.row && a.col != dragon.col) {
            return false;
        }
        let between = |p: Pos| {
            if a.row == dragon.row {
                p.row == a.row && p.col > a.col.min(dragon.col) && p.col < a.col.max(dragon.col)
            } else {
                p.col == a.col && p.row > a.row.min(dragon.row) && p.row < a.row.max(dragon.row)
            }
        };
        !self
            .obstacles
            .iter()
            .enumerate()
            .any(|(i, (p, _))| state.obstacles.is_present(i) && between(*p))
    }

    /// Deterministic effect of the agent's action: intermediate state,
    /// reward and whether the episode ends.
    fn apply_action(&self, state: &EnvState, action: GridAction) -> (EnvState, f64, bool) {
        let cfg = &self.config;
        let mut next = *state;
        match action {
            GridAction::Chop => {
                let target = self
                    .obstacles
                    .iter()
                    .enumerate()
                    .find(|(i, (p, _))| state.obstacles.is_present(*i) && p.is_adjacent(state.agent));
                match target {
                    Some((i, (_, kind))) => {
                        next.obstacles = next.obstacles.with(i, false);
                        let r = match kind {
                            ObstacleKind::Tree => cfg.chop_tree_reward,
                            ObstacleKind::Wall => cfg.chop_wall_reward,
                        };
                        (next, r, false)
                    }
                    None => (next, cfg.wasted_action_reward, false),
                }
            }
            GridAction::Shoot => {
                if self.shoot_effective(state) {
                    next.done = true;
                    (next, cfg.shoot_reward, true)
                } else {
                    (next, cfg.wasted_action_reward, false)
                }
            }
            mv => {
                let (dr, dc) = mv.delta().unwrap_or((0, 0));
                if let Some(cell) = state.agent.offset(dr, dc, cfg.size) {
                    let blocked = Some(cell) == state.dragon || self.obstacle_at(state, cell).is_some();
                    if !blocked {
                        next.agent = cell;
                    }
                }
                (next, cfg.step_reward, false)
            }
        }
    }

    /// Obstacles that may regrow this step: removed before the action and
    /// not under the agent afterwards.
    fn regrowth_candidates<'a>(
        &'a self,
        before: &'a EnvState,
        after: &'a EnvState,
    ) -> impl Iterator<Item = usize> + 'a {
        (0..self.obstacles.len())
            .filter(move |&i| !before.obstacles.is_present(i) && self.obstacles[i].0 != after.agent)
    }

    fn parse(&self, state: &EnvState, action: Action) -> Result<GridAction> {
        if state.done {
            return Err(Error::TerminalState);
        }
        self.check_action(action)?;
        Ok(GridAction::ALL[action.0])
    }
}

impl Environment for Gridworld {
    fn name(&self) -> &str {
        "gridworld"
    }

    fn num_actions(&self) -> usize {
        GridAction::ALL.len()
    }

    fn action_name(&self, action: Action) -> &'static str {
        GridAction::from_action(action).map(GridAction::name).unwrap_or("?")
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn initial_state(&self) -> EnvState {
        EnvState {
            agent: self.config.start,
            dragon: Some(self.config.dragon),
            obstacles: ObstacleMask::all(self.obstacles.len()),
            done: false,
        }
    }

    fn step(&self, state: &EnvState, action: Action, step_seed: u64) -> Result<Transition> {
        let act = self.parse(state, action)?;
        let (mut next, reward, terminal) = self.apply_action(state, act);
        let mut prob = 1.0;
        if !terminal {
            // One draw per obstacle in layout order, consumed whether or not
            // the obstacle is eligible, so each obstacle's event depends only
            // on the step seed.
            let mut rng = seeding::rng(step_seed);
            let draws: Vec<f64> = (0..self.obstacles.len()).map(|_| rng.gen::<f64>()).collect();
            let eligible: Vec<usize> = self.regrowth_candidates(state, &next).collect();
            for i in eligible {
                let rate = self.rate(i);
                if draws[i] < rate {
                    next.obstacles = next.obstacles.with(i, true);
                    prob *= rate;
                } else {
                    prob *= 1.0 - rate;
                }
            }
        }
        Ok(Transition { next_state: next, reward, terminal, prob })
    }

    fn outcomes(&self, state: &EnvState, action: Action) -> Result<Vec<Outcome>> {
        let act = self.parse(state, action)?;
        let (base, reward, terminal) = self.apply_action(state, act);
        if terminal {
            return Ok(alloc::vec![Outcome { next_state: base, reward, prob: 1.0 }]);
        }
        let eligible: Vec<usize> = self.regrowth_candidates(state, &base).collect();
        let mut outs = Vec::with_capacity(1 << eligible.len());
        for subset in 0u32..(1 << eligible.len()) {
            let mut next = base;
            let mut prob = 1.0;
            for (bit, &i) in eligible.iter().enumerate() {
                let rate = self.rate(i);
                if subset & (1 << bit) != 0 {
                    next.obstacles = next.obstacles.with(i, true);
                    prob *= rate;
                } else {
                    prob *= 1.0 - rate;
                }
            }
            if prob > 0.0 {
                outs.push(Outcome { next_state: next, reward, prob });
            }
        }
        Ok(outs)
    }

    fn encode_features(&self, state: &EnvState) -> Vec<f64> {
        let dragon = state.dragon.unwrap_or(self.config.dragon);
        let mut f = Vec::with_capacity(4 + self.obstacles.len());
        f.extend_from_slice(&[
            state.agent.row as f64,
            state.agent.col as f64,
            dragon.row as f64,
            dragon.col as f64,
        ]);
        f.extend((0..self.obstacles.len()).map(|i| state.obstacles.is_present(i) as u8 as f64));
        f
    }

    fn feature_bounds(&self) -> Vec<(i32, i32)> {
        let hi = self.config.size as i32 - 1;
        let d = self.config.dragon;
        let mut b = alloc::vec![(0, hi), (0, hi), (d.row as i32, d.row as i32), (d.col as i32, d.col as i32)];
        b.extend(core::iter::repeat_n((0, 1), self.obstacles.len()));
        b
    }

    fn decode_features(&self, features: &[f64]) -> Option<EnvState> {
        if features.len() != 4 + self.obstacles.len() {
            return None;
        }
        let mut ints = Vec::with_capacity(features.len());
        for (&x, (lo, hi)) in features.iter().zip(self.feature_bounds()) {
            if libm::trunc(x) != x || x < lo as f64 || x > hi as f64 {
                return None;
            }
            ints.push(x as u8);
        }
        let mut mask = ObstacleMask(0);
        for i in 0..self.obstacles.len() {
            mask = mask.with(i, ints[4 + i] == 1);
        }
        let state = EnvState {
            agent: Pos::new(ints[0], ints[1]),
            dragon: Some(Pos::new(ints[2], ints[3])),
            obstacles: mask,
            done: false,
        };
        if state.dragon == Some(state.agent) || self.obstacle_at(&state, state.agent).is_some() {
            return None;
        }
        Some(state)
    }

    fn render(&self, state: &EnvState) -> String {
        let mut out = String::new();
        for r in 0..self.config.size {
            for c in 0..self.config.size {
                let p = Pos::new(r, c);
                let ch = if p == state.agent {
                    'A'
                } else if Some(p) == state.dragon {
                    'D'
                } else if let Some(i) = self.obstacles.iter().position(|(q, _)| *q == p) {
                    match (self.obstacles[i].1, state.obstacles.is_present(i)) {
                        (ObstacleKind::Tree, true) => 'T',
                        (ObstacleKind::Wall, true) => 'W',
                        (ObstacleKind::Tree, false) => 't',
                        (ObstacleKind::Wall, false) => 'w',
                    }
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid() -> Gridworld {
        Gridworld::new(GridworldConfig::default()).unwrap()
    }

    fn at(env: &Gridworld, r: u8, c: u8) -> EnvState {
        EnvState { agent: Pos::new(r, c), ..env.initial_state() }
    }

    #[test]
    fn shoot_alignment_rule() {
        let env = Gridworld::new(GridworldConfig {
            dragon: Pos::new(2, 4),
            trees: vec![Pos::new(2, 2)],
            walls: vec![],
            ..GridworldConfig::default()
        })
        .unwrap();
        let mut s = at(&env, 2, 0);
        assert!(!env.shoot_effective(&s), "tree at (2,2) blocks the row");
        s.obstacles = ObstacleMask(0);
        assert!(env.shoot_effective(&s));
        assert!(!env.shoot_effective(&at(&env, 1, 1)));
        let env = grid();
        let mut s = at(&env, 1, 1);
        s.dragon = Some(Pos::new(3, 4));
        assert!(!env.shoot_effective(&s));
    }

    #[test]
    fn shoot_terminates_iff_effective() {
        let env = grid();
        let s = at(&env, 2, 3);
        let tr = env.step(&s, GridAction::Shoot.action(), 1).unwrap();
        assert!(!tr.terminal);
        assert_eq!(tr.next_state.agent, s.agent);
        assert_eq!(tr.reward, -3.0);

        let mut s = at(&env, 2, 4);
        s.obstacles = ObstacleMask(0b0010); // wall (2,4) removed along with tree (3,4)
        let tr = env.step(&s, GridAction::Shoot.action(), 1).unwrap();
        assert!(tr.terminal && tr.next_state.done);
        assert_eq!(tr.reward, 50.0);
        assert_eq!(tr.prob, 1.0);
        assert_eq!(env.step(&tr.next_state, Action(0), 1), Err(Error::TerminalState));
    }

    #[test]
    fn chop_costs_depend_on_obstacle_kind() {
        let env = grid();
        let s = at(&env, 3, 3);
        let tr = env.step(&s, GridAction::Chop.action(), 5).unwrap();
        assert_eq!(tr.reward, -2.0);
        assert!(!tr.next_state.obstacles.is_present(0));
        let s = at(&env, 1, 4);
        let tr = env.step(&s, GridAction::Chop.action(), 5).unwrap();
        assert_eq!(tr.reward, -5.0);
        assert!(!tr.next_state.obstacles.is_present(2));
        let tr = env.step(&at(&env, 0, 0), GridAction::Chop.action(), 5).unwrap();
        assert_eq!(tr.reward, -3.0);
    }

    #[test]
    fn blocked_moves_stay_in_place() {
        let env = grid();
        let s = at(&env, 3, 3);
        let tr = env.step(&s, GridAction::Right.action(), 0).unwrap();
        assert_eq!(tr.next_state.agent, s.agent);
        assert_eq!(tr.prob, 1.0);
        let tr = env.step(&at(&env, 0, 0), GridAction::Up.action(), 0).unwrap();
        assert_eq!(tr.next_state.agent, Pos::new(0, 0));
        assert_eq!(env.transition_prob(&at(&env, 0, 0), Action(1), &at(&env, 1, 0)), 1.0);
        assert_eq!(env.transition_prob(&at(&env, 0, 0), Action(1), &at(&env, 2, 0)), 0.0);
    }

    #[test]
    fn regrowth_probabilities_are_exact() {
        let env = grid();
        let mut s = at(&env, 0, 0);
        s.obstacles = ObstacleMask(0b0101); // tree (4,3) and wall (4,2) removed
        let outs = env.outcomes(&s, GridAction::Right.action()).unwrap();
        assert_eq!(outs.len(), 4);
        let total: f64 = outs.iter().map(|o| o.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for seed in 0..200 {
            let tr = env.step(&s, GridAction::Right.action(), seed).unwrap();
            let expected = env.transition_prob(&s, GridAction::Right.action(), &tr.next_state);
            assert!((tr.prob - expected).abs() < 1e-15);
            // each event toggles at most one obstacle back
            let changed = (tr.next_state.obstacles.0 ^ s.obstacles.0).count_ones();
            assert!(changed <= 2);
        }
    }

    #[test]
    fn encoding_and_decoding() {
        let env = grid();
        let s = env.initial_state();
        assert_eq!(env.encode_features(&s), vec![0.0, 0.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(env.decode_features(&env.encode_features(&s)), Some(s));
        // agent inside a present tree
        assert_eq!(env.decode_features(&[3.0, 4.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0]), None);
        // same cell once the tree is removed
        assert!(env.decode_features(&[3.0, 4.0, 4.0, 4.0, 0.0, 1.0, 1.0, 1.0]).is_some());
        assert_eq!(env.decode_features(&[0.0, 0.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0]), None);
        assert_eq!(env.decode_features(&[0.5, 0.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0]), None);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(Gridworld::new(GridworldConfig { trees: vec![Pos::new(0, 0)], ..Default::default() }).is_err());
        assert!(Gridworld::new(GridworldConfig { tree_regrowth: 1.5, ..Default::default() }).is_err());
        assert!(Gridworld::new(GridworldConfig { dragon: Pos::new(5, 5), ..Default::default() }).is_err());
    }

    #[test]
    fn render_marks_cells() {
        let env = grid();
        let text = env.render(&env.initial_state());
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with('A'));
        assert_eq!(text.lines().nth(4), Some("..WTD"));
    }
}

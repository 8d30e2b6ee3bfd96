//! State-space semifactual baseline.
//!
//! Searches integer feature perturbations of the factual state, keeps those
//! that decode to valid environment states with the same greedy action, and
//! scores them by gain plus robustness. A max-min selection then picks `D`
//! mutually distant states. The returned states ignore reachability, so a
//! separate action-path search is needed before they can be scored like
//! the causal candidates.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, EnvState, Environment};
use crate::error::{Error, Result};
use crate::generators::{candidate_seed, score_candidate};
use crate::optimizer::{self, Evaluation, Genome, MooConfig, Problem};
use crate::policy::QFunction;
use crate::properties::{self, FidelityMode, PropertyScores, Rollout};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Number of states returned, `D`.
    pub diversity_count: usize,
    /// Largest change applied to a single feature.
    pub radius: usize,
    /// Neighbours checked for robustness; more than this are subsampled.
    pub robustness_samples: usize,
    /// Best states kept for the diversity selection.
    pub pool_size: usize,
    /// Explanation horizon `k`; paths are searched up to `2k` steps.
    pub horizon: usize,
    pub search: MooConfig,
    pub path_search: MooConfig,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            diversity_count: 3,
            radius: 4,
            robustness_samples: 16,
            pool_size: 10,
            horizon: 3,
            search: MooConfig::default(),
            path_search: MooConfig::default(),
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.diversity_count == 0 {
            return bad("diversity_count must be at least 1");
        }
        if self.radius == 0 || self.robustness_samples == 0 || self.horizon == 0 {
            return bad("radius, robustness_samples and horizon must be positive");
        }
        if self.pool_size < self.diversity_count {
            return bad("pool_size must be at least diversity_count");
        }
        if self.search.generations == 0 && self.search.population == 0 {
            return bad("search budget must be at least 1");
        }
        self.search.validate()?;
        self.path_search.validate()
    }

    pub fn path_horizon(&self) -> usize {
        2 * self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub state: EnvState,
    pub gain: f64,
    pub robustness: f64,
    /// Rollout from the factual state that ends exactly here, if one was found.
    pub path: Option<Rollout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub factual_state: EnvState,
    pub chosen_action: Action,
    pub states: Vec<BaselineState>,
    pub evaluations: usize,
}

impl BaselineResult {
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub state: EnvState,
    pub scores: PropertyScores,
    pub path_found: bool,
}

fn is_valid_semifactual<Q, E>(q: &Q, env: &E, s: &EnvState, candidate: &EnvState) -> bool
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    candidate != s && !env.is_terminal(candidate) && properties::validity(q, s, candidate)
}

/// Share of the feature-space unit neighbours of `state` that decode to a
/// valid state on which the policy picks `action`. Zero with no neighbours.
pub fn robustness<Q, E>(q: &Q, env: &E, state: &EnvState, action: Action, samples: usize, seed: u64) -> f64
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    let x = env.encode_features(state);
    let bounds = env.feature_bounds();
    let mut neighbours = Vec::new();
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        for delta in [-1.0, 1.0] {
            let v = x[i] + delta;
            if v < lo as f64 || v > hi as f64 {
                continue;
            }
            let mut y = x.clone();
            y[i] = v;
            if let Some(n) = env.decode_features(&y) {
                neighbours.push(n);
            }
        }
    }
    if neighbours.len() > samples {
        let mut rng = seeding::rng(seed);
        neighbours.shuffle(&mut rng);
        neighbours.truncate(samples);
    }
    if neighbours.is_empty() {
        return 0.0;
    }
    let kept = neighbours.iter().filter(|n| !env.is_terminal(n) && q.greedy_action(n) == action).count();
    kept as f64 / neighbours.len() as f64
}

struct Scored {
    state: EnvState,
    features: Vec<f64>,
    gain: f64,
    robustness: f64,
    fitness: f64,
}

struct StateSearch<'a, Q: ?Sized, E: ?Sized> {
    q: &'a Q,
    env: &'a E,
    factual: EnvState,
    features: Vec<f64>,
    bounds: Vec<(i32, i32)>,
    max_gain: f64,
    config: &'a BaselineConfig,
    seen: BTreeMap<EnvState, Option<Scored>>,
}

impl<Q: QFunction + ?Sized, E: Environment + ?Sized> StateSearch<'_, Q, E> {
    /// Gene `g` moves feature `i` by `g - radius`, clamped to its bounds.
    fn decode(&self, genome: &Genome) -> Option<EnvState> {
        let r = self.config.radius as i64;
        let y: Vec<f64> = genome
            .0
            .iter()
            .zip(&self.features)
            .zip(&self.bounds)
            .map(|((&g, &x), &(lo, hi))| (x as i64 + g as i64 - r).clamp(lo as i64, hi as i64) as f64)
            .collect();
        self.env.decode_features(&y)
    }
}

impl<Q: QFunction + ?Sized, E: Environment + ?Sized> Problem for StateSearch<'_, Q, E> {
    fn genome_len(&self) -> usize {
        self.features.len()
    }

    fn num_alleles(&self) -> usize {
        2 * self.config.radius + 1
    }

    fn num_objectives(&self) -> usize {
        1
    }

    fn evaluate(&mut self, genome: &Genome) -> Result<Evaluation> {
        let Some(state) = self.decode(genome) else {
            return Ok(Evaluation::infeasible(1.0, 1));
        };
        if !self.seen.contains_key(&state) {
            let entry = if is_valid_semifactual(self.q, self.env, &self.factual, &state) {
                let features = self.env.encode_features(&state);
                let gain = properties::gain(&self.features, &features)?;
                let action = self.q.greedy_action(&self.factual);
                let cells: Vec<usize> = features.iter().map(|&v| v as usize).collect();
                let seed = seeding::derive(self.config.seed, &[0x20u64, seeding::hash_path(&cells)]);
                let robustness =
                    robustness(self.q, self.env, &state, action, self.config.robustness_samples, seed);
                let fitness = gain / self.max_gain + robustness;
                Some(Scored { state, features, gain, robustness, fitness })
            } else {
                None
            };
            self.seen.insert(state, entry);
        }
        Ok(match &self.seen[&state] {
            Some(s) => Evaluation::feasible(alloc::vec![-s.fitness]),
            None => Evaluation::infeasible(1.0, 1),
        })
    }
}

fn min_pairwise(points: &[&[f64]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = properties::gain(points[i], points[j]).unwrap_or(0.0);
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Greedy max-min selection of `d` indices from `pool`, which must be in
/// preference order, followed by single-swap improvement until no swap of
/// a selected point for a rejected one raises the minimum pairwise distance.
pub fn max_min_select(pool: &[Vec<f64>], d: usize) -> Vec<usize> {
    if pool.is_empty() || d == 0 {
        return Vec::new();
    }
    let mut chosen = alloc::vec![0usize];
    while chosen.len() < d.min(pool.len()) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..pool.len() {
            if chosen.contains(&i) {
                continue;
            }
            let m = chosen
                .iter()
                .map(|&c| properties::gain(&pool[i], &pool[c]).unwrap_or(0.0))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        chosen.push(best.expect("pool larger than selection").0);
    }
    let score = |sel: &[usize]| min_pairwise(&sel.iter().map(|&i| pool[i].as_slice()).collect::<Vec<_>>());
    if chosen.len() >= 2 {
        let mut current = score(&chosen);
        'improve: loop {
            for slot in 0..chosen.len() {
                for cand in 0..pool.len() {
                    if chosen.contains(&cand) {
                        continue;
                    }
                    let mut trial = chosen.clone();
                    trial[slot] = cand;
                    let s = score(&trial);
                    if s > current {
                        chosen = trial;
                        current = s;
                        continue 'improve;
                    }
                }
            }
            break;
        }
    }
    chosen
}

/// Baseline explanation of `s`: up to `D` diverse valid states, each with an
/// action path when one within `2k` steps was found.
pub fn sgen_explain<Q, E>(q: &Q, env: &E, s: &EnvState, config: &BaselineConfig) -> Result<BaselineResult>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    config.validate()?;
    if env.is_terminal(s) {
        return Err(Error::TerminalState);
    }
    let bounds = env.feature_bounds();
    let max_gain = libm::sqrt(bounds.iter().map(|&(lo, hi)| { let w = (hi - lo) as f64; w * w }).sum());
    let mut problem = StateSearch {
        q,
        env,
        factual: *s,
        features: env.encode_features(s),
        bounds,
        max_gain: if max_gain > 0.0 { max_gain } else { 1.0 },
        config,
        seen: BTreeMap::new(),
    };
    let search = MooConfig { seed: seeding::derive(config.seed, &[0x21]), ..config.search.clone() };
    let outcome = optimizer::evolve(&mut problem, &search)?;

    let mut pool: Vec<Scored> = problem.seen.into_values().flatten().collect();
    // Stable: equal fitness keeps state order.
    pool.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
    pool.truncate(config.pool_size);
    let feats: Vec<Vec<f64>> = pool.iter().map(|p| p.features.clone()).collect();
    let picked = max_min_select(&feats, config.diversity_count);

    let mut states = Vec::with_capacity(picked.len());
    for (slot, i) in picked.into_iter().enumerate() {
        let p = &pool[i];
        let path_seed = seeding::derive(config.seed, &[0x22, slot as u64]);
        let path = find_action_path(q, env, s, &p.state, config.path_horizon(), &config.path_search, path_seed)?;
        states.push(BaselineState { state: p.state, gain: p.gain, robustness: p.robustness, path });
    }
    Ok(BaselineResult {
        factual_state: *s,
        chosen_action: q.greedy_action(s),
        states,
        evaluations: outcome.evaluations,
    })
}

struct PathSearch<'a, E: ?Sized> {
    env: &'a E,
    start: EnvState,
    target: Vec<f64>,
    target_state: EnvState,
    seeds: Vec<u64>,
    best: Option<Rollout>,
}

impl<E: Environment + ?Sized> Problem for PathSearch<'_, E> {
    fn genome_len(&self) -> usize {
        self.seeds.len()
    }

    fn num_alleles(&self) -> usize {
        self.env.num_actions()
    }

    fn num_objectives(&self) -> usize {
        2
    }

    fn evaluate(&mut self, genome: &Genome) -> Result<Evaluation> {
        let actions: Vec<Action> = genome.0.iter().map(|&g| Action(g)).collect();
        let rollout = Rollout::execute(self.env, &self.start, &actions, &self.seeds)?;
        let mut best = (f64::INFINITY, 0usize);
        for (t, step) in rollout.steps.iter().enumerate() {
            let d = properties::gain(&self.target, &self.env.encode_features(&step.next_state))?;
            if d < best.0 {
                best = (d, t + 1);
            }
            if step.next_state == self.target_state {
                let hit = rollout.prefix(t + 1);
                let better = match &self.best {
                    None => true,
                    Some(b) => (hit.len(), hit.actions()) < (b.len(), b.actions()),
                };
                if better {
                    self.best = Some(hit);
                }
                break;
            }
        }
        if best.1 == 0 {
            return Ok(Evaluation::infeasible(1.0, 2));
        }
        Ok(Evaluation::feasible(alloc::vec![best.0, best.1 as f64 / self.seeds.len() as f64]))
    }
}

/// Shortest action sequence found from `s` whose rollout, under step seeds
/// fixed by `seed`, ends exactly at `target`.
pub fn find_action_path<Q, E>(
    q: &Q,
    env: &E,
    s: &EnvState,
    target: &EnvState,
    horizon: usize,
    budget: &MooConfig,
    seed: u64,
) -> Result<Option<Rollout>>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    let _ = q;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".to_string()));
    }
    if target == s || env.is_terminal(s) {
        return Ok(None);
    }
    let mut problem = PathSearch {
        env,
        start: *s,
        target: env.encode_features(target),
        target_state: *target,
        seeds: (0..horizon).map(|t| seeding::derive(seed, &[0x30, t as u64])).collect(),
        best: None,
    };
    let config = MooConfig { seed: seeding::derive(seed, &[0x31]), ..budget.clone() };
    optimizer::evolve(&mut problem, &config)?;
    Ok(problem.best)
}

/// Scores each baseline state on the causal properties through its action
/// path. Time is clamped to `k`; states without a path get the worst scores.
pub fn score_baseline<Q, E>(
    q: &Q,
    env: &E,
    s: &EnvState,
    result: &BaselineResult,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<BaselineScore>>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".to_string()));
    }
    let mut out = Vec::with_capacity(result.states.len());
    for st in &result.states {
        let scored = match &st.path {
            Some(path) => {
                let mut scores = score_candidate(
                    q,
                    env,
                    s,
                    path,
                    path.len(),
                    samples,
                    candidate_seed(seed, &path.actions()),
                    FidelityMode::PerStep,
                )?;
                scores.temporal_distance = path.len().min(horizon) as f64 / horizon as f64;
                BaselineScore { state: st.state, scores, path_found: true }
            }
            None => BaselineScore { state: st.state, scores: PropertyScores::WORST, path_found: false },
        };
        out.push(scored);
    }
    Ok(out)
}

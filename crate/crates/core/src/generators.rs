//! Forward (advance) and backward (rewind) semifactual search.
//!
//! Both directions run [`optimizer::evolve`] over length-`k` action
//! sequences. Executing a genome visits up to `k` states; every visited state
//! that keeps the policy's action, differs from the factual state and is not
//! terminal becomes a candidate. A genome's fitness is the mean objective
//! vector of its candidates, or infeasible (violation 1) when it has none.
//! After the search every candidate path ever seen is re-scored with the
//! reporting sample count, deduplicated by state, and reduced to its Pareto
//! front.
//!
//! Step seeds are fixed per timestep, so a candidate's rollout depends only
//! on its action path. Advance derives them from the request seed; rewind
//! reuses the trajectory's recorded seeds so environment events replay.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, EnvState, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::optimizer::{self, Evaluation, Genome, MooConfig, Problem};
use crate::policy::QFunction;
use crate::properties::{self, FidelityMode, PropertyScores, Rollout};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Advance,
    Rewind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplanationRequest {
    /// Index `n` of the explained state in the trajectory.
    pub factual_index: usize,
    pub horizon: usize,
    pub direction: Direction,
    pub moo: MooConfig,
    /// Stochastic-uncertainty samples per candidate during the search.
    pub search_samples: usize,
    /// Samples used when re-scoring the archive for the returned front.
    pub report_samples: usize,
    pub seed: u64,
    pub fidelity_mode: FidelityMode,
}

impl Default for ExplanationRequest {
    fn default() -> Self {
        ExplanationRequest {
            factual_index: 0,
            horizon: 3,
            direction: Direction::Advance,
            moo: MooConfig::default(),
            search_samples: 30,
            report_samples: 200,
            seed: 0,
            fidelity_mode: FidelityMode::PerStep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemifactualCandidate {
    pub state: EnvState,
    pub rollout: Rollout,
    pub scores: PropertyScores,
    pub origin: Direction,
    /// Feature distance to the factual state; always positive.
    pub feature_gain: f64,
}

impl SemifactualCandidate {
    pub fn actions(&self) -> Vec<Action> {
        self.rollout.actions()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub evaluations: usize,
    /// Distinct action paths executed.
    pub distinct_paths: usize,
    /// Distinct paths that produced a valid candidate.
    pub valid_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub factual_state: EnvState,
    pub chosen_action: Action,
    pub direction: Direction,
    /// Mutually nondominated candidates; empty when the search found none.
    pub candidates: Vec<SemifactualCandidate>,
    pub stats: GenerationStats,
}

impl ExplanationSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Per-timestep seeds for forward search from factual index `n`.
pub fn advance_step_seeds(seed: u64, factual_index: usize, horizon: usize) -> Vec<u64> {
    (0..horizon).map(|t| seeding::derive(seed, &[0xADu64, factual_index as u64, t as u64])).collect()
}

/// Stochastic-uncertainty sampling seed of the candidate reached by `path`.
pub fn candidate_seed(seed: u64, path: &[Action]) -> u64 {
    let idx: Vec<usize> = path.iter().map(|a| a.0).collect();
    seeding::derive(seed, &[0x5Cu64, seeding::hash_path(&idx)])
}

/// Scores a candidate rollout on the five properties.
#[allow(clippy::too_many_arguments)]
pub fn score_candidate<Q, E>(
    q: &Q,
    env: &E,
    factual: &EnvState,
    rollout: &Rollout,
    horizon: usize,
    samples: usize,
    seed: u64,
    mode: FidelityMode,
) -> Result<PropertyScores>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    let actions = rollout.actions();
    let end = rollout.end_state();
    let fidelity = match mode {
        FidelityMode::PerStep => properties::fidelity(q, rollout)?,
        FidelityMode::FactualState => properties::fidelity_at(q, factual, &actions)?,
    };
    Ok(PropertyScores {
        validity: !env.is_terminal(end) && properties::validity(q, factual, end),
        temporal_distance: properties::temporal_distance(rollout.len(), horizon)?,
        stochastic_uncertainty: properties::stochastic_uncertainty(
            q,
            env,
            factual,
            &actions,
            &rollout.start_state,
            samples,
            seed,
        )?,
        fidelity,
        exceptionality: properties::exceptionality(rollout)?,
    })
}

struct PathRecord {
    rollout: Rollout,
    scores: PropertyScores,
    gain: f64,
}

struct SearchProblem<'a, Q: ?Sized, E: ?Sized> {
    q: &'a Q,
    env: &'a E,
    factual: EnvState,
    factual_features: Vec<f64>,
    start: EnvState,
    seeds: Vec<u64>,
    request: &'a ExplanationRequest,
    paths: BTreeMap<Vec<usize>, Option<PathRecord>>,
}

impl<Q: QFunction + ?Sized, E: Environment + ?Sized> SearchProblem<'_, Q, E> {
    fn record_path(&mut self, rollout: &Rollout) -> Result<Option<&PathRecord>> {
        let key: Vec<usize> = rollout.steps.iter().map(|s| s.action.0).collect();
        if !self.paths.contains_key(&key) {
            let end = rollout.end_state();
            let gain = properties::gain(&self.factual_features, &self.env.encode_features(end))?;
            let valid = gain > 0.0 && !self.env.is_terminal(end) && properties::validity(self.q, &self.factual, end);
            let record = if valid {
                let scores = score_candidate(
                    self.q,
                    self.env,
                    &self.factual,
                    rollout,
                    self.request.horizon,
                    self.request.search_samples,
                    candidate_seed(self.request.seed, &rollout.actions()),
                    self.request.fidelity_mode,
                )?;
                Some(PathRecord { rollout: rollout.clone(), scores, gain })
            } else {
                None
            };
            self.paths.insert(key.clone(), record);
        }
        Ok(self.paths[&key].as_ref())
    }
}

impl<Q: QFunction + ?Sized, E: Environment + ?Sized> Problem for SearchProblem<'_, Q, E> {
    fn genome_len(&self) -> usize {
        self.request.horizon
    }

    fn num_alleles(&self) -> usize {
        self.env.num_actions()
    }

    fn num_objectives(&self) -> usize {
        4
    }

    /// The policy's own greedy continuation from the start state.
    fn seed_genomes(&mut self) -> Result<Vec<Genome>> {
        let mut genes = Vec::with_capacity(self.request.horizon);
        let mut state = self.start;
        for &seed in &self.seeds {
            if self.env.is_terminal(&state) {
                genes.push(0);
                continue;
            }
            let a = self.q.greedy_action(&state);
            genes.push(a.0);
            state = self.env.step(&state, a, seed)?.next_state;
        }
        Ok(alloc::vec![Genome(genes)])
    }

    fn evaluate(&mut self, genome: &Genome) -> Result<Evaluation> {
        let actions: Vec<Action> = genome.0.iter().map(|&g| Action(g)).collect();
        let rollout = Rollout::execute(self.env, &self.start, &actions, &self.seeds)?;
        let mut sum = [0.0f64; 4];
        let mut count = 0usize;
        for len in 1..=rollout.len() {
            if let Some(rec) = self.record_path(&rollout.prefix(len))? {
                for (acc, v) in sum.iter_mut().zip(rec.scores.objectives()) {
                    *acc += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Ok(Evaluation::infeasible(1.0, 4));
        }
        Ok(Evaluation::feasible(sum.iter().map(|s| s / count as f64).collect()))
    }
}

fn lexicographic(a: &[f64; 4], b: &[f64; 4]) -> core::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
}

/// Runs the search and returns the explanation set together with every
/// re-scored candidate it was selected from (one per distinct state).
pub fn explain_with_archive<Q, E>(
    q: &Q,
    env: &E,
    trajectory: &Trajectory,
    request: &ExplanationRequest,
) -> Result<(ExplanationSet, Vec<SemifactualCandidate>)>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    let k = request.horizon;
    if k == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if request.search_samples == 0 || request.report_samples == 0 {
        return Err(Error::InvalidSampleCount);
    }
    let n = request.factual_index;
    let factual = *trajectory.state_at(n)?;
    if env.is_terminal(&factual) {
        return Err(Error::TerminalState);
    }
    let (start, seeds) = match request.direction {
        Direction::Advance => (factual, advance_step_seeds(request.seed, n, k)),
        Direction::Rewind => {
            if n < k {
                return Err(Error::InsufficientHistory { index: n, horizon: k });
            }
            (trajectory.replay(env, n - k)?, trajectory.seeds(n - k, n))
        }
    };

    let mut problem = SearchProblem {
        q,
        env,
        factual,
        factual_features: env.encode_features(&factual),
        start,
        seeds,
        request,
        paths: BTreeMap::new(),
    };
    let outcome = optimizer::evolve(&mut problem, &request.moo)?;

    let stats = GenerationStats {
        evaluations: outcome.evaluations,
        distinct_paths: problem.paths.len(),
        valid_paths: problem.paths.values().filter(|r| r.is_some()).count(),
    };

    // Paths iterate in lexicographic order, so on exact score ties the
    // smaller path wins.
    let mut by_state: BTreeMap<EnvState, SemifactualCandidate> = BTreeMap::new();
    for rec in problem.paths.values().flatten() {
        let scores = if request.report_samples == request.search_samples {
            rec.scores
        } else {
            score_candidate(
                q,
                env,
                &factual,
                &rec.rollout,
                k,
                request.report_samples,
                candidate_seed(request.seed, &rec.rollout.actions()),
                request.fidelity_mode,
            )?
        };
        let cand = SemifactualCandidate {
            state: *rec.rollout.end_state(),
            rollout: rec.rollout.clone(),
            scores,
            origin: request.direction,
            feature_gain: rec.gain,
        };
        match by_state.get(&cand.state) {
            Some(old) if lexicographic(&old.scores.objectives(), &scores.objectives()).is_le() => {}
            _ => {
                by_state.insert(cand.state, cand);
            }
        }
    }
    let mut archive: Vec<SemifactualCandidate> = by_state.into_values().collect();
    archive.sort_by_key(|c| c.actions());
    let objs: Vec<[f64; 4]> = archive.iter().map(|c| c.scores.objectives()).collect();
    let candidates = optimizer::pareto_front(&objs).into_iter().map(|i| archive[i].clone()).collect();

    let set = ExplanationSet {
        factual_state: factual,
        chosen_action: q.greedy_action(&factual),
        direction: request.direction,
        candidates,
        stats,
    };
    Ok((set, archive))
}

pub fn explain<Q, E>(q: &Q, env: &E, trajectory: &Trajectory, request: &ExplanationRequest) -> Result<ExplanationSet>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    explain_with_archive(q, env, trajectory, request).map(|(set, _)| set)
}

/// Forward semifactuals: alternative futures from the factual state.
pub fn advance_explain<Q, E>(
    q: &Q,
    env: &E,
    trajectory: &Trajectory,
    request: &ExplanationRequest,
) -> Result<ExplanationSet>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    let req = ExplanationRequest { direction: Direction::Advance, ..request.clone() };
    explain(q, env, trajectory, &req)
}

/// Backward semifactuals: alternative action sequences from `k` steps before
/// the factual state.
pub fn rewind_explain<Q, E>(
    q: &Q,
    env: &E,
    trajectory: &Trajectory,
    request: &ExplanationRequest,
) -> Result<ExplanationSet>
where
    Q: QFunction + ?Sized,
    E: Environment + ?Sized,
{
    let req = ExplanationRequest { direction: Direction::Rewind, ..request.clone() };
    explain(q, env, trajectory, &req)
}

/// Uniformly random member of the set, fixed by `seed`.
pub fn select_presentation(set: &ExplanationSet, seed: u64) -> Result<&SemifactualCandidate> {
    if set.candidates.is_empty() {
        return Err(Error::EmptySet);
    }
    let i = seeding::rng(seed).gen_range(0..set.candidates.len());
    Ok(&set.candidates[i])
}

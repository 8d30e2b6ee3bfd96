//! End-to-end experiment: train policies, harvest factual states, explain
//! each with every method and aggregate the scores.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{debug, info, warn};
use rand::Rng;
use semifactual_core::baseline::{score_baseline, sgen_explain, BaselineConfig};
use semifactual_core::envs::{Action, Env, EnvSpec, EnvState, Environment, Trajectory};
use semifactual_core::generators::{explain, Direction, ExplanationRequest};
use semifactual_core::optimizer::MooConfig;
use semifactual_core::policy::{train, QFunction, QTable, TrainingConfig};
use semifactual_core::properties::{self, PropertyScores};
use semifactual_core::seeding;
use serde::{Deserialize, Serialize};

use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Advance,
    Rewind,
    Sgen1,
    Sgen3,
    Sgen5,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Advance, Method::Rewind, Method::Sgen1, Method::Sgen3, Method::Sgen5];

    pub fn name(self) -> &'static str {
        match self {
            Method::Advance => "advance",
            Method::Rewind => "rewind",
            Method::Sgen1 => "sgen1",
            Method::Sgen3 => "sgen3",
            Method::Sgen5 => "sgen5",
        }
    }

    /// Number of states returned by the baseline variants.
    pub fn diversity_count(self) -> Option<usize> {
        match self {
            Method::Sgen1 => Some(1),
            Method::Sgen3 => Some(3),
            Method::Sgen5 => Some(5),
            _ => None,
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Method::Advance => Some(Direction::Advance),
            Method::Rewind => Some(Direction::Rewind),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower || format!("sgrl{}", m.name()) == lower)
            .with_context(|| format!("unknown method `{s}`"))
    }
}

/// Where each environment's policy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// Train with `ExperimentConfig::training`, seeded from the master seed.
    Train,
    /// Load `<dir>/<env name>.qtable`.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub envs: Vec<EnvSpec>,
    pub policy: PolicySource,
    pub training: TrainingConfig,
    /// Factual states harvested per withheld action.
    pub per_action: usize,
    pub methods: Vec<Method>,
    pub horizon: usize,
    pub moo: MooConfig,
    pub search_samples: usize,
    pub report_samples: usize,
    pub baseline: BaselineConfig,
    /// Exploration rate of the harvesting rollouts.
    pub collect_epsilon: f64,
    pub max_episodes: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            envs: vec![
                EnvSpec::from_name("gridworld").expect("built-in"),
                EnvSpec::from_name("frozen_lake").expect("built-in"),
            ],
            policy: PolicySource::Train,
            training: TrainingConfig::default(),
            per_action: 10,
            methods: Method::ALL.to_vec(),
            horizon: 3,
            moo: MooConfig::default(),
            search_samples: 30,
            report_samples: 200,
            baseline: BaselineConfig::default(),
            collect_epsilon: 0.1,
            max_episodes: 20_000,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() {
            bail!("no environments selected");
        }
        if self.per_action == 0 {
            bail!("per_action must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("no methods selected");
        }
        if self.horizon == 0 || self.search_samples == 0 || self.report_samples == 0 {
            bail!("horizon and sample counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.collect_epsilon) {
            bail!("collect_epsilon must lie in [0, 1]");
        }
        self.moo.validate()?;
        self.training.validate()?;
        BaselineConfig { horizon: self.horizon, ..self.baseline.clone() }.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A state to explain, with the history that led to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualRecord {
    pub record_id: usize,
    pub env: String,
    /// Episode prefix ending at the factual state.
    pub trajectory: Trajectory,
    pub index: usize,
    pub state: EnvState,
    pub chosen_action: Action,
    /// Action the policy did not pick here.
    pub withheld_action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub records: Vec<FactualRecord>,
    pub episodes: usize,
    /// Records still missing per withheld action when the budget ran out.
    pub shortfall: Vec<usize>,
}

/// Harvests `per_action` factual states for every action `a'` that the
/// policy does not choose there. Each episode contributes at most one state,
/// taken at a random index `n >= horizon`.
pub fn collect_factuals<Q: QFunction + ?Sized>(
    q: &Q,
    env: &Env,
    per_action: usize,
    horizon: usize,
    epsilon: f64,
    max_episodes: usize,
    seed: u64,
) -> Result<Collection> {
    let n_actions = env.num_actions();
    let mut counts = vec![0usize; n_actions];
    let mut records = Vec::new();
    let mut episodes = 0;
    while counts.iter().any(|&c| c < per_action) && episodes < max_episodes {
        let mut rng = seeding::rng(seeding::derive(seed, &[episodes as u64]));
        episodes += 1;
        let mut traj = Trajectory::new(env.initial_state());
        while traj.len() < env.max_steps() && !env.is_terminal(traj.final_state()) {
            let s = *traj.final_state();
            let a = if rng.gen::<f64>() < epsilon { Action(rng.gen_range(0..n_actions)) } else { q.greedy_action(&s) };
            traj.advance(env, a, rng.gen())?;
        }
        let eligible: Vec<usize> =
            (horizon..=traj.len()).filter(|&n| !env.is_terminal(traj.state_at(n).expect("in range"))).collect();
        if eligible.is_empty() {
            continue;
        }
        let n = eligible[rng.gen_range(0..eligible.len())];
        let state = *traj.state_at(n)?;
        let chosen = q.greedy_action(&state);
        let open = (0..n_actions).filter(|&a| a != chosen.0 && counts[a] < per_action).min_by_key(|&a| counts[a]);
        let Some(withheld) = open else { continue };
        counts[withheld] += 1;
        records.push(FactualRecord {
            record_id: records.len(),
            env: env.name().to_string(),
            trajectory: traj.prefix(n)?,
            index: n,
            state,
            chosen_action: chosen,
            withheld_action: Action(withheld),
        });
    }
    let shortfall: Vec<usize> = counts.iter().map(|&c| per_action - c).collect();
    if shortfall.iter().any(|&s| s > 0) {
        warn!("{}: shortfall {:?} after {} episodes", env.name(), shortfall, episodes);
    }
    Ok(Collection { records, episodes, shortfall })
}

/// Outcome of one (record, method) pair. Means are over the returned set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLog {
    pub env: String,
    pub method: Method,
    pub record_id: usize,
    pub index: usize,
    pub state: String,
    pub generated: bool,
    pub error: Option<String>,
    pub set_size: usize,
    pub validity: Option<f64>,
    pub temporal_distance: Option<f64>,
    pub stochastic_uncertainty: Option<f64>,
    pub fidelity: Option<f64>,
    pub exceptionality: Option<f64>,
    pub gain: Option<f64>,
    pub diversity: Option<f64>,
    pub path_not_found: usize,
}

/// Aggregates for one (environment, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env: String,
    pub method: Method,
    pub records: usize,
    pub generated: usize,
    pub generated_pct: f64,
    pub validity: Option<f64>,
    pub temporal_distance: Option<f64>,
    pub stochastic_uncertainty: Option<f64>,
    pub fidelity: Option<f64>,
    pub exceptionality: Option<f64>,
    pub gain: Option<f64>,
    pub diversity: Option<f64>,
    pub path_not_found: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn get(&self, env: &str, method: Method) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.env == env && r.method == method)
    }

    /// Aggregates per-record logs in first-seen (env, method) order.
    pub fn from_logs(logs: &[RecordLog]) -> Self {
        let mut order: Vec<(String, Method)> = Vec::new();
        let mut groups: BTreeMap<(String, Method), Vec<&RecordLog>> = BTreeMap::new();
        for l in logs {
            let key = (l.env.clone(), l.method);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(l);
        }
        let rows = order
            .into_iter()
            .map(|key| {
                let ls = &groups[&key];
                let ok: Vec<&RecordLog> = ls.iter().copied().filter(|l| l.generated).collect();
                let mean = |f: fn(&RecordLog) -> Option<f64>| -> Option<f64> {
                    let vals: Vec<f64> = ok.iter().filter_map(|l| f(l)).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                };
                MetricsRow {
                    env: key.0.clone(),
                    method: key.1,
                    records: ls.len(),
                    generated: ok.len(),
                    generated_pct: 100.0 * ok.len() as f64 / ls.len() as f64,
                    validity: mean(|l| l.validity),
                    temporal_distance: mean(|l| l.temporal_distance),
                    stochastic_uncertainty: mean(|l| l.stochastic_uncertainty),
                    fidelity: mean(|l| l.fidelity),
                    exceptionality: mean(|l| l.exceptionality),
                    gain: mean(|l| l.gain),
                    diversity: mean(|l| l.diversity),
                    path_not_found: ls.iter().map(|l| l.path_not_found).sum(),
                }
            })
            .collect();
        MetricsTable { rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub env: String,
    pub method: Method,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: MetricsTable,
    pub logs: Vec<RecordLog>,
    pub records: Vec<FactualRecord>,
    pub policies: Vec<(String, QTable)>,
    /// Wall-clock seconds per cell; kept apart from the deterministic table.
    pub timings: Vec<Timing>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(
    log: &mut RecordLog,
    q: &dyn QFunction,
    env: &Env,
    factual: &EnvState,
    members: &[(EnvState, PropertyScores)],
) -> Result<()> {
    log.set_size = members.len();
    log.generated = !members.is_empty();
    if members.is_empty() {
        return Ok(());
    }
    // Checked directly on the states rather than trusting the stored flags.
    log.validity = mean(members.iter().map(|(s, _)| {
        let ok = s != factual && !env.is_terminal(s) && properties::validity(q, factual, s);
        if ok {
            1.0
        } else {
            0.0
        }
    }));
    log.temporal_distance = mean(members.iter().map(|(_, p)| p.temporal_distance));
    log.stochastic_uncertainty = mean(members.iter().map(|(_, p)| p.stochastic_uncertainty));
    log.fidelity = mean(members.iter().map(|(_, p)| p.fidelity));
    log.exceptionality = mean(members.iter().map(|(_, p)| p.exceptionality));
    let fx = env.encode_features(factual);
    let feats: Vec<Vec<f64>> = members.iter().map(|(s, _)| env.encode_features(s)).collect();
    let mut gains = Vec::with_capacity(feats.len());
    for f in &feats {
        gains.push(properties::gain(&fx, f)?);
    }
    log.gain = mean(gains.into_iter());
    log.diversity = Some(properties::diversity(&fx, &feats)?.pairwise);
    Ok(())
}

fn run_method(
    config: &ExperimentConfig,
    q: &dyn QFunction,
    env: &Env,
    record: &FactualRecord,
    method: Method,
    seed: u64,
    log: &mut RecordLog,
) -> Result<()> {
    if let Some(direction) = method.direction() {
        let request = ExplanationRequest {
            factual_index: record.index,
            horizon: config.horizon,
            direction,
            moo: MooConfig { seed: seeding::derive(seed, &[1]), ..config.moo.clone() },
            search_samples: config.search_samples,
            report_samples: config.report_samples,
            seed,
            ..Default::default()
        };
        let set = explain(q, env, &record.trajectory, &request)?;
        let members: Vec<(EnvState, PropertyScores)> = set.candidates.iter().map(|c| (c.state, c.scores)).collect();
        summarize(log, q, env, &record.state, &members)
    } else {
        let d = method.diversity_count().expect("baseline method");
        let cfg = BaselineConfig { diversity_count: d, horizon: config.horizon, seed, ..config.baseline.clone() };
        let result = sgen_explain(q, env, &record.state, &cfg)?;
        let scores =
            score_baseline(q, env, &record.state, &result, config.horizon, config.report_samples, seeding::derive(seed, &[2]))?;
        log.path_not_found = scores.iter().filter(|s| !s.path_found).count();
        let members: Vec<(EnvState, PropertyScores)> = scores.iter().map(|s| (s.state, s.scores)).collect();
        summarize(log, q, env, &record.state, &members)
    }
}

fn obtain_policy(config: &ExperimentConfig, env_idx: usize, spec: &EnvSpec, env: &Env) -> Result<QTable> {
    match &config.policy {
        PolicySource::Train => {
            let cfg = TrainingConfig { seed: seeding::derive(config.seed, &[0x7A, env_idx as u64]), ..config.training.clone() };
            Ok(train(env, &cfg)?)
        }
        PolicySource::Directory(dir) => io::load_qtable(&dir.join(format!("{}.qtable", spec.name()))),
    }
}

/// Explains every record with one method, logging failures instead of
/// stopping.
pub fn explain_records(
    config: &ExperimentConfig,
    q: &dyn QFunction,
    env: &Env,
    env_idx: usize,
    records: &[FactualRecord],
    method: Method,
) -> Vec<RecordLog> {
    let method_idx = Method::ALL.iter().position(|&m| m == method).expect("listed") as u64;
    records
        .iter()
        .map(|r| {
            let seed = seeding::derive(config.seed, &[env_idx as u64, r.record_id as u64, method_idx]);
            let mut log = RecordLog {
                env: env.name().to_string(),
                method,
                record_id: r.record_id,
                index: r.index,
                state: r.state.key(),
                generated: false,
                error: None,
                set_size: 0,
                validity: None,
                temporal_distance: None,
                stochastic_uncertainty: None,
                fidelity: None,
                exceptionality: None,
                gain: None,
                diversity: None,
                path_not_found: 0,
            };
            if let Err(e) = run_method(config, q, env, r, method, seed, &mut log) {
                warn!("{} record {} {}: {e:#}", env.name(), r.record_id, method);
                log = RecordLog { generated: false, set_size: 0, error: Some(format!("{e:#}")), ..log };
            }
            log
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut logs = Vec::new();
    let mut all_records = Vec::new();
    let mut policies = Vec::new();
    let mut timings = Vec::new();
    for (env_idx, spec) in config.envs.iter().enumerate() {
        let env = spec.build()?;
        let started = Instant::now();
        let q = obtain_policy(config, env_idx, spec, &env)?;
        info!("{}: policy ready ({} states) in {:.1?}", env.name(), q.len(), started.elapsed());
        let coll = collect_factuals(
            &q,
            &env,
            config.per_action,
            config.horizon,
            config.collect_epsilon,
            config.max_episodes,
            seeding::derive(config.seed, &[0xC0, env_idx as u64]),
        )?;
        info!("{}: {} factual states from {} episodes", env.name(), coll.records.len(), coll.episodes);
        for &method in &config.methods {
            let started = Instant::now();
            let out = explain_records(config, &q, &env, env_idx, &coll.records, method);
            let seconds = started.elapsed().as_secs_f64();
            debug!("{} {}: {:.2}s", env.name(), method, seconds);
            timings.push(Timing { env: env.name().to_string(), method, seconds });
            logs.extend(out);
        }
        all_records.extend(coll.records);
        policies.push((env.name().to_string(), q));
    }
    Ok(ExperimentOutput { table: MetricsTable::from_logs(&logs), logs, records: all_records, policies, timings })
}

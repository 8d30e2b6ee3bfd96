use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use semifactual::harness::{self, ExperimentConfig, Method, PolicySource};
use semifactual::{io, report, selftest};
use semifactual_core::baseline::{score_baseline, sgen_explain, BaselineConfig};
use semifactual_core::envs::Environment;
use semifactual_core::generators::{explain, ExplanationRequest};
use semifactual_core::optimizer::MooConfig;
use semifactual_core::policy::{train, QFunction, TrainingConfig};
use semifactual_core::properties::PropertyScores;

#[derive(Parser)]
#[command(name = "semifactual", version, about = "Semifactual explanations for RL policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tabular Q-learning policy and write it as a Q-table file.
    Train {
        #[arg(long)]
        env: String,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 300_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Harvest factual states with a trained policy.
    Collect {
        #[arg(long)]
        env: String,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_action: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `factuals.jsonl` and one trajectory file per record.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Explain one state of a recorded trajectory.
    Explain(ExplainArgs),
    /// Run the full experiment and write the reports.
    Evaluate {
        /// TOML experiment config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        per_action: Option<usize>,
        /// Directory of `<env>.qtable` files to use instead of training.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, short, default_value = "results")]
        out: PathBuf,
    },
    /// Run the oracle suites.
    Selftest,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    index: usize,
    /// advance, rewind, sgen1, sgen3 or sgen5.
    #[arg(long, default_value = "advance")]
    method: Method,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 25)]
    generations: usize,
    #[arg(long, default_value_t = 24)]
    population: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the explanation as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn fmt_scores(s: &PropertyScores) -> String {
    format!(
        "TD={} SU={} F={} E={}",
        s.temporal_distance, s.stochastic_uncertainty, s.fidelity, s.exceptionality
    )
}

fn run_explain(a: ExplainArgs) -> Result<()> {
    let env = io::resolve_env(&a.env)?.build()?;
    let q = io::load_qtable(&a.policy)?;
    let traj = io::load_trajectory(&a.trajectory, &env)?;
    let moo = MooConfig { generations: a.generations, population: a.population, seed: a.seed, ..Default::default() };
    let mut out = std::io::stdout().lock();
    if let Some(direction) = a.method.direction() {
        let req = ExplanationRequest { factual_index: a.index, horizon: a.k, direction, moo, seed: a.seed, ..Default::default() };
        let set = explain(&q, &env, &traj, &req)?;
        if a.json {
            writeln!(out, "{}", serde_json::to_string_pretty(&set)?)?;
            return Ok(());
        }
        write!(out, "{}", env.render(&set.factual_state))?;
        writeln!(out, "factual {}  action {}", set.factual_state, io::action_label(&env, set.chosen_action))?;
        writeln!(out, "{} candidates ({} evaluations)", set.candidates.len(), set.stats.evaluations)?;
        for (i, c) in set.candidates.iter().enumerate() {
            let path: Vec<String> = c.actions().iter().map(|&x| io::action_label(&env, x)).collect();
            writeln!(out, "[{i}] {}  path {}  {}  gain={}", c.state, path.join(" "), fmt_scores(&c.scores), c.feature_gain)?;
        }
    } else {
        let d = a.method.diversity_count().expect("baseline method");
        let s = *traj.state_at(a.index)?;
        let cfg = BaselineConfig { diversity_count: d, horizon: a.k, search: moo, seed: a.seed, ..Default::default() };
        let result = sgen_explain(&q, &env, &s, &cfg)?;
        let scores = score_baseline(&q, &env, &s, &result, a.k, 200, a.seed)?;
        if a.json {
            writeln!(out, "{}", serde_json::to_string_pretty(&(&result, &scores))?)?;
            return Ok(());
        }
        write!(out, "{}", env.render(&s))?;
        writeln!(out, "factual {}  action {}", s, io::action_label(&env, q.greedy_action(&s)))?;
        writeln!(out, "{} states", result.states.len())?;
        for (i, (st, sc)) in result.states.iter().zip(&scores).enumerate() {
            let flag = if sc.path_found { "" } else { "  PATH_NOT_FOUND" };
            writeln!(out, "[{i}] {}  gain={} robustness={}  {}{flag}", st.state, st.gain, st.robustness, fmt_scores(&sc.scores))?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { env, out, steps, seed } => {
            let env = io::resolve_env(&env)?.build()?;
            let q = train(&env, &TrainingConfig { steps, seed, ..Default::default() })?;
            io::save_qtable(&q, &out)?;
            log::info!("wrote {} states to {}", q.len(), out.display());
        }
        Command::Collect { env, policy, per_action, k, seed, out } => {
            let env = io::resolve_env(&env)?.build()?;
            let q = io::load_qtable(&policy)?;
            let coll = harness::collect_factuals(&q, &env, per_action, k, 0.1, 20_000, seed)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut f = fs::File::create(out.join("factuals.jsonl"))?;
            for r in &coll.records {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
                io::save_trajectory(&r.trajectory, &out.join(format!("trajectory_{:04}.jsonl", r.record_id)))?;
            }
            log::info!("{} records from {} episodes", coll.records.len(), coll.episodes);
        }
        Command::Explain(a) => run_explain(a)?,
        Command::Evaluate { config, seed, per_action, policies, out } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_toml(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = per_action {
                cfg.per_action = n;
            }
            if let Some(dir) = policies {
                cfg.policy = PolicySource::Directory(dir);
            }
            let dir = cfg.output_dir.clone().unwrap_or(out);
            let result = harness::run_experiment(&cfg)?;
            report::write_outputs(&result, &dir)?;
            report::write_markdown(&result.table, std::io::stdout().lock())?;
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                bail!("self-test failed");
            }
        }
    }
    Ok(())
}

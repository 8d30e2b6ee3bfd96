//! Text file formats: Q-tables, trajectories, environment specs.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use semifactual_core::envs::{Action, EnvSpec, EnvState, Environment, Trajectory, TrajectoryStep};
use semifactual_core::policy::{QFunction, QTable};
use serde::{Deserialize, Serialize};

/// Writes `# actions <n>` followed by one `key<TAB>q0 q1 ...` line per state.
pub fn write_qtable(table: &QTable, w: &mut impl Write) -> Result<()> {
    writeln!(w, "# actions {}", table.num_actions())?;
    for (state, values) in table.iter() {
        let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}\t{}", state.key(), vals.join(" "))?;
    }
    Ok(())
}

pub fn read_qtable(r: impl BufRead) -> Result<QTable> {
    let mut table: Option<QTable> = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(n) = rest.trim().strip_prefix("actions") {
                let n: usize = n.trim().parse().with_context(|| format!("line {}: bad action count", lineno + 1))?;
                table = Some(QTable::new(n));
            }
            continue;
        }
        let Some(t) = table.as_mut() else { bail!("line {}: missing `# actions` header", lineno + 1) };
        let (key, vals) = line.split_once('\t').with_context(|| format!("line {}: expected key<TAB>values", lineno + 1))?;
        let state: EnvState = key.parse().with_context(|| format!("line {}", lineno + 1))?;
        let values = vals
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: bad Q-value", lineno + 1))?;
        t.insert(state, values).with_context(|| format!("line {}", lineno + 1))?;
    }
    table.context("empty Q-table file")
}

pub fn save_qtable(table: &QTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_qtable(table, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_qtable(path: &Path) -> Result<QTable> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_qtable(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StepLine {
    step_index: usize,
    state: EnvState,
    action: Action,
    reward: f64,
    step_seed: u64,
    next_state: EnvState,
}

/// One JSON object per step. An empty trajectory cannot be written.
pub fn write_trajectory(t: &Trajectory, w: &mut impl Write) -> Result<()> {
    if t.is_empty() {
        bail!("cannot write an empty trajectory");
    }
    for (i, s) in t.steps.iter().enumerate() {
        let line = StepLine {
            step_index: i,
            state: s.state,
            action: s.action,
            reward: s.reward,
            step_seed: s.step_seed,
            next_state: s.next_state,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// Parses a trajectory and checks it replays exactly in `env`.
pub fn read_trajectory(r: impl BufRead, env: &impl Environment) -> Result<Trajectory> {
    let mut steps = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: StepLine = serde_json::from_str(&line).with_context(|| format!("line {}", lineno + 1))?;
        if s.step_index != steps.len() {
            bail!("line {}: expected step_index {}, found {}", lineno + 1, steps.len(), s.step_index);
        }
        steps.push(TrajectoryStep {
            state: s.state,
            action: s.action,
            reward: s.reward,
            step_seed: s.step_seed,
            next_state: s.next_state,
        });
    }
    let Some(first) = steps.first() else { bail!("trajectory file has no steps") };
    let t = Trajectory { initial_state: first.state, steps };
    t.validate(env)?;
    Ok(t)
}

pub fn save_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_trajectory(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: &Path, env: &impl Environment) -> Result<Trajectory> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trajectory(BufReader::new(f), env).with_context(|| format!("reading {}", path.display()))
}

/// Accepts a built-in name (`gridworld`, `frozen_lake`) or a path to a JSON
/// environment spec.
pub fn resolve_env(name_or_path: &str) -> Result<EnvSpec> {
    if let Ok(spec) = EnvSpec::from_name(name_or_path) {
        return Ok(spec);
    }
    let text = fs::read_to_string(name_or_path)
        .with_context(|| format!("`{name_or_path}` is neither a known environment nor a readable file"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn action_label(env: &impl Environment, a: Action) -> String {
    format!("{}({})", env.action_name(a), a.0)
}

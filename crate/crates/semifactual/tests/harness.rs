use std::collections::BTreeSet;

use semifactual::harness::{collect_factuals, explain_records, run_experiment, ExperimentConfig, Method, MetricsTable};
use semifactual_core::envs::{EnvSpec, Environment};
use semifactual_core::optimizer::MooConfig;
use semifactual_core::policy::{train, QFunction, TrainingConfig};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        per_action: 2,
        training: TrainingConfig { steps: 60_000, ..Default::default() },
        moo: MooConfig { generations: 6, population: 12, ..Default::default() },
        report_samples: 50,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn collection_sizes_and_filter() {
    for (name, per_action, expected) in [("gridworld", 10, 60), ("frozen_lake", 10, 50), ("gridworld", 100, 600), ("frozen_lake", 100, 500)] {
        let env = EnvSpec::from_name(name).unwrap().build().unwrap();
        let q = train(&env, &TrainingConfig { steps: 100_000, ..Default::default() }).unwrap();
        let c = collect_factuals(&q, &env, per_action, 3, 0.1, 20_000, 5).unwrap();
        assert_eq!(c.records.len(), expected, "{name}");
        assert!(c.shortfall.iter().all(|&s| s == 0));
        let mut per = vec![0; env.num_actions()];
        let mut seen = BTreeSet::new();
        for r in &c.records {
            assert_ne!(q.greedy_action(&r.state), r.withheld_action);
            assert_eq!(q.greedy_action(&r.state), r.chosen_action);
            assert!(r.index >= 3);
            assert_eq!(r.trajectory.len(), r.index);
            assert_eq!(r.trajectory.final_state(), &r.state);
            assert!(!env.is_terminal(&r.state));
            r.trajectory.validate(&env).unwrap();
            per[r.withheld_action.0] += 1;
            assert!(seen.insert((r.trajectory.seeds(0, r.index), r.index)));
        }
        assert!(per.iter().all(|&n| n == per_action));
    }
}

#[test]
fn small_experiment_reconciles_with_its_log() {
    let cfg = small_config();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 2 * 6 + 2 * 5);
    assert_eq!(out.logs.len(), out.records.len() * Method::ALL.len());
    assert_eq!(out.table.rows.len(), 10);
    assert_eq!(MetricsTable::from_logs(&out.logs), out.table);
    for row in &out.table.rows {
        let logs: Vec<_> = out.logs.iter().filter(|l| l.env == row.env && l.method == row.method).collect();
        let ok: Vec<_> = logs.iter().filter(|l| l.generated).collect();
        assert_eq!(row.records, logs.len());
        assert_eq!(row.generated, ok.len());
        assert_eq!(row.generated_pct, 100.0 * ok.len() as f64 / logs.len() as f64);
        assert!((0.0..=100.0).contains(&row.generated_pct));
        if !ok.is_empty() {
            assert_eq!(row.validity, Some(1.0));
            let f: f64 = ok.iter().map(|l| l.fidelity.unwrap()).sum::<f64>() / ok.len() as f64;
            assert_eq!(row.fidelity, Some(f));
        }
        if row.method == Method::Sgen1 {
            assert!(ok.iter().all(|l| l.set_size == 1 && l.diversity == Some(0.0)));
        }
        for l in &logs {
            assert!(l.set_size <= row.method.diversity_count().unwrap_or(usize::MAX));
            assert_eq!(l.generated, l.set_size > 0);
        }
    }
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(again.table, out.table);
    assert_eq!(again.logs, out.logs);
}

#[test]
fn failures_are_logged_not_fatal() {
    let cfg = small_config();
    let env = EnvSpec::from_name("frozen_lake").unwrap().build().unwrap();
    let q = train(&env, &TrainingConfig { steps: 20_000, ..Default::default() }).unwrap();
    let mut records = collect_factuals(&q, &env, 1, 3, 0.1, 1000, 1).unwrap().records;
    let mut short = records[0].clone();
    short.index = 1;
    short.record_id = 99;
    short.trajectory = short.trajectory.prefix(1).unwrap();
    short.state = *short.trajectory.final_state();
    records.push(short);
    let logs = explain_records(&cfg, &q, &env, 0, &records, Method::Rewind);
    assert_eq!(logs.len(), records.len());
    let bad = logs.last().unwrap();
    assert!(!bad.generated);
    assert!(bad.error.as_deref().unwrap().contains("history"), "{:?}", bad.error);
}

#[test]
fn config_from_toml() {
    let cfg = ExperimentConfig::from_toml(
        r#"
        per_action = 3
        methods = ["advance", "sgen1"]
        seed = 42
        [moo]
        generations = 5
        population = 10
        "#,
    )
    .unwrap();
    assert_eq!(cfg.per_action, 3);
    assert_eq!(cfg.methods, vec![Method::Advance, Method::Sgen1]);
    assert_eq!(cfg.moo.population, 10);
    assert_eq!(cfg.moo.crossover_rate, 0.9);
    assert_eq!(cfg.envs.len(), 2);
    assert!(ExperimentConfig::from_toml("per_action = 0").is_err());
    assert!(ExperimentConfig::from_toml("methods = []").is_err());
    assert!(ExperimentConfig::from_toml("methods = [\"sgen2\"]").is_err());
    assert_eq!("SGRL-Rewind".parse::<Method>().unwrap(), Method::Rewind);
}

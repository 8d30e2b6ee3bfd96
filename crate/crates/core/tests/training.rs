use semifactual_core::envs::{EnvSpec, Environment};
use semifactual_core::policy::{train, QFunction, TrainingConfig};
use semifactual_core::seeding;

fn greedy_success(env: &impl Environment, q: &impl QFunction, episodes: u64) -> usize {
    (0..episodes)
        .filter(|&ep| {
            let mut s = env.initial_state();
            for t in 0..env.max_steps() {
                let tr = env.step(&s, q.greedy_action(&s), seeding::derive(ep, &[t as u64])).unwrap();
                if tr.terminal {
                    return true;
                }
                s = tr.next_state;
            }
            false
        })
        .count()
}

#[test]
fn frozen_lake_policy_reaches_goal() {
    let env = EnvSpec::from_name("frozen_lake").unwrap().build().unwrap();
    let q = train(&env, &TrainingConfig { steps: 200_000, seed: 0, ..Default::default() }).unwrap();
    let wins = greedy_success(&env, &q, 100);
    assert!(wins >= 90, "{wins}/100");
}

#[test]
fn gridworld_policy_slays_dragon() {
    let env = EnvSpec::from_name("gridworld").unwrap().build().unwrap();
    let q = train(&env, &TrainingConfig::default()).unwrap();
    let wins = greedy_success(&env, &q, 100);
    assert!(wins >= 90, "{wins}/100");
}

#[test]
fn greedy_action_ignores_shift_and_scale() {
    let env = EnvSpec::from_name("gridworld").unwrap().build().unwrap();
    let q = train(&env, &TrainingConfig { steps: 20_000, ..Default::default() }).unwrap();
    for (s, vals) in q.iter() {
        let a = q.greedy_action(s).0;
        let shifted: Vec<f64> = vals.iter().map(|v| v + 17.5).collect();
        let scaled: Vec<f64> = vals.iter().map(|v| v * 3.0).collect();
        assert_eq!(semifactual_core::policy::argmax(&shifted), a);
        assert_eq!(semifactual_core::policy::argmax(&scaled), a);
    }
}

use proptest::prelude::*;
use rand::Rng;
use semifactual_core::envs::{Action, Env, EnvSpec, Environment, Trajectory};
use semifactual_core::generators::{explain_with_archive, Direction, ExplanationRequest};
use semifactual_core::optimizer::{dominates_objectives, MooConfig};
use semifactual_core::policy::{train, QFunction, QTable, TrainingConfig};
use semifactual_core::properties;
use semifactual_core::seeding;
use std::sync::OnceLock;

fn setup(name: &str) -> &'static (Env, QTable) {
    static GRID: OnceLock<(Env, QTable)> = OnceLock::new();
    static LAKE: OnceLock<(Env, QTable)> = OnceLock::new();
    let cell = if name == "gridworld" { &GRID } else { &LAKE };
    cell.get_or_init(|| {
        let env = EnvSpec::from_name(name).unwrap().build().unwrap();
        let q = train(&env, &TrainingConfig { steps: 100_000, seed: 1, ..Default::default() }).unwrap();
        (env, q)
    })
}

fn episode(env: &Env, q: &QTable, seed: u64) -> Trajectory {
    let mut rng = seeding::rng(seed);
    let mut t = Trajectory::new(env.initial_state());
    while t.len() < 12 && !env.is_terminal(t.final_state()) {
        let a = if rng.gen_bool(0.3) {
            Action(rng.gen_range(0..env.num_actions()))
        } else {
            q.greedy_action(t.final_state())
        };
        t.advance(env, a, rng.gen()).unwrap();
    }
    t
}

fn request(n: usize, direction: Direction, generations: usize, seed: u64) -> ExplanationRequest {
    ExplanationRequest {
        factual_index: n,
        direction,
        moo: MooConfig { generations, population: 12, seed, ..Default::default() },
        search_samples: 10,
        report_samples: 30,
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn returned_sets_are_sound(lake in any::<bool>(), seed in 0u64..10_000, rewind in any::<bool>()) {
        let (env, q) = setup(if lake { "frozen_lake" } else { "gridworld" });
        let t = episode(env, q, seed);
        prop_assume!(t.len() >= 3);
        let n = 3 + (seed as usize % (t.len() - 2));
        prop_assume!(!env.is_terminal(t.state_at(n).unwrap()));
        let dir = if rewind { Direction::Rewind } else { Direction::Advance };
        let (set, archive) = explain_with_archive(q, env, &t, &request(n, dir, 6, seed)).unwrap();
        let factual = *t.state_at(n).unwrap();
        let fx = env.encode_features(&factual);
        for c in &set.candidates {
            let g = properties::gain(&fx, &env.encode_features(&c.state)).unwrap();
            prop_assert_eq!(q.greedy_action(&c.state), q.greedy_action(&factual));
            prop_assert!(c.scores.validity);
            prop_assert!(g > 0.0);
            prop_assert_eq!(c.feature_gain, g);
            prop_assert!(c.rollout.len() <= 3);
            for a in &archive {
                prop_assert!(!dominates_objectives(&a.scores.objectives(), &c.scores.objectives()));
            }
        }
        prop_assert_eq!(set.is_empty(), archive.is_empty());
    }

    #[test]
    fn more_generations_never_lose_ground(seed in 0u64..10_000) {
        let (env, q) = setup("gridworld");
        let t = episode(env, q, seed);
        prop_assume!(t.len() >= 3 && !env.is_terminal(t.final_state()));
        let n = t.len();
        let (_, small) = explain_with_archive(q, env, &t, &request(n, Direction::Advance, 3, seed)).unwrap();
        let (_, big) = explain_with_archive(q, env, &t, &request(n, Direction::Advance, 8, seed)).unwrap();
        for c in &small {
            let same = big.iter().find(|b| b.state == c.state);
            prop_assert!(same.is_some(), "state {} dropped", c.state);
            let (b, s) = (same.unwrap().scores.objectives(), c.scores.objectives());
            prop_assert!(b.partial_cmp(&s) != Some(std::cmp::Ordering::Greater), "{:?} worse than {:?}", b, s);
        }
    }
}

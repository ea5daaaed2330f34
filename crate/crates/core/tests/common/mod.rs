#![allow(dead_code)]

use adaptive_kte::adaptive_sim::{run_eps_greedy, run_uniform, EpsGreedyParams, Trajectory};
use adaptive_kte::scenarios::{Environment, OutcomeModel, Scenario, ScenarioSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn eps_greedy(scenario: Scenario, horizon: usize, seed: u64) -> Trajectory {
    let env = Environment::synthetic(ScenarioSpec::new(OutcomeModel::Cosine, scenario)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_eps_greedy(&env, horizon, &EpsGreedyParams::default(), seed, &mut rng).unwrap()
}

pub fn uniform(scenario: Scenario, horizon: usize, seed: u64) -> Trajectory {
    let env = Environment::synthetic(ScenarioSpec::new(OutcomeModel::Cosine, scenario)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_uniform(&env, horizon, seed, &mut rng).unwrap()
}

/// Relabels arm 0 as arm 1 and vice versa, including the policy snapshots.
pub fn swap_arms(traj: &Trajectory) -> Trajectory {
    let mut out = traj.clone();
    for r in &mut out.rounds {
        r.a = 1 - r.a;
    }
    for s in &mut out.snapshots {
        std::mem::swap(&mut s.theta0, &mut s.theta1);
    }
    out
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// One line per criterion so the suite output reads as a checklist.
pub fn report(id: &str, pass: bool, detail: &str) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

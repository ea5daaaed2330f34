mod common;

use adaptive_kte::adaptive_sim::Trajectory;
use adaptive_kte::dr_scores::canonical_gradient;
use adaptive_kte::harness::{histogram, ks_distance, qq_pairs};
use adaptive_kte::kte_test::{dr_kte_unstabilized, vs_dr_kte, CrossAnalysis, FoldSplit, SplitMode, TestConfig};
use adaptive_kte::scenarios::Scenario;
use common::{eps_greedy, rel_diff, swap_arms, uniform};
use proptest::prelude::*;

fn scenario() -> impl Strategy<Value = Scenario> {
    prop_oneof![Just(Scenario::I), Just(Scenario::II), Just(Scenario::III), Just(Scenario::IV)]
}

fn split_mode() -> impl Strategy<Value = SplitMode> {
    prop_oneof![Just(SplitMode::Alternating), Just(SplitMode::Contiguous)]
}

fn trajectory(sc: Scenario, n: usize, seed: u64, adaptive: bool) -> Trajectory {
    if adaptive {
        eps_greedy(sc, n, seed)
    } else {
        uniform(sc, n, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn arm_relabelling_leaves_statistics_unchanged(
        sc in scenario(), n in 60usize..160, seed in 0u64..1000, adaptive in any::<bool>(), split in split_mode()
    ) {
        let traj = trajectory(sc, n, seed, adaptive);
        let cfg = TestConfig { split, ..TestConfig::default() };
        let a = vs_dr_kte(&traj, &cfg);
        prop_assume!(a.is_ok());
        let b = vs_dr_kte(&swap_arms(&traj), &cfg).unwrap();
        prop_assert!(rel_diff(a.unwrap().statistic, b.statistic) < 1e-9);
        let u0 = dr_kte_unstabilized(&traj, &cfg).unwrap().statistic;
        let u1 = dr_kte_unstabilized(&swap_arms(&traj), &cfg).unwrap().statistic;
        prop_assert!(rel_diff(u0, u1) < 1e-9);
    }

    #[test]
    fn fold_roles_are_interchangeable(sc in scenario(), n in 60usize..160, seed in 0u64..1000, split in split_mode()) {
        let traj = eps_greedy(sc, n, seed);
        let cfg = TestConfig { split, ..TestConfig::default() };
        let fs = FoldSplit::new(split, n).unwrap();
        let a = CrossAnalysis::compute(&traj, &fs, &cfg);
        prop_assume!(a.is_ok());
        let (a, b) = (a.unwrap(), CrossAnalysis::compute(&traj, &fs.swapped(), &cfg).unwrap());
        prop_assert!(rel_diff(a.stabilized(&cfg).unwrap().statistic, b.stabilized(&cfg).unwrap().statistic) < 1e-9);
        prop_assert!(rel_diff(a.kte_sq(), b.kte_sq()) < 1e-9);
    }

    #[test]
    fn outcome_kernel_scale_cancels(seed in 0u64..1000, c in 0.05f64..50.0) {
        let traj = eps_greedy(Scenario::III, 120, seed);
        let cfg = TestConfig { drop_warmup: true, ..TestConfig::default() };
        let fs = FoldSplit::new(cfg.split, traj.len()).unwrap();
        let (xs, ys) = (traj.contexts(), traj.outcomes());
        let kx = cfg.x_kernel.resolve(&xs).unwrap().gram_symmetric(&xs).unwrap();
        let ky = cfg.y_kernel.resolve(&ys).unwrap().gram_symmetric(&ys).unwrap();
        let base = CrossAnalysis::from_grams(&traj, &fs, &kx, &ky, &cfg, 1.0, 1.0);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let scaled = CrossAnalysis::from_grams(&traj, &fs, &kx, &ky.scaled(c), &cfg, 1.0, 1.0).unwrap();
        prop_assert!(rel_diff(base.stabilized(&cfg).unwrap().statistic, scaled.stabilized(&cfg).unwrap().statistic) < 1e-9);
        prop_assert!(rel_diff(base.kte_sq() * c, scaled.kte_sq()) < 1e-9);
    }

    #[test]
    fn ks_is_a_bounded_order_free_distance(mut v in prop::collection::vec(-6.0f64..6.0, 1..200), rot in 0usize..200) {
        let d = ks_distance(&v).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        let k = rot % v.len();
        v.rotate_left(k);
        v.reverse();
        prop_assert_eq!(ks_distance(&v).unwrap(), d);
    }

    #[test]
    fn qq_pairs_are_sorted_and_histogram_conserves_mass(v in prop::collection::vec(-8.0f64..8.0, 1..150)) {
        let qq = qq_pairs(&v);
        prop_assert_eq!(qq.len(), v.len());
        prop_assert!(qq.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        let h = histogram(&v, -5.0, 5.0, 20).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>() + h.below + h.above, v.len());
    }

    /// Known propensities make the score unbiased for any outcome model.
    #[test]
    fn dr_score_is_unbiased_for_any_outcome_model(
        p1 in 0.05f64..0.95,
        py in prop::collection::vec(0.01f64..1.0, 6),
        mu in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let y = [-1.0, 0.5, 2.0];
        let law = |a: usize| -> Vec<f64> {
            let w = &py[3 * a..3 * a + 3];
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        let mu_bar = vec![vec![mu[0]], vec![mu[1]]];
        for target in 0..2 {
            let mut e = 0.0;
            for a in 0..2 {
                let pa = if a == 1 { p1 } else { 1.0 - p1 };
                let pt = if target == 1 { p1 } else { 1.0 - p1 };
                for (k, q) in law(a).iter().enumerate() {
                    e += pa * q * canonical_gradient(target, a, pt, &[y[k]], &mu_bar).unwrap()[0];
                }
            }
            let truth: f64 = law(target).iter().zip(&y).map(|(q, v)| q * v).sum();
            prop_assert!((e - truth).abs() < 1e-12);
        }
    }
}

#[test]
fn jsonl_round_trip_preserves_test_outcomes() {
    let traj = eps_greedy(Scenario::II, 150, 12);
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf).unwrap();
    let back = Trajectory::read_jsonl(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back, traj);
    let cfg = TestConfig::default();
    assert_eq!(vs_dr_kte(&back, &cfg).unwrap(), vs_dr_kte(&traj, &cfg).unwrap());
}

#[test]
fn jsonl_without_meta_line_is_accepted() {
    let traj = uniform(Scenario::I, 20, 3);
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let back = Trajectory::read_jsonl(std::io::Cursor::new(body)).unwrap();
    assert_eq!(back.rounds, traj.rounds);
    assert_eq!(back.snapshots, traj.snapshots);
}

#[test]
fn malformed_jsonl_reports_row() {
    let traj = uniform(Scenario::I, 5, 3);
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf).unwrap();
    let mut text = String::from_utf8(buf).unwrap();
    text.push_str("{\"t\": 5, \"x\": [1.0]}\n");
    match Trajectory::read_jsonl(std::io::Cursor::new(text)) {
        Err(adaptive_kte::Error::Parse { row, .. }) => assert_eq!(row, 7),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn large_mean_shift_is_detected_and_null_is_not_extreme() {
    let cfg = TestConfig::default();
    let alt = vs_dr_kte(&eps_greedy(Scenario::II, 400, 5), &cfg).unwrap();
    assert!(alt.reject && alt.p_value < 0.01, "{alt:?}");
    assert!(alt.diagnostics.kte_sq_estimate > 0.0);
    let null = vs_dr_kte(&uniform(Scenario::I, 400, 5), &cfg).unwrap();
    assert!(null.statistic.abs() < 5.0, "{null:?}");
}

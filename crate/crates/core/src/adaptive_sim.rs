//! Adaptive logging policies and the trajectories they produce.
//!
//! Every round stores the policy snapshot used to act, so any propensity
//! `pi_t(1 | x)` can be re-evaluated later on other contexts.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::Environment;
use crate::stabilization::PolicySnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRound {
    pub t: usize,
    pub x: Vec<f64>,
    pub a: u8,
    pub y: Vec<f64>,
    /// `pi_t(a | x)` for the chosen arm.
    pub prop: f64,
}

impl LoggedRound {
    /// `pi_t(1 | x)`.
    pub fn p1(&self) -> f64 {
        if self.a == 1 {
            self.prop
        } else {
            1.0 - self.prop
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    EpsGreedy,
    ExploreThenCommit,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub policy: PolicyKind,
    pub seed: u64,
    pub env: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rounds: Vec<LoggedRound>,
    pub snapshots: Vec<PolicySnapshot>,
    pub meta: TrajectoryMeta,
}

/// Mean of the outcome coordinates; the scalar each policy learns from.
pub fn scalarize(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds.len() != self.snapshots.len() {
            return Err(Error::Input(format!(
                "{} rounds but {} policy snapshots",
                self.rounds.len(),
                self.snapshots.len()
            )));
        }
        let Some(first) = self.rounds.first() else {
            return Err(Error::Input("empty trajectory".into()));
        };
        let (dx, dy) = (first.x.len(), first.y.len());
        for (i, r) in self.rounds.iter().enumerate() {
            if i > 0 && r.t <= self.rounds[i - 1].t {
                return Err(Error::Input(format!("round times not strictly ascending at position {i}")));
            }
            if r.x.len() != dx || r.y.len() != dy || dy == 0 {
                return Err(Error::Input(format!("round {} has inconsistent dimensions", r.t)));
            }
            if r.a > 1 {
                return Err(Error::Input(format!("round {} has action {}", r.t, r.a)));
            }
            if !(r.prop > 0.0 && r.prop < 1.0) {
                return Err(Error::Input(format!("round {} has propensity {}", r.t, r.prop)));
            }
            let snap = &self.snapshots[i];
            if snap.theta0.len() != dx + 1 || snap.theta1.len() != dx + 1 {
                return Err(Error::Input(format!("snapshot {i} does not match context dimension {dx}")));
            }
        }
        Ok(())
    }

    pub fn contexts(&self) -> Vec<&[f64]> {
        self.rounds.iter().map(|r| r.x.as_slice()).collect()
    }

    pub fn outcomes(&self) -> Vec<&[f64]> {
        self.rounds.iter().map(|r| r.y.as_slice()).collect()
    }

    pub fn actions(&self) -> Vec<u8> {
        self.rounds.iter().map(|r| r.a).collect()
    }

    pub fn logged_p1(&self) -> Vec<f64> {
        self.rounds.iter().map(LoggedRound::p1).collect()
    }

    /// Copy with every outcome replaced by its scalar summary.
    pub fn scalarized(&self) -> Trajectory {
        let mut out = self.clone();
        for r in &mut out.rounds {
            r.y = vec![scalarize(&r.y)];
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &serde_json::json!({ "meta": self.meta }))?;
        writeln!(w)?;
        for (r, s) in self.rounds.iter().zip(&self.snapshots) {
            let rec = JsonlRecord {
                t: r.t,
                x: r.x.clone(),
                a: r.a,
                y: r.y.clone(),
                prop: r.prop,
                theta0: s.theta0.clone(),
                theta1: s.theta1.clone(),
                eps: s.epsilon,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the line-delimited format; the leading meta line is optional.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trajectory> {
        let mut meta = None;
        let mut rounds = Vec::new();
        let mut snapshots = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if i == 0 && line.contains("\"meta\"") {
                #[derive(Deserialize)]
                struct Header {
                    meta: TrajectoryMeta,
                }
                let h: Header = serde_json::from_str(&line)
                    .map_err(|e| Error::Parse { row: i + 1, col: e.column(), msg: e.to_string() })?;
                meta = Some(h.meta);
                continue;
            }
            let rec: JsonlRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { row: i + 1, col: e.column(), msg: e.to_string() })?;
            snapshots.push(PolicySnapshot { t: rec.t, theta0: rec.theta0, theta1: rec.theta1, epsilon: rec.eps });
            rounds.push(LoggedRound { t: rec.t, x: rec.x, a: rec.a, y: rec.y, prop: rec.prop });
        }
        let meta = meta.unwrap_or(TrajectoryMeta { policy: PolicyKind::EpsGreedy, seed: 0, env: serde_json::Value::Null });
        let traj = Trajectory { rounds, snapshots, meta };
        traj.validate()?;
        Ok(traj)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    t: usize,
    x: Vec<f64>,
    a: u8,
    y: Vec<f64>,
    prop: f64,
    theta0: Vec<f64>,
    theta1: Vec<f64>,
    eps: f64,
}

/// Per-arm ridge sufficient statistics on `(1, x)` with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct OnlineRidge {
    s: DMatrix<f64>,
    b: DVector<f64>,
    updates: usize,
}

const PINV_CUTOFF: f64 = 1e-10;

impl OnlineRidge {
    pub fn new(d: usize, lambda: f64) -> Self {
        let mut s = DMatrix::from_diagonal_element(d + 1, d + 1, lambda);
        s[(0, 0)] = 0.0;
        Self { s, b: DVector::zeros(d + 1), updates: 0 }
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn update(&mut self, x: &[f64], y: f64) {
        let z = augment(x);
        self.s.ger(1.0, &z, &z, 1.0);
        self.b.axpy(y, &z, 1.0);
        self.updates += 1;
    }

    /// `S^+ b`, dropping eigenvalues below `1e-10` times the largest.
    pub fn theta(&self) -> Vec<f64> {
        if self.updates == 0 {
            return vec![0.0; self.b.len()];
        }
        let eig = SymmetricEigen::new(self.s.clone());
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let qtb = eig.eigenvectors.transpose() * &self.b;
        let mut coef = DVector::zeros(self.b.len());
        for i in 0..coef.len() {
            let ev = eig.eigenvalues[i];
            if ev.abs() > PINV_CUTOFF * top {
                coef[i] = qtb[i] / ev;
            }
        }
        (&eig.eigenvectors * coef).iter().copied().collect()
    }

    pub fn predict(theta: &[f64], x: &[f64]) -> f64 {
        theta[0] + theta[1..].iter().zip(x).map(|(t, v)| t * v).sum::<f64>()
    }
}

fn augment(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsGreedyParams {
    pub eps0: f64,
    pub eps_min: f64,
    pub power: f64,
    pub ridge: f64,
}

impl Default for EpsGreedyParams {
    fn default() -> Self {
        Self { eps0: 0.2, eps_min: 0.05, power: 0.99, ridge: 1e-2 }
    }
}

impl EpsGreedyParams {
    /// `max(eps_min, eps0 / (t + 1)^power)` for 0-based `t`.
    pub fn epsilon(&self, t: usize) -> f64 {
        self.eps_min.max(self.eps0 / ((t + 1) as f64).powf(self.power))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eps0 > 0.0
            && self.eps0 <= 1.0
            && self.eps_min > 0.0
            && self.eps_min <= 1.0
            && self.power >= 0.0
            && self.ridge > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid epsilon-greedy parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtcParams {
    pub t0: usize,
    pub epsilon: f64,
}

impl Default for EtcParams {
    fn default() -> Self {
        Self { t0: 15, epsilon: 1e-3 }
    }
}

fn sample_round<R: Rng + ?Sized>(
    env: &Environment,
    t: usize,
    x: Vec<f64>,
    snap: &PolicySnapshot,
    rng: &mut R,
) -> LoggedRound {
    let (y0, y1) = env.potential_outcomes(&x, rng);
    let p1 = snap.propensity(&x);
    let a = u8::from(rng.gen::<f64>() < p1);
    let (y, prop) = if a == 1 { (y1, p1) } else { (y0, 1.0 - p1) };
    LoggedRound { t, x, a, y, prop }
}

pub fn run_eps_greedy<R: Rng + ?Sized>(
    env: &Environment,
    horizon: usize,
    params: &EpsGreedyParams,
    seed: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    if horizon == 0 {
        return Err(Error::Input("horizon must be positive".into()));
    }
    let d = env.context_dim();
    let contexts = env.draw_contexts(horizon, rng)?;
    let mut arms = [OnlineRidge::new(d, params.ridge), OnlineRidge::new(d, params.ridge)];
    let mut rounds = Vec::with_capacity(horizon);
    let mut snapshots = Vec::with_capacity(horizon);
    for (t, x) in contexts.into_iter().enumerate() {
        let snap = PolicySnapshot { t, theta0: arms[0].theta(), theta1: arms[1].theta(), epsilon: params.epsilon(t) };
        let round = sample_round(env, t, x, &snap, rng);
        arms[round.a as usize].update(&round.x, scalarize(&round.y));
        rounds.push(round);
        snapshots.push(snap);
    }
    Ok(Trajectory { rounds, snapshots, meta: TrajectoryMeta { policy: PolicyKind::EpsGreedy, seed, env: env.descriptor() } })
}

/// Uniform exploration for `t0` rounds, then commitment to the arm with the
/// larger mean scalarized outcome, playing the other arm with probability `epsilon`.
pub fn run_etc<R: Rng + ?Sized>(
    env: &Environment,
    horizon: usize,
    params: &EtcParams,
    seed: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    if params.t0 < 1 || params.t0 >= horizon {
        return Err(Error::Input(format!("need 1 <= t0 < T, got t0 = {}, T = {horizon}", params.t0)));
    }
    if !(params.epsilon > 0.0 && params.epsilon < 0.5) {
        return Err(Error::Input(format!("ETC epsilon must lie in (0, 0.5), got {}", params.epsilon)));
    }
    let d = env.context_dim();
    let contexts = env.draw_contexts(horizon, rng)?;
    let zero = vec![0.0; d + 1];
    let explore = PolicySnapshot { t: 0, theta0: zero.clone(), theta1: zero.clone(), epsilon: 1.0 };
    let mut sums = [(0.0, 0usize); 2];
    let mut committed: Option<PolicySnapshot> = None;
    let mut rounds = Vec::with_capacity(horizon);
    let mut snapshots = Vec::with_capacity(horizon);
    for (t, x) in contexts.into_iter().enumerate() {
        if t == params.t0 {
            let mean = |(s, n): (f64, usize)| if n > 0 { s / n as f64 } else { f64::NEG_INFINITY };
            let mut bump = zero.clone();
            bump[0] = 1.0;
            // a constant score gap encodes the committed arm; epsilon = 2 * eps gives mass eps to the other arm
            let (theta0, theta1) =
                if mean(sums[1]) > mean(sums[0]) { (zero.clone(), bump) } else { (bump, zero.clone()) };
            committed = Some(PolicySnapshot { t, theta0, theta1, epsilon: 2.0 * params.epsilon });
        }
        let mut snap = committed.clone().unwrap_or_else(|| explore.clone());
        snap.t = t;
        let round = sample_round(env, t, x, &snap, rng);
        if t < params.t0 {
            let e = &mut sums[round.a as usize];
            e.0 += scalarize(&round.y);
            e.1 += 1;
        }
        rounds.push(round);
        snapshots.push(snap);
    }
    Ok(Trajectory {
        rounds,
        snapshots,
        meta: TrajectoryMeta { policy: PolicyKind::ExploreThenCommit, seed, env: env.descriptor() },
    })
}

/// i.i.d. uniform logging, `pi_t = 0.5` throughout.
pub fn run_uniform<R: Rng + ?Sized>(env: &Environment, horizon: usize, seed: u64, rng: &mut R) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Input("horizon must be positive".into()));
    }
    let d = env.context_dim();
    let contexts = env.draw_contexts(horizon, rng)?;
    let mut rounds = Vec::with_capacity(horizon);
    let mut snapshots = Vec::with_capacity(horizon);
    for (t, x) in contexts.into_iter().enumerate() {
        let snap = PolicySnapshot { t, theta0: vec![0.0; d + 1], theta1: vec![0.0; d + 1], epsilon: 1.0 };
        rounds.push(sample_round(env, t, x, &snap, rng));
        snapshots.push(snap);
    }
    Ok(Trajectory { rounds, snapshots, meta: TrajectoryMeta { policy: PolicyKind::Uniform, seed, env: env.descriptor() } })
}

/// Matrix with entry `(i, j) = pi_{t_i}(1 | X_{t_j})` over the given round
/// positions, in the order given.
pub fn propensity_matrix(traj: &Trajectory, positions: &[usize]) -> DMatrix<f64> {
    let n = positions.len();
    DMatrix::from_fn(n, n, |i, j| traj.snapshots[positions[i]].propensity(&traj.rounds[positions[j]].x))
}

/// One propensity matrix per fold.
pub fn fold_propensity_snapshots(traj: &Trajectory, folds: &[Vec<usize>]) -> Vec<DMatrix<f64>> {
    folds.iter().map(|f| propensity_matrix(traj, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{ScenarioSpec, Scenario, OutcomeModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(sc: Scenario) -> Environment {
        Environment::synthetic(ScenarioSpec::new(OutcomeModel::Cosine, sc)).unwrap()
    }

    #[test]
    fn epsilon_schedule() {
        let p = EpsGreedyParams::default();
        assert_eq!(p.epsilon(0), 0.2);
        assert!((p.epsilon(1) - 0.2 / 2f64.powf(0.99)).abs() < 1e-15);
        assert_eq!(p.epsilon(10), 0.05);
    }

    #[test]
    fn ridge_matches_closed_form() {
        let mut r = OnlineRidge::new(2, 0.5);
        let data = [([1.0, 2.0], 3.0), ([0.5, -1.0], 1.0), ([2.0, 0.0], -1.0), ([-1.0, 1.0], 0.5)];
        for (x, y) in &data {
            r.update(x, *y);
        }
        let mut s = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.5, 0.5]));
        let mut b = DVector::zeros(3);
        for (x, y) in &data {
            let z = augment(x);
            s += &z * z.transpose();
            b += z * *y;
        }
        let expect = s.lu().solve(&b).unwrap();
        for (a, e) in r.theta().iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_ridge_uses_pseudo_inverse() {
        let mut r = OnlineRidge::new(2, 1e-2);
        r.update(&[0.0, 0.0], 2.0);
        let th = r.theta();
        assert!((th[0] - 2.0).abs() < 1e-12 && th[1].abs() < 1e-12);
    }

    #[test]
    fn eps_greedy_provenance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traj = run_eps_greedy(&env(Scenario::II), 200, &EpsGreedyParams::default(), 11, &mut rng).unwrap();
        traj.validate().unwrap();
        assert_eq!(traj.rounds[0].prop, 0.5);
        let p = EpsGreedyParams::default();
        for (r, s) in traj.rounds.iter().zip(&traj.snapshots) {
            let e = p.epsilon(r.t);
            let p1 = r.p1();
            assert!(p1 == 0.5 || p1 == e / 2.0 || p1 == 1.0 - e / 2.0);
            assert_eq!(s.propensity_of(r.a, &r.x), r.prop);
        }
        // arm 1 is better by 2, so the policy should favour it
        let late: usize = traj.rounds[100..].iter().map(|r| r.a as usize).sum();
        assert!(late > 80);
    }

    #[test]
    fn runs_are_reproducible() {
        let go = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_eps_greedy(&env(Scenario::I), 50, &EpsGreedyParams::default(), seed, &mut rng).unwrap()
        };
        assert_eq!(go(3), go(3));
        assert_ne!(go(3).rounds, go(4).rounds);
    }

    #[test]
    fn etc_commits() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = EtcParams::default();
        let traj = run_etc(&env(Scenario::II), 700, &p, 12, &mut rng).unwrap();
        traj.validate().unwrap();
        for r in &traj.rounds[..15] {
            assert_eq!(r.prop, 0.5);
        }
        let p1 = traj.rounds[15].p1();
        assert!((p1 - (1.0 - 1e-3)).abs() < 1e-15 || (p1 - 1e-3).abs() < 1e-15);
        for r in &traj.rounds[15..] {
            assert_eq!(r.p1(), p1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(run_etc(&env(Scenario::I), 10, &EtcParams { t0: 10, epsilon: 0.1 }, 1, &mut rng).is_err());
    }

    #[test]
    fn fold_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let traj = run_eps_greedy(&env(Scenario::II), 60, &EpsGreedyParams::default(), 13, &mut rng).unwrap();
        let folds = vec![(0..60).step_by(2).collect::<Vec<_>>(), (1..60).step_by(2).collect()];
        let mats = fold_propensity_snapshots(&traj, &folds);
        for (m, f) in mats.iter().zip(&folds) {
            for (i, &pos) in f.iter().enumerate() {
                let r = &traj.rounds[pos];
                let logged = if r.a == 1 { m[(i, i)] } else { 1.0 - m[(i, i)] };
                assert_eq!(logged, r.prop);
            }
            assert!(m.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let uni = run_uniform(&env(Scenario::I), 20, 13, &mut rng).unwrap();
        let m = propensity_matrix(&uni, &(0..20).collect::<Vec<_>>());
        assert!(m.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let traj = run_eps_greedy(&env(Scenario::III), 30, &EpsGreedyParams::default(), 14, &mut rng).unwrap();
        let mut buf = Vec::new();
        traj.write_jsonl(&mut buf).unwrap();
        let back = Trajectory::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
        let bad = b"{\"t\":0,\"x\":[1.0],\"a\":1}\n";
        assert!(matches!(Trajectory::read_jsonl(&bad[..]), Err(Error::Parse { row: 1, .. })));
    }
}

//! Tabular maximum-entropy IRL with one-hot state features.
//!
//! Each epoch runs a finite-horizon soft backward pass (logsumexp over
//! actions) to get a time-indexed stochastic policy, propagates the empirical
//! initial-state distribution forward through it, and moves the reward
//! weights along `empirical visitation - model visitation`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{RewardModel, SparseKernel, TrainingMetadata, TransitionModel};
use crate::trajectory::TrajectorySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `θ ← θ + η g`
    Sga,
    /// `θ ← θ · exp(η g)`
    ExpSga,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sga => "sga",
            Optimizer::ExpSga => "expsga",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardInit {
    Ones,
    /// Standard normal, drawn from the config seed.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlConfig {
    pub optimizer: Optimizer,
    pub lr0: f64,
    pub epochs: usize,
    pub init: RewardInit,
    pub grad_tolerance: f64,
    /// Defaults to the longest trajectory.
    pub horizon: Option<usize>,
    pub seed: u64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            optimizer: Optimizer::Sga,
            lr0: 0.2,
            epochs: 200,
            init: RewardInit::Gaussian,
            grad_tolerance: 1e-4,
            horizon: None,
            seed: 0,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::param("maxent", "lr0", format!("must be positive, got {}", self.lr0)));
        }
        if self.epochs == 0 {
            return Err(Error::param("maxent", "epochs", "must be at least 1"));
        }
        if self.horizon == Some(0) {
            return Err(Error::param("maxent", "horizon", "must be at least 1"));
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance < 0.0 {
            return Err(Error::param("maxent", "grad_tolerance", "must be nonnegative"));
        }
        Ok(())
    }

    /// `η_k = lr0 (1 - k / epochs)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * (1.0 - epoch as f64 / self.epochs as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisitationKind {
    Empirical,
    Model,
}

/// Per-state visitation mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExpectations {
    pub kind: VisitationKind,
    pub mass: Vec<f64>,
}

/// Time-indexed action probabilities `π_t(a|s)`, `t = 0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    probs: Vec<f64>,
    /// Soft state values `V_0(s)`.
    pub initial_values: Vec<f64>,
}

impl SoftPolicy {
    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[(t * self.n_states + s) * self.n_actions + a]
    }

    pub fn action_probs(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }
}

/// Mean per-trajectory count of visits to each state, the initial state included.
pub fn empirical_state_visitation(trajectories: &TrajectorySet, n_states: usize) -> Result<FeatureExpectations> {
    if trajectories.is_empty() {
        return Err(Error::empty("maxent", "no trajectories to compute visitation from"));
    }
    let mut mass = vec![0.0; n_states];
    for s in trajectories.iter().flat_map(|t| t.visited_states()) {
        mass[s] += 1.0;
    }
    let n = trajectories.len() as f64;
    mass.iter_mut().for_each(|m| *m /= n);
    Ok(FeatureExpectations {
        kind: VisitationKind::Empirical,
        mass,
    })
}

/// Empirical initial-state frequencies.
pub fn initial_distribution(trajectories: &TrajectorySet, n_states: usize) -> Result<Vec<f64>> {
    if trajectories.is_empty() {
        return Err(Error::empty("maxent", "no trajectories to compute the initial distribution from"));
    }
    let mut d = vec![0.0; n_states];
    for s in trajectories.iter().filter_map(|t| t.initial_state()) {
        d[s] += 1.0;
    }
    let n = trajectories.len() as f64;
    d.iter_mut().for_each(|p| *p /= n);
    Ok(d)
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Soft value iteration from `V_horizon = 0` down to `t = 0`.
pub fn soft_backward_pass(transitions: &TransitionModel, rewards: &[f64], horizon: usize) -> Result<SoftPolicy> {
    soft_backward_sparse(&transitions.sparse(), rewards, horizon)
}

pub(crate) fn soft_backward_sparse(kernel: &SparseKernel, rewards: &[f64], horizon: usize) -> Result<SoftPolicy> {
    let (n_states, n_actions) = (kernel.n_states, kernel.n_actions);
    let mut probs = vec![0.0; horizon * n_states * n_actions];
    let mut next_values = vec![0.0; n_states];
    let mut values = vec![0.0; n_states];
    let mut q = vec![0.0; n_actions];
    for t in (0..horizon).rev() {
        for s in 0..n_states {
            for (a, qa) in q.iter_mut().enumerate() {
                *qa = kernel
                    .successors(s, a)
                    .iter()
                    .map(|&(next, p)| p * (rewards[next] + next_values[next]))
                    .sum();
            }
            let v = logsumexp(&q);
            if !v.is_finite() {
                return Err(Error::numeric("maxent", format!("non-finite soft value at t={t}, s={s}")));
            }
            values[s] = v;
            let out = &mut probs[(t * n_states + s) * n_actions..][..n_actions];
            for (p, qa) in out.iter_mut().zip(&q) {
                *p = (qa - v).exp();
            }
        }
        std::mem::swap(&mut values, &mut next_values);
    }
    Ok(SoftPolicy {
        n_states,
        n_actions,
        horizon,
        probs,
        initial_values: next_values,
    })
}

/// `Σ_{t=0..horizon} D_t` with `D_0 = initial`.
pub fn expected_state_visitation(
    transitions: &TransitionModel,
    policy: &SoftPolicy,
    initial: &[f64],
    horizon: usize,
) -> Result<FeatureExpectations> {
    expected_visitation_sparse(&transitions.sparse(), policy, initial, horizon)
}

pub(crate) fn expected_visitation_sparse(
    kernel: &SparseKernel,
    policy: &SoftPolicy,
    initial: &[f64],
    horizon: usize,
) -> Result<FeatureExpectations> {
    if horizon > policy.horizon {
        return Err(Error::param(
            "maxent",
            "horizon",
            format!("policy covers {} steps, asked for {horizon}", policy.horizon),
        ));
    }
    let n_states = kernel.n_states;
    let mut current = initial.to_vec();
    let mut total = initial.to_vec();
    let mut next = vec![0.0; n_states];
    for t in 0..horizon {
        next.iter_mut().for_each(|d| *d = 0.0);
        for (s, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, &pa) in policy.action_probs(t, s).iter().enumerate() {
                let w = mass * pa;
                for &(succ, p) in kernel.successors(s, a) {
                    next[succ] += w * p;
                }
            }
        }
        std::mem::swap(&mut current, &mut next);
        for (acc, d) in total.iter_mut().zip(&current) {
            *acc += d;
        }
    }
    Ok(FeatureExpectations {
        kind: VisitationKind::Model,
        mass: total,
    })
}

/// Everything the gradient needs that does not change across epochs.
struct Problem {
    kernel: SparseKernel,
    empirical: Vec<f64>,
    initial: Vec<f64>,
    horizon: usize,
}

impl Problem {
    fn new(trajectories: &TrajectorySet, transitions: &TransitionModel, horizon: usize) -> Result<Self> {
        let n_states = transitions.n_states;
        trajectories.validate(n_states, transitions.n_actions)?;
        Ok(Problem {
            kernel: transitions.sparse(),
            empirical: empirical_state_visitation(trajectories, n_states)?.mass,
            initial: initial_distribution(trajectories, n_states)?,
            horizon,
        })
    }

    fn gradient(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let policy = soft_backward_sparse(&self.kernel, weights, self.horizon)?;
        let model = expected_visitation_sparse(&self.kernel, &policy, &self.initial, self.horizon)?;
        Ok(self
            .empirical
            .iter()
            .zip(&model.mass)
            .map(|(e, m)| e - m)
            .collect())
    }

    fn objective(&self, weights: &[f64]) -> Result<f64> {
        let policy = soft_backward_sparse(&self.kernel, weights, self.horizon)?;
        let visited: f64 = self
            .empirical
            .iter()
            .zip(&self.initial)
            .zip(weights)
            .map(|((e, d0), w)| (e - d0) * w)
            .sum();
        let partition: f64 = self
            .initial
            .iter()
            .zip(&policy.initial_values)
            .map(|(d0, v)| d0 * v)
            .sum();
        Ok(visited - partition)
    }
}

/// `empirical - model` visitation at the given reward weights.
pub fn visitation_gradient(
    trajectories: &TrajectorySet,
    transitions: &TransitionModel,
    weights: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    Problem::new(trajectories, transitions, horizon)?.gradient(weights)
}

/// Mean over demonstrations of `Σ_t w(s_{t+1}) - V_0(s_0)`.
///
/// Its gradient is exactly [`visitation_gradient`]; under deterministic
/// dynamics it equals the mean log-likelihood of the demonstrations.
pub fn maxent_objective(
    trajectories: &TrajectorySet,
    transitions: &TransitionModel,
    weights: &[f64],
    horizon: usize,
) -> Result<f64> {
    Problem::new(trajectories, transitions, horizon)?.objective(weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub max_abs_gradient: f64,
    pub learning_rate: f64,
}

pub fn initial_weights(config: &IrlConfig, n_states: usize) -> Vec<f64> {
    match config.init {
        RewardInit::Ones => vec![1.0; n_states],
        RewardInit::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (0..n_states).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    }
}

/// Map raw weights into `[-1, 1]`: SGA divides by `max|θ|`, ExpSGA uses min-max.
pub fn rescale_weights(weights: &[f64], optimizer: Optimizer) -> Vec<f64> {
    match optimizer {
        Optimizer::Sga => {
            let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
            if scale == 0.0 {
                return vec![0.0; weights.len()];
            }
            weights.iter().map(|w| (w / scale).clamp(-1.0, 1.0)).collect()
        }
        Optimizer::ExpSga => {
            let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
            let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_nan() || min.is_nan() || max <= min {
                return vec![0.0; weights.len()];
            }
            weights
                .iter()
                .map(|w| (2.0 * (w - min) / (max - min) - 1.0).clamp(-1.0, 1.0))
                .collect()
        }
    }
}

/// Raw (unscaled) weights after training, with the per-epoch log.
pub fn fit_weights(
    trajectories: &TrajectorySet,
    transitions: &TransitionModel,
    config: &IrlConfig,
) -> Result<(Vec<f64>, Vec<EpochLog>)> {
    config.validate()?;
    let horizon = config.horizon.unwrap_or_else(|| trajectories.max_len()).max(1);
    let problem = Problem::new(trajectories, transitions, horizon)?;
    let mut weights = initial_weights(config, transitions.n_states);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let gradient = problem.gradient(&weights)?;
        let max_abs = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let lr = config.learning_rate(epoch);
        log.push(EpochLog {
            epoch,
            max_abs_gradient: max_abs,
            learning_rate: lr,
        });
        if max_abs < config.grad_tolerance {
            break;
        }
        match config.optimizer {
            Optimizer::Sga => weights.iter_mut().zip(&gradient).for_each(|(w, g)| *w += lr * g),
            Optimizer::ExpSga => weights
                .iter_mut()
                .zip(&gradient)
                .for_each(|(w, g)| *w *= (lr * g).exp()),
        }
        if let Some(s) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::numeric(
                "maxent",
                format!("weight of state {s} diverged at epoch {epoch}"),
            ));
        }
    }
    Ok((weights, log))
}

pub fn train_maxent_irl_logged(
    trajectories: &TrajectorySet,
    transitions: &TransitionModel,
    config: &IrlConfig,
    stage: &str,
) -> Result<(RewardModel, Vec<EpochLog>)> {
    let (weights, log) = fit_weights(trajectories, transitions, config)?;
    let empirical = empirical_state_visitation(trajectories, transitions.n_states)?;
    let last = log.last().expect("at least one epoch");
    let epochs_run = if last.max_abs_gradient < config.grad_tolerance {
        log.len() - 1
    } else {
        log.len()
    };
    let metadata = TrainingMetadata {
        stage: stage.to_string(),
        optimizer: config.optimizer.name().to_string(),
        epochs_run,
        final_grad_norm: last.max_abs_gradient,
        unvisited_states: empirical
            .mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 0.0)
            .map(|(s, _)| s)
            .collect(),
        config: Some(config.clone()),
    };
    let reward = RewardModel::with_metadata(rescale_weights(&weights, config.optimizer), metadata)?;
    Ok((reward, log))
}

pub fn train_maxent_irl(
    trajectories: &TrajectorySet,
    transitions: &TransitionModel,
    config: &IrlConfig,
) -> Result<RewardModel> {
    train_maxent_irl_logged(trajectories, transitions, config, "single").map(|(r, _)| r)
}

pub fn write_training_log(path: &std::path::Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::io::csv_err(path))?;
    w.write_record(["epoch", "max_abs_gradient", "learning_rate"])
        .map_err(crate::io::csv_err(path))?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.max_abs_gradient.to_string(),
            e.learning_rate.to_string(),
        ])
        .map_err(crate::io::csv_err(path))?;
    }
    w.flush().map_err(crate::io::io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Step, Trajectory};
    use proptest::prelude::*;

    fn set_of(paths: &[&[(usize, usize, usize)]]) -> TrajectorySet {
        TrajectorySet {
            tags: vec![],
            trajectories: paths
                .iter()
                .enumerate()
                .map(|(i, p)| Trajectory {
                    id: format!("t{i}"),
                    steps: p.iter().map(|&(s, a, n)| Step::new(s, a, n)).collect(),
                    demographics: Default::default(),
                    died_in_hospital: false,
                })
                .collect(),
        }
    }

    fn normalize(raw: &[f64], n_states: usize) -> Vec<f64> {
        let mut probs = raw.to_vec();
        for row in probs.chunks_mut(n_states) {
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
        }
        probs
    }

    #[test]
    fn empirical_visitation_counts() {
        let set = set_of(&[&[(3, 0, 9), (9, 1, 3)]]);
        let e = empirical_state_visitation(&set, 10).unwrap();
        assert_eq!(e.mass[3], 2.0);
        assert_eq!(e.mass[9], 1.0);
        let twice = set_of(&[&[(3, 0, 9), (9, 1, 3)], &[(3, 0, 9), (9, 1, 3)]]);
        assert_eq!(empirical_state_visitation(&twice, 10).unwrap(), e);
        assert!(empirical_state_visitation(&set_of(&[]), 10).is_err());
    }

    #[test]
    fn single_action_policy_is_certain() {
        let t = TransitionModel::from_rows(2, 1, vec![0.3, 0.7, 0.6, 0.4]).unwrap();
        let p = soft_backward_pass(&t, &[0.5, -0.2], 3).unwrap();
        for step in 0..3 {
            for s in 0..2 {
                assert!((p.prob(step, s, 0) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_kernels_give_uniform_policy() {
        let t = TransitionModel::from_rows(2, 2, vec![0.3, 0.7, 0.3, 0.7, 0.6, 0.4, 0.6, 0.4]).unwrap();
        let p = soft_backward_pass(&t, &[0.9, -0.4], 5).unwrap();
        for step in 0..5 {
            for s in 0..2 {
                assert!((p.prob(step, s, 0) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn horizon_zero_returns_initial() {
        let t = TransitionModel::from_rows(2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = soft_backward_pass(&t, &[0.0, 0.0], 0).unwrap();
        let d = expected_state_visitation(&t, &p, &[0.25, 0.75], 0).unwrap();
        assert_eq!(d.mass, vec![0.25, 0.75]);
    }

    #[test]
    fn absorbing_state_collects_all_mass() {
        let t = TransitionModel::from_rows(1, 2, vec![1.0, 1.0]).unwrap();
        let p = soft_backward_pass(&t, &[0.3], 6).unwrap();
        let d = expected_state_visitation(&t, &p, &[1.0], 6).unwrap();
        assert!((d.mass[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn huge_rewards_stay_finite() {
        let t = TransitionModel::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0, 1.0]).unwrap();
        let p = soft_backward_pass(&t, &[500.0, -500.0], 4).unwrap();
        assert!((p.prob(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overflow_reports_time_and_state() {
        let t = TransitionModel::from_rows(1, 1, vec![1.0]).unwrap();
        let err = soft_backward_pass(&t, &[f64::MAX], 3).unwrap_err();
        assert!(err.to_string().contains("t="), "{err}");
    }

    #[test]
    fn learning_rate_schedule_endpoints() {
        let c = IrlConfig {
            epochs: 50,
            ..IrlConfig::default()
        };
        assert_eq!(c.learning_rate(0), 0.2);
        assert!((c.learning_rate(49) - 0.2 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_objective_finite_differences() {
        // stochastic 3-state kernel; the dual objective is exact here, unlike the
        // causal log-likelihood, so central differences must agree tightly
        let raw = [
            0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.3, 0.3, 0.4, 0.9, 0.05, 0.05, 0.1, 0.1, 0.8, 0.25, 0.5, 0.25,
        ];
        let t = TransitionModel::from_rows(3, 2, normalize(&raw, 3)).unwrap();
        let set = set_of(&[&[(0, 1, 2), (2, 0, 2), (2, 1, 1)], &[(1, 0, 0), (0, 0, 1), (1, 1, 2)]]);
        let w = [0.3, -0.7, 0.2];
        let g = visitation_gradient(&set, &t, &w, 3).unwrap();
        let h = 1e-5;
        for s in 0..3 {
            let mut up = w;
            let mut down = w;
            up[s] += h;
            down[s] -= h;
            let fd = (maxent_objective(&set, &t, &up, 3).unwrap() - maxent_objective(&set, &t, &down, 3).unwrap())
                / (2.0 * h);
            assert!((fd - g[s]).abs() < 1e-8, "state {s}: fd {fd} vs {}", g[s]);
        }
    }

    #[test]
    fn symmetric_uniform_data_is_a_fixed_point() {
        // both actions identical, data split evenly: uniform weights already match
        let t = TransitionModel::from_rows(2, 2, vec![0.5; 8]).unwrap();
        let set = set_of(&[&[(0, 0, 0)], &[(0, 1, 1)], &[(1, 0, 0)], &[(1, 1, 1)]]);
        let config = IrlConfig {
            optimizer: Optimizer::ExpSga,
            init: RewardInit::Ones,
            ..IrlConfig::default()
        };
        let r = train_maxent_irl(&set, &t, &config).unwrap();
        assert_eq!(r.metadata.epochs_run, 0);
        assert_eq!(r.rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn exact_match_changes_weights_negligibly() {
        // single-action deterministic cycle: empirical equals model visitation
        let t = TransitionModel::from_rows(3, 1, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let set = set_of(&[&[(0, 0, 1), (1, 0, 2)], &[(1, 0, 2), (2, 0, 0)]]);
        let config = IrlConfig {
            optimizer: Optimizer::Sga,
            init: RewardInit::Gaussian,
            epochs: 1,
            grad_tolerance: 0.0,
            ..IrlConfig::default()
        };
        let before = initial_weights(&config, 3);
        let (after, _) = fit_weights(&set, &t, &config).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert!((a - b).abs() < config.lr0 * 1e-12);
        }
    }

    #[test]
    fn unvisited_states_reported() {
        let t = TransitionModel::from_rows(3, 1, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let set = set_of(&[&[(0, 0, 1), (1, 0, 0)]]);
        let r = train_maxent_irl(&set, &t, &IrlConfig::default()).unwrap();
        assert_eq!(r.metadata.unvisited_states, vec![2]);
    }

    #[test]
    fn invalid_config_rejected() {
        let t = TransitionModel::from_rows(1, 1, vec![1.0]).unwrap();
        let set = set_of(&[&[(0, 0, 0)]]);
        for bad in [
            IrlConfig { lr0: 0.0, ..IrlConfig::default() },
            IrlConfig { epochs: 0, ..IrlConfig::default() },
            IrlConfig { horizon: Some(0), ..IrlConfig::default() },
        ] {
            assert!(matches!(train_maxent_irl(&set, &t, &bad), Err(Error::Parameter { .. })));
        }
    }

    #[test]
    fn rescale_conventions() {
        assert_eq!(rescale_weights(&[2.0, -4.0, 1.0], Optimizer::Sga), vec![0.5, -1.0, 0.25]);
        assert_eq!(rescale_weights(&[1.0, 3.0, 2.0], Optimizer::ExpSga), vec![-1.0, 1.0, 0.0]);
        assert_eq!(rescale_weights(&[2.0, 2.0], Optimizer::ExpSga), vec![0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn policy_rows_and_visitation_conserve_mass(
            raw in prop::collection::vec(0.01f64..1.0, 4 * 3 * 4),
            rewards in prop::collection::vec(-3.0f64..3.0, 4),
            horizon in 1usize..8,
        ) {
            let t = TransitionModel::from_rows(4, 3, normalize(&raw, 4)).unwrap();
            let p = soft_backward_pass(&t, &rewards, horizon).unwrap();
            for step in 0..horizon {
                for s in 0..4 {
                    let sum: f64 = p.action_probs(step, s).iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }
            let d = expected_state_visitation(&t, &p, &[0.1, 0.2, 0.3, 0.4], horizon).unwrap();
            let total: f64 = d.mass.iter().sum();
            prop_assert!((total - (horizon + 1) as f64).abs() < 1e-9 * (horizon + 1) as f64);
        }

        #[test]
        fn expsga_keeps_weights_positive(seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..4 * 2 * 4).map(|_| rng.random_range(0.01..1.0)).collect();
            let t = TransitionModel::from_rows(4, 2, normalize(&raw, 4)).unwrap();
            let paths: Vec<Vec<(usize, usize, usize)>> = (0..6)
                .map(|_| {
                    let mut s = rng.random_range(0..4);
                    (0..3)
                        .map(|_| {
                            let n = rng.random_range(0..4);
                            let step = (s, rng.random_range(0..2), n);
                            s = n;
                            step
                        })
                        .collect()
                })
                .collect();
            let refs: Vec<&[(usize, usize, usize)]> = paths.iter().map(Vec::as_slice).collect();
            let set = set_of(&refs);
            let config = IrlConfig { optimizer: Optimizer::ExpSga, init: RewardInit::Ones, epochs: 30, ..IrlConfig::default() };
            let (w, _) = fit_weights(&set, &t, &config).unwrap();
            prop_assert!(w.iter().all(|&x| x > 0.0));
        }
    }
}

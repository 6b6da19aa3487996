//! Garnet-style random worlds and mixed expert populations with known
//! corruption labels, plus the recovery metrics that score a two-stage run
//! against them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::stats::spearman;
use crate::error::{Error, Result};
use crate::io::{csv_err, io_err};
use crate::mdp::{DeterministicPolicy, TransitionModel};
use crate::pipeline::TwoStageResult;
use crate::trajectory::{Step, Trajectory, TrajectorySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    /// Horizon used for the optimal policy and for EVD.
    pub horizon: usize,
    pub transitions: TransitionModel,
    pub true_reward: Vec<f64>,
    /// Optimal first-step action per state with the full horizon remaining.
    pub optimal_policy: DeterministicPolicy,
    pub seed: u64,
}

/// Finite-horizon action values `Q_t(s, a)`, indexed `[t][s * n_actions + a]`.
pub fn finite_horizon_q(transitions: &TransitionModel, rewards: &[f64], horizon: usize) -> Vec<Vec<f64>> {
    let (n_states, n_actions) = (transitions.n_states, transitions.n_actions);
    let kernel = transitions.sparse();
    let mut q = vec![vec![0.0; n_states * n_actions]; horizon];
    let mut next_values = vec![0.0; n_states];
    for t in (0..horizon).rev() {
        let mut values = vec![f64::NEG_INFINITY; n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                let value: f64 = kernel
                    .successors(s, a)
                    .iter()
                    .map(|&(next, p)| p * (rewards[next] + next_values[next]))
                    .sum();
                q[t][s * n_actions + a] = value;
                values[s] = values[s].max(value);
            }
        }
        next_values = values;
    }
    q
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Time-indexed optimal policy from finite-horizon value iteration, `[t][s]`.
pub fn optimal_policy_schedule(transitions: &TransitionModel, rewards: &[f64], horizon: usize) -> Vec<Vec<usize>> {
    let n_actions = transitions.n_actions;
    finite_horizon_q(transitions, rewards, horizon)
        .iter()
        .map(|qt| qt.chunks(n_actions).map(argmax_lowest).collect())
        .collect()
}

/// Expected total reward of a time-indexed policy from `initial` over `schedule.len()` steps.
pub fn evaluate_schedule(
    transitions: &TransitionModel,
    rewards: &[f64],
    schedule: &[Vec<usize>],
    initial: &[f64],
) -> f64 {
    let kernel = transitions.sparse();
    let mut values = vec![0.0; transitions.n_states];
    for actions in schedule.iter().rev() {
        values = (0..transitions.n_states)
            .map(|s| {
                kernel
                    .successors(s, actions[s])
                    .iter()
                    .map(|&(next, p)| p * (rewards[next] + values[next]))
                    .sum()
            })
            .collect();
    }
    initial.iter().zip(&values).map(|(d, v)| d * v).sum()
}

impl SyntheticWorld {
    pub fn initial_distribution(&self) -> Vec<f64> {
        vec![1.0 / self.n_states as f64; self.n_states]
    }

    /// Expected value difference of a learned reward: the loss under the true
    /// reward from following the finite-horizon optimal policy of `rewards`
    /// (planned in the true dynamics) instead of the true optimal policy.
    pub fn reward_evd(&self, rewards: &[f64]) -> f64 {
        let initial = self.initial_distribution();
        let optimal = optimal_policy_schedule(&self.transitions, &self.true_reward, self.horizon);
        let learned = optimal_policy_schedule(&self.transitions, rewards, self.horizon);
        evaluate_schedule(&self.transitions, &self.true_reward, &optimal, &initial)
            - evaluate_schedule(&self.transitions, &self.true_reward, &learned, &initial)
    }

    /// `V_true(π_true) - V_true(π)` for a stationary policy.
    pub fn expected_value_difference(&self, policy: &DeterministicPolicy) -> f64 {
        let initial = self.initial_distribution();
        let optimal = optimal_policy_schedule(&self.transitions, &self.true_reward, self.horizon);
        let stationary = vec![policy.actions.clone(); self.horizon];
        evaluate_schedule(&self.transitions, &self.true_reward, &optimal, &initial)
            - evaluate_schedule(&self.transitions, &self.true_reward, &stationary, &initial)
    }
}

pub fn generate_world(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    horizon: usize,
    seed: u64,
) -> Result<SyntheticWorld> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::param("synth", "n_states", "world needs at least one state and one action"));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::param(
            "synth",
            "branching",
            format!("must lie in [1, {n_states}], got {branching}"),
        ));
    }
    if horizon == 0 {
        return Err(Error::param("synth", "horizon", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = vec![0.0; n_states * n_actions * n_states];
    for row in probs.chunks_mut(n_states) {
        let successors = sample(&mut rng, n_states, branching);
        // symmetric Dirichlet(1) via normalized unit exponentials
        let weights: Vec<f64> = (0..branching).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        for (next, w) in successors.into_iter().zip(&weights) {
            row[next] = w / total;
        }
    }
    let transitions = TransitionModel::from_rows(n_states, n_actions, probs)?;

    let n_extreme = (n_states as f64 * 0.1).round() as usize;
    let order = sample(&mut rng, n_states, n_states).into_vec();
    let mut true_reward = vec![0.0; n_states];
    for &s in &order[..n_extreme] {
        true_reward[s] = 1.0;
    }
    for &s in &order[n_extreme..(2 * n_extreme).min(n_states)] {
        true_reward[s] = -1.0;
    }
    for r in &mut true_reward {
        *r = (*r + rng.random_range(-0.05f64..=0.05)).clamp(-1.0, 1.0);
    }
    let optimal_policy = DeterministicPolicy {
        actions: optimal_policy_schedule(&transitions, &true_reward, horizon)
            .swap_remove(0),
    };
    Ok(SyntheticWorld {
        n_states,
        n_actions,
        branching,
        horizon,
        transitions,
        true_reward,
        optimal_policy,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CorruptionMode {
    RandomPolicy,
    NegatedReward,
    LowTemperature { beta: f64 },
}

/// A demographic tag attached to every synthetic trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicSpec {
    pub name: String,
    /// Category labels with their probabilities.
    pub categories: Vec<(String, f64)>,
    /// Category probabilities for corrupted experts; defaults to `categories`.
    #[serde(default)]
    pub corrupted_probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_trajectories: usize,
    pub horizon: usize,
    /// Boltzmann inverse temperature of competent experts.
    pub beta: f64,
    pub corrupted_fraction: f64,
    pub corruption: CorruptionMode,
    pub demographics: Vec<DemographicSpec>,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_trajectories: 2000,
            horizon: 20,
            beta: 5.0,
            corrupted_fraction: 0.3,
            corruption: CorruptionMode::RandomPolicy,
            demographics: vec![DemographicSpec {
                name: "group".into(),
                categories: vec![("a".into(), 0.4), ("b".into(), 0.35), ("c".into(), 0.25)],
                corrupted_probabilities: None,
            }],
            seed: 1,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corrupted_fraction) {
            return Err(Error::param(
                "synth",
                "corrupted_fraction",
                format!("must lie in [0, 1], got {}", self.corrupted_fraction),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::param("synth", "horizon", "must be at least 1"));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::param("synth", "beta", "must be positive"));
        }
        if let CorruptionMode::LowTemperature { beta } = self.corruption {
            if beta.is_nan() || beta < 0.0 {
                return Err(Error::param("synth", "corruption.beta", "must be nonnegative"));
            }
        }
        for spec in &self.demographics {
            let check = |probs: Vec<f64>| -> Result<()> {
                let sum: f64 = probs.iter().sum();
                if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::param(
                        "synth",
                        "demographics",
                        format!("distribution of `{}` must be nonnegative and sum to 1", spec.name),
                    ));
                }
                Ok(())
            };
            if spec.categories.is_empty() {
                return Err(Error::param("synth", "demographics", format!("`{}` has no categories", spec.name)));
            }
            check(spec.categories.iter().map(|c| c.1).collect())?;
            if let Some(p) = &spec.corrupted_probabilities {
                if p.len() != spec.categories.len() {
                    return Err(Error::param(
                        "synth",
                        "demographics",
                        format!("`{}` corrupted distribution has the wrong length", spec.name),
                    ));
                }
                check(p.clone())?;
            }
        }
        Ok(())
    }

    pub fn corrupted_count(&self) -> usize {
        ((self.corrupted_fraction * self.n_trajectories as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub trajectories: TrajectorySet,
    /// Trajectory id to corrupted flag, in trajectory order.
    pub labels: Vec<(String, bool)>,
}

impl Population {
    pub fn corrupted_ids(&self) -> HashSet<&str> {
        self.labels
            .iter()
            .filter(|(_, c)| *c)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn boltzmann(q: &[f64], beta: f64) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q.iter().map(|v| (beta * (v - max)).exp()).collect()
}

pub fn generate_population(world: &SyntheticWorld, config: &PopulationConfig) -> Result<Population> {
    config.validate()?;
    let n = config.n_trajectories;
    let n_actions = world.n_actions;
    let q_true = finite_horizon_q(&world.transitions, &world.true_reward, config.horizon);
    let q_bad = match config.corruption {
        CorruptionMode::NegatedReward => {
            let negated: Vec<f64> = world.true_reward.iter().map(|r| -r).collect();
            Some(finite_horizon_q(&world.transitions, &negated, config.horizon))
        }
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let corrupted: HashSet<usize> = sample(&mut rng, n, config.corrupted_count()).into_iter().collect();
    let kernel = world.transitions.sparse();

    let trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let is_corrupted = corrupted.contains(&i);
            let mut s = rng.random_range(0..world.n_states);
            let mut steps = Vec::with_capacity(config.horizon);
            for t in 0..config.horizon {
                let qs = |q: &[Vec<f64>]| q[t][s * n_actions..(s + 1) * n_actions].to_vec();
                let a = match (is_corrupted, config.corruption) {
                    (false, _) => sample_index(&mut rng, &boltzmann(&qs(&q_true), config.beta)),
                    (true, CorruptionMode::RandomPolicy) => rng.random_range(0..n_actions),
                    (true, CorruptionMode::NegatedReward) => {
                        sample_index(&mut rng, &boltzmann(&qs(q_bad.as_ref().expect("computed above")), config.beta))
                    }
                    (true, CorruptionMode::LowTemperature { beta }) => {
                        sample_index(&mut rng, &boltzmann(&qs(&q_true), beta))
                    }
                };
                let successors = kernel.successors(s, a);
                let weights: Vec<f64> = successors.iter().map(|&(_, p)| p).collect();
                let next = successors[sample_index(&mut rng, &weights)].0;
                steps.push(Step::new(s, a, next));
                s = next;
            }
            let demographics: BTreeMap<String, String> = config
                .demographics
                .iter()
                .map(|spec| {
                    let probs: Vec<f64> = match (&spec.corrupted_probabilities, is_corrupted) {
                        (Some(p), true) => p.clone(),
                        _ => spec.categories.iter().map(|c| c.1).collect(),
                    };
                    (spec.name.clone(), spec.categories[sample_index(&mut rng, &probs)].0.clone())
                })
                .collect();
            Trajectory {
                id: format!("traj_{i:05}"),
                died_in_hospital: world.true_reward[s] < -0.5,
                steps,
                demographics,
            }
        })
        .collect();
    let labels = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.clone(), corrupted.contains(&i)))
        .collect();
    Ok(Population {
        trajectories: TrajectorySet {
            tags: config.demographics.iter().map(|d| d.name.clone()).collect(),
            trajectories,
        },
        labels,
    })
}

pub fn write_labels_csv(path: &Path, labels: &[(String, bool)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["trajectory_id", "corrupted"]).map_err(csv_err(path))?;
    for (id, c) in labels {
        w.write_record([id.as_str(), if *c { "1" } else { "0" }])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, bool)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != 2 {
            return Err(Error::schema("synth", format!("{}: expected 2 columns", path.display())));
        }
        let flag = match record[1].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::schema("synth", format!("{}: bad corrupted flag `{other}`", path.display()))),
        };
        out.push((record[0].to_string(), flag));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub spearman_stage1: f64,
    pub spearman_stage2: f64,
    pub policy_agreement_1: f64,
    pub policy_agreement_2: f64,
    pub evd_1: f64,
    pub evd_2: f64,
    /// `None` when nothing was pruned.
    pub prune_precision: Option<f64>,
    /// `None` when nothing is labelled corrupted.
    pub prune_recall: Option<f64>,
}

fn agreement_fraction(a: &DeterministicPolicy, b: &DeterministicPolicy) -> f64 {
    let agree = a.agreement(b);
    agree.iter().filter(|&&x| x).count() as f64 / agree.len() as f64
}

/// Precision and recall of `pruned` against the corrupted labels.
pub fn prune_precision_recall(pruned: &[String], labels: &[(String, bool)]) -> (Option<f64>, Option<f64>) {
    let corrupted: HashSet<&str> = labels.iter().filter(|(_, c)| *c).map(|(id, _)| id.as_str()).collect();
    let hits = pruned.iter().filter(|id| corrupted.contains(id.as_str())).count() as f64;
    let precision = (!pruned.is_empty()).then(|| hits / pruned.len() as f64);
    let recall = (!corrupted.is_empty()).then(|| hits / corrupted.len() as f64);
    (precision, recall)
}

pub fn evaluate_recovery(
    world: &SyntheticWorld,
    result: &TwoStageResult,
    labels: &[(String, bool)],
) -> Result<RecoveryMetrics> {
    if result.reward_stage1.n_states() != world.n_states {
        return Err(Error::schema(
            "synth",
            format!(
                "result has {} states, world has {}",
                result.reward_stage1.n_states(),
                world.n_states
            ),
        ));
    }
    let known: HashMap<&str, bool> = labels.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    if let Some(missing) = result.pruned.iter().chain(&result.retained).find(|id| !known.contains_key(id.as_str())) {
        return Err(Error::schema("synth", format!("no label for trajectory {missing}")));
    }
    let (prune_precision, prune_recall) = prune_precision_recall(&result.pruned, labels);
    Ok(RecoveryMetrics {
        spearman_stage1: spearman(&result.reward_stage1.rewards, &world.true_reward),
        spearman_stage2: spearman(&result.reward_stage2.rewards, &world.true_reward),
        policy_agreement_1: agreement_fraction(&result.policy_stage1, &world.optimal_policy),
        policy_agreement_2: agreement_fraction(&result.policy_stage2, &world.optimal_policy),
        evd_1: world.reward_evd(&result.reward_stage1.rewards),
        evd_2: world.reward_evd(&result.reward_stage2.rewards),
        prune_precision,
        prune_recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_world_is_valid() {
        let w = generate_world(2, 1, 2, 3, 5).unwrap();
        w.transitions.check_stochastic(1e-9).unwrap();
        assert!(w.true_reward.iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn world_is_deterministic() {
        assert_eq!(generate_world(20, 3, 4, 5, 11).unwrap(), generate_world(20, 3, 4, 5, 11).unwrap());
        assert_ne!(generate_world(20, 3, 4, 5, 11).unwrap(), generate_world(20, 3, 4, 5, 12).unwrap());
    }

    #[test]
    fn branching_is_respected() {
        let w = generate_world(30, 2, 3, 4, 1).unwrap();
        for s in 0..30 {
            for a in 0..2 {
                assert_eq!(w.transitions.row(s, a).iter().filter(|&&p| p > 0.0).count(), 3);
            }
        }
        assert!(generate_world(3, 2, 4, 4, 1).is_err());
    }

    #[test]
    fn reward_layout() {
        let w = generate_world(100, 2, 3, 4, 3).unwrap();
        assert_eq!(w.true_reward.iter().filter(|&&r| r > 0.9).count(), 10);
        assert_eq!(w.true_reward.iter().filter(|&&r| r < -0.9).count(), 10);
        assert!(w.true_reward.iter().all(|r| r.abs() <= 1.0));
    }

    #[test]
    fn corrupted_count_is_exact() {
        let w = generate_world(20, 3, 3, 5, 0).unwrap();
        let config = PopulationConfig {
            n_trajectories: 2000,
            horizon: 5,
            ..PopulationConfig::default()
        };
        let p = generate_population(&w, &config).unwrap();
        assert_eq!(p.corrupted_ids().len(), 600);
        let none = PopulationConfig {
            corrupted_fraction: 0.0,
            n_trajectories: 50,
            ..config
        };
        assert!(generate_population(&w, &none).unwrap().corrupted_ids().is_empty());
    }

    #[test]
    fn population_is_chained_and_deterministic() {
        let w = generate_world(15, 3, 4, 6, 2).unwrap();
        let config = PopulationConfig {
            n_trajectories: 100,
            horizon: 6,
            ..PopulationConfig::default()
        };
        let p = generate_population(&w, &config).unwrap();
        p.trajectories.validate(15, 3).unwrap();
        assert!(p.trajectories.iter().all(|t| t.len() == 6 && t.is_chained()));
        assert_eq!(p, generate_population(&w, &config).unwrap());
    }

    #[test]
    fn cold_experts_follow_the_optimal_schedule() {
        let w = generate_world(12, 3, 3, 5, 8).unwrap();
        let config = PopulationConfig {
            n_trajectories: 200,
            horizon: 5,
            beta: 1e6,
            corrupted_fraction: 0.0,
            ..PopulationConfig::default()
        };
        let q = finite_horizon_q(&w.transitions, &w.true_reward, 5);
        let p = generate_population(&w, &config).unwrap();
        for t in p.trajectories.iter() {
            for (step_index, step) in t.steps.iter().enumerate() {
                let row = &q[step_index][step.state * 3..(step.state + 1) * 3];
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(best - row[step.action] < 1e-9);
            }
        }
    }

    #[test]
    fn correlated_demographics_shift_corrupted_experts() {
        let w = generate_world(10, 2, 3, 4, 8).unwrap();
        let config = PopulationConfig {
            n_trajectories: 400,
            horizon: 4,
            corrupted_fraction: 0.5,
            demographics: vec![DemographicSpec {
                name: "race".into(),
                categories: vec![("x".into(), 1.0), ("y".into(), 0.0)],
                corrupted_probabilities: Some(vec![0.0, 1.0]),
            }],
            ..PopulationConfig::default()
        };
        let p = generate_population(&w, &config).unwrap();
        let corrupted = p.corrupted_ids();
        for t in p.trajectories.iter() {
            let expected = if corrupted.contains(t.id.as_str()) { "y" } else { "x" };
            assert_eq!(t.demographics["race"], expected);
        }
    }

    #[test]
    fn invalid_population_config() {
        let bad = PopulationConfig {
            corrupted_fraction: 1.2,
            ..PopulationConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PopulationConfig {
            demographics: vec![DemographicSpec {
                name: "g".into(),
                categories: vec![("a".into(), 0.3)],
                corrupted_probabilities: None,
            }],
            ..PopulationConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn evd_of_optimal_first_step_policy_is_small_and_nonnegative() {
        let w = generate_world(30, 3, 4, 6, 4).unwrap();
        assert!(w.expected_value_difference(&w.optimal_policy) >= -1e-12);
        let worst = DeterministicPolicy { actions: vec![0; 30] };
        assert!(w.expected_value_difference(&worst) >= -1e-12);
    }

    #[test]
    fn precision_recall_identity() {
        let labels = vec![("a".to_string(), true), ("b".to_string(), false), ("c".to_string(), true)];
        let (p, r) = prune_precision_recall(&["a".to_string(), "c".to_string()], &labels);
        assert_eq!((p, r), (Some(1.0), Some(1.0)));
        let (p, _) = prune_precision_recall(&[], &labels);
        assert_eq!(p, None);
    }
}

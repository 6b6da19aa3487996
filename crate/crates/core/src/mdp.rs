//! Tabular transition kernel, state rewards and the expected-reward primitives
//! the pruning scores are built on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csv_err;
use crate::maxent::IrlConfig;
use crate::trajectory::TrajectorySet;

/// Empirical `P(s, a, s')` with per-`(s, a)` visit counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub n_states: usize,
    pub n_actions: usize,
    /// Dense, indexed `[(s * n_actions + a) * n_states + s']`.
    pub probs: Vec<f64>,
    /// Indexed `[s * n_actions + a]`.
    pub visit_counts: Vec<u64>,
}

impl TransitionModel {
    /// Build from explicit rows; used for hand-made and synthetic kernels.
    pub fn from_rows(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::param(
                "mdp_core",
                "probs",
                format!(
                    "expected {} entries for {n_states} states x {n_actions} actions, got {}",
                    n_states * n_actions * n_states,
                    probs.len()
                ),
            ));
        }
        let model = TransitionModel {
            n_states,
            n_actions,
            probs,
            visit_counts: vec![0; n_states * n_actions],
        };
        model.check_stochastic(1e-9)?;
        Ok(model)
    }

    /// Empirical next-state frequencies. Unobserved `(s, a)` pairs become a
    /// self-loop so that the action is reward-neutral relative to `s`.
    pub fn estimate(trajectories: &TrajectorySet, n_states: usize, n_actions: usize) -> Result<Self> {
        trajectories.validate(n_states, n_actions)?;
        let mut counts = vec![0u64; n_states * n_actions * n_states];
        let mut visit_counts = vec![0u64; n_states * n_actions];
        for step in trajectories.iter().flat_map(|t| &t.steps) {
            let row = step.state * n_actions + step.action;
            counts[row * n_states + step.next_state] += 1;
            visit_counts[row] += 1;
        }
        let mut probs = vec![0.0; counts.len()];
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = s * n_actions + a;
                let total = visit_counts[row];
                let out = &mut probs[row * n_states..(row + 1) * n_states];
                if total == 0 {
                    out[s] = 1.0;
                } else {
                    let c = &counts[row * n_states..(row + 1) * n_states];
                    for (p, &k) in out.iter_mut().zip(c) {
                        *p = k as f64 / total as f64;
                    }
                }
            }
        }
        Ok(TransitionModel {
            n_states,
            n_actions,
            probs,
            visit_counts,
        })
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visit_counts[s * self.n_actions + a]
    }

    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::numeric("mdp_core", format!("P({s},{a},.) has an entry outside [0,1]")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > tol {
                    return Err(Error::numeric("mdp_core", format!("P({s},{a},.) sums to {sum}")));
                }
            }
        }
        Ok(())
    }

    /// Nonzero successors of every `(s, a)` row.
    pub fn sparse(&self) -> SparseKernel {
        let rows = (0..self.n_states * self.n_actions)
            .map(|row| {
                self.probs[row * self.n_states..(row + 1) * self.n_states]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(next, &p)| (next, p))
                    .collect()
            })
            .collect();
        SparseKernel {
            n_states: self.n_states,
            n_actions: self.n_actions,
            rows,
        }
    }
}

/// Row-sparse view of a [`TransitionModel`], used by the dynamic-programming passes.
#[derive(Debug, Clone)]
pub struct SparseKernel {
    pub n_states: usize,
    pub n_actions: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseKernel {
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.n_actions + a]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Kept out of the JSON form; the file name carries the stage.
    #[serde(skip)]
    pub stage: String,
    pub optimizer: String,
    pub epochs_run: usize,
    pub final_grad_norm: f64,
    /// States with no empirical visitation; their reward is the rescaled initial weight.
    pub unvisited_states: Vec<usize>,
    pub config: Option<IrlConfig>,
}

/// Per-state reward in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub metadata: TrainingMetadata,
}

impl RewardModel {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        Self::with_metadata(rewards, TrainingMetadata::default())
    }

    pub fn with_metadata(rewards: Vec<f64>, metadata: TrainingMetadata) -> Result<Self> {
        if let Some((s, r)) = rewards
            .iter()
            .enumerate()
            .find(|(_, r)| !(-1.0..=1.0).contains(*r))
        {
            return Err(Error::numeric("mdp_core", format!("reward of state {s} is {r}, outside [-1, 1]")));
        }
        Ok(RewardModel { rewards, metadata })
    }

    pub fn n_states(&self) -> usize {
        self.rewards.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    /// Per-state agreement with another policy.
    pub fn agreement(&self, other: &DeterministicPolicy) -> Vec<bool> {
        self.actions
            .iter()
            .zip(&other.actions)
            .map(|(a, b)| a == b)
            .collect()
    }
}

/// `E(s, a) = Σ_{s'} R(s') P(s, a, s')`.
pub fn expected_action_reward(s: usize, a: usize, transitions: &TransitionModel, rewards: &[f64]) -> f64 {
    transitions
        .row(s, a)
        .iter()
        .zip(rewards)
        .map(|(p, r)| p * r)
        .sum()
}

/// `E(s, a)` for every pair, indexed `[s][a]`.
pub fn expected_reward_table(transitions: &TransitionModel, rewards: &[f64]) -> Vec<Vec<f64>> {
    (0..transitions.n_states)
        .map(|s| {
            (0..transitions.n_actions)
                .map(|a| expected_action_reward(s, a, transitions, rewards))
                .collect()
        })
        .collect()
}

/// `argmax_a E(s, a)` per state, lowest action index on ties.
pub fn greedy_policy(transitions: &TransitionModel, rewards: &[f64]) -> DeterministicPolicy {
    let actions = expected_reward_table(transitions, rewards)
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (a, &e) in row.iter().enumerate().skip(1) {
                if e > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    DeterministicPolicy { actions }
}

/// Debug export of the `E(s, a)` table: `state,action,expected_reward`.
pub fn write_expected_reward_csv(path: &Path, transitions: &TransitionModel, rewards: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["state", "action", "expected_reward"]).map_err(csv_err(path))?;
    for (s, row) in expected_reward_table(transitions, rewards).iter().enumerate() {
        for (a, e) in row.iter().enumerate() {
            w.write_record([s.to_string(), a.to_string(), e.to_string()])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(crate::io::io_err(path))
}

//! Scoring trajectories against a consensus reward and choosing which to keep.
//!
//! Two scores are produced per trajectory. The deviation score compares the
//! expected reward of the action taken with that of the greedy action at
//! every step: `L` is the mean gap and `C = exp(-L)` its geometric-mean form.
//! The likelihood score sums `ln P(s, a, s')` over on-policy steps only.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_err, io_err};
use crate::mdp::{expected_action_reward, greedy_policy, DeterministicPolicy, TransitionModel};
use crate::trajectory::{Trajectory, TrajectorySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub trajectory_id: String,
    /// Mean expected reward loss `L >= 0`.
    pub loss: f64,
    /// Deviation score `C` in `(0, 1]`.
    pub deviation: f64,
    /// On-policy log-likelihood, `<= 0`, possibly `-inf`.
    pub log_likelihood: f64,
    /// Reward of the final next-state.
    pub end_state_reward: f64,
    /// No step followed the greedy action, so `log_likelihood` is 0 by construction.
    pub off_policy_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationScore {
    pub loss: f64,
    pub deviation: f64,
    pub end_state_reward: f64,
}

pub fn score_deviation(
    trajectory: &Trajectory,
    transitions: &TransitionModel,
    rewards: &[f64],
    policy: &DeterministicPolicy,
) -> Result<DeviationScore> {
    let n = trajectory.len();
    if n == 0 {
        return Err(Error::empty("prune", format!("trajectory {} has no steps", trajectory.id)));
    }
    let mut gap_sum = 0.0;
    let mut log_c = 0.0;
    for step in &trajectory.steps {
        let optimal = expected_action_reward(step.state, policy.action(step.state), transitions, rewards);
        let selected = expected_action_reward(step.state, step.action, transitions, rewards);
        gap_sum += optimal - selected;
        // log of e^{r_sel - r_opt}
        log_c += selected - optimal;
    }
    let final_state = trajectory.final_state().expect("nonempty");
    Ok(DeviationScore {
        loss: gap_sum / n as f64,
        deviation: (log_c / n as f64).exp(),
        end_state_reward: rewards[final_state],
    })
}

/// `Σ ln P(s, a, s') · I(π(s) = a)`; off-policy steps contribute nothing.
pub fn score_likelihood(trajectory: &Trajectory, policy: &DeterministicPolicy, transitions: &TransitionModel) -> f64 {
    trajectory
        .steps
        .iter()
        .filter(|s| policy.action(s.state) == s.action)
        .map(|s| transitions.prob(s.state, s.action, s.next_state).ln())
        .sum()
}

pub fn score_trajectory(
    trajectory: &Trajectory,
    transitions: &TransitionModel,
    rewards: &[f64],
    policy: &DeterministicPolicy,
) -> Result<TrajectoryScore> {
    let d = score_deviation(trajectory, transitions, rewards, policy)?;
    Ok(TrajectoryScore {
        trajectory_id: trajectory.id.clone(),
        loss: d.loss,
        deviation: d.deviation,
        log_likelihood: score_likelihood(trajectory, policy, transitions),
        end_state_reward: d.end_state_reward,
        off_policy_only: trajectory.steps.iter().all(|s| policy.action(s.state) != s.action),
    })
}

/// Score every trajectory against the greedy policy of `rewards`.
pub fn score_all(
    trajectories: &TrajectorySet,
    transitions: &TransitionModel,
    rewards: &[f64],
) -> Result<(DeterministicPolicy, Vec<TrajectoryScore>)> {
    let policy = greedy_policy(transitions, rewards);
    let scores = trajectories
        .iter()
        .map(|t| score_trajectory(t, transitions, rewards, &policy))
        .collect::<Result<_>>()?;
    Ok((policy, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    Deviation,
    Likelihood,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub method: PruneMethod,
    pub retain_fraction: f64,
    /// Percentage of trajectories to keep by likelihood.
    pub likelihood_percentile: Option<f64>,
    /// Likelihood (not log-likelihood) cutoff.
    pub likelihood_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            method: PruneMethod::Deviation,
            retain_fraction: 0.5,
            likelihood_percentile: None,
            likelihood_threshold: None,
            seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.retain_fraction > 0.0 && self.retain_fraction <= 1.0) {
            return Err(Error::param(
                "prune",
                "retain_fraction",
                format!("must lie in (0, 1], got {}", self.retain_fraction),
            ));
        }
        if self.method == PruneMethod::Likelihood {
            if self.likelihood_percentile.is_some() && self.likelihood_threshold.is_some() {
                return Err(Error::param(
                    "prune",
                    "likelihood_threshold",
                    "set either a percentile or a threshold, not both",
                ));
            }
            if let Some(p) = self.likelihood_percentile {
                if !(0.0..=100.0).contains(&p) {
                    return Err(Error::param("prune", "likelihood_percentile", format!("must lie in [0, 100], got {p}")));
                }
            }
            if let Some(theta) = self.likelihood_threshold {
                if theta.is_nan() || theta < 0.0 {
                    return Err(Error::param("prune", "likelihood_threshold", format!("must be nonnegative, got {theta}")));
                }
            }
        }
        Ok(())
    }

    /// `⌈f N⌉`, tolerant of representation error in `f N`.
    pub fn retain_count(&self, n: usize) -> usize {
        ((self.retain_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub retained: Vec<String>,
    pub pruned: Vec<String>,
    /// Log-likelihood cutoff, likelihood method only.
    pub cutoff: Option<f64>,
}

/// Linear-interpolation percentile of `values` (`q` in `[0, 100]`).
///
/// A `-inf` lower neighbour makes the result `-inf`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || frac == 0.0 {
        return sorted[lo];
    }
    if sorted[lo] == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn select_retained(scores: &[TrajectoryScore], config: &PruneConfig) -> Result<Selection> {
    config.validate()?;
    if scores.is_empty() {
        return Err(Error::empty("prune", "no scores to select from"));
    }
    let n = scores.len();
    let (keep, cutoff): (HashSet<&str>, Option<f64>) = match config.method {
        PruneMethod::Deviation => {
            let mut order: Vec<&TrajectoryScore> = scores.iter().collect();
            order.sort_by(|a, b| {
                b.deviation
                    .total_cmp(&a.deviation)
                    .then_with(|| a.trajectory_id.cmp(&b.trajectory_id))
            });
            let k = config.retain_count(n);
            (order[..k].iter().map(|s| s.trajectory_id.as_str()).collect(), None)
        }
        PruneMethod::Likelihood => {
            let ll: Vec<f64> = scores.iter().map(|s| s.log_likelihood).collect();
            let c = match (config.likelihood_percentile, config.likelihood_threshold) {
                (_, Some(theta)) => theta.ln(),
                (Some(p), None) => percentile(&ll, 100.0 - p),
                (None, None) => percentile(&ll, 100.0 - 100.0 * config.retain_fraction),
            };
            (
                scores
                    .iter()
                    .filter(|s| s.log_likelihood >= c)
                    .map(|s| s.trajectory_id.as_str())
                    .collect(),
                Some(c),
            )
        }
        PruneMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let k = config.retain_count(n);
            (
                sample(&mut rng, n, k)
                    .into_iter()
                    .map(|i| scores[i].trajectory_id.as_str())
                    .collect(),
                None,
            )
        }
    };
    if keep.is_empty() {
        return Err(Error::empty("prune", "selection retained no trajectories"));
    }
    let (retained, pruned): (Vec<&TrajectoryScore>, Vec<&TrajectoryScore>) =
        scores.iter().partition(|s| keep.contains(s.trajectory_id.as_str()));
    Ok(Selection {
        retained: retained.into_iter().map(|s| s.trajectory_id.clone()).collect(),
        pruned: pruned.into_iter().map(|s| s.trajectory_id.clone()).collect(),
        cutoff,
    })
}

/// `trajectory_id, L, C, log_likelihood, end_state_reward, retained`, then the
/// demographic tags and `died_in_hospital`.
pub fn write_scores_csv(
    path: &Path,
    scores: &[TrajectoryScore],
    selection: &Selection,
    trajectories: &TrajectorySet,
) -> Result<()> {
    let by_id: HashMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let retained: HashSet<&str> = selection.retained.iter().map(String::as_str).collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["trajectory_id", "L", "C", "log_likelihood", "end_state_reward", "retained", "off_policy_only"];
    header.extend(trajectories.tags.iter().map(String::as_str));
    header.push("died_in_hospital");
    w.write_record(&header).map_err(csv_err(path))?;
    for s in scores {
        let t = by_id.get(s.trajectory_id.as_str()).ok_or_else(|| {
            Error::schema("prune", format!("score for unknown trajectory {}", s.trajectory_id))
        })?;
        let mut row = vec![
            s.trajectory_id.clone(),
            s.loss.to_string(),
            s.deviation.to_string(),
            s.log_likelihood.to_string(),
            s.end_state_reward.to_string(),
            u8::from(retained.contains(s.trajectory_id.as_str())).to_string(),
            u8::from(s.off_policy_only).to_string(),
        ];
        for tag in &trajectories.tags {
            row.push(t.demographics.get(tag).cloned().unwrap_or_default());
        }
        row.push(u8::from(t.died_in_hospital).to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

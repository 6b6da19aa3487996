//! Train on everything, prune by consensus deviation, retrain on what is left.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyze::{reward_delta_by_state, write_reward_delta_csv};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::maxent::{train_maxent_irl_logged, write_training_log, EpochLog, IrlConfig};
use crate::mdp::{greedy_policy, DeterministicPolicy, RewardModel, TransitionModel};
use crate::prune::{score_all, select_retained, write_scores_csv, PruneConfig, TrajectoryScore};
use crate::trajectory::TrajectorySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub reward_stage1: RewardModel,
    pub reward_stage2: RewardModel,
    pub policy_stage1: DeterministicPolicy,
    pub policy_stage2: DeterministicPolicy,
    pub scores: Vec<TrajectoryScore>,
    pub retained: Vec<String>,
    pub pruned: Vec<String>,
    /// Log-likelihood cutoff when likelihood pruning was used.
    pub cutoff: Option<f64>,
    /// `R2(s) - R1(s)`.
    pub reward_delta: Vec<f64>,
    pub policy_agreement: Vec<bool>,
    #[serde(skip)]
    pub transitions: Option<TransitionModel>,
    #[serde(skip)]
    pub log_stage1: Vec<EpochLog>,
    #[serde(skip)]
    pub log_stage2: Vec<EpochLog>,
}

/// Run both IRL stages.
///
/// The transition model is estimated once from the full set and shared by
/// both stages. Stage 2 reuses the stage-1 configuration, seed and resolved
/// horizon, so the only thing that differs between the stages is the
/// demonstration set.
pub fn run_two_stage(
    trajectories: &TrajectorySet,
    n_states: usize,
    n_actions: usize,
    irl_config: &IrlConfig,
    prune_config: &PruneConfig,
) -> Result<TwoStageResult> {
    if trajectories.is_empty() {
        return Err(Error::empty("pipeline", "trajectory set is empty"));
    }
    irl_config.validate()?;
    prune_config.validate()?;
    let transitions = TransitionModel::estimate(trajectories, n_states, n_actions)?;
    let horizon = irl_config.horizon.unwrap_or_else(|| trajectories.max_len()).max(1);
    let config = IrlConfig {
        horizon: Some(horizon),
        ..irl_config.clone()
    };

    let (reward_stage1, log_stage1) = train_maxent_irl_logged(trajectories, &transitions, &config, "stage1")?;
    let (policy_stage1, scores) = score_all(trajectories, &transitions, &reward_stage1.rewards)?;
    let selection = select_retained(&scores, prune_config)?;
    if selection.retained.is_empty() {
        return Err(Error::empty("pipeline", "no trajectories retained for stage 2"));
    }
    let retained_set = trajectories.subset(&selection.retained);
    let (reward_stage2, log_stage2) = train_maxent_irl_logged(&retained_set, &transitions, &config, "stage2")?;
    let policy_stage2 = greedy_policy(&transitions, &reward_stage2.rewards);

    let reward_delta = reward_stage2
        .rewards
        .iter()
        .zip(&reward_stage1.rewards)
        .map(|(r2, r1)| r2 - r1)
        .collect();
    let policy_agreement = policy_stage1.agreement(&policy_stage2);
    Ok(TwoStageResult {
        n_states,
        n_actions,
        horizon,
        reward_stage1,
        reward_stage2,
        policy_stage1,
        policy_stage2,
        scores,
        retained: selection.retained,
        pruned: selection.pruned,
        cutoff: selection.cutoff,
        reward_delta,
        policy_agreement,
        transitions: Some(transitions),
        log_stage1,
        log_stage2,
    })
}

impl TwoStageResult {
    /// Write reward models, scores, per-state deltas and training logs into
    /// `dir`; returns the paths written.
    pub fn write_artifacts(&self, dir: &Path, trajectories: &TrajectorySet) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut emit = |name: &str| {
            let path = dir.join(name);
            written.push(path.clone());
            path
        };
        write_json(&emit("rewards_stage1.json"), &self.reward_stage1)?;
        write_json(&emit("rewards_stage2.json"), &self.reward_stage2)?;
        let selection = crate::prune::Selection {
            retained: self.retained.clone(),
            pruned: self.pruned.clone(),
            cutoff: self.cutoff,
        };
        write_scores_csv(&emit("scores.csv"), &self.scores, &selection, trajectories)?;
        write_reward_delta_csv(&emit("reward_delta.csv"), &reward_delta_by_state(self))?;
        write_training_log(&emit("training_stage1.csv"), &self.log_stage1)?;
        write_training_log(&emit("training_stage2.csv"), &self.log_stage2)?;
        Ok(written)
    }
}

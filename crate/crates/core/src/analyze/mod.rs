//! Reports over a two-stage run: best/worst cluster feature tables, per-state
//! reward deltas, end-state-reward deciles, and demographic permutation tests.
//!
//! Asymptotic chi-squared/F tests and Tukey HSD are replaced by Monte Carlo
//! permutation tests (pairwise permutation + Holm for the post-hoc step); the
//! `method` field of every [`TestResult`] says so.

pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretize::ClusterModel;
use crate::error::{Error, Result};
use crate::io::{csv_err, io_err};
use crate::pipeline::TwoStageResult;
use crate::prune::TrajectoryScore;
use crate::trajectory::TrajectorySet;

pub const DEFAULT_TOP_K: usize = 25;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub reward: f64,
    /// 1 = highest reward.
    pub rank: usize,
    pub member_count: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Pooled feature mean and (population) standard deviation over the members
/// of a group of clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub member_count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub stage: String,
    pub features: Vec<String>,
    pub best: Vec<ClusterRow>,
    pub worst: Vec<ClusterRow>,
    pub best_summary: GroupSummary,
    pub worst_summary: GroupSummary,
}

/// `other - base` for each pooled statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComparison {
    pub features: Vec<String>,
    pub best_delta_mean: Vec<f64>,
    pub best_delta_std: Vec<f64>,
    pub worst_delta_mean: Vec<f64>,
    pub worst_delta_std: Vec<f64>,
}

fn pooled(rows: &[ClusterRow], n_features: usize) -> GroupSummary {
    let total: usize = rows.iter().map(|r| r.member_count).sum();
    let mut mean = vec![0.0; n_features];
    let mut second = vec![0.0; n_features];
    for r in rows {
        let w = r.member_count as f64;
        for f in 0..n_features {
            mean[f] += w * r.means[f];
            second[f] += w * (r.stds[f].powi(2) + r.means[f].powi(2));
        }
    }
    let n = total.max(1) as f64;
    let std = mean
        .iter_mut()
        .zip(&second)
        .map(|(m, s)| {
            *m /= n;
            (s / n - *m * *m).max(0.0).sqrt()
        })
        .collect();
    GroupSummary {
        member_count: total,
        mean,
        std,
    }
}

/// Rank the retained clusters by reward and report the `top_k` best and worst.
pub fn cluster_report(model: &ClusterModel, rewards: &[f64], stage: &str, top_k: usize) -> Result<ClusterReport> {
    if rewards.len() != model.k {
        return Err(Error::schema(
            "analyze",
            format!("reward has {} states, cluster model has {}", rewards.len(), model.k),
        ));
    }
    let mut retained: Vec<usize> = model.retained_ids().collect();
    if top_k == 0 || top_k > retained.len() {
        return Err(Error::param(
            "analyze",
            "top_k",
            format!("must lie in [1, {}], got {top_k}", retained.len()),
        ));
    }
    retained.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    let rows: Vec<ClusterRow> = retained
        .iter()
        .enumerate()
        .map(|(i, &c)| ClusterRow {
            cluster: c,
            reward: rewards[c],
            rank: i + 1,
            member_count: model.stats.counts[c],
            means: model.stats.means[c].clone(),
            stds: model.stats.stds[c].clone(),
        })
        .collect();
    let n_features = model.feature_names.len();
    let best = rows[..top_k].to_vec();
    let mut worst = rows[rows.len() - top_k..].to_vec();
    worst.reverse();
    Ok(ClusterReport {
        stage: stage.to_string(),
        features: model.feature_names.clone(),
        best_summary: pooled(&best, n_features),
        worst_summary: pooled(&worst, n_features),
        best,
        worst,
    })
}

pub fn compare_cluster_reports(base: &ClusterReport, other: &ClusterReport) -> ClusterComparison {
    let diff = |a: &[f64], b: &[f64]| b.iter().zip(a).map(|(y, x)| y - x).collect();
    ClusterComparison {
        features: base.features.clone(),
        best_delta_mean: diff(&base.best_summary.mean, &other.best_summary.mean),
        best_delta_std: diff(&base.best_summary.std, &other.best_summary.std),
        worst_delta_mean: diff(&base.worst_summary.mean, &other.worst_summary.mean),
        worst_delta_std: diff(&base.worst_summary.std, &other.worst_summary.std),
    }
}

/// One row per reported cluster: `group, rank, cluster, reward, member_count`,
/// then `<feature>_mean, <feature>_std` pairs.
pub fn write_cluster_report_csv(path: &Path, report: &ClusterReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["group".to_string(), "rank".into(), "cluster".into(), "reward".into(), "member_count".into()];
    for f in &report.features {
        header.push(format!("{f}_mean"));
        header.push(format!("{f}_std"));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for (group, rows) in [("best", &report.best), ("worst", &report.worst)] {
        for r in rows {
            let mut row = vec![
                group.to_string(),
                r.rank.to_string(),
                r.cluster.to_string(),
                r.reward.to_string(),
                r.member_count.to_string(),
            ];
            for (m, s) in r.means.iter().zip(&r.stds) {
                row.push(m.to_string());
                row.push(s.to_string());
            }
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileRow {
    pub bucket: usize,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub mean_end_state_reward: f64,
    pub count: usize,
}

/// Trajectories ranked by `C` ascending (ties by id) and split into ten
/// near-equal buckets; mean end-state reward per bucket.
pub fn end_state_deciles(scores: &[TrajectoryScore]) -> Result<Vec<DecileRow>> {
    let n = scores.len();
    if n < 10 {
        return Err(Error::param("analyze", "scores", format!("need at least 10 trajectories, got {n}")));
    }
    let mut order: Vec<&TrajectoryScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        a.deviation
            .total_cmp(&b.deviation)
            .then_with(|| a.trajectory_id.cmp(&b.trajectory_id))
    });
    Ok((0..10)
        .map(|i| {
            let bucket = &order[i * n / 10..(i + 1) * n / 10];
            DecileRow {
                bucket: i,
                lower_percentile: 10.0 * i as f64,
                upper_percentile: 10.0 * (i + 1) as f64,
                mean_end_state_reward: bucket.iter().map(|s| s.end_state_reward).sum::<f64>() / bucket.len() as f64,
                count: bucket.len(),
            }
        })
        .collect())
}

pub fn write_deciles_csv(path: &Path, rows: &[DecileRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["bucket", "lower_percentile", "upper_percentile", "mean_end_state_reward", "count"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.bucket.to_string(),
            r.lower_percentile.to_string(),
            r.upper_percentile.to_string(),
            r.mean_end_state_reward.to_string(),
            r.count.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub method: String,
    pub attribute: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Smallest attainable p, `1 / (n_permutations + 1)`.
    pub p_floor: f64,
    pub n_permutations: usize,
    pub seed: u64,
    /// Category label and size, sorted by label.
    pub groups: Vec<(String, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_groups: Vec<(String, usize)>,
}

impl TestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    /// `mean(a) - mean(b)`.
    pub mean_difference: f64,
    pub p_value: f64,
    pub p_holm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityResult {
    pub anova: TestResult,
    pub pairwise: Vec<PairwiseResult>,
}

fn index_categories(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let names: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let lookup: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let idx = labels.iter().map(|l| lookup[l.as_str()]).collect();
    (names, idx)
}

/// Chi-squared permutation test of independence between a category label and a flag.
pub fn permutation_independence_test(
    test: &str,
    attribute: &str,
    categories: &[String],
    flags: &[bool],
    n_permutations: usize,
    seed: u64,
) -> Result<TestResult> {
    let (names, idx) = index_categories(categories);
    if names.len() < 2 {
        return Err(Error::param(
            "analyze",
            "attribute",
            format!("`{attribute}` needs at least two categories, found {}", names.len()),
        ));
    }
    let (statistic, p_value) = stats::permutation_chi_squared(&idx, flags, names.len(), n_permutations, seed);
    let mut sizes = vec![0usize; names.len()];
    idx.iter().for_each(|&i| sizes[i] += 1);
    Ok(TestResult {
        test: test.to_string(),
        method: "Monte Carlo permutation chi-squared (replaces asymptotic chi-squared)".into(),
        attribute: attribute.to_string(),
        statistic,
        p_value,
        p_floor: 1.0 / (n_permutations + 1) as f64,
        n_permutations,
        seed,
        groups: names.into_iter().zip(sizes).collect(),
        excluded_groups: Vec::new(),
    })
}

fn pruned_flags(trajectories: &TrajectorySet, pruned: &[String]) -> Vec<bool> {
    let pruned: HashSet<&str> = pruned.iter().map(String::as_str).collect();
    trajectories.iter().map(|t| pruned.contains(t.id.as_str())).collect()
}

fn attribute_labels(trajectories: &TrajectorySet, attribute: &str) -> Result<Vec<String>> {
    if !trajectories.tags.iter().any(|t| t == attribute) {
        return Err(Error::schema("analyze", format!("unknown demographic attribute `{attribute}`")));
    }
    Ok(trajectories
        .iter()
        .map(|t| t.demographics.get(attribute).cloned().unwrap_or_default())
        .collect())
}

/// Is the probability of being pruned the same across categories of `attribute`?
pub fn test_pruning_uniformity(
    trajectories: &TrajectorySet,
    pruned: &[String],
    attribute: &str,
    n_permutations: usize,
    seed: u64,
) -> Result<TestResult> {
    let labels = attribute_labels(trajectories, attribute)?;
    let flags = pruned_flags(trajectories, pruned);
    permutation_independence_test("pruning_uniformity", attribute, &labels, &flags, n_permutations, seed)
}

/// Association between in-hospital death and being pruned.
pub fn test_mortality_association(
    trajectories: &TrajectorySet,
    pruned: &[String],
    n_permutations: usize,
    seed: u64,
) -> Result<TestResult> {
    let labels: Vec<String> = trajectories
        .iter()
        .map(|t| if t.died_in_hospital { "died" } else { "survived" }.to_string())
        .collect();
    let flags = pruned_flags(trajectories, pruned);
    permutation_independence_test("mortality_association", "died_in_hospital", &labels, &flags, n_permutations, seed)
}

/// `δ(t) = mean over steps of R2(s') - R1(s')`, in trajectory order.
pub fn trajectory_reward_deltas(trajectories: &TrajectorySet, reward1: &[f64], reward2: &[f64]) -> Vec<f64> {
    trajectories
        .iter()
        .map(|t| {
            t.steps
                .iter()
                .map(|s| reward2[s.next_state] - reward1[s.next_state])
                .sum::<f64>()
                / t.len().max(1) as f64
        })
        .collect()
}

/// One-way permutation ANOVA of `deltas` across categories, plus Holm-corrected
/// pairwise permutation tests. Categories with fewer than two members are
/// excluded with a warning.
pub fn test_reward_loss_disparity(
    labels: &[String],
    deltas: &[f64],
    attribute: &str,
    n_permutations: usize,
    seed: u64,
) -> Result<DisparityResult> {
    let mut by_label: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (l, &d) in labels.iter().zip(deltas) {
        by_label.entry(l.as_str()).or_default().push(d);
    }
    let mut excluded = Vec::new();
    by_label.retain(|label, values| {
        if values.len() < 2 {
            log::warn!("analyze: category `{label}` of `{attribute}` has {} member(s); excluded", values.len());
            excluded.push((label.to_string(), values.len()));
            false
        } else {
            true
        }
    });
    if by_label.len() < 2 {
        return Err(Error::param(
            "analyze",
            "attribute",
            format!("`{attribute}` needs at least two categories with two or more members"),
        ));
    }
    let names: Vec<&str> = by_label.keys().copied().collect();
    let mut groups = Vec::new();
    let mut values = Vec::new();
    for (g, vals) in by_label.values().enumerate() {
        groups.extend(std::iter::repeat_n(g, vals.len()));
        values.extend_from_slice(vals);
    }
    let (statistic, p_value) = stats::permutation_anova(&groups, &values, names.len(), n_permutations, seed);

    let mut pairwise = Vec::new();
    let mut pair_index = 0u64;
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            pair_index += 1;
            let (diff, p) = stats::permutation_mean_difference(
                &by_label[names[i]],
                &by_label[names[j]],
                n_permutations,
                seed.wrapping_add(pair_index),
            );
            pairwise.push(PairwiseResult {
                a: names[i].to_string(),
                b: names[j].to_string(),
                mean_difference: diff,
                p_value: p,
                p_holm: 0.0,
            });
        }
    }
    let adjusted = stats::holm(&pairwise.iter().map(|p| p.p_value).collect::<Vec<_>>());
    pairwise.iter_mut().zip(adjusted).for_each(|(p, a)| p.p_holm = a);

    Ok(DisparityResult {
        anova: TestResult {
            test: "reward_loss_disparity".into(),
            method: "Monte Carlo permutation one-way ANOVA; pairwise permutation tests with Holm correction replace Tukey HSD".into(),
            attribute: attribute.to_string(),
            statistic,
            p_value,
            p_floor: 1.0 / (n_permutations + 1) as f64,
            n_permutations,
            seed,
            groups: by_label.iter().map(|(k, v)| (k.to_string(), v.len())).collect(),
            excluded_groups: excluded,
        },
        pairwise,
    })
}

/// Disparity test over a run, optionally restricted to retained trajectories.
pub fn test_run_reward_loss_disparity(
    trajectories: &TrajectorySet,
    result: &TwoStageResult,
    attribute: &str,
    retained_only: bool,
    n_permutations: usize,
    seed: u64,
) -> Result<DisparityResult> {
    let population = if retained_only {
        trajectories.subset(&result.retained)
    } else {
        trajectories.clone()
    };
    let labels = attribute_labels(&population, attribute)?;
    let deltas = trajectory_reward_deltas(&population, &result.reward_stage1.rewards, &result.reward_stage2.rewards);
    test_reward_loss_disparity(&labels, &deltas, attribute, n_permutations, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDeltaRow {
    pub state: usize,
    pub r1: f64,
    pub r2: f64,
    pub delta: f64,
    pub policy1: usize,
    pub policy2: usize,
    pub agree: bool,
}

pub fn reward_delta_by_state(result: &TwoStageResult) -> Vec<RewardDeltaRow> {
    (0..result.n_states)
        .map(|s| RewardDeltaRow {
            state: s,
            r1: result.reward_stage1.rewards[s],
            r2: result.reward_stage2.rewards[s],
            delta: result.reward_delta[s],
            policy1: result.policy_stage1.action(s),
            policy2: result.policy_stage2.action(s),
            agree: result.policy_agreement[s],
        })
        .collect()
}

pub fn write_reward_delta_csv(path: &Path, rows: &[RewardDeltaRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["state", "r1", "r2", "delta", "policy1", "policy2", "agree"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.state.to_string(),
            r.r1.to_string(),
            r.r2.to_string(),
            r.delta.to_string(),
            r.policy1.to_string(),
            r.policy2.to_string(),
            u8::from(r.agree).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_pairwise_csv(path: &Path, rows: &[PairwiseResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["a", "b", "mean_difference", "p_value", "p_holm"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.a.clone(),
            r.b.clone(),
            r.mean_difference.to_string(),
            r.p_value.to_string(),
            r.p_holm.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

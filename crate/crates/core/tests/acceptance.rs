//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use consensus_irl::analyze::end_state_deciles;
use consensus_irl::analyze::stats::{permutation_anova, permutation_chi_squared};
use consensus_irl::cli::{dispatch, run_pipeline, synthesize, write_synth, RunConfig};
use consensus_irl::maxent::{expected_state_visitation, maxent_objective, soft_backward_pass, visitation_gradient};
use consensus_irl::mdp::{expected_reward_table, greedy_policy};
use consensus_irl::prune::{score_deviation, score_likelihood, score_trajectory, select_retained, TrajectoryScore};
use consensus_irl::synth::evaluate_recovery;
use consensus_irl::{
    run_two_stage, DeterministicPolicy, IrlConfig, PruneConfig, PruneMethod, Step, Trajectory, TrajectorySet,
    TransitionModel,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn trajectory(id: &str, steps: Vec<Step>) -> Trajectory {
    Trajectory {
        id: id.to_string(),
        steps,
        demographics: BTreeMap::new(),
        died_in_hospital: false,
    }
}

fn set_of(trajectories: Vec<Trajectory>) -> TrajectorySet {
    TrajectorySet {
        tags: vec![],
        trajectories,
    }
}

fn random_kernel(n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> TransitionModel {
    let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / total));
    }
    TransitionModel::from_rows(n_states, n_actions, probs).unwrap()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// 1. analytic gradient against finite differences of the log-likelihood

/// Deterministic successor of `(s, a)` on the 4-state, 2-action test MDP.
const NEXT: [[usize; 2]; 4] = [[1, 2], [2, 0], [3, 3], [0, 1]];

/// Log-partition over all action sequences of length `h` from `s`.
fn log_partition(theta: &[f64], s: usize, h: usize) -> f64 {
    if h == 0 {
        return 0.0;
    }
    let terms: Vec<f64> = (0..2)
        .map(|a| {
            let next = NEXT[s][a];
            theta[next] + log_partition(theta, next, h - 1)
        })
        .collect();
    log_sum_exp(&terms)
}

/// Mean log-probability of the demonstrations under `p(τ) ∝ exp(Σ θ(s_{t+1}))`.
fn brute_force_log_likelihood(theta: &[f64], demos: &[(usize, Vec<usize>)], h: usize) -> f64 {
    let total: f64 = demos
        .iter()
        .map(|(start, actions)| {
            let mut s = *start;
            let mut score = 0.0;
            for &a in actions {
                s = NEXT[s][a];
                score += theta[s];
            }
            score - log_partition(theta, *start, h)
        })
        .sum();
    total / demos.len() as f64
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let h = 4;
    let mut probs = vec![0.0; 4 * 2 * 4];
    for s in 0..4 {
        for a in 0..2 {
            probs[(s * 2 + a) * 4 + NEXT[s][a]] = 1.0;
        }
    }
    let transitions = TransitionModel::from_rows(4, 2, probs).unwrap();
    let demos: Vec<(usize, Vec<usize>)> = vec![
        (0, vec![0, 0, 1, 0]),
        (1, vec![1, 0, 0, 1]),
        (3, vec![0, 1, 1, 0]),
        (2, vec![1, 1, 0, 0]),
        (0, vec![1, 0, 0, 0]),
    ];
    let set = set_of(
        demos
            .iter()
            .enumerate()
            .map(|(i, (start, actions))| {
                let mut s = *start;
                let steps = actions
                    .iter()
                    .map(|&a| {
                        let next = NEXT[s][a];
                        let step = Step::new(s, a, next);
                        s = next;
                        step
                    })
                    .collect();
                trajectory(&format!("d{i}"), steps)
            })
            .collect(),
    );
    let theta = [0.3, -0.7, 0.1, 0.5];
    let analytic = visitation_gradient(&set, &transitions, &theta, h).unwrap();
    let eps = 1e-5;
    let numeric: Vec<f64> = (0..4)
        .map(|i| {
            let mut up = theta;
            let mut down = theta;
            up[i] += eps;
            down[i] -= eps;
            (brute_force_log_likelihood(&up, &demos, h) - brute_force_log_likelihood(&down, &demos, h)) / (2.0 * eps)
        })
        .collect();
    let scale = numeric.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let rel = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale;
    let objective_gap = (maxent_objective(&set, &transitions, &theta, h).unwrap()
        - brute_force_log_likelihood(&theta, &demos, h))
    .abs();
    let elapsed = started.elapsed();
    outcome(
        rel < 1e-5 && objective_gap < 1e-12 && elapsed < Duration::from_secs(1),
        format!("max relative error {rel:.2e}, objective gap {objective_gap:.1e}, {:.1} ms", elapsed.as_secs_f64() * 1e3),
    )
}

// ---------------------------------------------------------------------------
// 2. forward/backward passes against exhaustive enumeration

/// Soft value `V_t(s)` by plain recursion, no memoisation.
fn soft_value(t: usize, s: usize, h: usize, kernel: &TransitionModel, reward: &[f64]) -> f64 {
    if t == h {
        return 0.0;
    }
    let q: Vec<f64> = (0..kernel.n_actions).map(|a| soft_q(t, s, a, h, kernel, reward)).collect();
    log_sum_exp(&q)
}

fn soft_q(t: usize, s: usize, a: usize, h: usize, kernel: &TransitionModel, reward: &[f64]) -> f64 {
    (0..kernel.n_states)
        .map(|next| kernel.prob(s, a, next) * (reward[next] + soft_value(t + 1, next, h, kernel, reward)))
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn enumerate_paths(t: usize, s: usize, weight: f64, h: usize, kernel: &TransitionModel, reward: &[f64], visits: &mut [f64]) {
    visits[s] += weight;
    if t == h {
        return;
    }
    let v = soft_value(t, s, h, kernel, reward);
    for a in 0..kernel.n_actions {
        let pi = (soft_q(t, s, a, h, kernel, reward) - v).exp();
        for next in 0..kernel.n_states {
            let p = kernel.prob(s, a, next);
            if p > 0.0 {
                enumerate_paths(t + 1, next, weight * pi * p, h, kernel, reward, visits);
            }
        }
    }
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (n_states, h) in [(3, 4), (4, 5), (4, 3)] {
        let kernel = random_kernel(n_states, 2, &mut rng);
        let reward: Vec<f64> = (0..n_states).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = raw.iter().sum();
        let initial: Vec<f64> = raw.iter().map(|x| x / total).collect();

        let mut oracle = vec![0.0; n_states];
        for (s, &d0) in initial.iter().enumerate() {
            enumerate_paths(0, s, d0, h, &kernel, &reward, &mut oracle);
        }
        let policy = soft_backward_pass(&kernel, &reward, h).unwrap();
        let visitation = expected_state_visitation(&kernel, &policy, &initial, h).unwrap();
        for (a, b) in visitation.mass.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst < 1e-8, format!("max per-state error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. score identities

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n_states, n_actions) = (8, 3);
    let kernel = random_kernel(n_states, n_actions, &mut rng);
    let reward: Vec<f64> = (0..n_states).map(|_| rng.random_range(-1.0..1.0)).collect();
    let policy = greedy_policy(&kernel, &reward);
    let table = expected_reward_table(&kernel, &reward);
    let sample_next = |s: usize, a: usize, rng: &mut ChaCha8Rng| {
        let mut u = rng.random::<f64>();
        for (next, p) in kernel.row(s, a).iter().enumerate() {
            if u < *p {
                return next;
            }
            u -= p;
        }
        n_states - 1
    };

    let mut identity_gap: f64 = 0.0;
    let mut in_range = true;
    let mut substitutions = 0;
    let mut substitution_ok = true;
    for i in 0..1000 {
        let len = rng.random_range(1..=10);
        let mut s = rng.random_range(0..n_states);
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let a = rng.random_range(0..n_actions);
            let next = sample_next(s, a, &mut rng);
            steps.push(Step::new(s, a, next));
            s = next;
        }
        let t = trajectory(&format!("r{i}"), steps);
        let score = score_deviation(&t, &kernel, &reward, &policy).unwrap();
        identity_gap = identity_gap.max((score.deviation - (-score.loss).exp()).abs());
        in_range &= score.deviation > 0.0 && score.deviation <= 1.0;

        // swap one step to a strictly worse action, if there is one
        let candidate = t.steps.iter().enumerate().find_map(|(k, st)| {
            (0..n_actions)
                .find(|&b| table[st.state][b] < table[st.state][st.action])
                .map(|b| (k, b))
        });
        if let Some((k, b)) = candidate {
            let mut worse = t.clone();
            worse.steps[k].action = b;
            let after = score_deviation(&worse, &kernel, &reward, &policy).unwrap();
            substitutions += 1;
            substitution_ok &= after.deviation < score.deviation && after.loss > score.loss;
        }
    }

    let mut on_policy_ok = true;
    for i in 0..100 {
        let mut s = rng.random_range(0..n_states);
        let steps = (0..rng.random_range(1..=10))
            .map(|_| {
                let a = policy.action(s);
                let next = sample_next(s, a, &mut rng);
                let step = Step::new(s, a, next);
                s = next;
                step
            })
            .collect();
        let score = score_deviation(&trajectory(&format!("p{i}"), steps), &kernel, &reward, &policy).unwrap();
        on_policy_ok &= score.loss == 0.0 && score.deviation == 1.0;
    }
    outcome(
        identity_gap <= 1e-9 && in_range && on_policy_ok && substitution_ok && substitutions > 0,
        format!(
            "max |C - exp(-L)| {identity_gap:.1e}; on-policy L=0,C=1: {on_policy_ok}; {substitutions} worse-action swaps all lowered C: {substitution_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4, 5, 7. synthetic recovery runs

struct SynthRun {
    recall: f64,
    recall_p: f64,
    random_recall: f64,
    spearman: (f64, f64),
    evd: (f64, f64),
    deciles: (f64, f64),
    elapsed: Duration,
}

/// One-sided permutation p of the observed recall against random pruned sets of the same size.
fn recall_permutation_p(ids: &[String], corrupted: &HashSet<&str>, n_pruned: usize, observed: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&str> = ids.iter().map(String::as_str).collect();
    let n_perms = 10_000;
    let mut at_least = 0;
    for _ in 0..n_perms {
        pool.shuffle(&mut rng);
        let hits = pool[..n_pruned].iter().filter(|id| corrupted.contains(*id)).count();
        if hits as f64 / corrupted.len() as f64 >= observed - 1e-12 {
            at_least += 1;
        }
    }
    (1 + at_least) as f64 / (1 + n_perms) as f64
}

fn synth_run(seed: u64, scratch: &Path) -> SynthRun {
    let started = Instant::now();
    let mut config = RunConfig {
        seed,
        ..RunConfig::default()
    };
    config.synth.states = 100;
    config.synth.actions = 4;
    config.synth.population.n_trajectories = 2000;
    config.synth.population.corrupted_fraction = 0.3;
    config.prune.retain_fraction = 0.5;
    config.derive_seeds();

    let input = scratch.join(format!("synth_{seed}"));
    std::fs::create_dir_all(&input).unwrap();
    let (world, population) = synthesize(&config).unwrap();
    write_synth(&input, &world, &population.trajectories, &population.labels).unwrap();
    config.input = Some(input);
    let result = run_pipeline(&config, &scratch.join(format!("run_{seed}"))).unwrap();
    let elapsed = started.elapsed();

    let metrics = evaluate_recovery(&world, &result, &population.labels).unwrap();
    let recall = metrics.prune_recall.unwrap();
    let ids: Vec<String> = population.labels.iter().map(|(id, _)| id.clone()).collect();
    let corrupted = population.corrupted_ids();
    let recall_p = recall_permutation_p(&ids, &corrupted, result.pruned.len(), recall, seed);

    let random = select_retained(
        &result.scores,
        &PruneConfig {
            method: PruneMethod::Random,
            ..config.prune.clone()
        },
    )
    .unwrap();
    let random_hits = random.pruned.iter().filter(|id| corrupted.contains(id.as_str())).count();

    let deciles = end_state_deciles(&result.scores).unwrap();
    SynthRun {
        recall,
        recall_p,
        random_recall: random_hits as f64 / corrupted.len() as f64,
        spearman: (metrics.spearman_stage1, metrics.spearman_stage2),
        evd: (metrics.evd_1, metrics.evd_2),
        deciles: (deciles[0].mean_end_state_reward, deciles[9].mean_end_state_reward),
        elapsed,
    }
}

fn criterion_4(runs: &[SynthRun]) -> Outcome {
    let pass = runs
        .iter()
        .all(|r| r.recall > 0.5 && r.recall_p < 0.01 && r.elapsed < Duration::from_secs(60));
    let detail = runs
        .iter()
        .map(|r| format!("{:.3}/p={:.1e}/{:.1}s", r.recall, r.recall_p, r.elapsed.as_secs_f64()))
        .collect::<Vec<_>>()
        .join(", ");
    let random = runs.iter().map(|r| format!("{:.3}", r.random_recall)).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("recall/p/time per seed: {detail}; random-pruning recall {random}"))
}

fn criterion_5(runs: &[SynthRun]) -> Outcome {
    let improved = runs.iter().filter(|r| r.spearman.1 >= r.spearman.0).count();
    let n = runs.len() as f64;
    let evd1 = runs.iter().map(|r| r.evd.0).sum::<f64>() / n;
    let evd2 = runs.iter().map(|r| r.evd.1).sum::<f64>() / n;
    let pairs = runs
        .iter()
        .map(|r| format!("{:.3}->{:.3}", r.spearman.0, r.spearman.1))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        improved >= 4 && evd2 <= evd1,
        format!("Spearman {pairs} ({improved}/5 not worse); mean EVD {evd1:.4} -> {evd2:.4}"),
    )
}

fn criterion_7(runs: &[SynthRun]) -> Outcome {
    let ok = runs.iter().filter(|r| r.deciles.0 < r.deciles.1).count();
    let detail = runs
        .iter()
        .map(|r| format!("{:.3}<{:.3}", r.deciles.0, r.deciles.1))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(ok >= 4, format!("bottom vs top decile end-state reward: {detail} ({ok}/5)"))
}

// ---------------------------------------------------------------------------
// 6. retention 1.0 reproduces single-stage IRL

fn criterion_6(scratch: &Path) -> Outcome {
    let mut config = RunConfig {
        seed: 11,
        ..RunConfig::default()
    };
    config.synth.states = 30;
    config.synth.population.n_trajectories = 300;
    config.derive_seeds();
    let (_, population) = synthesize(&config).unwrap();
    let set = &population.trajectories;
    let prune = PruneConfig {
        retain_fraction: 1.0,
        ..PruneConfig::default()
    };
    let mut identical = true;
    for irl in [
        IrlConfig::default(),
        IrlConfig {
            optimizer: consensus_irl::Optimizer::Sga,
            init: consensus_irl::RewardInit::Gaussian,
            seed: 5,
            ..IrlConfig::default()
        },
    ] {
        let result = run_two_stage(set, 30, 4, &irl, &prune).unwrap();
        identical &= result
            .reward_stage1
            .rewards
            .iter()
            .zip(&result.reward_stage2.rewards)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        identical &= result.pruned.is_empty() && result.reward_delta.iter().all(|d| *d == 0.0);
        let dir = scratch.join(format!("identity_{:?}", irl.optimizer));
        std::fs::create_dir_all(&dir).unwrap();
        result.write_artifacts(&dir, set).unwrap();
        identical &= std::fs::read(dir.join("rewards_stage1.json")).unwrap() == std::fs::read(dir.join("rewards_stage2.json")).unwrap();
    }
    outcome(identical, "stage-2 rewards and reward files bitwise equal to stage 1 for ExpSGA/ones and SGA/gaussian")
}

// ---------------------------------------------------------------------------
// 8. permutation statistics against exact distributions

fn table_to_labels(table: &[[usize; 2]]) -> (Vec<usize>, Vec<bool>) {
    let mut categories = Vec::new();
    let mut flags = Vec::new();
    for (c, row) in table.iter().enumerate() {
        for (flag, &count) in [true, false].iter().zip(row) {
            categories.extend(std::iter::repeat_n(c, count));
            flags.extend(std::iter::repeat_n(*flag, count));
        }
    }
    (categories, flags)
}

fn criterion_8() -> Outcome {
    // asymptotic chi-squared (df = 1) and F(2, 27) p-values, computed with scipy
    let chi_cases: [([[usize; 2]; 2], f64, f64); 2] = [
        ([[30, 70], [70, 30]], 32.0, 1.5417257900280013e-08),
        ([[180, 220], [220, 180]], 8.0, 0.004677734981047276),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (table, stat, exact)) in chi_cases.iter().enumerate() {
        let (cats, flags) = table_to_labels(table);
        let (observed, p) = permutation_chi_squared(&cats, &flags, 2, 10_000, 80 + i as u64);
        ok &= (observed - stat).abs() < 1e-9 && (p - exact).abs() <= 0.02;
        parts.push(format!("chi2 {observed:.1}: p {p:.4} vs {exact:.4}"));
    }

    let plant_growth = [
        [4.17, 5.58, 5.18, 6.11, 4.50, 4.61, 5.17, 4.53, 5.33, 5.14],
        [4.81, 4.17, 4.41, 3.59, 5.87, 3.83, 6.03, 4.89, 4.32, 4.69],
        [6.31, 5.12, 5.54, 5.50, 5.37, 5.29, 4.92, 6.15, 5.80, 5.26],
    ];
    let groups: Vec<usize> = (0..3).flat_map(|g| std::iter::repeat_n(g, 10)).collect();
    let values: Vec<f64> = plant_growth.iter().flatten().copied().collect();
    let (f, p) = permutation_anova(&groups, &values, 3, 10_000, 88);
    let exact_f = 4.846087862380136;
    let exact_p = 0.0159099583256229;
    ok &= (f - exact_f).abs() < 1e-9 && (p - exact_p).abs() <= 0.02;
    parts.push(format!("F {f:.3}: p {p:.4} vs {exact_p:.4}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let normal = rand_distr::StandardNormal;
    let mut rejections = 0;
    for d in 0..200 {
        let values: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(normal)).collect();
        let (_, p) = permutation_anova(&groups, &values, 3, 999, 1000 + d);
        if p < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 200.0;
    ok &= (rate - 0.05).abs() <= 0.03;
    parts.push(format!("null rejection rate {rate:.3}"));
    outcome(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 9. byte-identical pipeline runs

fn files_in(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn criterion_9(scratch: &Path) -> Outcome {
    let root = scratch.join("cli");
    let root_s = root.to_string_lossy().into_owned();
    let synth = dispatch([
        "consensus-irl", "--out-root", &root_s, "synth", "--states", "100", "--actions", "4", "--trajectories", "2000",
        "--corrupted", "0.3", "--seed", "7",
    ]);
    let mut codes = vec![synth];
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = root.join(name).to_string_lossy().into_owned();
        codes.push(dispatch(["consensus-irl", "--out-root", &root_s, "pipeline", "--retain", "0.5", "--seed", "7", "--out", &out]));
        outputs.push(files_in(&root.join(name)));
    }
    let same = outputs[0] == outputs[1];
    let count = outputs[0].len();
    outcome(
        codes.iter().all(|&c| c == 0) && same && count > 5,
        format!("exit codes {codes:?}; {count} artifacts, identical: {same}"),
    )
}

// ---------------------------------------------------------------------------
// 10. likelihood scoring and cutoffs

fn score_with_ll(id: &str, ll: f64) -> TrajectoryScore {
    TrajectoryScore {
        trajectory_id: id.to_string(),
        loss: 0.0,
        deviation: 1.0,
        log_likelihood: ll,
        end_state_reward: 0.0,
        off_policy_only: false,
    }
}

fn criterion_10() -> Outcome {
    // action 0 splits evenly between states 1 and 2; action 1 is a self-loop
    let mut probs = vec![0.0; 3 * 2 * 3];
    for s in 0..3 {
        probs[(s * 2) * 3 + (s + 1) % 3] = 0.5;
        probs[(s * 2) * 3 + (s + 2) % 3] = 0.5;
        probs[(s * 2 + 1) * 3 + s] = 1.0;
    }
    let kernel = TransitionModel::from_rows(3, 2, probs).unwrap();
    let greedy_zero = DeterministicPolicy { actions: vec![0; 3] };
    let greedy_one = DeterministicPolicy { actions: vec![1; 3] };

    let half_half = trajectory("h", vec![Step::new(0, 0, 1), Step::new(1, 0, 2)]);
    let ll = score_likelihood(&half_half, &greedy_zero, &kernel);
    let ln_quarter = ll == 0.25f64.ln();

    let off = score_trajectory(&half_half, &kernel, &[0.0, 0.5, 1.0], &greedy_one).unwrap();
    let anomaly = off.log_likelihood == 0.0 && off.off_policy_only;

    let deterministic = trajectory("d", vec![Step::new(0, 1, 0), Step::new(0, 1, 0)]);
    let log_one = score_likelihood(&deterministic, &greedy_one, &kernel) == 0.0;

    let scores: Vec<TrajectoryScore> = [-1.0, -2.0, -3.0, -4.0]
        .iter()
        .enumerate()
        .map(|(i, &ll)| score_with_ll(&format!("t{i}"), ll))
        .collect();
    let by_percentile = select_retained(
        &scores,
        &PruneConfig {
            method: PruneMethod::Likelihood,
            likelihood_percentile: Some(50.0),
            ..PruneConfig::default()
        },
    )
    .unwrap();
    let percentile_ok = by_percentile.retained == ["t0", "t1"] && by_percentile.cutoff == Some(-2.5);

    let theta = (-3.0f64).exp();
    let by_threshold = select_retained(
        &scores,
        &PruneConfig {
            method: PruneMethod::Likelihood,
            likelihood_threshold: Some(theta),
            ..PruneConfig::default()
        },
    )
    .unwrap();
    let threshold_ok = by_threshold.retained == ["t0", "t1", "t2"] && by_threshold.cutoff == Some(theta.ln());

    let both_rejected = select_retained(
        &scores,
        &PruneConfig {
            method: PruneMethod::Likelihood,
            likelihood_percentile: Some(50.0),
            likelihood_threshold: Some(0.5),
            ..PruneConfig::default()
        },
    )
    .is_err();

    outcome(
        ln_quarter && anomaly && log_one && percentile_ok && threshold_ok && both_rejected,
        format!(
            "ln 0.25 exact: {ln_quarter}; off-policy-only l=0 flagged: {anomaly}; P=1 gives 0: {log_one}; \
             p=50 keeps top two at c=-2.5: {percentile_ok}; c=ln(theta): {threshold_ok}; both set rejected: {both_rejected}"
        ),
    )
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let runs: Vec<SynthRun> = (1..=5).map(|seed| synth_run(seed, scratch.path())).collect();
    let results = [
        ("gradient matches finite differences", criterion_1()),
        ("visitation matches enumeration", criterion_2()),
        ("score identities", criterion_3()),
        ("pruning recovers corruption", criterion_4(&runs)),
        ("two-stage improvement", criterion_5(&runs)),
        ("retention 1.0 equals single-stage IRL", criterion_6(scratch.path())),
        ("decile direction", criterion_7(&runs)),
        ("permutation statistics", criterion_8()),
        ("pipeline determinism", criterion_9(scratch.path())),
        ("likelihood scoring", criterion_10()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

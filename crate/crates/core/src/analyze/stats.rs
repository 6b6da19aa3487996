//! Rank correlation and Monte Carlo permutation tests.
//!
//! Every permutation test canonicalizes its input order first and draws
//! permutation `j` from its own ChaCha stream, so p-values depend only on the
//! data multiset and the seed, not on row order or thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Pearson chi-squared statistic of a `categories x 2` table built from
/// `(category index, flag)` observations.
pub fn chi_squared(categories: &[usize], flags: &[bool], n_categories: usize) -> f64 {
    let mut table = vec![[0.0f64; 2]; n_categories];
    for (&c, &f) in categories.iter().zip(flags) {
        table[c][usize::from(f)] += 1.0;
    }
    chi_squared_table(&table)
}

pub fn chi_squared_table(table: &[[f64; 2]]) -> f64 {
    let n: f64 = table.iter().map(|r| r[0] + r[1]).sum();
    let cols = [table.iter().map(|r| r[0]).sum::<f64>(), table.iter().map(|r| r[1]).sum::<f64>()];
    let mut stat = 0.0;
    for row in table {
        let row_total = row[0] + row[1];
        for j in 0..2 {
            let expected = row_total * cols[j] / n;
            if expected > 0.0 {
                stat += (row[j] - expected).powi(2) / expected;
            }
        }
    }
    stat
}

/// One-way ANOVA F statistic. `groups[i]` is the group index of `values[i]`.
pub fn anova_f(groups: &[usize], values: &[f64], n_groups: usize) -> f64 {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&g, &v) in groups.iter().zip(values) {
        sums[g] += v;
        counts[g] += 1;
    }
    let n = values.len() as f64;
    let grand = values.iter().sum::<f64>() / n;
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect();
    let between: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * (m - grand).powi(2))
        .sum();
    let within: f64 = groups
        .iter()
        .zip(values)
        .map(|(&g, v)| (v - means[g]).powi(2))
        .sum();
    let k = counts.iter().filter(|&&c| c > 0).count() as f64;
    let df_between = k - 1.0;
    let df_within = n - k;
    if df_between <= 0.0 || df_within <= 0.0 {
        return 0.0;
    }
    if within == 0.0 {
        return if between > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (between / df_between) / (within / df_within)
}

fn at_least(stat: f64, observed: f64) -> bool {
    if observed.is_infinite() {
        return stat >= observed;
    }
    stat >= observed - 1e-9 * observed.abs().max(1.0)
}

/// `(1 + #{perm stat >= observed}) / (1 + n_perms)`, permuting `labels`
/// against a fixed assignment. `statistic` receives the permuted labels.
pub fn permutation_p_value<L, F>(labels: &[L], observed: f64, n_perms: usize, seed: u64, statistic: F) -> f64
where
    L: Clone + Send + Sync,
    F: Fn(&[L]) -> f64 + Sync,
{
    let exceed: usize = (0..n_perms)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64 + 1);
            let mut shuffled = labels.to_vec();
            shuffled.shuffle(&mut rng);
            usize::from(at_least(statistic(&shuffled), observed))
        })
        .sum();
    (1 + exceed) as f64 / (1 + n_perms) as f64
}

/// Permutation chi-squared test of independence between a category and a flag.
pub fn permutation_chi_squared(categories: &[usize], flags: &[bool], n_categories: usize, n_perms: usize, seed: u64) -> (f64, f64) {
    let mut rows: Vec<(usize, bool)> = categories.iter().copied().zip(flags.iter().copied()).collect();
    rows.sort_unstable();
    let cats: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let flags: Vec<bool> = rows.iter().map(|r| r.1).collect();
    let observed = chi_squared(&cats, &flags, n_categories);
    let p = permutation_p_value(&flags, observed, n_perms, seed, |perm| chi_squared(&cats, perm, n_categories));
    (observed, p)
}

/// Permutation one-way ANOVA.
pub fn permutation_anova(groups: &[usize], values: &[f64], n_groups: usize, n_perms: usize, seed: u64) -> (f64, f64) {
    let mut rows: Vec<(usize, f64)> = groups.iter().copied().zip(values.iter().copied()).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let groups: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let observed = anova_f(&groups, &values, n_groups);
    let p = permutation_p_value(&values, observed, n_perms, seed, |perm| anova_f(&groups, perm, n_groups));
    (observed, p)
}

/// Two-sided permutation test on the difference of means of two samples.
pub fn permutation_mean_difference(a: &[f64], b: &[f64], n_perms: usize, seed: u64) -> (f64, f64) {
    let mut a_sorted = a.to_vec();
    let mut b_sorted = b.to_vec();
    a_sorted.sort_by(f64::total_cmp);
    b_sorted.sort_by(f64::total_cmp);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let diff = mean(&a_sorted) - mean(&b_sorted);
    let n_a = a_sorted.len();
    let pooled: Vec<f64> = a_sorted.iter().chain(&b_sorted).copied().collect();
    let p = permutation_p_value(&pooled, diff.abs(), n_perms, seed, |perm| {
        (mean(&perm[..n_a]) - mean(&perm[n_a..])).abs()
    });
    (diff, p)
}

/// Holm step-down adjustment, returned in input order.
pub fn holm(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p_values[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

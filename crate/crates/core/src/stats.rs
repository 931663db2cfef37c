//! Small statistics toolbox: rank correlation with a permutation test, and
//! simple smoothing. Everything is deterministic given a seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("ranks need comparable values"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None; // a constant input has no defined correlation
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` when either input is constant or the
/// inputs are shorter than 2.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "correlation needs paired samples");
    if xs.len() < 2 {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Result of a permutation test on the Spearman correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanTest {
    pub rho: f64,
    /// One-sided p-value for negative association: the fraction of
    /// permutations with correlation at or below the observed one.
    pub p_negative: f64,
    pub n_permutations: usize,
}

/// Spearman correlation with a seeded permutation test of the one-sided
/// hypothesis that the association is negative. `None` when the correlation
/// itself is undefined.
pub fn spearman_test(xs: &[f64], ys: &[f64], n_permutations: usize, seed: u64) -> Option<SpearmanTest> {
    let rho = spearman(xs, ys)?;
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = ry;
    let mut at_or_below = 0usize;
    for _ in 0..n_permutations {
        // Fisher-Yates on the y-ranks.
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        if let Some(r) = pearson(&rx, &shuffled) {
            if r <= rho {
                at_or_below += 1;
            }
        }
    }
    // Count the identity permutation so the p-value can never be zero.
    let p = (at_or_below + 1) as f64 / (n_permutations + 1) as f64;
    Some(SpearmanTest { rho, p_negative: p, n_permutations })
}

/// Trailing moving average with the window clipped at the start, so the
/// output has the same length as the input.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / window.min(i + 1) as f64);
    }
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

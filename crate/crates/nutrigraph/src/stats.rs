//! Small statistical toolkit: normal tail helpers, bias-corrected percentile
//! bootstrap, and the Wilcoxon signed-rank test.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn std_normal_inv_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Bias-corrected percentile bootstrap confidence interval for the mean.
///
/// Deterministic for a fixed seed. A degenerate sample (all values equal)
/// yields a point interval.
pub fn bootstrap_ci_mean(xs: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    assert!(!xs.is_empty());
    let theta_hat = mean(xs);
    let lo_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi_x - lo_x == 0.0 {
        return (theta_hat, theta_hat);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut s = 0.0;
            for _ in 0..n {
                s += xs[rng.gen_range(0..n)];
            }
            s / n as f64
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Bias correction: z0 from the share of resamples below the point estimate.
    let below = stats.iter().filter(|s| **s < theta_hat).count();
    let prop = ((below as f64) / resamples as f64)
        .clamp(1.0 / (resamples as f64 + 1.0), resamples as f64 / (resamples as f64 + 1.0));
    let z0 = std_normal_inv_cdf(prop);
    let alpha = 1.0 - level;
    let z_lo = std_normal_inv_cdf(alpha / 2.0);
    let z_hi = std_normal_inv_cdf(1.0 - alpha / 2.0);
    let p_lo = std_normal_cdf(2.0 * z0 + z_lo);
    let p_hi = std_normal_cdf(2.0 * z0 + z_hi);
    (percentile(&stats, p_lo), percentile(&stats, p_hi))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let idx = (p * n as f64).ceil() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// Two-sided Wilcoxon signed-rank test on paired differences.
///
/// Zero differences are dropped. The null distribution is exact (via the rank
/// sum convolution) when n <= 25 and no ties are present; otherwise a normal
/// approximation with tie correction is used. Returns p = 1.0 when no nonzero
/// differences remain.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> f64 {
    let nonzero: Vec<f64> = diffs.iter().cloned().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return 1.0;
    }
    let mut abs: Vec<(f64, f64)> = nonzero.iter().map(|d| (d.abs(), d.signum())).collect();
    abs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Average ranks over ties.
    let mut ranks = vec![0.0; n];
    let mut has_ties = false;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs[j + 1].0 == abs[i].0 {
            j += 1;
        }
        if j > i {
            has_ties = true;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = avg;
        }
        i = j + 1;
    }

    let w_plus: f64 = ranks
        .iter()
        .zip(abs.iter())
        .filter(|(_, (_, sign))| *sign > 0.0)
        .map(|(r, _)| *r)
        .sum();

    if n <= 25 && !has_ties {
        exact_signed_rank_p(w_plus as usize, n)
    } else {
        let mean_w = n as f64 * (n as f64 + 1.0) / 4.0;
        let mut var_w = n as f64 * (n as f64 + 1.0) * (2.0 * n as f64 + 1.0) / 24.0;
        // Tie correction.
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && abs[j + 1].0 == abs[i].0 {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            var_w -= t * (t * t - 1.0) / 48.0;
            i = j + 1;
        }
        if var_w <= 0.0 {
            return 1.0;
        }
        // Continuity correction.
        let z = (w_plus - mean_w).abs() - 0.5;
        let z = z.max(0.0) / var_w.sqrt();
        (2.0 * (1.0 - std_normal_cdf(z))).min(1.0)
    }
}

/// Exact two-sided p-value for W+ with untied integer ranks 1..=n, by counting
/// rank-subset sums.
fn exact_signed_rank_p(w: usize, n: usize) -> f64 {
    let max_sum = n * (n + 1) / 2;
    let mut counts = vec![0f64; max_sum + 1];
    counts[0] = 1.0;
    for rank in 1..=n {
        for s in (rank..=max_sum).rev() {
            counts[s] += counts[s - rank];
        }
    }
    let total: f64 = 2f64.powi(n as i32);
    // Two-sided: double the smaller tail of the symmetric null.
    let lower: f64 = counts[..=w.min(max_sum)].iter().sum();
    let upper: f64 = counts[w.min(max_sum)..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

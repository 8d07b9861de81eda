//! Partial correlation and the Fisher-Z conditional independence test.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stats::std_normal_cdf;

/// Correlations are clamped this close to +/-1 before the Fisher transform.
const CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Independence {
    Independent,
    Dependent,
}

/// Partial correlation of `x` and `y` given `z`, from the inverse of the
/// correlation submatrix over `{x, y} ∪ z`.
///
/// `corr` is the full correlation matrix. Returns an error when the
/// conditioning submatrix is numerically singular.
pub fn partial_correlation(
    corr: &[Vec<f64>],
    x: usize,
    y: usize,
    z: &[usize],
) -> Result<f64> {
    assert!(x != y && !z.contains(&x) && !z.contains(&y));
    if z.is_empty() {
        return Ok(corr[x][y].clamp(-CLAMP, CLAMP));
    }
    let mut idx = vec![x, y];
    idx.extend_from_slice(z);
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |i, j| corr[idx[i]][idx[j]]);
    let precision = sub
        .try_inverse()
        .ok_or_else(|| Error::Data("singular conditioning design".into()))?;
    let denom = precision[(0, 0)] * precision[(1, 1)];
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Data("degenerate precision matrix".into()));
    }
    let r = -precision[(0, 1)] / denom.sqrt();
    if !r.is_finite() {
        return Err(Error::Data("non-finite partial correlation".into()));
    }
    Ok(r.clamp(-CLAMP, CLAMP))
}

/// Fisher-Z conditional independence test.
///
/// z = 0.5 * ln((1+r)/(1-r)) * sqrt(n - |Z| - 3), two-sided p against the
/// standard normal; independent iff p > alpha. Errors (too few samples,
/// singular designs) are surfaced so the caller retains the edge.
pub fn fisher_z_test(
    corr: &[Vec<f64>],
    n: usize,
    x: usize,
    y: usize,
    z: &[usize],
    alpha: f64,
) -> Result<(Independence, f64)> {
    if n <= z.len() + 3 {
        return Err(Error::InsufficientData(format!(
            "n = {n} too small for |Z| = {}",
            z.len()
        )));
    }
    let r = partial_correlation(corr, x, y, z)?;
    let fisher = 0.5 * ((1.0 + r) / (1.0 - r)).ln();
    let stat = fisher.abs() * ((n - z.len() - 3) as f64).sqrt();
    let p = 2.0 * (1.0 - std_normal_cdf(stat));
    let verdict = if p > alpha {
        Independence::Independent
    } else {
        Independence::Dependent
    };
    Ok((verdict, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn corr_of(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let means: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let sds: Vec<f64> = (0..d)
            .map(|j| {
                (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        let mut c = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                c[i][j] = rows
                    .iter()
                    .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
                    .sum::<f64>()
                    / (n * sds[i] * sds[j]);
            }
        }
        c
    }

    #[test]
    fn exact_copy_clamps_near_one() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, i as f64]).collect();
        let corr = corr_of(&rows);
        let r = partial_correlation(&corr, 0, 1, &[]).unwrap();
        assert!(r < 1.0 && r > 1.0 - 1e-9);
    }

    #[test]
    fn independent_gaussians_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        let corr = corr_of(&rows);
        let r = partial_correlation(&corr, 0, 1, &[]).unwrap();
        assert!(r.abs() < 0.05, "r = {r}");
    }

    #[test]
    fn chain_partial_correlation_vanishes_given_mediator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                let x = normal.sample(&mut rng);
                let z = 0.8 * x + 0.5 * normal.sample(&mut rng);
                let y = 0.8 * z + 0.5 * normal.sample(&mut rng);
                vec![x, y, z]
            })
            .collect();
        let corr = corr_of(&rows);
        let marginal = partial_correlation(&corr, 0, 1, &[]).unwrap();
        let conditional = partial_correlation(&corr, 0, 1, &[2]).unwrap();
        assert!(marginal.abs() > 0.3, "marginal {marginal}");
        assert!(conditional.abs() < 0.05, "conditional {conditional}");
    }

    #[test]
    fn fisher_z_zero_correlation_is_independent() {
        // Construct data with exactly zero sample correlation.
        let rows = vec![
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
            vec![0.5, 0.0],
            vec![-0.5, 0.0],
        ];
        let corr = corr_of(&rows);
        let (verdict, p) = fisher_z_test(&corr, 100, 0, 1, &[], 0.05).unwrap();
        // r is exactly 0 here, so p must be exactly 1.
        assert_eq!(verdict, Independence::Independent);
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fisher_z_known_statistic() {
        // r = 0.5, n = 103, |Z| = 0: z = 0.5493 * 10 = 5.493, p < 1e-6.
        let mut corr = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
        corr[0][1] = 0.5;
        corr[1][0] = 0.5;
        let (verdict, p) = fisher_z_test(&corr, 103, 0, 1, &[], 0.05).unwrap();
        assert_eq!(verdict, Independence::Dependent);
        assert!(p < 1e-6, "p = {p}");
        let fisher = 0.5f64 * (1.5f64 / 0.5).ln();
        assert_relative_eq!(fisher * 10.0, 5.493, epsilon = 1e-3);
    }

    #[test]
    fn fisher_z_too_few_samples_is_inconclusive() {
        let corr = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        assert!(fisher_z_test(&corr, 3, 0, 1, &[], 0.05).is_err());
    }
}

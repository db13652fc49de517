//! Paired model comparison: two-sided Wilcoxon signed-rank test (exact
//! null distribution for n <= 25, tie-corrected normal approximation
//! above) and the paired-differences form of Cohen's d.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Boundary between the exact signed-rank distribution and the normal
/// approximation.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy)]
pub struct ComparisonResult {
    /// Two-sided p-value of the paired Wilcoxon signed-rank test.
    pub p_value: f64,
    /// Cohen's d on the paired differences: mean(diff) / sd(diff), sample
    /// standard deviation.
    pub effect_size: f64,
    /// Rank sum of the positive differences.
    pub w_statistic: f64,
    /// Pairs remaining after dropping zero differences.
    pub n_used: usize,
}

/// Ranks of |values| with average ranks assigned to ties.
fn tied_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite ranks"));
    let mut ranks = vec![0.0; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_sizes)
}

/// Exact two-sided p-value: the null distribution of W+ is the sum of a
/// uniform random subset of the ranks. Doubling the (possibly half-
/// integer) tied ranks makes every achievable sum an integer, so the
/// distribution is a small counting table.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let denom = 2f64.powi(ranks.len() as i32);
    let w2 = (2.0 * w_plus).round() as usize;
    let below: u64 = counts[..=w2].iter().sum();
    let above: u64 = counts[w2..].iter().sum();
    let p = 2.0 * (below.min(above) as f64) / denom;
    p.min(1.0)
}

/// Tie-corrected normal approximation for the signed-rank statistic.
fn approx_p(n: usize, tie_sizes: &[usize], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
}

/// Compare two models' per-basin scores. `a` and `b` must be paired by
/// basin; differences are `a - b`, so a positive effect size favors `a`.
pub fn compare_models(a: &[f64], b: &[f64]) -> Result<ComparisonResult> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "paired comparison needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Config(
            "paired comparison needs at least 2 pairs".into(),
        ));
    }
    for (i, v) in a.iter().chain(b.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite score at flattened index {i}"
            )));
        }
    }

    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();

    // Cohen's d over all pairs (zeros included).
    let mean_d = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs
        .iter()
        .map(|d| (d - mean_d) * (d - mean_d))
        .sum::<f64>()
        / (diffs.len() - 1) as f64;
    let effect_size = if var > 0.0 {
        mean_d / var.sqrt()
    } else if mean_d == 0.0 {
        0.0
    } else {
        mean_d.signum() * f64::INFINITY
    };

    // Standard zero-drop convention for the signed-rank test.
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Ok(ComparisonResult {
            p_value: 1.0,
            effect_size: 0.0,
            w_statistic: 0.0,
            n_used: 0,
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, tie_sizes) = tied_ranks(&abs);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let n = nonzero.len();
    let p_value = if n <= EXACT_LIMIT {
        exact_p(&ranks, w_plus)
    } else {
        approx_p(n, &tie_sizes, w_plus)
    };

    Ok(ComparisonResult {
        p_value,
        effect_size,
        w_statistic: w_plus,
        n_used: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force two-sided signed-rank p-value by enumerating all 2^n
    /// sign assignments of the ranked |differences|.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
        let (ranks, _) = tied_ranks(&abs);
        let w_obs: f64 = nonzero
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let n = nonzero.len();
        let mut below = 0u64;
        let mut above = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ranks[i])
                .sum();
            if w <= w_obs + 1e-12 {
                below += 1;
            }
            if w >= w_obs - 1e-12 {
                above += 1;
            }
        }
        let denom = 2f64.powi(n as i32);
        (2.0 * below.min(above) as f64 / denom).min(1.0)
    }

    #[test]
    fn identical_scores_give_p1_d0() {
        let a = vec![0.5, 0.7, 0.9, 0.2];
        let r = compare_models(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.effect_size, 0.0);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn constant_shift_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let r = compare_models(&a, &b).unwrap();
        assert!(r.p_value < 1e-5, "p = {}", r.p_value);
        assert!(r.effect_size.is_infinite() && r.effect_size < 0.0);
        // Jittered shift: a large but finite effect.
        let b2: Vec<f64> = a
            .iter()
            .map(|v| v + 1.0 + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let r2 = compare_models(&a, &b2).unwrap();
        assert!(r2.p_value < 1e-5);
        assert!(r2.effect_size < -10.0);
    }

    #[test]
    fn exact_small_n_matches_enumeration() {
        let fixtures: Vec<Vec<f64>> = vec![
            vec![0.3, -0.1, 0.25, 0.7, -0.4, 0.15],
            vec![0.2, 0.2, -0.2, 0.5, 0.1, -0.3], // ties in |d|
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],   // all one sign
        ];
        for diffs in fixtures {
            let a: Vec<f64> = diffs.clone();
            let b = vec![0.0; diffs.len()];
            let r = compare_models(&a, &b).unwrap();
            let expected = brute_force_p(&diffs);
            assert_abs_diff_eq!(r.p_value, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn antisymmetric_effect_symmetric_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let ab = compare_models(&a, &b).unwrap();
        let ba = compare_models(&b, &a).unwrap();
        assert_abs_diff_eq!(ab.effect_size, -ba.effect_size, epsilon = 1e-12);
        assert_abs_diff_eq!(ab.p_value, ba.p_value, epsilon = 1e-12);
    }

    #[test]
    fn large_n_uses_normal_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        let r = compare_models(&a, &b).unwrap();
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        assert_eq!(r.n_used, 60);
    }

    #[test]
    fn length_mismatch_is_config_error() {
        assert!(compare_models(&[1.0], &[1.0, 2.0]).is_err());
    }
}

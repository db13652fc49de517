//! K-means with k-means++ seeding, best-of-restarts selection, Euclidean
//! silhouette scores, per-signature variance reduction, and the adjusted
//! Rand index used to score recovered groupings against ground truth.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub mean_silhouette: f64,
    pub min_silhouette: f64,
    /// Within-cluster sum of squared Euclidean distances.
    pub wcss: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut labels = vec![0usize; points.nrows()];
    let mut wcss = 0.0;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        wcss += best_d;
    }
    (labels, wcss)
}

fn update_centroids(
    points: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    centroids: &mut Array2<f64>,
) {
    let dim = points.ncols();
    let mut counts = vec![0usize; k];
    centroids.fill(0.0);
    for (i, p) in points.rows().into_iter().enumerate() {
        counts[labels[i]] += 1;
        for j in 0..dim {
            centroids[[labels[i], j]] += p[j];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..dim {
                centroids[[c, j]] /= counts[c] as f64;
            }
        }
    }
    // Empty clusters are re-seeded from the point farthest from its
    // centroid, deterministically.
    for c in 0..k {
        if counts[c] == 0 {
            let far = points
                .rows()
                .into_iter()
                .enumerate()
                .max_by(|(i, p), (j, q)| {
                    let di = sq_dist(*p, centroids.row(labels[*i]));
                    let dj = sq_dist(*q, centroids.row(labels[*j]));
                    di.partial_cmp(&dj).expect("finite distances")
                })
                .map(|(i, _)| i)
                .expect("nonempty point set");
            for j in 0..dim {
                centroids[[c, j]] = points[[far, j]];
            }
        }
    }
}

fn kmeans_once(
    points: ArrayView2<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Array2<f64>, f64) {
    let n = points.nrows();
    let dim = points.ncols();

    // k-means++ seeding.
    let mut centroids = Array2::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total <= 0.0 {
            // All remaining points coincide with a centroid.
            rng.random_range(0..n)
        } else {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(c).assign(&points.row(chosen));
        for (i, best) in d2.iter_mut().enumerate() {
            let d = sq_dist(points.row(i), centroids.row(c));
            if d < *best {
                *best = d;
            }
        }
    }

    let (mut labels, mut wcss) = assign(points, &centroids);
    for _ in 0..MAX_ITERS {
        update_centroids(points, &labels, k, &mut centroids);
        let (new_labels, new_wcss) = assign(points, &centroids);
        let converged = new_labels == labels;
        labels = new_labels;
        wcss = new_wcss;
        if converged {
            break;
        }
    }
    (labels, centroids, wcss)
}

/// Mean, minimum and per-point silhouette coefficients under Euclidean
/// distance. Points in singleton clusters score 0.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize], k: usize) -> (f64, f64, Vec<f64>) {
    let n = points.nrows();
    let mut scores = vec![0.0; n];
    let counts = {
        let mut c = vec![0usize; k];
        for &l in labels {
            c[l] += 1;
        }
        c
    };
    for i in 0..n {
        if counts[labels[i]] <= 1 {
            scores[i] = 0.0;
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
        }
        let own = labels[i];
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|c| *c != own && counts[*c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        scores[i] = if denom > 0.0 && b.is_finite() {
            (b - a) / denom
        } else {
            0.0
        };
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, min, scores)
}

/// Best-of-restarts k-means (by WCSS). Deterministic given
/// `(points, k, restarts, seed)`.
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if k > n {
        return Err(Error::Config(format!(
            "k = {k} exceeds the number of points ({n})"
        )));
    }
    if restarts == 0 {
        return Err(Error::Config("restarts must be positive".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Array2<f64>, f64)> = None;
    for _ in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().map(|b| run.2 < b.2).unwrap_or(true) {
            best = Some(run);
        }
    }
    let (labels, centroids, wcss) = best.expect("at least one restart");
    let (mean_silhouette, min_silhouette, _) = silhouette(points, &labels, k);
    Ok(ClusterResult {
        k,
        labels,
        centroids,
        mean_silhouette,
        min_silhouette,
        wcss,
    })
}

/// Fraction of a signature's variance explained by the cluster labels:
/// `1 - weighted_mean_within_cluster_variance / total_variance`
/// (population variances).
pub fn variance_reduction(values: &[f64], labels: &[usize]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::Config(
            "variance_reduction: values and labels differ in length".into(),
        ));
    }
    let n = values.len();
    if n == 0 {
        return Err(Error::Config("variance_reduction over zero points".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let total_var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if total_var <= 0.0 {
        return Err(Error::Metric(
            "variance_reduction undefined: zero total variance".into(),
        ));
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (v, &l) in values.iter().zip(labels) {
        count[l] += 1;
        sum[l] += v;
    }
    let mut within = 0.0;
    for c in 0..k {
        if count[c] == 0 {
            continue;
        }
        let m = sum[c] / count[c] as f64;
        let var = values
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == c)
            .map(|(v, _)| (v - m) * (v - m))
            .sum::<f64>()
            / count[c] as f64;
        within += var * count[c] as f64;
    }
    Ok(1.0 - within / (n as f64) / total_var)
}

/// Adjusted Rand index between two labelings of the same points; 1 for
/// identical partitions, ~0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(
            "adjusted_rand_index: labelings differ in length".into(),
        ));
    }
    if a.is_empty() {
        return Err(Error::Config("adjusted_rand_index over zero points".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |n: u64| -> f64 { (n * n.saturating_sub(1)) as f64 / 2.0 };
    let sum_ij: f64 = table
        .iter()
        .flat_map(|row| row.iter())
        .map(|&n| choose2(n))
        .sum();
    let sum_a: f64 = table
        .iter()
        .map(|row| choose2(row.iter().sum::<u64>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        // Both partitions are single clusters (or equivalent degenerate
        // cases); identical partitions score 1.
        return Ok(if sum_ij == max_index { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max_index - expected))
}

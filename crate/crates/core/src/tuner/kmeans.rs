use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::Stratification;
use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::panel::PanelMatrix;

const RESTARTS: usize = 50;
const MAX_LLOYD_ITERS: usize = 300;
const MAX_COORDS: usize = 3;

/// Group units by their loadings on the leading singular vectors of the
/// double-demeaned history.
pub fn kmeans_stratify(history: &PanelMatrix, k: usize, seed: u64) -> Result<Stratification> {
    let n = history.n_units();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 ≤ K ≤ N = {n}, got K = {k}")));
    }
    if k == 1 {
        return Stratification::single(n);
    }
    let points = loadings(history.values(), k.min(MAX_COORDS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut attempts = 0;
    let mut done = 0;
    while done < RESTARTS {
        attempts += 1;
        if attempts > 20 * RESTARTS {
            return Err(Error::Numerical(format!(
                "could not find {k} non-empty clusters among {n} units"
            )));
        }
        let Some((inertia, labels)) = lloyd(&points, k, &mut rng) else {
            continue;
        };
        done += 1;
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let (_, labels) = best.expect("at least one restart finished");
    Stratification::new(relabel(&labels))
}

/// Rows are units; columns are the top `d` left singular vectors scaled by
/// their singular values.
fn loadings(values: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let (n, t) = values.shape();
    let row_means = values.column_mean();
    let col_means = values.row_mean();
    let grand = values.mean();
    let centered = DMatrix::from_fn(n, t, |i, s| {
        values[(i, s)] - row_means[i] - col_means[s] + grand
    });
    let svd = thin_svd(&centered);
    let d = d.min(svd.singular_values.len());
    DMatrix::from_fn(n, d, |i, c| svd.u[(i, c)] * svd.singular_values[c])
}

fn sq_dist(points: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(c, x)| (points[(i, c)] - x).powi(2))
        .sum()
}

/// One k-means++ seeded run; `None` when a cluster empties out.
fn lloyd(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Option<(f64, Vec<usize>)> {
    let (n, d) = points.shape();
    let row = |i: usize| -> Vec<f64> { points.row(i).iter().copied().collect() };

    let mut centers = vec![row(rng.random_range(0..n))];
    while centers.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                centers
                    .iter()
                    .map(|c| sq_dist(points, i, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            weights
                .iter()
                .position(|&w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick));
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    sq_dist(points, i, &centers[a]).total_cmp(&sq_dist(points, i, &centers[b]))
                })
                .expect("k ≥ 1");
            if *label != nearest {
                *label = nearest;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut sizes = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sizes[l] += 1;
            for c in 0..d {
                sums[l][c] += points[(i, c)];
            }
        }
        if sizes.contains(&0) {
            return None;
        }
        for g in 0..k {
            centers[g] = sums[g].iter().map(|s| s / sizes[g] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points, i, &centers[l]))
        .sum();
    Some((inertia, labels))
}

/// Number clusters in order of first appearance.
fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = Vec::new();
    labels
        .iter()
        .map(|l| match map.iter().position(|m| m == l) {
            Some(p) => p,
            None => {
                map.push(*l);
                map.len() - 1
            }
        })
        .collect()
}

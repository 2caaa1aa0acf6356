use nalgebra::DMatrix;

use super::ObjectiveReport;
use crate::design::{DesignMatrix, FractionPath};
use crate::linalg::Projector;

const ACTIVE_TOL: f64 = 1e-12;

/// Windows `j = 1..=ℓ+1`, each covering periods `j ..= j + T − ℓ − 1`.
fn windows(t_total: usize, ell: usize) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> {
    let span = t_total - ell;
    (1..=ell + 1).map(move |j| (j, (j - 1)..(j - 1 + span)))
}

/// Sum over the `ℓ + 1` lag windows of the windowed quadratic objective.
/// Equals `−tr(Θ)/N` for a realized design.
pub fn carryover_trace_objective(path: &FractionPath, ell: usize) -> f64 {
    let w = path.as_slice();
    assert!(w.len() > ell, "need T > ℓ");
    let span = (w.len() - ell) as f64;
    windows(w.len(), ell)
        .map(|(j, range)| {
            let sum: f64 = w[range.clone()].iter().sum();
            let sq: f64 = w[range.clone()].iter().map(|x| x * x).sum();
            let linear: f64 = range
                .map(|i| {
                    let t = (i + 1) as f64;
                    (span - 1.0 + 2.0 * j as f64 - 2.0 * t) / span * w[i]
                })
                .sum();
            sq - sum * sum / span + 2.0 * linear
        })
        .sum()
}

/// Gradient of [`carryover_trace_objective`].
pub fn carryover_gradient(path: &FractionPath, ell: usize) -> Vec<f64> {
    let w = path.as_slice();
    let span = (w.len() - ell) as f64;
    let mut g = vec![0.0; w.len()];
    for (j, range) in windows(w.len(), ell) {
        let window_sum: f64 = w[range.clone()].iter().sum();
        for i in range {
            let t = (i + 1) as f64;
            let d = (span - 1.0 + 2.0 * j as f64 - 2.0 * t) / span;
            g[i] += 2.0 * (w[i] - window_sum / span + d);
        }
    }
    g
}

/// Weight of a unit that adopted `T + 1 − t` periods in, for the window pair
/// `(j, m)` with `j ≤ m`.
fn upsilon(t: usize, j: usize, m: usize, t_total: usize, ell: usize) -> f64 {
    let span = (t_total - ell) as f64;
    let ramp = |k: usize| -1.0 + 2.0 * (t as f64 - 1.0 - ell as f64 + k as f64) / span;
    if t + m <= ell + 1 {
        1.0
    } else if t + j <= ell + 1 {
        -ramp(m)
    } else if t + m <= t_total + 1 {
        ramp(m) * ramp(j)
    } else if t + j <= t_total + 1 {
        ramp(j)
    } else {
        1.0
    }
}

/// Relaxed `(ℓ+1)×(ℓ+1)` precision matrix of the carryover effects as a
/// function of the fraction path.
pub fn carryover_theta(path: &FractionPath, ell: usize, n_units: usize) -> DMatrix<f64> {
    let w = path.as_slice();
    let t_total = w.len();
    assert!(t_total > ell, "need T > ℓ");
    let span = t_total - ell;
    let n = n_units as f64;
    let window_sum = |j: usize| -> f64 { w[j - 1..j - 1 + span].iter().sum() };

    let mut theta = DMatrix::zeros(ell + 1, ell + 1);
    for j in 1..=ell + 1 {
        for m in j..=ell + 1 {
            let cross: f64 = (j..j + span).map(|t| w[t - 1] * w[t - 1 + m - j]).sum();
            let weights: f64 = (1..=t_total)
                .map(|t| {
                    let diff = upsilon(t_total + 1 - t, j, m, t_total, ell)
                        - upsilon(t_total - t, j, m, t_total, ell);
                    diff * w[t - 1]
                })
                .sum();
            let edge: f64 = (j..m).map(|t| w[t - 1] - w[span + t - 1]).sum();
            let value = -n
                * (cross - window_sum(j) * window_sum(m) / span as f64
                    + span as f64 / 2.0 * weights
                    - edge);
            theta[(j - 1, m - 1)] = value;
            theta[(m - 1, j - 1)] = value;
        }
    }
    theta
}

/// Exact precision matrix of a realized design's lag windows after removing
/// unit and period effects (iid errors, σ² = 1). Row `j` corresponds to the
/// window starting at period `j`.
pub fn carryover_precision(design: &DesignMatrix, ell: usize) -> DMatrix<f64> {
    let (n, t_total) = (design.n_units(), design.n_periods());
    assert!(t_total > ell, "need T > ℓ");
    let span = t_total - ell;
    let projector = Projector::new(n, None, None).expect("intercept-only basis");
    let z = design.to_f64();
    let residuals: Vec<DMatrix<f64>> = (0..=ell)
        .map(|j| projector.residual(&z.columns(j, span).into_owned()))
        .collect();
    DMatrix::from_fn(ell + 1, ell + 1, |a, b| residuals[a].dot(&residuals[b]))
}

/// Check first-order optimality of `path` for the trace program over
/// monotone paths in `[−1, 1]`. Multipliers of active bounds and ties are
/// recovered block by block in increasing `t`.
pub fn kkt_check(path: &FractionPath, ell: usize) -> ObjectiveReport {
    let w = path.as_slice();
    let g = carryover_gradient(path, ell);
    let mut residual: f64 = 0.0;
    let mut min_multiplier: Option<f64> = None;
    let record = |m: f64, min: &mut Option<f64>| {
        *min = Some(min.map_or(m, |x: f64| x.min(m)));
    };

    let mut start = 0;
    while start < w.len() {
        let mut end = start;
        while end + 1 < w.len() && (w[end + 1] - w[end]).abs() <= ACTIVE_TOL {
            end += 1;
        }
        let block = &g[start..=end];
        let value = w[start];
        let last = block.len() - 1;
        if value <= -1.0 + ACTIVE_TOL {
            // Lower bound: smallest tie multipliers keep the final λ largest.
            let mut tie = 0.0;
            for &gk in &block[..last] {
                let next = f64::max(0.0, tie - gk);
                record(gk + next - tie, &mut min_multiplier);
                record(next, &mut min_multiplier);
                tie = next;
            }
            let lambda = block[last] - tie;
            record(lambda, &mut min_multiplier);
            residual = residual.max(-lambda);
        } else if value >= 1.0 - ACTIVE_TOL {
            let mut tie = 0.0;
            for &gk in &block[..last] {
                let next = tie - gk;
                if next < 0.0 {
                    residual = residual.max(-next);
                }
                let next = next.max(0.0);
                record(next, &mut min_multiplier);
                tie = next;
            }
            let kappa = tie - block[last];
            record(kappa, &mut min_multiplier);
            residual = residual.max(-kappa);
        } else {
            let mut tie = 0.0;
            for &gk in &block[..last] {
                let next = tie - gk;
                if last > 0 {
                    record(next, &mut min_multiplier);
                }
                residual = residual.max(-next);
                tie = next;
            }
            residual = residual.max((block[last] - tie).abs());
        }
        start = end + 1;
    }

    ObjectiveReport {
        value: carryover_trace_objective(path, ell),
        gradient_norm: g.iter().map(|x| x * x).sum::<f64>().sqrt(),
        kkt_residual: Some(residual),
        min_multiplier,
    }
}

//! Exhaustive search over treated-count sequences for small panels. Units
//! are exchangeable within a stratum (identical covariates and loadings),
//! so only per-stratum counts matter. Every candidate is scored with the
//! fully materialized fixed-effect regressor matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CovariateSpec, ErrorCovarianceSpec};
use crate::design::{DesignMatrix, Stratification};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;

pub const DEFAULT_SEARCH_LIMIT: u128 = 1_000_000;

const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OracleProblem<'a> {
    pub n_units: usize,
    pub n_periods: usize,
    pub cov: &'a ErrorCovarianceSpec,
    pub covars: &'a CovariateSpec,
    pub ell: usize,
    pub limit: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    /// Optimal treated counts, one sequence per stratum.
    pub counts: Vec<Vec<usize>>,
    pub strata: Stratification,
    /// Minimized criterion: the effect variance when `ℓ = 0`, otherwise
    /// `−tr(precision)/N`.
    pub value: f64,
    /// Precision of the optimum (its trace when `ℓ > 0`).
    pub precision: f64,
    pub candidates: u64,
}

/// Optimal counts for `N` exchangeable-up-to-loadings units with no
/// observed covariates.
pub fn brute_force_optimum(
    n_units: usize,
    n_periods: usize,
    cov: &ErrorCovarianceSpec,
    ell: usize,
) -> Result<OracleResult> {
    brute_force_search(&OracleProblem {
        n_units,
        n_periods,
        cov,
        covars: &CovariateSpec::none(),
        ell,
        limit: DEFAULT_SEARCH_LIMIT,
    })
}

pub fn brute_force_search(problem: &OracleProblem<'_>) -> Result<OracleResult> {
    let (n, t_total, ell) = (problem.n_units, problem.n_periods, problem.ell);
    if n < 2 || t_total < 2 || t_total <= ell + 1 {
        return Err(Error::invalid(format!(
            "oracle needs N ≥ 2 and T ≥ ℓ + 2, got N = {n}, T = {t_total}, ℓ = {ell}"
        )));
    }
    let strata = unit_strata(n, problem.cov, problem.covars)?;
    let members: Vec<Vec<usize>> = (0..strata.n_groups()).map(|g| strata.members(g)).collect();

    let size: u128 = strata
        .group_sizes()
        .iter()
        .map(|&s| binomial(s + t_total, t_total))
        .product();
    if size > problem.limit {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: problem.limit,
        });
    }

    let sequences: Vec<Vec<Vec<usize>>> = strata
        .group_sizes()
        .iter()
        .map(|&s| nondecreasing_sequences(s, t_total))
        .collect();
    let scorer = Scorer::new(n, t_total, ell, problem.cov, problem.covars)?;

    let decode = |mut idx: u64| -> Vec<&Vec<usize>> {
        let mut picked = vec![&sequences[0][0]; sequences.len()];
        for g in (0..sequences.len()).rev() {
            let radix = sequences[g].len() as u64;
            picked[g] = &sequences[g][(idx % radix) as usize];
            idx /= radix;
        }
        picked
    };

    let total = size as u64;
    let scores: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| scorer.score(&assemble(n, t_total, &members, &decode(idx))))
        .collect();
    // Optima come in exact tie families (e.g. shifting every count at T = 2),
    // separated only by round-off. Prefer the member closest to its own
    // reversal-negation image, then the lexicographically first.
    let best_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best_score - TIE_TOL * best_score.abs().max(1.0);
    let sizes = strata.group_sizes();
    let imbalance = |idx: u64| -> i64 {
        decode(idx)
            .iter()
            .zip(sizes)
            .map(|(counts, &size)| {
                counts
                    .iter()
                    .map(|&c| 2 * c as i64 - size as i64)
                    .sum::<i64>()
                    .abs()
            })
            .sum()
    };
    let best_idx = (0..total)
        .filter(|&idx| scores[idx as usize] >= cutoff)
        .min_by_key(|&idx| (imbalance(idx), idx))
        .expect("search space is nonempty");
    let best_score = scores[best_idx as usize];

    let counts: Vec<Vec<usize>> = decode(best_idx).into_iter().cloned().collect();
    let value = if ell == 0 {
        1.0 / best_score
    } else {
        -best_score / n as f64
    };
    Ok(OracleResult {
        counts,
        strata,
        value,
        precision: best_score,
        candidates: total,
    })
}

/// Scalar precision of the ±1 coefficient computed from the explicit
/// `NT × (N + T + rT)` regressor matrix and the full error covariance.
pub fn explicit_precision(
    design: &DesignMatrix,
    cov: &ErrorCovarianceSpec,
    covars: &CovariateSpec,
) -> Result<f64> {
    let scorer = Scorer::new(design.n_units(), design.n_periods(), 0, cov, covars)?;
    let z = DVector::from_column_slice(design.to_f64().as_slice());
    let precision = z.dot(&(&scorer.annihilator * &z));
    let scale = z.dot(&(&scorer.whitening_gram * &z));
    if precision <= 1e-9 * scale {
        return Err(Error::NotIdentified(
            "the design lies in the span of the fixed effects".into(),
        ));
    }
    Ok(precision)
}

/// Strata are maximal groups of units with identical covariate and loading rows.
fn unit_strata(
    n: usize,
    cov: &ErrorCovarianceSpec,
    covars: &CovariateSpec,
) -> Result<Stratification> {
    let keys: Vec<Vec<u64>> = (0..n)
        .map(|i| {
            let mut key = Vec::new();
            if let Some(x) = covars.matrix() {
                key.extend(x.row(i).iter().map(|v| v.to_bits()));
            }
            if let Some(u) = cov.loadings() {
                key.extend(u.row(i).iter().map(|v| v.to_bits()));
            }
            key
        })
        .collect();
    Stratification::from_keys(&keys)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn nondecreasing_sequences(max: usize, len: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, max: usize, len: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        let lo = prefix.last().copied().unwrap_or(0);
        for c in lo..=max {
            prefix.push(c);
            extend(prefix, max, len, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(len), max, len, &mut out);
    out
}

fn assemble(
    n: usize,
    t_total: usize,
    members: &[Vec<usize>],
    counts: &[&Vec<usize>],
) -> DMatrix<f64> {
    let mut z = DMatrix::from_element(n, t_total, -1.0);
    for (units, c) in members.iter().zip(counts) {
        for (rank, &i) in units.iter().enumerate() {
            for t in 0..t_total {
                if rank < c[t] {
                    z[(i, t)] = 1.0;
                }
            }
        }
    }
    z
}

struct Scorer {
    n: usize,
    ell: usize,
    span: usize,
    /// `Wᵀ (I − P_{WΓ}) W` with `W` the inverse Cholesky factor of `Σ_e`.
    annihilator: DMatrix<f64>,
    whitening_gram: DMatrix<f64>,
}

impl Scorer {
    fn new(
        n: usize,
        t_total: usize,
        ell: usize,
        cov: &ErrorCovarianceSpec,
        covars: &CovariateSpec,
    ) -> Result<Self> {
        let span = t_total - ell;
        let r = covars.n_covariates();
        let rows = n * span;
        let mut gamma = DMatrix::zeros(rows, n + span + r * span);
        for s in 0..span {
            for i in 0..n {
                let row = s * n + i;
                gamma[(row, i)] = 1.0;
                gamma[(row, n + s)] = 1.0;
                if let Some(x) = covars.matrix() {
                    for k in 0..r {
                        gamma[(row, n + span + k * span + s)] = x[(i, k)];
                    }
                }
            }
        }

        let block = cov.period_covariance(n)?;
        let l_inv = block
            .cholesky()
            .ok_or_else(|| Error::Numerical("error covariance is not positive definite".into()))?
            .l()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular covariance factor".into()))?;
        let mut w = DMatrix::zeros(rows, rows);
        for s in 0..span {
            w.view_mut((s * n, s * n), (n, n)).copy_from(&l_inv);
        }

        let wg = &w * gamma;
        let svd = thin_svd(&wg);
        let u = svd.u;
        let cutoff = 1e-10 * svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > cutoff)
            .collect();
        let q = u.select_columns(&keep);
        let residual_maker = DMatrix::identity(rows, rows) - &q * q.transpose();
        let annihilator = w.transpose() * residual_maker * &w;
        let whitening_gram = w.transpose() * &w;
        Ok(Scorer {
            n,
            ell,
            span,
            annihilator,
            whitening_gram,
        })
    }

    /// Precision for `ℓ = 0`, trace of the precision matrix otherwise.
    fn score(&self, z: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for j in 0..=self.ell {
            let window = z.columns(j, self.span);
            let v = DVector::from_iterator(self.n * self.span, window.iter().copied());
            total += v.dot(&(&self.annihilator * &v));
        }
        total
    }
}

use nalgebra::{DMatrix, SymmetricEigen};

use super::{check_shapes, fitted_outcomes, EstimateResult, Method, Regression};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::objective::CovariateSpec;
use crate::panel::PanelMatrix;

/// Per-period error covariance estimated from first-stage residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub omega: DMatrix<f64>,
    /// A ridge (or, for residuals that vanish, the identity) was needed to
    /// make `omega` positive definite.
    pub ridge_applied: bool,
}

/// Top-`k0` eigenpart of `ê êᵀ / T'` plus the diagonal of the remainder.
pub fn estimate_covariance(residuals: &DMatrix<f64>, k0: usize) -> Result<CovarianceEstimate> {
    let (n, t) = residuals.shape();
    if k0 >= n.min(t) {
        return Err(Error::invalid(format!(
            "k0 = {k0} must be below min(N, T) = {}",
            n.min(t)
        )));
    }
    let sample = residuals * residuals.transpose() / t as f64;
    let trace = sample.trace();
    if trace <= 1e-300 || !trace.is_finite() {
        return Ok(CovarianceEstimate {
            omega: DMatrix::identity(n, n),
            ridge_applied: true,
        });
    }

    let eig = SymmetricEigen::new(sample.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut low_rank = DMatrix::zeros(n, n);
    for &k in order.iter().take(k0) {
        let v = eig.eigenvectors.column(k);
        low_rank += v * v.transpose() * eig.eigenvalues[k].max(0.0);
    }
    let mut omega = low_rank.clone();
    let remainder = sample - low_rank;
    for i in 0..n {
        omega[(i, i)] += remainder[(i, i)];
    }
    omega = (&omega + omega.transpose()) * 0.5;

    let mut ridge_applied = false;
    if omega.clone().cholesky().is_none() {
        let eps = 1e-8 * trace / n as f64;
        let mut lift = eps;
        loop {
            let lifted = &omega + DMatrix::identity(n, n) * lift;
            if lifted.clone().cholesky().is_some() {
                omega = lifted;
                break;
            }
            lift *= 10.0;
            if lift > trace {
                return Err(Error::Numerical(
                    "estimated covariance stays indefinite after ridge lift".into(),
                ));
            }
        }
        ridge_applied = true;
    }
    Ok(CovarianceEstimate {
        omega,
        ridge_applied,
    })
}

/// Two-stage feasible GLS: OLS residuals give the covariance estimate, which
/// then whitens every fitted period.
pub fn estimate_feasible_gls(
    panel: &PanelMatrix,
    design: &DesignMatrix,
    ell: usize,
    covars: &CovariateSpec,
    k0: usize,
) -> Result<EstimateResult> {
    check_shapes(panel, design)?;
    let y = fitted_outcomes(panel, ell);
    let first = Regression::new(design, ell, covars, None)?;
    let stage1 = first.fit(&y);
    // Residuals at rounding level carry no covariance information.
    let cov = if stage1.residual.norm() <= 1e-12 * y.norm().max(1.0) {
        estimate_covariance(&DMatrix::zeros(y.nrows(), y.ncols()), k0)?
    } else {
        estimate_covariance(&stage1.residual, k0)?
    };

    let second = Regression::new(design, ell, covars, Some(&cov.omega))?;
    let fit = second.fit(&y);
    let mut result = second.result(&fit, Method::Gls);
    result.diagnostics.ridge_applied = cov.ridge_applied;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::optimal_design;
    use crate::estimators::estimate_ols;
    use crate::estimators::tests::two_way;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, t: usize, scale: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, t, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
    }

    #[test]
    fn rejects_large_k0() {
        assert!(estimate_covariance(&DMatrix::zeros(5, 3), 3).is_err());
    }

    #[test]
    fn zero_residuals_fall_back_to_identity() {
        let c = estimate_covariance(&DMatrix::zeros(5, 4), 1).unwrap();
        assert!(c.ridge_applied);
        assert_eq!(c.omega, DMatrix::identity(5, 5));
    }

    #[test]
    fn k0_zero_keeps_only_the_diagonal() {
        let e = noise(6, 8, 1.0, 3);
        let c = estimate_covariance(&e, 0).unwrap();
        let s = &e * e.transpose() / 8.0;
        assert_eq!(c.omega, DMatrix::from_diagonal(&s.diagonal()));
    }

    #[test]
    fn estimate_is_symmetric_positive_definite() {
        let e = noise(10, 4, 1.0, 5);
        for k0 in 0..4 {
            let c = estimate_covariance(&e, k0).unwrap();
            assert_eq!(c.omega, c.omega.transpose());
            assert!(c.omega.clone().cholesky().is_some());
        }
    }

    #[test]
    fn noiseless_recovery() {
        let d = optimal_design(10, 6, 2).unwrap();
        let (_, _, base) = two_way(10, 6, 6);
        let panel = PanelMatrix::from_values(base + d.indicator() * 0.4).unwrap();
        let r = estimate_feasible_gls(&panel, &d, 0, &CovariateSpec::none(), 1).unwrap();
        assert!((r.taus[0] - 0.4).abs() < 1e-8);
        assert!(r.diagnostics.ridge_applied);
    }

    #[test]
    fn approaches_ols_without_factors_as_noise_vanishes() {
        let d = optimal_design(12, 6, 4).unwrap();
        let (_, _, base) = two_way(12, 6, 7);
        let mut gaps = Vec::new();
        for scale in [1e-2, 1e-4, 1e-6] {
            let y = &base + d.indicator() * 0.1 + noise(12, 6, scale, 9);
            let panel = PanelMatrix::from_values(y).unwrap();
            let none = CovariateSpec::none();
            let ols = estimate_ols(&panel, &d, 0, &none).unwrap();
            let gls = estimate_feasible_gls(&panel, &d, 0, &none, 1).unwrap();
            gaps.push((ols.taus[0] - gls.taus[0]).abs());
        }
        assert!(gaps[2] < 1e-5, "{gaps:?}");
        assert!(gaps[2] < gaps[0]);
    }
}

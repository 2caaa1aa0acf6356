//! Projection off the fixed-effect space `{a 1ᵀ + G Bᵀ}`, `G = [1 X]`, after
//! whitening every period by the same covariance factor.
//!
//! For a balanced panel the residual of `W` is `(I − Q Qᵀ) L⁻¹ W (I − 11ᵀ/T)`
//! where `Q` is an orthonormal basis of `L⁻¹ G`, so the full `NT × (N+T)`
//! regressor matrix never has to be built.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct Projector {
    chol_lower: Option<DMatrix<f64>>,
    basis: DMatrix<f64>,
    fe_basis: DMatrix<f64>,
}

impl Projector {
    pub(crate) fn new(
        n_units: usize,
        covariates: Option<&DMatrix<f64>>,
        covariance: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let r = covariates.map_or(0, |x| x.ncols());
        if let Some(x) = covariates {
            if x.nrows() != n_units {
                return Err(Error::Dimension(format!(
                    "covariates have {} rows, panel has {n_units} units",
                    x.nrows()
                )));
            }
        }
        let mut fe_basis = DMatrix::from_element(n_units, 1 + r, 1.0);
        if let Some(x) = covariates {
            fe_basis.columns_mut(1, r).copy_from(x);
        }

        let chol_lower = match covariance {
            None => None,
            Some(omega) => {
                if omega.shape() != (n_units, n_units) {
                    return Err(Error::Dimension("covariance block must be N×N".into()));
                }
                let chol = omega.clone().cholesky().ok_or_else(|| {
                    Error::Numerical("period covariance is not positive definite".into())
                })?;
                Some(chol.l())
            }
        };

        let whitened = match &chol_lower {
            None => fe_basis.clone(),
            Some(l) => solve_lower(l, &fe_basis),
        };
        let qr = whitened.clone().qr();
        let diag = qr.r().diagonal().map(f64::abs);
        let scale = diag.max();
        if diag.iter().any(|&d| d <= 1e-10 * scale.max(1.0)) || n_units <= 1 + r {
            return Err(Error::NotIdentified(
                "covariates are collinear with the unit intercept".into(),
            ));
        }
        Ok(Projector {
            chol_lower,
            basis: qr.q(),
            fe_basis,
        })
    }

    pub(crate) fn whiten(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol_lower {
            None => w.clone(),
            Some(l) => solve_lower(l, w),
        }
    }

    pub(crate) fn unwhiten(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol_lower {
            None => w.clone(),
            Some(l) => l * w,
        }
    }

    pub(crate) fn residual_whitened(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = w - &self.basis * (self.basis.transpose() * w);
        for mut row in r.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        r
    }

    pub(crate) fn residual(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.residual_whitened(&self.whiten(w))
    }

    /// Split a matrix lying in the fixed-effect space into unit effects,
    /// period effects and covariate slopes. The last `1 + r` unit effects
    /// are pinned to zero; if that block of covariates is singular the unit
    /// effects are made orthogonal to `[1 X]` instead.
    pub(crate) fn decompose(
        &self,
        fitted: &DMatrix<f64>,
    ) -> (DVector<f64>, DVector<f64>, Option<DMatrix<f64>>) {
        let (n, t) = fitted.shape();
        let g = &self.fe_basis;
        let p = g.ncols();
        let gram = (g.transpose() * g)
            .cholesky()
            .expect("checked full rank at construction");

        let mut centered = fitted.clone();
        for mut row in centered.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        // centered = G B_cᵀ, and fitted = a 1ᵀ + G (B_c + b0 1ᵀ)ᵀ.
        let bc = gram.solve(&(g.transpose() * &centered));
        let base = fitted - g * &bc;
        let a0 = base.column_mean();

        let tail = g.rows(n - p, p).into_owned();
        let b0 = tail
            .lu()
            .solve(&a0.rows(n - p, p).into_owned())
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .unwrap_or_else(|| gram.solve(&(g.transpose() * &a0)));
        let alpha = &a0 - g * &b0;
        let coefs = bc + &b0 * DVector::from_element(t, 1.0).transpose();

        let beta = coefs.row(0).transpose();
        let theta = (p > 1).then(|| coefs.rows(1, p - 1).transpose());
        (alpha, beta, theta)
    }
}

fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

/// Thin SVD `M = U diag(s) Vᵀ` with singular values in nonincreasing order.
///
/// nalgebra's bidiagonal SVD can return factors that do not reconstruct an
/// exactly rank-deficient input (errors near 1e−5 relative on double-demeaned
/// panels), so every decomposition goes through faer instead.
#[derive(Debug, Clone)]
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub(crate) fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let (n, t) = m.shape();
    let k = n.min(t);
    if k == 0 {
        return ThinSvd {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, t),
        };
    }
    let svd = faer::Mat::<f64>::from_fn(n, t, |i, j| m[(i, j)])
        .thin_svd()
        .expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    ThinSvd {
        u: DMatrix::from_fn(n, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, t, |i, j| v[(j, i)]),
    }
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    thin_svd(m).singular_values
}

/// Minimum-norm least squares through an SVD. Returns the solution and the
/// right singular vectors whose singular values fell below
/// `1e−10 · σ_max` (or below `1e−10 · scale` when every direction is
/// negligible relative to the unprojected regressors).
pub(crate) fn least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    scale: f64,
) -> (DVector<f64>, Vec<DVector<f64>>) {
    let svd = thin_svd(x);
    let (u, v_t) = (&svd.u, &svd.v_t);
    let sigma_max = svd.singular_values.max();
    let cutoff = if sigma_max <= 1e-10 * scale {
        f64::INFINITY
    } else {
        1e-10 * sigma_max
    };

    let mut beta = DVector::zeros(x.ncols());
    let mut null = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(k).transpose();
        if s > cutoff {
            let coef = u.column(k).dot(y) / s;
            beta += v * coef;
        } else {
            null.push(v);
        }
    }
    (beta, null)
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_shapes, fitted_outcomes, EstimateResult, Method, Regression};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::{singular_values, thin_svd};
use crate::objective::CovariateSpec;
use crate::panel::PanelMatrix;

/// Settings for the alternating low-rank / least-squares fit. `mu` is the
/// singular-value threshold applied to the unscaled residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrmeConfig {
    pub k0: usize,
    pub mu: f64,
    #[serde(default = "default_tol")]
    pub tol_tau: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    500
}

impl LrmeConfig {
    pub fn new(k0: usize, mu: f64) -> Result<Self> {
        let cfg = LrmeConfig {
            k0,
            mu,
            tol_tau: default_tol(),
            max_iter: default_max_iter(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tolerance(mut self, tol_tau: f64, max_iter: usize) -> Result<Self> {
        self.tol_tau = tol_tau;
        self.max_iter = max_iter;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0 == 0 {
            return Err(Error::invalid("k0 must be at least 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!(
                "mu must be finite and ≥ 0, got {}",
                self.mu
            )));
        }
        if self.tol_tau.is_nan() || self.tol_tau <= 0.0 {
            return Err(Error::invalid("tol_tau must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

struct Shrunk {
    matrix: DMatrix<f64>,
    nuclear_norm: f64,
    rank: usize,
}

fn shrink(m: &DMatrix<f64>, k0: usize, mu: f64) -> Shrunk {
    let (n, t) = m.shape();
    let svd = thin_svd(m);

    let mut matrix = DMatrix::zeros(n, t);
    let mut nuclear_norm = 0.0;
    let mut rank = 0;
    for (k, &sigma) in svd.singular_values.iter().enumerate().take(k0) {
        let s = sigma - mu;
        if s <= 0.0 {
            break;
        }
        matrix += svd.u.column(k) * svd.v_t.row(k) * s;
        nuclear_norm += s;
        rank += 1;
    }
    Shrunk {
        matrix,
        nuclear_norm,
        rank,
    }
}

/// Best rank-`k0` approximation with singular values soft-thresholded by `mu`.
pub fn soft_threshold_svd(m: &DMatrix<f64>, k0: usize, mu: f64) -> DMatrix<f64> {
    shrink(m, k0, mu).matrix
}

/// `½‖R‖²_F + μ‖L‖_*` for residual `R = Y − F − Σ τ D − L`.
pub fn lrme_objective(residual: &DMatrix<f64>, lhat: &DMatrix<f64>, mu: f64) -> f64 {
    let nuclear: f64 = singular_values(lhat).iter().sum();
    0.5 * residual.norm_squared() + mu * nuclear
}

/// Alternates a thresholded SVD of the current residual with a two-way
/// fixed-effect refit on `Y − L̂`, starting from OLS. Stops once no effect
/// moves by more than `tol_tau`; otherwise returns the last iterate with
/// `converged = false`.
pub fn estimate_lrme(
    panel: &PanelMatrix,
    design: &DesignMatrix,
    ell: usize,
    cfg: &LrmeConfig,
) -> Result<EstimateResult> {
    cfg.validate()?;
    check_shapes(panel, design)?;
    let regression = Regression::new(design, ell, &CovariateSpec::none(), None)?;
    let y = fitted_outcomes(panel, ell);

    let mut fit = regression.fit(&y);
    let mut lhat = DMatrix::zeros(y.nrows(), y.ncols());
    let mut rank = 0;
    let mut path = vec![0.5 * fit.residual.norm_squared()];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let current = &fit.residual + &lhat;
        let shrunk = shrink(&current, cfg.k0, cfg.mu);
        let next = regression.fit(&(&y - &shrunk.matrix));
        let objective = 0.5 * next.residual.norm_squared() + cfg.mu * shrunk.nuclear_norm;
        let previous = *path.last().expect("path starts non-empty");
        debug_assert!(
            objective <= previous + 1e-12 * previous.max(1.0),
            "objective rose from {previous} to {objective}"
        );
        path.push(objective);

        let delta = (&next.taus - &fit.taus).amax();
        fit = next;
        lhat = shrunk.matrix;
        rank = shrunk.rank;
        if delta <= cfg.tol_tau {
            converged = true;
            break;
        }
    }

    let mut result = regression.result(&fit, Method::Lrme);
    result.lhat = Some(
        lhat.row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
    );
    result.iterations = iterations;
    result.converged = converged;
    result.diagnostics.objective_path = path;
    result.diagnostics.lhat_rank = rank;
    debug_assert!(rank <= cfg.k0);
    Ok(result)
}

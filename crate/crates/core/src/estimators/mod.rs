//! Treatment-effect estimators for a balanced panel and a known design.
//!
//! Effects are reported on the treated-minus-control scale: the regressor is
//! the 0/1 indicator of treatment, so data built by adding `τ` to treated
//! cells is recovered as `τ̂ = τ`. With `ℓ` carryover lags the fit stacks
//! periods `ℓ+1..T` and `taus[l]` is the coefficient on treatment `l`
//! periods earlier.

mod gls;
mod lrme;

pub use gls::{estimate_covariance, estimate_feasible_gls, CovarianceEstimate};
pub use lrme::{estimate_lrme, lrme_objective, soft_threshold_svd, LrmeConfig};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, thin_svd, Projector};
use crate::objective::CovariateSpec;
use crate::panel::PanelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Gls,
    Lrme,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ols => "ols",
            Method::Gls => "gls",
            Method::Lrme => "lrme",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Method::Ols),
            "gls" => Ok(Method::Gls),
            "lrme" => Ok(Method::Lrme),
            other => Err(Error::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

/// An estimator together with its tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Estimator {
    Ols,
    Gls { k0: usize },
    Lrme(LrmeConfig),
}

impl Estimator {
    pub fn method(&self) -> Method {
        match self {
            Estimator::Ols => Method::Ols,
            Estimator::Gls { .. } => Method::Gls,
            Estimator::Lrme(_) => Method::Lrme,
        }
    }

    pub fn estimate(
        &self,
        panel: &PanelMatrix,
        design: &DesignMatrix,
        ell: usize,
    ) -> Result<EstimateResult> {
        let none = CovariateSpec::none();
        match self {
            Estimator::Ols => estimate_ols(panel, design, ell, &none),
            Estimator::Gls { k0 } => estimate_feasible_gls(panel, design, ell, &none, *k0),
            Estimator::Lrme(cfg) => estimate_lrme(panel, design, ell, cfg),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Ols => write!(f, "ols"),
            Estimator::Gls { k0 } => write!(f, "gls(k0={k0})"),
            Estimator::Lrme(cfg) => write!(f, "lrme(k0={}, mu={})", cfg.k0, cfg.mu),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// 1-based index of the first period entering the fit.
    pub first_fitted_period: usize,
    /// Feasible GLS had to lift the estimated covariance to make it
    /// positive definite.
    pub ridge_applied: bool,
    /// LRME objective after initialization and after every iteration.
    pub objective_path: Vec<f64>,
    pub lhat_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub taus: Vec<f64>,
    /// Unit effects; the last `1 + r` are pinned to zero.
    pub alpha: Vec<f64>,
    /// Period effects for the fitted periods.
    pub beta: Vec<f64>,
    /// Covariate slopes, one row per fitted period.
    pub theta: Option<Vec<Vec<f64>>>,
    /// Low-rank component over the fitted periods, row per unit.
    pub lhat: Option<Vec<Vec<f64>>>,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Least-squares fit of `Y = fixed effects + Σ_l τ_l D_{·, t−l}` on the
/// fitted periods, after whitening each period by a common covariance.
pub(crate) struct Regression {
    projector: Projector,
    ell: usize,
    whitened_regressors: Vec<DMatrix<f64>>,
    residual_regressors: DMatrix<f64>,
    scale: f64,
}

pub(crate) struct Fit {
    pub taus: DVector<f64>,
    /// Part of the outcome explained by the fixed effects (unwhitened).
    pub nuisance: DMatrix<f64>,
    /// Unwhitened residual.
    pub residual: DMatrix<f64>,
}

impl Regression {
    pub(crate) fn new(
        design: &DesignMatrix,
        ell: usize,
        covars: &CovariateSpec,
        covariance: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let (n, t_total) = (design.n_units(), design.n_periods());
        if t_total < ell + 2 {
            return Err(Error::invalid(format!(
                "need at least ℓ + 2 = {} periods, got {t_total}",
                ell + 2
            )));
        }
        let span = t_total - ell;
        let projector = Projector::new(n, covars.matrix(), covariance)?;
        let indicator = design.indicator();
        let whitened_regressors: Vec<DMatrix<f64>> = (0..=ell)
            .map(|lag| projector.whiten(&indicator.columns(ell - lag, span).into_owned()))
            .collect();

        let mut residual_regressors = DMatrix::zeros(n * span, ell + 1);
        let mut scale: f64 = 0.0;
        for (lag, w) in whitened_regressors.iter().enumerate() {
            let r = projector.residual_whitened(w);
            residual_regressors.set_column(lag, &DVector::from_column_slice(r.as_slice()));
            scale = scale.max(w.norm());
        }

        let svd = thin_svd(&residual_regressors);
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        if sigma_max <= 1e-10 * scale || sigma_min <= 1e-10 * sigma_max {
            let v_t = &svd.v_t;
            let directions: Vec<String> = (0..svd.singular_values.len())
                .filter(|&k| {
                    svd.singular_values[k] <= 1e-10 * sigma_max || sigma_max <= 1e-10 * scale
                })
                .map(|k| {
                    let v: Vec<String> = v_t.row(k).iter().map(|x| format!("{x:.3}")).collect();
                    format!("[{}]", v.join(", "))
                })
                .collect();
            return Err(Error::NotIdentified(format!(
                "treatment regressors collinear with the fixed effects along τ direction(s) {}",
                directions.join(", ")
            )));
        }

        Ok(Regression {
            projector,
            ell,
            whitened_regressors,
            residual_regressors,
            scale,
        })
    }

    /// `y` covers the fitted periods only.
    pub(crate) fn fit(&self, y: &DMatrix<f64>) -> Fit {
        let y_star = self.projector.whiten(y);
        let r_y = self.projector.residual_whitened(&y_star);
        let (taus, _) = least_squares(
            &self.residual_regressors,
            &DVector::from_column_slice(r_y.as_slice()),
            self.scale,
        );
        let mut explained = DMatrix::zeros(y.nrows(), y.ncols());
        let mut residual_star = r_y;
        for (lag, w) in self.whitened_regressors.iter().enumerate() {
            explained += w * taus[lag];
            residual_star -= self.projector.residual_whitened(w) * taus[lag];
        }
        let nuisance_star = y_star - explained - &residual_star;
        Fit {
            taus,
            nuisance: self.projector.unwhiten(&nuisance_star),
            residual: self.projector.unwhiten(&residual_star),
        }
    }

    pub(crate) fn result(&self, fit: &Fit, method: Method) -> EstimateResult {
        let (alpha, beta, theta) = self.projector.decompose(&fit.nuisance);
        EstimateResult {
            taus: fit.taus.iter().copied().collect(),
            alpha: alpha.iter().copied().collect(),
            beta: beta.iter().copied().collect(),
            theta: theta.as_ref().map(rows_of),
            lhat: None,
            method,
            iterations: 1,
            converged: true,
            diagnostics: Diagnostics {
                first_fitted_period: self.ell + 1,
                ..Diagnostics::default()
            },
        }
    }
}

pub(crate) fn check_shapes(panel: &PanelMatrix, design: &DesignMatrix) -> Result<()> {
    if panel.values().shape() != (design.n_units(), design.n_periods()) {
        return Err(Error::Dimension(format!(
            "panel is {}×{}, design is {}×{}",
            panel.n_units(),
            panel.n_periods(),
            design.n_units(),
            design.n_periods()
        )));
    }
    Ok(())
}

pub(crate) fn fitted_outcomes(panel: &PanelMatrix, ell: usize) -> DMatrix<f64> {
    panel
        .values()
        .columns(ell, panel.n_periods() - ell)
        .into_owned()
}

/// Two-way fixed-effect least squares, optionally with covariate-by-period
/// effects.
pub fn estimate_ols(
    panel: &PanelMatrix,
    design: &DesignMatrix,
    ell: usize,
    covars: &CovariateSpec,
) -> Result<EstimateResult> {
    check_shapes(panel, design)?;
    let regression = Regression::new(design, ell, covars, None)?;
    let fit = regression.fit(&fitted_outcomes(panel, ell));
    Ok(regression.result(&fit, Method::Ols))
}

//! Staggered-rollout experiment design and panel treatment-effect estimation.
//!
//! The crate follows a multi-period experiment from design to analysis:
//!
//! * [`design`]: optimal fractions of treated units per period, their rounding
//!   and realization as ±1 matrices, and benchmark designs;
//! * [`estimators`]: two-way fixed-effect OLS, feasible GLS and low-rank
//!   matrix estimation of direct and carryover effects;
//! * [`tuner`] and [`harness`]: design search and hyperparameter selection on
//!   historical control data, and end-to-end synthetic experiments.
//!
//! [`objective`] holds the exact variance formulas the designs optimize and
//! [`io`] the CSV forms of designs, paths and covariates.
//!
//! ```
//! use rollout::estimators::estimate_ols;
//! use rollout::panel::apply_synthetic_treatment;
//! use rollout::{optimal_design, CovariateSpec, PanelMatrix, SyntheticEffect};
//! use nalgebra::DMatrix;
//!
//! let design = optimal_design(10, 5, 42)?;
//! let control = PanelMatrix::from_values(DMatrix::from_fn(10, 5, |i, t| (i + 2 * t) as f64))?;
//! let treated = apply_synthetic_treatment(&control, &design, &SyntheticEffect::direct(-0.3))?;
//! let fit = estimate_ols(&treated, &design, 0, &CovariateSpec::none())?;
//! assert!((fit.taus[0] + 0.3).abs() < 1e-10);
//! # Ok::<(), rollout::Error>(())
//! ```

pub mod design;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod objective;
pub mod panel;
pub mod tuner;

mod linalg;

pub use design::{
    optimal_design, optimal_linear_path, realize_design, round_counts, stratified_design,
    DesignMatrix, FractionPath, Regime, Stratification,
};
pub use error::{Error, Result};
pub use estimators::{EstimateResult, Estimator, LrmeConfig, Method};
pub use harness::{
    DesignSpec, ExperimentConfig, ExperimentReport, MethodSpec, ReportFormat, SyntheticModel,
};
pub use objective::{CovariateSpec, ErrorCovarianceSpec, ObjectiveReport};
pub use panel::{BlockSplit, EffectKind, PanelMatrix, SyntheticEffect};
pub use tuner::{MuSearch, SaConfig, SearchResult, Selection};

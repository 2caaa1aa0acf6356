use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `α_i + β_t + ε_it`.
    Twoway,
    /// Adds `u_iᵀ v_t` with `k` latent factors.
    Factor,
}

/// Data-generating process for synthetic control panels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub kind: ModelKind,
    pub k: usize,
    pub sigma: f64,
}

impl SyntheticModel {
    pub fn twoway(sigma: f64) -> Self {
        SyntheticModel {
            kind: ModelKind::Twoway,
            k: 0,
            sigma,
        }
    }

    pub fn factor(k: usize, sigma: f64) -> Self {
        SyntheticModel {
            kind: ModelKind::Factor,
            k,
            sigma,
        }
    }

    fn factors(&self) -> usize {
        match self.kind {
            ModelKind::Twoway => 0,
            ModelKind::Factor => self.k,
        }
    }
}

impl fmt::Display for SyntheticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::Twoway => write!(f, "model=twoway,sigma={}", self.sigma),
            ModelKind::Factor => write!(f, "model=factor,k={},sigma={}", self.k, self.sigma),
        }
    }
}

/// Parses `model=factor,k=1,sigma=0.5`; omitted keys default to a two-way
/// model, one factor and unit noise.
impl FromStr for SyntheticModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kind = None;
        let mut k = None;
        let mut sigma = 1.0;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {part:?}")))?;
            let bad = || Error::invalid(format!("bad value for {key}: {value:?}"));
            match key.trim() {
                "model" => {
                    kind = Some(match value.trim() {
                        "twoway" => ModelKind::Twoway,
                        "factor" => ModelKind::Factor,
                        other => return Err(Error::invalid(format!("unknown model {other:?}"))),
                    })
                }
                "k" => k = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
                "sigma" => sigma = value.trim().parse::<f64>().map_err(|_| bad())?,
                other => return Err(Error::invalid(format!("unknown key {other:?}"))),
            }
        }
        let kind = kind.unwrap_or(if k.is_some() {
            ModelKind::Factor
        } else {
            ModelKind::Twoway
        });
        Ok(SyntheticModel {
            kind,
            k: k.unwrap_or(if kind == ModelKind::Factor { 1 } else { 0 }),
            sigma,
        })
    }
}

/// Draw `α`, `β` and the loadings once, then `v_t` and the noise per period.
/// Loadings are centered across units.
pub fn generate_synthetic_panel(
    n_units: usize,
    n_periods: usize,
    model: &SyntheticModel,
    seed: u64,
) -> Result<PanelMatrix> {
    if n_units == 0 || n_periods == 0 {
        return Err(Error::invalid(
            "panel needs at least one unit and one period",
        ));
    }
    let noise = Normal::new(0.0, model.sigma)
        .map_err(|_| Error::invalid(format!("noise sd must be ≥ 0, got {}", model.sigma)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let alpha = DVector::from_fn(n_units, |_, _| normal(&mut rng));
    let beta = DVector::from_fn(n_periods, |_, _| normal(&mut rng));
    let k = model.factors();
    let mut loadings = DMatrix::from_fn(n_units, k, |_, _| normal(&mut rng));
    for mut col in loadings.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let factors = DMatrix::from_fn(k, n_periods, |_, _| normal(&mut rng));
    let eps = DMatrix::from_fn(n_units, n_periods, |_, _| noise.sample(&mut rng));

    let values = &alpha * DVector::from_element(n_periods, 1.0).transpose()
        + DVector::from_element(n_units, 1.0) * beta.transpose()
        + loadings * factors
        + eps;
    PanelMatrix::from_values(values)
}

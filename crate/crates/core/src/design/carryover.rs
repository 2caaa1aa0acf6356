//! Designs for effects that persist `ℓ` periods after adoption.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{optimal_linear_path, FractionPath};
use crate::error::{Error, Result};
use crate::objective::carryover_theta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarryoverDesignSpec {
    lags: usize,
    periods: usize,
}

impl CarryoverDesignSpec {
    pub fn new(lags: usize, periods: usize) -> Result<Self> {
        if periods <= lags {
            return Err(Error::invalid(format!(
                "carryover with ℓ = {lags} needs T > ℓ, got T = {periods}"
            )));
        }
        Ok(CarryoverDesignSpec { lags, periods })
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Whether `T` exceeds the threshold under which the closed-form path
    /// is known to be optimal.
    pub fn verified_regime(&self) -> bool {
        if self.lags == 0 {
            return true;
        }
        let l = self.lags as f64;
        8.0 * l * self.periods as f64 > l.powi(3) + 13.0 * l * l + 7.0 * l + 3.0
    }
}

/// Linear system whose solution gives the path on the periods
/// `⌊ℓ/2⌋ + 1 ..= ℓ`. Empty for `ℓ = 0`.
pub fn build_carryover_system(spec: &CarryoverDesignSpec) -> (DMatrix<f64>, DVector<f64>) {
    let ell = spec.lags;
    let head = ell / 2;
    let dim = ell - head;
    let span = (spec.periods - ell) as f64;

    let a = DMatrix::from_fn(dim, dim, |r, c| {
        let (i, j) = (r + 1, c + 1);
        let diag = if i == j { (head + i) as f64 } else { 0.0 };
        diag - (dim + 1 - i.max(j)) as f64 / span
    });
    let b = DVector::from_fn(dim, |r, _| {
        let i = r + 1;
        let t = (head + i) as f64;
        let tail: usize = (1..=dim + 1 - i).map(|l| head + 1 - l).sum();
        -t + t * t / span - tail as f64 / span
    });
    (a, b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarryoverPath {
    pub path: FractionPath,
    /// Set when `T` is below the threshold where optimality is proven.
    pub unverified_regime: bool,
}

/// Trace-optimal fraction path for `ℓ` carryover lags: pinned at −1 for the
/// first `⌊ℓ/2⌋` periods, an interior solve up to `ℓ`, a linear ramp in the
/// middle, and the antisymmetric mirror image afterwards.
pub fn optimal_carryover_path(spec: &CarryoverDesignSpec) -> Result<CarryoverPath> {
    let (ell, t_total) = (spec.lags, spec.periods);
    if ell == 0 {
        return Ok(CarryoverPath {
            path: optimal_linear_path(t_total)?,
            unverified_regime: false,
        });
    }
    if t_total - ell < 2 || t_total < 2 * ell {
        return Err(Error::invalid(format!(
            "T = {t_total} leaves no room for the middle stage with ℓ = {ell}"
        )));
    }
    let head = ell / 2;
    let (a, b) = build_carryover_system(spec);
    let interior = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("carryover interior system is singular".into()))?;

    let span = (t_total - ell) as f64;
    let mut w = vec![0.0; t_total];
    for t in 1..=t_total / 2 {
        w[t - 1] = if t <= head {
            -1.0
        } else if t <= ell {
            interior[t - head - 1]
        } else {
            -1.0 + (2 * t - (ell + 1)) as f64 / span
        };
    }
    for t in t_total / 2 + 1..=t_total {
        let mirror = t_total + 1 - t;
        w[t - 1] = if mirror == t { 0.0 } else { -w[mirror - 1] };
    }
    Ok(CarryoverPath {
        path: FractionPath::new(w)?,
        unverified_regime: !spec.verified_regime(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DOptConfig {
    pub tolerance: f64,
    pub max_evaluations: usize,
    pub initial_step: f64,
}

impl Default for DOptConfig {
    fn default() -> Self {
        DOptConfig {
            tolerance: 1e-8,
            max_evaluations: 100_000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DOptResult {
    pub path: FractionPath,
    /// `−det Θ` at the returned path, with N = 1.
    pub objective: f64,
    pub start_objective: f64,
    /// False when no move improved on the start, which is then returned.
    pub improved: bool,
    pub evaluations: usize,
}

/// Locally minimize `−det Θ(ω)` over monotone paths in `[−1, 1]`, starting
/// from the trace-optimal path. Moves are made on mirrored pairs
/// `(ω_t, ω_{T+1−t})` so the result stays antisymmetric.
pub fn d_optimal_path(spec: &CarryoverDesignSpec, cfg: &DOptConfig) -> Result<DOptResult> {
    let (ell, t_total) = (spec.lags, spec.periods);
    if t_total < ell + 2 {
        return Err(Error::invalid(format!(
            "D-optimal search needs T ≥ ℓ + 2, got T = {t_total}"
        )));
    }
    let start = optimal_carryover_path(spec)?.path.into_inner();
    let half = t_total / 2;
    let objective = |w: &[f64]| -> f64 {
        let path = FractionPath(w.to_vec());
        -carryover_theta(&path, ell, 1).determinant()
    };
    let set_pair = |w: &mut [f64], t: usize, value: f64| {
        w[t] = value;
        w[t_total - 1 - t] = -value;
    };

    let mut current = start.clone();
    let start_objective = objective(&current);
    let mut best = start_objective;
    let mut evaluations = 1;
    let mut step = cfg.initial_step;
    let mut improved = false;

    while step >= cfg.tolerance && evaluations < cfg.max_evaluations {
        let mut moved = false;
        for t in 0..half {
            let lower = if t == 0 { -1.0 } else { current[t - 1] };
            // The mirrored partner must stay above ω_t.
            let upper = if t + 1 < half { current[t + 1] } else { 0.0 };
            for direction in [1.0, -1.0] {
                if evaluations >= cfg.max_evaluations {
                    break;
                }
                let candidate_value = (current[t] + direction * step).clamp(lower, upper);
                if candidate_value == current[t] {
                    continue;
                }
                let mut candidate = current.clone();
                set_pair(&mut candidate, t, candidate_value);
                let value = objective(&candidate);
                evaluations += 1;
                if value < best {
                    best = value;
                    current = candidate;
                    moved = true;
                    improved = true;
                    break;
                }
            }
        }
        if !moved {
            step /= 2.0;
        }
    }

    Ok(DOptResult {
        path: FractionPath::new(if improved { current } else { start })?,
        objective: best,
        start_objective,
        improved,
        evaluations,
    })
}

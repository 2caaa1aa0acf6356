//! Design search and hyperparameter selection on historical control data.
//!
//! Every criterion here is the minimax error: inject a known effect into
//! each historical block under a candidate design, estimate it, and take the
//! worst absolute error over blocks (and lags).

mod kmeans;

pub use kmeans::kmeans_stratify;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::estimators::{Estimator, LrmeConfig};
use crate::panel::{apply_synthetic_treatment, BlockSplit, SyntheticEffect};

/// Largest absolute estimation error in each block.
pub fn block_errors(
    design: &DesignMatrix,
    blocks: &BlockSplit,
    effect: &SyntheticEffect,
    estimator: &Estimator,
) -> Result<Vec<f64>> {
    if blocks.is_empty() {
        return Err(Error::invalid("need at least one historical block"));
    }
    if (blocks.n_units(), blocks.n_periods()) != (design.n_units(), design.n_periods()) {
        return Err(Error::Dimension(format!(
            "blocks are {}×{}, design is {}×{}",
            blocks.n_units(),
            blocks.n_periods(),
            design.n_units(),
            design.n_periods()
        )));
    }
    let ell = effect.lags();
    let per_block = |block| -> Result<f64> {
        let treated = apply_synthetic_treatment(block, design, effect)?;
        let fit = estimator.estimate(&treated, design, ell)?;
        Ok(fit
            .taus
            .iter()
            .zip(effect.taus())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    };
    blocks
        .blocks
        .par_iter()
        .enumerate()
        .map(|(j, block)| per_block(block).map_err(|e| e.in_block(j)))
        .collect()
}

/// `max_j |τ̂^(j) − τ|`, with carryover effects maximized over lags too.
pub fn minimax_error(
    design: &DesignMatrix,
    blocks: &BlockSplit,
    effect: &SyntheticEffect,
    estimator: &Estimator,
) -> Result<f64> {
    Ok(block_errors(design, blocks, effect, estimator)?
        .into_iter()
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub t_init: f64,
    pub t_min: f64,
    pub upsilon: f64,
    pub steps_max: usize,
    pub effect: SyntheticEffect,
    pub seed: u64,
    /// A candidate only replaces the best design when it beats it by more
    /// than this, so round-off on exact data does not count as progress.
    pub improvement_tol: f64,
}

impl SaConfig {
    pub fn new(effect: SyntheticEffect, seed: u64) -> Self {
        SaConfig {
            t_init: 1.0,
            t_min: 1e-3,
            upsilon: 0.95,
            steps_max: 5000,
            effect,
            seed,
            improvement_tol: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_init && self.t_init.is_finite()) {
            return Err(Error::invalid("need 0 < t_min < t_init"));
        }
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            return Err(Error::invalid("cooling factor must lie in (0, 1)"));
        }
        if self.improvement_tol.is_nan() || self.improvement_tol < 0.0 {
            return Err(Error::invalid("improvement_tol must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub step: usize,
    pub accepted: bool,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub design: DesignMatrix,
    pub max_error: f64,
    pub start_error: f64,
    pub trace: Vec<SearchStep>,
}

/// Simulated annealing over row swaps of `start`. Swaps keep every column
/// sum, so the fraction path never changes; only which units carry it.
pub fn sa_search(
    start: &DesignMatrix,
    blocks: &BlockSplit,
    cfg: &SaConfig,
    estimator: &Estimator,
) -> Result<SearchResult> {
    cfg.validate()?;
    let n = start.n_units();
    let start_error = minimax_error(start, blocks, &cfg.effect, estimator)?;
    let mut best = start.clone();
    let mut best_error = start_error;
    let mut current = start.clone();
    let mut current_error = start_error;
    let mut temperature = cfg.t_init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();

    let mut step = 0;
    while n >= 2 && step < cfg.steps_max && temperature > cfg.t_min {
        step += 1;
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut candidate = current.clone();
        candidate.swap_units(a, b);
        let error = if candidate == current {
            current_error
        } else {
            minimax_error(&candidate, blocks, &cfg.effect, estimator)?
        };

        let accepted = if error < best_error - cfg.improvement_tol {
            best = candidate.clone();
            best_error = error;
            true
        } else {
            let escape = (-(error - current_error) / temperature).exp();
            temperature *= cfg.upsilon;
            escape > rng.random::<f64>()
        };
        if accepted {
            current = candidate;
            current_error = error;
        }
        trace.push(SearchStep {
            step,
            accepted,
            error,
        });
    }

    Ok(SearchResult {
        design: best,
        max_error: best_error,
        start_error,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSearch {
    pub mu: f64,
    pub max_error: f64,
    /// `(μ, minimax error)` for every candidate, `μ_max` first.
    pub candidates: Vec<(f64, f64)>,
}

/// `n` log-spaced points from `lo` to `hi`; a single point is `lo`.
fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Pick the LRME threshold with the smallest minimax error over `μ_max`
/// and a log-spaced grid. Ties go to the larger threshold.
pub fn grid_search_mu(
    blocks: &BlockSplit,
    design: &DesignMatrix,
    effect: &SyntheticEffect,
    mu_range: (f64, f64),
    n_grid: usize,
    k0: usize,
) -> Result<MuSearch> {
    let (lo, hi) = mu_range;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < mu_min < mu_max, got ({lo}, {hi})"
        )));
    }
    if n_grid == 0 {
        return Err(Error::invalid("grid needs at least one point"));
    }
    let mut mus = vec![hi];
    mus.extend(geomspace(lo, hi, n_grid));
    let candidates = mus
        .iter()
        .map(|&mu| {
            let est = Estimator::Lrme(LrmeConfig::new(k0, mu)?);
            Ok((mu, minimax_error(design, blocks, effect, &est)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let (mu, max_error) = candidates
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.1 < best.1 || (c.1 == best.1 && c.0 > best.0) {
                c
            } else {
                best
            }
        })
        .expect("at least two candidates");
    Ok(MuSearch {
        mu,
        max_error,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub estimator: Estimator,
    pub max_error: f64,
    /// Minimax error per candidate, `None` where estimation failed.
    pub errors: Vec<Option<f64>>,
}

/// The candidate with the smallest minimax error; ties keep the earlier
/// candidate. Candidates that fail to estimate are skipped.
pub fn select_estimator(
    blocks: &BlockSplit,
    design: &DesignMatrix,
    effect: &SyntheticEffect,
    candidates: &[Estimator],
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::invalid("need at least one candidate estimator"));
    }
    let mut failures = Vec::new();
    let errors: Vec<Option<f64>> = candidates
        .iter()
        .map(|est| match minimax_error(design, blocks, effect, est) {
            Ok(e) => Some(e),
            Err(err) => {
                failures.push(format!("{est}: {err}"));
                None
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, e) in errors.iter().enumerate() {
        if let Some(e) = *e {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((i, e));
            }
        }
    }
    let (i, max_error) = best.ok_or_else(|| {
        Error::invalid(format!("every candidate failed: {}", failures.join("; ")))
    })?;
    Ok(Selection {
        estimator: candidates[i].clone(),
        max_error,
        errors,
    })
}

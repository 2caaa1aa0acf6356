//! Treatment designs: fraction paths, their rounding to integer counts, and
//! realization as concrete ±1 assignment matrices.
//!
//! Under staggered adoption every optimality statement is about the path
//! `ω_t = (1/N) Σ_i z_it`; which units carry the treatment only matters once
//! units differ in covariates, so matrices are realized from a seed.

mod benchmark;
mod carryover;
mod reversible;

pub use benchmark::{benchmark_design, benchmark_design_unfixed, BenchmarkKind};
pub use carryover::{
    build_carryover_system, d_optimal_path, optimal_carryover_path, CarryoverDesignSpec,
    CarryoverPath, DOptConfig, DOptResult,
};
pub use reversible::{reversible_design, ReversibleDesign, ReversibleKind};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PATH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Once treated, always treated: rows are nondecreasing.
    Irreversible,
    Reversible,
}

/// N×T assignment matrix over {−1, +1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DesignRows", try_from = "DesignRows")]
pub struct DesignMatrix {
    entries: DMatrix<i8>,
    regime: Regime,
}

/// Row-major form used for serialization.
#[derive(Serialize, Deserialize)]
struct DesignRows {
    regime: Regime,
    rows: Vec<Vec<i8>>,
}

impl From<DesignMatrix> for DesignRows {
    fn from(d: DesignMatrix) -> Self {
        DesignRows {
            regime: d.regime,
            rows: d
                .entries
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<DesignRows> for DesignMatrix {
    type Error = Error;

    fn try_from(repr: DesignRows) -> Result<Self> {
        DesignMatrix::from_rows(&repr.rows, repr.regime)
    }
}

impl DesignMatrix {
    pub fn new(entries: DMatrix<i8>, regime: Regime) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::invalid(
                "design must have at least one unit and one period",
            ));
        }
        if let Some(bad) = entries.iter().find(|&&z| z != 1 && z != -1) {
            return Err(Error::invalid(format!("design entry {bad} is not ±1")));
        }
        let design = DesignMatrix { entries, regime };
        if regime == Regime::Irreversible {
            if let Some(i) = (0..design.n_units()).find(|&i| !design.row_is_monotone(i)) {
                return Err(Error::invalid(format!(
                    "unit {i} switches back to control in an irreversible design"
                )));
            }
        }
        Ok(design)
    }

    pub fn from_rows(rows: &[Vec<i8>], regime: Regime) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Dimension("design rows differ in length".into()));
        }
        let entries = DMatrix::from_fn(rows.len(), t, |i, j| rows[i][j]);
        DesignMatrix::new(entries, regime)
    }

    /// Irreversible design from adoption periods (1-based; `None` = never treated).
    pub fn from_adoption(adoption: &[Option<usize>], n_periods: usize) -> Result<Self> {
        let mut entries = DMatrix::from_element(adoption.len(), n_periods, -1i8);
        for (i, a) in adoption.iter().enumerate() {
            if let Some(a) = *a {
                if a == 0 || a > n_periods {
                    return Err(Error::invalid(format!(
                        "adoption period {a} outside 1..={n_periods}"
                    )));
                }
                for t in (a - 1)..n_periods {
                    entries[(i, t)] = 1;
                }
            }
        }
        DesignMatrix::new(entries, Regime::Irreversible)
    }

    pub fn n_units(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.entries.ncols()
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn entries(&self) -> &DMatrix<i8> {
        &self.entries
    }

    pub fn get(&self, unit: usize, period: usize) -> i8 {
        self.entries[(unit, period)]
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.entries.map(f64::from)
    }

    /// The 0/1 treated indicator `(1 + z) / 2`.
    pub fn indicator(&self) -> DMatrix<f64> {
        self.entries.map(|z| if z > 0 { 1.0 } else { 0.0 })
    }

    pub fn column_sums(&self) -> Vec<i64> {
        self.entries
            .column_iter()
            .map(|c| c.iter().map(|&z| i64::from(z)).sum())
            .collect()
    }

    pub fn treated_counts(&self) -> Vec<usize> {
        self.entries
            .column_iter()
            .map(|c| c.iter().filter(|&&z| z > 0).count())
            .collect()
    }

    pub fn omega(&self) -> FractionPath {
        let n = self.n_units() as f64;
        FractionPath(self.column_sums().iter().map(|&s| s as f64 / n).collect())
    }

    pub fn row_is_monotone(&self, unit: usize) -> bool {
        let row = self.entries.row(unit);
        row.iter().zip(row.iter().skip(1)).all(|(a, b)| a <= b)
    }

    pub fn all_rows_monotone(&self) -> bool {
        (0..self.n_units()).all(|i| self.row_is_monotone(i))
    }

    /// First treated period per unit (1-based); `None` for never-treated
    /// units. Only meaningful for monotone rows.
    pub fn adoption_periods(&self) -> Vec<Option<usize>> {
        (0..self.n_units())
            .map(|i| {
                (0..self.n_periods())
                    .find(|&t| self.entries[(i, t)] > 0)
                    .map(|t| t + 1)
            })
            .collect()
    }

    /// Exchange two unit rows; column sums are unchanged.
    pub fn swap_units(&mut self, a: usize, b: usize) {
        self.entries.swap_rows(a, b);
    }

    /// Rows restricted to the given unit indices, in that order.
    pub fn select_units(&self, units: &[usize]) -> DesignMatrix {
        DesignMatrix {
            entries: self.entries.select_rows(units),
            regime: self.regime,
        }
    }
}

/// Per-period cross-sectional mean of a ±1 design, `ω_t ∈ [−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FractionPath(Vec<f64>);

impl FractionPath {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::invalid(
                "fraction path must cover at least one period",
            ));
        }
        for (t, &w) in omegas.iter().enumerate() {
            if !(-1.0 - PATH_TOL..=1.0 + PATH_TOL).contains(&w) {
                return Err(Error::invalid(format!(
                    "ω at period {} is {w}, outside [−1, 1]",
                    t + 1
                )));
            }
        }
        Ok(FractionPath(omegas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|w| w[0] <= w[1] + PATH_TOL)
    }

    /// `t ↦ −ω_{T+1−t}`; the objectives in this crate are invariant under it.
    pub fn reversal_negation(&self) -> FractionPath {
        FractionPath(self.0.iter().rev().map(|w| -w).collect())
    }

    pub fn treated_proportions(&self) -> Vec<f64> {
        self.0.iter().map(|w| (1.0 + w) / 2.0).collect()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Partition of units into nonempty strata, labelled `0..n_groups`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratification {
    labels: Vec<usize>,
    group_sizes: Vec<usize>,
}

impl Stratification {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("stratification needs at least one unit"));
        }
        let n_groups = labels.iter().max().map_or(0, |m| m + 1);
        let mut group_sizes = vec![0usize; n_groups];
        for &g in &labels {
            group_sizes[g] += 1;
        }
        if let Some(g) = group_sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("stratum {g} is empty")));
        }
        Ok(Stratification {
            labels,
            group_sizes,
        })
    }

    /// Relabel arbitrary keys by order of first appearance.
    pub fn from_keys<K: PartialEq>(keys: &[K]) -> Result<Self> {
        let mut seen: Vec<&K> = Vec::new();
        let labels = keys
            .iter()
            .map(|k| match seen.iter().position(|s| *s == k) {
                Some(g) => g,
                None => {
                    seen.push(k);
                    seen.len() - 1
                }
            })
            .collect();
        Stratification::new(labels)
    }

    pub fn single(n_units: usize) -> Result<Self> {
        Stratification::new(vec![0; n_units])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn n_units(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == group)
            .collect()
    }
}

/// `ω_t = (2t − 1 − T) / T`.
pub fn optimal_linear_path(n_periods: usize) -> Result<FractionPath> {
    if n_periods == 0 {
        return Err(Error::invalid("need at least one period"));
    }
    let t_total = n_periods as f64;
    Ok(FractionPath(
        (1..=n_periods)
            .map(|t| (2.0 * t as f64 - 1.0 - t_total) / t_total)
            .collect(),
    ))
}

/// Nearest-integer treated counts `n_t ≈ N(1 + ω_t)/2`. Exact half-ties
/// round down while the treated proportion is below one half and up from
/// there on.
pub fn round_counts(path: &FractionPath, n_units: usize) -> Result<Vec<usize>> {
    if n_units == 0 {
        return Err(Error::invalid("need at least one unit"));
    }
    if !path.is_monotone() {
        return Err(Error::invalid("fraction path is not monotone"));
    }
    const TIE_TOL: f64 = 1e-9;
    let n = n_units as f64;
    let counts: Vec<usize> = path
        .as_slice()
        .iter()
        .map(|&w| {
            let proportion = (1.0 + w) / 2.0;
            let target = n * proportion;
            let floor = (target + TIE_TOL).floor();
            let frac = target - floor;
            let rounded = if (frac - 0.5).abs() <= TIE_TOL {
                if proportion < 0.5 - PATH_TOL {
                    floor
                } else {
                    floor + 1.0
                }
            } else {
                target.round()
            };
            rounded.clamp(0.0, n) as usize
        })
        .collect();
    assert!(
        counts.windows(2).all(|w| w[0] <= w[1]),
        "rounding a monotone path produced decreasing counts {counts:?}"
    );
    Ok(counts)
}

/// Realize treated counts as an irreversible design: units are ranked by a
/// seeded uniform permutation and the unit of rank `r` is treated at `t`
/// whenever `r < counts[t]`.
pub fn realize_design(counts: &[usize], n_units: usize, seed: u64) -> Result<DesignMatrix> {
    check_counts(counts, n_units)?;
    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(design_from_ranking(counts, &order))
}

fn check_counts(counts: &[usize], n_units: usize) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::invalid("counts must cover at least one period"));
    }
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid(format!(
            "treated counts {counts:?} decrease over time"
        )));
    }
    if let Some(&c) = counts.iter().find(|&&c| c > n_units) {
        return Err(Error::invalid(format!(
            "treated count {c} exceeds N = {n_units}"
        )));
    }
    Ok(())
}

fn design_from_ranking(counts: &[usize], order: &[usize]) -> DesignMatrix {
    let mut entries = DMatrix::from_element(order.len(), counts.len(), -1i8);
    for (rank, &unit) in order.iter().enumerate() {
        for (t, &c) in counts.iter().enumerate() {
            if rank < c {
                entries[(unit, t)] = 1;
            }
        }
    }
    DesignMatrix {
        entries,
        regime: Regime::Irreversible,
    }
}

/// Rounded linear-path design, realized from `seed`.
pub fn optimal_design(n_units: usize, n_periods: usize, seed: u64) -> Result<DesignMatrix> {
    let counts = round_counts(&optimal_linear_path(n_periods)?, n_units)?;
    realize_design(&counts, n_units, seed)
}

/// Round and realize the same path independently inside every stratum.
pub fn stratified_design(
    path: &FractionPath,
    strat: &Stratification,
    seed: u64,
) -> Result<DesignMatrix> {
    let mut entries = DMatrix::from_element(strat.n_units(), path.len(), -1i8);
    for g in 0..strat.n_groups() {
        let members = strat.members(g);
        let counts = round_counts(path, members.len())?;
        let local = realize_design(&counts, members.len(), seed.wrapping_add(g as u64))?;
        for (k, &unit) in members.iter().enumerate() {
            entries.set_row(unit, &local.entries.row(k));
        }
    }
    DesignMatrix::new(entries, Regime::Irreversible)
}

/// Per-stratum treated counts obtained by [`stratified_design`].
pub fn stratified_counts(path: &FractionPath, strat: &Stratification) -> Result<Vec<Vec<usize>>> {
    strat
        .group_sizes()
        .iter()
        .map(|&n| round_counts(path, n))
        .collect()
}

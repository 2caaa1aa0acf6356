use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DesignMatrix, Regime, Stratification};
use crate::error::{Error, Result};

/// Which zero-mean conditions a reversible design enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReversibleKind {
    /// Every period balanced (`ω_t = 0`).
    Time,
    /// Every unit balanced over time (`ζ_i = 0`).
    Unit,
    /// Both of the above.
    Twoway,
    /// Every stratum-period balanced and every unit balanced.
    Stratified,
}

#[derive(Debug, Clone)]
pub struct ReversibleDesign {
    pub design: DesignMatrix,
    /// True when parity made an exact zero impossible and the nearest
    /// integer split was used instead.
    pub relaxed: bool,
}

pub fn reversible_design(
    kind: ReversibleKind,
    n_units: usize,
    n_periods: usize,
    strat: Option<&Stratification>,
    seed: u64,
) -> Result<ReversibleDesign> {
    if n_units == 0 || n_periods == 0 {
        return Err(Error::invalid("reversible design needs N ≥ 1 and T ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::from_element(n_units, n_periods, -1i8);
    let relaxed = match kind {
        ReversibleKind::Time => {
            let mut units: Vec<usize> = (0..n_units).collect();
            for t in 0..n_periods {
                units.shuffle(&mut rng);
                // Alternate the odd extra unit so the column sums cancel in pairs.
                let treated = n_units / 2 + (n_units % 2) * (t % 2);
                for &i in &units[..treated] {
                    z[(i, t)] = 1;
                }
            }
            n_units % 2 == 1
        }
        ReversibleKind::Unit => {
            let mut periods: Vec<usize> = (0..n_periods).collect();
            for i in 0..n_units {
                periods.shuffle(&mut rng);
                let treated = n_periods / 2 + (n_periods % 2) * (i % 2);
                for &t in &periods[..treated] {
                    z[(i, t)] = 1;
                }
            }
            n_periods % 2 == 1
        }
        ReversibleKind::Twoway => {
            let mut units: Vec<usize> = (0..n_units).collect();
            units.shuffle(&mut rng);
            fill_checkerboard(&mut z, &units);
            shuffle_columns(&mut z, &mut rng);
            n_units % 2 == 1 || n_periods % 2 == 1
        }
        ReversibleKind::Stratified => {
            let strat =
                strat.ok_or_else(|| Error::invalid("stratified reversible design needs strata"))?;
            if strat.n_units() != n_units {
                return Err(Error::Dimension(format!(
                    "stratification covers {} units, design has {n_units}",
                    strat.n_units()
                )));
            }
            let mut relaxed = n_periods % 2 == 1;
            for g in 0..strat.n_groups() {
                let mut members = strat.members(g);
                members.shuffle(&mut rng);
                relaxed |= members.len() % 2 == 1;
                fill_checkerboard(&mut z, &members);
            }
            shuffle_columns(&mut z, &mut rng);
            relaxed
        }
    };
    Ok(ReversibleDesign {
        design: DesignMatrix::new(z, Regime::Reversible)?,
        relaxed,
    })
}

fn fill_checkerboard(z: &mut DMatrix<i8>, rows: &[usize]) {
    for (k, &i) in rows.iter().enumerate() {
        for t in 0..z.ncols() {
            z[(i, t)] = if (k + t) % 2 == 0 { 1 } else { -1 };
        }
    }
}

fn shuffle_columns(z: &mut DMatrix<i8>, rng: &mut ChaCha8Rng) {
    let mut cols: Vec<usize> = (0..z.ncols()).collect();
    cols.shuffle(rng);
    *z = z.select_columns(&cols);
}

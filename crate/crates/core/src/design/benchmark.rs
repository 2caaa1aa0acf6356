use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DesignMatrix;
use crate::error::{Error, Result};

/// Benchmark designs used for comparison in synthetic experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    /// Fifty-fifty: half the units treated throughout.
    Ff,
    /// Before-after: everyone adopts at the midpoint.
    Ba,
    /// Half the units adopt at the midpoint.
    Ffba,
}

/// Benchmark design including the one-unit perturbations that make the
/// effect identifiable for FF and BA.
pub fn benchmark_design(
    kind: BenchmarkKind,
    n_units: usize,
    n_periods: usize,
    seed: u64,
) -> Result<DesignMatrix> {
    build(kind, n_units, n_periods, seed, true)
}

/// Benchmark design without the identification perturbations. FF and BA are
/// then collinear with the fixed effects.
pub fn benchmark_design_unfixed(
    kind: BenchmarkKind,
    n_units: usize,
    n_periods: usize,
    seed: u64,
) -> Result<DesignMatrix> {
    build(kind, n_units, n_periods, seed, false)
}

fn build(
    kind: BenchmarkKind,
    n_units: usize,
    n_periods: usize,
    seed: u64,
    fix: bool,
) -> Result<DesignMatrix> {
    if n_periods < 2 {
        return Err(Error::invalid("benchmark designs need T ≥ 2"));
    }
    if n_units < 2 {
        return Err(Error::invalid("benchmark designs need N ≥ 2"));
    }
    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = n_units.div_ceil(2);
    let mut adoption: Vec<Option<usize>> = vec![None; n_units];

    match kind {
        BenchmarkKind::Ff => {
            for &u in &order[..half] {
                adoption[u] = Some(1);
            }
            if fix {
                // One treated unit starts as control, one control unit is
                // treated in the final period.
                adoption[order[0]] = Some(2);
                adoption[order[half]] = Some(n_periods);
            }
        }
        BenchmarkKind::Ba => {
            let switch = n_periods / 2 + 1;
            for &u in &order {
                adoption[u] = Some(switch);
            }
            if fix {
                adoption[order[0]] = Some(switch - 1);
                adoption[order[1]] = (switch < n_periods).then_some(switch + 1);
            }
        }
        BenchmarkKind::Ffba => {
            let switch = n_periods / 2 + 1;
            for &u in &order[..half] {
                adoption[u] = Some(switch);
            }
        }
    }
    DesignMatrix::from_adoption(&adoption, n_periods)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ff_fix_perturbs_first_and_last_column() {
        let raw = benchmark_design_unfixed(BenchmarkKind::Ff, 8, 2, 1).unwrap();
        assert_eq!(raw.column_sums(), vec![0, 0]);
        let fixed = benchmark_design(BenchmarkKind::Ff, 8, 2, 1).unwrap();
        assert_eq!(fixed.column_sums(), vec![-2, 2]);
        let long = benchmark_design(BenchmarkKind::Ff, 8, 5, 1).unwrap();
        assert_eq!(long.column_sums(), vec![-2, 0, 0, 0, 2]);
        let odd = benchmark_design_unfixed(BenchmarkKind::Ff, 7, 3, 1).unwrap();
        assert_eq!(odd.treated_counts(), vec![4, 4, 4]);
    }

    #[test]
    fn ba_fix_flips_one_cell_per_column() {
        let raw = benchmark_design_unfixed(BenchmarkKind::Ba, 8, 2, 4).unwrap();
        assert_eq!(raw.column_sums(), vec![-8, 8]);
        let fixed = benchmark_design(BenchmarkKind::Ba, 8, 2, 4).unwrap();
        assert_eq!(fixed.column_sums(), vec![-6, 6]);
        let t6 = benchmark_design(BenchmarkKind::Ba, 8, 6, 4).unwrap();
        assert_eq!(t6.column_sums(), vec![-8, -8, -6, 6, 8, 8]);
        assert!(t6.all_rows_monotone());
    }

    #[test]
    fn ffba_fraction_path() {
        let d = benchmark_design(BenchmarkKind::Ffba, 8, 4, 0).unwrap();
        assert_eq!(d.omega().as_slice(), &[-1.0, -1.0, 0.0, 0.0]);
        let d7 = benchmark_design(BenchmarkKind::Ffba, 8, 7, 0).unwrap();
        assert_eq!(
            d7.omega().as_slice(),
            &[-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn rejects_single_period() {
        for kind in [BenchmarkKind::Ff, BenchmarkKind::Ba, BenchmarkKind::Ffba] {
            assert!(benchmark_design(kind, 8, 1, 0).is_err());
        }
    }
}

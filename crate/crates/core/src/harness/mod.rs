//! End-to-end synthetic experiments on a control panel.
//!
//! Each block samples `N` units and a window of `hist_T + T` consecutive
//! periods. The first `hist_T` periods are the only data tuning may look at;
//! the synthetic effect is injected into the last `T` and then estimated.

mod report;
mod synthetic;

pub use report::{
    emit_report, parse_report_csv, BlockEstimate, BlockFailure, CellSummary, ExperimentReport,
    ReportFormat,
};
pub use synthetic::{generate_synthetic_panel, ModelKind, SyntheticModel};

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::design::{
    benchmark_design, d_optimal_path, optimal_carryover_path, optimal_design, optimal_linear_path,
    realize_design, round_counts, stratified_design, BenchmarkKind, CarryoverDesignSpec,
    DOptConfig, DesignMatrix,
};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, LrmeConfig};
use crate::panel::{
    apply_synthetic_treatment, split_blocks, BlockSplit, PanelMatrix, SyntheticEffect,
};
use crate::tuner::{grid_search_mu, kmeans_stratify, sa_search, select_estimator, SaConfig};

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                String::deserialize(d)?
                    .parse()
                    .map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A design to evaluate, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignSpec {
    Opt,
    OptCo,
    DOpt,
    Ff,
    Ba,
    Ffba,
    /// Row-swap annealing started from `Opt`, tuned on the history.
    Sa,
    /// `Opt` within each of `K` clusters of the history's loadings.
    Kmeans(usize),
}

impl DesignSpec {
    pub fn needs_history(&self) -> bool {
        matches!(self, DesignSpec::Sa | DesignSpec::Kmeans(_))
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignSpec::Opt => f.write_str("opt"),
            DesignSpec::OptCo => f.write_str("opt-co"),
            DesignSpec::DOpt => f.write_str("d-opt"),
            DesignSpec::Ff => f.write_str("ff"),
            DesignSpec::Ba => f.write_str("ba"),
            DesignSpec::Ffba => f.write_str("ffba"),
            DesignSpec::Sa => f.write_str("sa"),
            DesignSpec::Kmeans(k) => write!(f, "kmeans{k}"),
        }
    }
}

impl FromStr for DesignSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "opt" => DesignSpec::Opt,
            "opt-co" | "optco" => DesignSpec::OptCo,
            "d-opt" | "dopt" => DesignSpec::DOpt,
            "ff" => DesignSpec::Ff,
            "ba" => DesignSpec::Ba,
            "ffba" | "ff+ba" => DesignSpec::Ffba,
            "sa" | "opt+" => DesignSpec::Sa,
            _ => match s.strip_prefix("kmeans").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => DesignSpec::Kmeans(k),
                _ => return Err(Error::invalid(format!("unknown design {s:?}"))),
            },
        })
    }
}

string_serde!(DesignSpec);

/// How the effect is estimated in the experiment window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodSpec {
    Ols,
    Gls,
    /// Threshold from the tuning config, or grid-searched on the history.
    Lrme,
    /// Whichever of the three has the smallest minimax error on the history.
    Auto,
}

impl MethodSpec {
    fn needs_history(&self, tuning: &TuningConfig) -> bool {
        match self {
            MethodSpec::Auto => true,
            MethodSpec::Lrme => tuning.lrme_mu.is_none(),
            _ => false,
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodSpec::Ols => "ols",
            MethodSpec::Gls => "gls",
            MethodSpec::Lrme => "lrme",
            MethodSpec::Auto => "auto",
        })
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(MethodSpec::Ols),
            "gls" => Ok(MethodSpec::Gls),
            "lrme" => Ok(MethodSpec::Lrme),
            "auto" | "hist-winner" => Ok(MethodSpec::Auto),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

string_serde!(MethodSpec);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// Factor rank for GLS and LRME.
    pub k0: usize,
    /// Fixed LRME threshold; `None` grid-searches it on the history.
    pub lrme_mu: Option<f64>,
    pub mu_range: (f64, f64),
    pub mu_grid: usize,
    /// Estimator inside the annealing criterion.
    pub search_estimator: Estimator,
    pub sa_steps: usize,
    /// Stride between historical blocks.
    pub hist_stride: usize,
    pub dopt: DOptConfig,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            k0: 1,
            lrme_mu: None,
            mu_range: (1e-3, 1e2),
            mu_grid: 20,
            search_estimator: Estimator::Gls { k0: 1 },
            sa_steps: 5000,
            hist_stride: 1,
            dopt: DOptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub m_blocks: usize,
    pub n_units: usize,
    pub n_periods: usize,
    pub hist_periods: usize,
    pub effect: SyntheticEffect,
    pub designs: Vec<DesignSpec>,
    pub methods: Vec<MethodSpec>,
    pub seed: u64,
    #[serde(default)]
    pub tuning: TuningConfig,
    /// Drop failed blocks from the aggregates instead of aborting.
    #[serde(default)]
    pub skip_failed_blocks: bool,
}

impl ExperimentConfig {
    pub fn new(
        n_units: usize,
        n_periods: usize,
        m_blocks: usize,
        effect: SyntheticEffect,
        seed: u64,
    ) -> Self {
        ExperimentConfig {
            m_blocks,
            n_units,
            n_periods,
            hist_periods: 0,
            effect,
            designs: vec![DesignSpec::Opt],
            methods: vec![MethodSpec::Ols],
            seed,
            tuning: TuningConfig::default(),
            skip_failed_blocks: false,
        }
    }

    fn validate(&self, source: &PanelMatrix) -> Result<()> {
        if self.m_blocks == 0 {
            return Err(Error::invalid("need at least one block"));
        }
        if self.n_units == 0 || self.n_units > source.n_units() {
            return Err(Error::invalid(format!(
                "cannot sample N = {} units from a source with {}",
                self.n_units,
                source.n_units()
            )));
        }
        if self.hist_periods + self.n_periods > source.n_periods() {
            return Err(Error::invalid(format!(
                "hist_T + T = {} exceeds the {} source periods",
                self.hist_periods + self.n_periods,
                source.n_periods()
            )));
        }
        let tunes = self.designs.iter().any(DesignSpec::needs_history)
            || self.methods.iter().any(|m| m.needs_history(&self.tuning));
        if tunes && self.hist_periods < self.n_periods {
            return Err(Error::invalid(format!(
                "tuning needs hist_T ≥ T = {}, got hist_T = {}",
                self.n_periods, self.hist_periods
            )));
        }
        if self.tuning.hist_stride == 0 {
            return Err(Error::invalid("hist_stride must be ≥ 1"));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; stable across platforms and releases.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for block `b`, independent of how many blocks run.
pub fn block_seed(master: u64, block: usize) -> u64 {
    mix(master ^ mix(block as u64))
}

/// One sampled block: the unit subset, window start and both windows.
#[derive(Debug, Clone)]
pub struct SampledBlock {
    pub units: Vec<usize>,
    pub start: usize,
    pub history: Option<PanelMatrix>,
    pub experiment: PanelMatrix,
}

pub fn sample_block(
    source: &PanelMatrix,
    cfg: &ExperimentConfig,
    block: usize,
) -> Result<SampledBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(block_seed(cfg.seed, block));
    let units = index::sample(&mut rng, source.n_units(), cfg.n_units).into_vec();
    let span = cfg.hist_periods + cfg.n_periods;
    let start = rng.random_range(0..=source.n_periods() - span);
    let window = source.units(&units)?.periods(start, span)?;
    let history = (cfg.hist_periods > 0)
        .then(|| window.periods(0, cfg.hist_periods))
        .transpose()?;
    let experiment = window.periods(cfg.hist_periods, cfg.n_periods)?;
    Ok(SampledBlock {
        units,
        start,
        history,
        experiment,
    })
}

fn history_blocks(history: Option<&PanelMatrix>, cfg: &ExperimentConfig) -> Result<BlockSplit> {
    let history = history.ok_or_else(|| Error::invalid("tuning requested without history"))?;
    let stride = cfg.tuning.hist_stride;
    let count = (history.n_periods() - cfg.n_periods) / stride + 1;
    split_blocks(history, cfg.n_periods, count, stride)
}

fn carryover_design(cfg: &ExperimentConfig, seed: u64, d_optimal: bool) -> Result<DesignMatrix> {
    let spec = CarryoverDesignSpec::new(cfg.effect.lags(), cfg.n_periods)?;
    let path = if d_optimal {
        d_optimal_path(&spec, &cfg.tuning.dopt)?.path
    } else {
        optimal_carryover_path(&spec)?.path
    };
    realize_design(&round_counts(&path, cfg.n_units)?, cfg.n_units, seed)
}

fn build_design(
    spec: DesignSpec,
    cfg: &ExperimentConfig,
    history: Option<&PanelMatrix>,
    seed: u64,
) -> Result<DesignMatrix> {
    let (n, t) = (cfg.n_units, cfg.n_periods);
    match spec {
        DesignSpec::Opt => optimal_design(n, t, seed),
        DesignSpec::OptCo => carryover_design(cfg, seed, false),
        DesignSpec::DOpt => carryover_design(cfg, seed, true),
        DesignSpec::Ff => benchmark_design(BenchmarkKind::Ff, n, t, seed),
        DesignSpec::Ba => benchmark_design(BenchmarkKind::Ba, n, t, seed),
        DesignSpec::Ffba => benchmark_design(BenchmarkKind::Ffba, n, t, seed),
        DesignSpec::Sa => {
            let blocks = history_blocks(history, cfg)?;
            let mut sa = SaConfig::new(cfg.effect.clone(), seed);
            sa.steps_max = cfg.tuning.sa_steps;
            let start = optimal_design(n, t, seed)?;
            Ok(sa_search(&start, &blocks, &sa, &cfg.tuning.search_estimator)?.design)
        }
        DesignSpec::Kmeans(k) => {
            let history =
                history.ok_or_else(|| Error::invalid("tuning requested without history"))?;
            let strat = kmeans_stratify(history, k, seed)?;
            stratified_design(&optimal_linear_path(t)?, &strat, seed)
        }
    }
}

/// Resolve a method to a concrete estimator, tuning on the history if asked.
fn resolve_method(
    method: MethodSpec,
    cfg: &ExperimentConfig,
    design: &DesignMatrix,
    history: Option<&BlockSplit>,
) -> Result<Estimator> {
    let k0 = cfg.tuning.k0;
    let lrme = |history: Option<&BlockSplit>| -> Result<Estimator> {
        let mu = match (cfg.tuning.lrme_mu, history) {
            (Some(mu), _) => mu,
            (None, Some(blocks)) => {
                grid_search_mu(
                    blocks,
                    design,
                    &cfg.effect,
                    cfg.tuning.mu_range,
                    cfg.tuning.mu_grid,
                    k0,
                )?
                .mu
            }
            (None, None) => return Err(Error::invalid("LRME threshold needs history to tune")),
        };
        Ok(Estimator::Lrme(LrmeConfig::new(k0, mu)?))
    };
    match method {
        MethodSpec::Ols => Ok(Estimator::Ols),
        MethodSpec::Gls => Ok(Estimator::Gls { k0 }),
        MethodSpec::Lrme => lrme(history),
        MethodSpec::Auto => {
            let blocks =
                history.ok_or_else(|| Error::invalid("estimator selection needs history"))?;
            let candidates = [Estimator::Ols, Estimator::Gls { k0 }, lrme(Some(blocks))?];
            Ok(select_estimator(blocks, design, &cfg.effect, &candidates)?.estimator)
        }
    }
}

/// Outcome of one (design, method) cell in one block.
type CellOutcome = std::result::Result<(Vec<f64>, Estimator), Error>;

fn run_block(source: &PanelMatrix, cfg: &ExperimentConfig, b: usize) -> Result<Vec<CellOutcome>> {
    let sampled = sample_block(source, cfg, b)?;
    let seed = block_seed(cfg.seed, b);
    let ell = cfg.effect.lags();
    let needs_blocks = cfg.methods.iter().any(|m| m.needs_history(&cfg.tuning));
    let hist_blocks = if needs_blocks {
        Some(history_blocks(sampled.history.as_ref(), cfg)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(cfg.designs.len() * cfg.methods.len());
    for (d_idx, &spec) in cfg.designs.iter().enumerate() {
        let design = build_design(
            spec,
            cfg,
            sampled.history.as_ref(),
            mix(seed ^ (d_idx as u64 + 1)),
        );
        let treated = design.as_ref().map_err(clone_error).and_then(|d| {
            apply_synthetic_treatment(&sampled.experiment, d, &cfg.effect).map(|p| (d, p))
        });
        for &method in &cfg.methods {
            let cell = match &treated {
                Err(e) => Err(clone_error(e)),
                Ok((design, panel)) => resolve_method(method, cfg, design, hist_blocks.as_ref())
                    .and_then(|est| Ok((est.estimate(panel, design, ell)?.taus, est))),
            };
            out.push(cell);
        }
    }
    Ok(out)
}

/// Errors are not `Clone` because of the I/O variants; a design failure is
/// reported once per method, so keep its kind and message.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::NotIdentified(m) => Error::NotIdentified(m.clone()),
        Error::Numerical(m) => Error::Numerical(m.clone()),
        other => Error::InvalidInput(other.to_string()),
    }
}

pub fn run_experiment(source: &PanelMatrix, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate(source)?;
    let per_block: Vec<Vec<CellOutcome>> = (0..cfg.m_blocks)
        .into_par_iter()
        .map(|b| run_block(source, cfg, b).map_err(|e| e.in_block(b)))
        .collect::<Result<_>>()?;

    let truth = cfg.effect.taus().to_vec();
    let mut cells = Vec::new();
    let mut idx = 0;
    for &design in &cfg.designs {
        for &method in &cfg.methods {
            let mut estimates = Vec::new();
            let mut failures = Vec::new();
            for (b, outcomes) in per_block.iter().enumerate() {
                match &outcomes[idx] {
                    Ok((taus, est)) => estimates.push(BlockEstimate {
                        block: b,
                        taus: taus.clone(),
                        estimator: est.to_string(),
                    }),
                    Err(e) if cfg.skip_failed_blocks => failures.push(BlockFailure {
                        block: b,
                        kind: e.kind().to_string(),
                        message: e.to_string(),
                    }),
                    Err(e) => {
                        return Err(Error::Block {
                            block: b,
                            source: Box::new(Error::InvalidInput(format!(
                                "{design}/{method}: {e}"
                            ))),
                        })
                    }
                }
            }
            cells.push(CellSummary::from_estimates(
                design, method, &truth, estimates, failures,
            ));
            idx += 1;
        }
    }
    Ok(ExperimentReport {
        taus: truth,
        m_blocks: cfg.m_blocks,
        cells,
    })
}

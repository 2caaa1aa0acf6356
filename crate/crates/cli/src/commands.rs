use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use rollout::design::{
    benchmark_design, d_optimal_path, optimal_carryover_path, optimal_design, optimal_linear_path,
    reversible_design, stratified_design, BenchmarkKind, CarryoverDesignSpec, DOptConfig,
    DesignMatrix, FractionPath, ReversibleKind, Stratification,
};
use rollout::estimators::{estimate_feasible_gls, estimate_lrme, estimate_ols};
use rollout::harness::{emit_report, generate_synthetic_panel, run_experiment, ExperimentConfig};
use rollout::io;
use rollout::objective::{brute_force_optimum, kkt_check};
use rollout::panel::{read_panel, split_blocks, BlockSplit, PanelFormat};
use rollout::tuner::{grid_search_mu, kmeans_stratify, sa_search, select_estimator, SaConfig};
use rollout::{
    CovariateSpec, ErrorCovarianceSpec, Estimator, LrmeConfig, Method, PanelMatrix,
    SyntheticEffect, SyntheticModel,
};

use crate::{
    Balance, CliError, DesignArgs, DesignFormat, DesignKind, EffectArgs, EstimateArgs, HistoryArgs,
    OracleArgs, SaArgs, SelectArgs, SimulateArgs, TuneArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Long format is recognized by `period` and `value` columns.
fn load_panel(path: &Path) -> CliResult<PanelMatrix> {
    let text = fs::read_to_string(path)?;
    let header: Vec<String> = text
        .lines()
        .next()
        .unwrap_or("")
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let has = |name: &str| header.iter().any(|c| c == name);
    let format = if has("period") && has("value") {
        PanelFormat::Long
    } else {
        PanelFormat::Wide
    };
    Ok(read_panel(text.as_bytes(), format)?)
}

impl EffectArgs {
    fn effect(&self, ell: Option<usize>) -> CliResult<SyntheticEffect> {
        let effect = match (&self.tau, &self.taus) {
            (Some(tau), None) => SyntheticEffect::direct(*tau),
            (None, Some(taus)) if taus.len() == 1 => SyntheticEffect::direct(taus[0]),
            (None, Some(taus)) => SyntheticEffect::carryover(taus.clone())?,
            _ => return Err(usage("give exactly one of --tau and --taus")),
        };
        match ell {
            Some(ell) if ell != effect.lags() => Err(usage(format!(
                "--ell {ell} does not match {} carryover effect(s)",
                effect.taus().len()
            ))),
            _ => Ok(effect),
        }
    }
}

struct History {
    panel: PanelMatrix,
    blocks: BlockSplit,
    effect: SyntheticEffect,
}

impl HistoryArgs {
    fn load(&self) -> CliResult<History> {
        let panel = load_panel(&self.hist)?;
        let blocks = split_blocks(&panel, self.block_periods, self.m, self.stride)?;
        let effect = self.effect.effect(self.ell)?;
        Ok(History {
            panel,
            blocks,
            effect,
        })
    }

    fn design(&self, history: &History, path: Option<&Path>) -> CliResult<DesignMatrix> {
        Ok(match path {
            Some(p) => io::load_design(p, Some(self.block_periods))?,
            None => optimal_design(history.panel.n_units(), self.block_periods, self.seed)?,
        })
    }
}

fn estimator(method: Method, k0: usize, mu: Option<f64>) -> CliResult<Estimator> {
    Ok(match method {
        Method::Ols => Estimator::Ols,
        Method::Gls => Estimator::Gls { k0 },
        Method::Lrme => {
            let mu = mu.ok_or_else(|| usage("LRME needs --mu"))?;
            Estimator::Lrme(LrmeConfig::new(k0, mu)?)
        }
    })
}

pub fn design(args: &DesignArgs) -> CliResult {
    let (n, t) = (args.n_units, args.n_periods);
    let strat = match &args.strata {
        Some(p) => {
            let s = io::read_strata(fs::File::open(p)?)?;
            if s.n_units() != n {
                return Err(usage(format!(
                    "strata file lists {} units, --N is {n}",
                    s.n_units()
                )));
            }
            Some(s)
        }
        None => None,
    };
    let rounded = |path: &FractionPath| -> CliResult<DesignMatrix> {
        let single;
        let strat = match &strat {
            Some(s) => s,
            None => {
                single = Stratification::single(n)?;
                &single
            }
        };
        Ok(stratified_design(path, strat, args.seed)?)
    };
    let benchmark = |kind| -> CliResult<DesignMatrix> {
        if strat.is_some() {
            return Err(usage("benchmark designs do not take --strata"));
        }
        Ok(benchmark_design(kind, n, t, args.seed)?)
    };

    let design = match args.kind {
        DesignKind::Opt => rounded(&optimal_linear_path(t)?)?,
        DesignKind::OptCo => {
            let co = optimal_carryover_path(&CarryoverDesignSpec::new(args.ell, t)?)?;
            if co.unverified_regime {
                eprintln!(
                    "note: T = {t} is below the proven-optimal threshold for ell = {}",
                    args.ell
                );
            }
            rounded(&co.path)?
        }
        DesignKind::DOpt => {
            let spec = CarryoverDesignSpec::new(args.ell, t)?;
            rounded(&d_optimal_path(&spec, &DOptConfig::default())?.path)?
        }
        DesignKind::Ff => benchmark(BenchmarkKind::Ff)?,
        DesignKind::Ba => benchmark(BenchmarkKind::Ba)?,
        DesignKind::Ffba => benchmark(BenchmarkKind::Ffba)?,
        DesignKind::Reversible => {
            let kind = match args.balance {
                Balance::Time => ReversibleKind::Time,
                Balance::Unit => ReversibleKind::Unit,
                Balance::Twoway => ReversibleKind::Twoway,
                Balance::Stratified => ReversibleKind::Stratified,
            };
            let rev = reversible_design(kind, n, t, strat.as_ref(), args.seed)?;
            if rev.relaxed {
                eprintln!("note: exact balance is impossible at this parity; nearest split used");
            }
            rev.design
        }
    };

    let mut buf = Vec::new();
    match args.format {
        DesignFormat::Matrix => io::write_design(&design, &mut buf)?,
        DesignFormat::Adoption => io::write_adoption(&design, &mut buf)?,
    }
    write_output(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

pub fn objective_eval(path: &Path, ell: usize) -> CliResult {
    let omega = io::load_path(path)?;
    if omega.len() <= ell + 1 {
        return Err(usage(format!(
            "a path of length {} is too short for ell = {ell}",
            omega.len()
        )));
    }
    let report = kkt_check(&omega, ell);
    print_json(&json!({ "ell": ell, "report": report }))
}

pub fn oracle(args: &OracleArgs) -> CliResult {
    let cov = match &args.factor_loadings {
        Some(p) => {
            let loadings = io::read_matrix(fs::File::open(p)?)?;
            if loadings.nrows() != args.n_units {
                return Err(usage(format!(
                    "loadings file has {} units, --N is {}",
                    loadings.nrows(),
                    args.n_units
                )));
            }
            ErrorCovarianceSpec::factor(args.sigma2, loadings)?
        }
        None => ErrorCovarianceSpec::iid(args.sigma2)?,
    };
    let result = brute_force_optimum(args.n_units, args.n_periods, &cov, args.ell)?;
    print_json(&result)
}

pub fn estimate(args: &EstimateArgs) -> CliResult {
    let panel = load_panel(&args.panel.panel)?;
    let design = io::load_design(&args.design, Some(panel.n_periods()))?;
    let covars = match &args.covariates {
        Some(p) => io::read_covariates(fs::File::open(p)?, panel.unit_ids())?,
        None => CovariateSpec::none(),
    };
    let result = match args.method {
        Method::Ols => estimate_ols(&panel, &design, args.ell, &covars)?,
        Method::Gls => estimate_feasible_gls(&panel, &design, args.ell, &covars, args.k0)?,
        Method::Lrme => {
            if args.covariates.is_some() {
                return Err(usage("LRME does not take covariates"));
            }
            let Estimator::Lrme(cfg) = estimator(Method::Lrme, args.k0, args.mu)? else {
                unreachable!()
            };
            estimate_lrme(&panel, &design, args.ell, &cfg)?
        }
    };
    print_json(&result)
}

pub fn search_sa(args: &SaArgs) -> CliResult {
    let history = args.history.load()?;
    let start = args.history.design(&history, args.start.as_deref())?;
    let mut cfg = SaConfig::new(history.effect.clone(), args.history.seed);
    cfg.steps_max = args.steps;
    let est = estimator(args.method, args.k0, args.mu)?;
    print_json(&sa_search(&start, &history.blocks, &cfg, &est)?)
}

pub fn search_kmeans(hist: &Path, k: usize, seed: u64) -> CliResult {
    let panel = load_panel(hist)?;
    let strat = kmeans_stratify(&panel, k, seed)?;
    print_json(&json!({
        "units": panel.unit_ids(),
        "labels": strat.labels(),
        "group_sizes": strat.group_sizes(),
    }))
}

pub fn tune_mu(args: &TuneArgs) -> CliResult {
    let history = args.history.load()?;
    let design = args.history.design(&history, args.design.as_deref())?;
    let grid = &args.grid;
    let search = grid_search_mu(
        &history.blocks,
        &design,
        &history.effect,
        (grid.mu_min, grid.mu_max),
        grid.grid,
        args.k0,
    )?;
    print_json(&search)
}

pub fn select(args: &SelectArgs) -> CliResult {
    let history = args.history.load()?;
    let design = args.history.design(&history, args.design.as_deref())?;
    let mu = match args.mu {
        Some(mu) => mu,
        None => {
            let grid = &args.grid;
            grid_search_mu(
                &history.blocks,
                &design,
                &history.effect,
                (grid.mu_min, grid.mu_max),
                grid.grid,
                args.k0,
            )?
            .mu
        }
    };
    let candidates = [
        Estimator::Ols,
        Estimator::Gls { k0: args.k0 },
        Estimator::Lrme(LrmeConfig::new(args.k0, mu)?),
    ];
    let selection = select_estimator(&history.blocks, &design, &history.effect, &candidates)?;
    let labels: Vec<String> = candidates.iter().map(ToString::to_string).collect();
    print_json(&json!({
        "selected": selection.estimator.to_string(),
        "max_error": selection.max_error,
        "candidates": labels,
        "errors": selection.errors,
        "estimator": selection.estimator,
    }))
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let source = match (&args.data.source, &args.data.synthetic) {
        (Some(path), None) => load_panel(path)?,
        (None, Some(spec)) => {
            let model: SyntheticModel = spec.parse()?;
            let units = args.source_units.unwrap_or(2 * args.n_units);
            let periods = args
                .source_periods
                .unwrap_or(2 * (args.hist_periods + args.n_periods));
            generate_synthetic_panel(units, periods, &model, args.seed)?
        }
        _ => return Err(usage("give exactly one of --source and --synthetic")),
    };
    let effect = args.effect.effect(None)?;
    let mut cfg = ExperimentConfig::new(args.n_units, args.n_periods, args.m, effect, args.seed);
    cfg.hist_periods = args.hist_periods;
    cfg.designs = args.designs.clone();
    cfg.methods = args.methods.clone();
    cfg.skip_failed_blocks = args.skip_failed;
    cfg.tuning.k0 = args.k0;
    cfg.tuning.lrme_mu = args.mu;
    cfg.tuning.hist_stride = args.stride;
    let report = run_experiment(&source, &cfg)?;
    let mut text = emit_report(&report, args.format)?;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    write_output(args.out.as_deref(), &text)
}

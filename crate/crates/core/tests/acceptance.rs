//! The twelve acceptance criteria. Each one prints a single PASS/FAIL line
//! with its measured quantity and runtime; the test fails if any criterion
//! does.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rollout::design::{
    benchmark_design, optimal_carryover_path, optimal_design, optimal_linear_path, realize_design,
    round_counts, stratified_design, BenchmarkKind, CarryoverDesignSpec, DesignMatrix, Regime,
    Stratification,
};
use rollout::estimators::{estimate_feasible_gls, estimate_lrme, estimate_ols, LrmeConfig};
use rollout::harness::{
    generate_synthetic_panel, run_experiment, DesignSpec, ExperimentConfig, MethodSpec,
    SyntheticModel,
};
use rollout::objective::{
    brute_force_optimum, brute_force_search, carryover_precision, gls_precision, kkt_check,
    ols_variance, quadratic_objective, OracleProblem, DEFAULT_SEARCH_LIMIT,
};
use rollout::panel::{apply_synthetic_treatment, BlockSplit};
use rollout::tuner::{minimax_error, sa_search, SaConfig};
use rollout::{CovariateSpec, ErrorCovarianceSpec, Estimator, PanelMatrix, SyntheticEffect};

type Outcome = Result<String, String>;
type Criterion = (u32, fn() -> Outcome, Duration);

fn gaussian(n: usize, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(rng))
}

fn two_way(n: usize, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let alpha = gaussian(n, 1, rng);
    let beta = gaussian(1, t, rng);
    &alpha * DMatrix::from_element(1, t, 1.0) + DMatrix::from_element(n, 1, 1.0) * beta
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in 2..=20 {
        let f = quadratic_objective(&optimal_linear_path(t).unwrap());
        let tf = t as f64;
        worst = worst.max((f + (tf + 1.0) * (tf - 1.0) / (3.0 * tf)).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max deviation {worst:.1e} over T = 2..20"))
    } else {
        Err(format!("max deviation {worst:.3e}"))
    }
}

fn criterion_2() -> Outcome {
    let iid = ErrorCovarianceSpec::iid(1.0).unwrap();
    let mut violations = Vec::new();
    let mut cells = 0;
    for n in 3..=10 {
        for t in 2..=5 {
            cells += 1;
            let rounded = ols_variance(&optimal_design(n, t, 0).unwrap(), 1.0).unwrap();
            let oracle = brute_force_optimum(n, t, &iid, 0).unwrap().value;
            let bound = oracle / (1.0 - 1.0 / (n * n) as f64);
            if rounded > bound * (1.0 + 1e-12) {
                violations.push(format!(
                    "(N={n},T={t}) ratio {:.4} > {:.4}",
                    rounded / oracle,
                    bound / oracle
                ));
            }
        }
    }
    if violations.is_empty() {
        Ok(format!("{cells} cells within 1/(1-1/N²)"))
    } else {
        Err(format!(
            "{} of {cells} cells exceed the bound: {}",
            violations.len(),
            violations.join("; ")
        ))
    }
}

fn two_strata_covariate(n1: usize, n2: usize) -> CovariateSpec {
    let x = DMatrix::from_fn(n1 + n2, 1, |i, _| if i < n1 { 1.0 } else { -1.0 });
    CovariateSpec::new(x).unwrap()
}

fn criterion_3() -> Outcome {
    let iid = ErrorCovarianceSpec::iid(1.0).unwrap();
    let mut violations = Vec::new();
    let mut cells = 0;
    for n_min in 3..=6 {
        for n2 in [n_min, n_min + 1] {
            for t in 2..=5 {
                cells += 1;
                let covars = two_strata_covariate(n_min, n2);
                let strat =
                    Stratification::new((0..n_min + n2).map(|i| usize::from(i >= n_min)).collect())
                        .unwrap();
                let design =
                    stratified_design(&optimal_linear_path(t).unwrap(), &strat, 0).unwrap();
                let rounded = 1.0 / gls_precision(&design, &iid, &covars).unwrap();
                let oracle = brute_force_search(&OracleProblem {
                    n_units: n_min + n2,
                    n_periods: t,
                    cov: &iid,
                    covars: &covars,
                    ell: 0,
                    limit: DEFAULT_SEARCH_LIMIT,
                })
                .unwrap()
                .value;
                let factor = 1.0 / (1.0 - 2.0 / (n_min * n_min) as f64);
                if rounded > oracle * factor * (1.0 + 1e-12) {
                    violations.push(format!(
                        "(n1={n_min},n2={n2},T={t}) ratio {:.4} > {factor:.4}",
                        rounded / oracle
                    ));
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(format!("{cells} cells within 1/(1-2/N_min²)"))
    } else {
        Err(format!(
            "{} of {cells} cells exceed the bound: {}",
            violations.len(),
            violations.join("; ")
        ))
    }
}

fn closed_form_path(ell: usize, t: usize) -> Vec<f64> {
    let tf = t as f64;
    (1..=t)
        .map(|s| {
            let sf = s as f64;
            match ell {
                1 => -1.0 + 2.0 * (sf - 1.0) / (tf - 1.0),
                2 => {
                    let edge = 2.0 / (2.0 * tf - 5.0);
                    match s {
                        1 => -1.0,
                        2 => -1.0 + edge,
                        _ if s == t - 1 => 1.0 - edge,
                        _ if s == t => 1.0,
                        _ => -1.0 + (2.0 * sf - 3.0) / (tf - 2.0),
                    }
                }
                3 => {
                    let den = 6.0 * tf * tf - 44.0 * tf + 79.0;
                    match s {
                        1 => -1.0,
                        2 => -1.0 + 6.0 / den,
                        3 => -1.0 + 12.0 * (tf - 4.0) / den,
                        _ if s == t - 2 => 1.0 - 12.0 * (tf - 4.0) / den,
                        _ if s == t - 1 => 1.0 - 6.0 / den,
                        _ if s == t => 1.0,
                        _ => -1.0 + (2.0 * sf - 4.0) / (tf - 3.0),
                    }
                }
                _ => unreachable!(),
            }
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let (mut dev, mut kkt): (f64, f64) = (0.0, 0.0);
    for ell in 1..=3 {
        for t in 8..=20 {
            let path = optimal_carryover_path(&CarryoverDesignSpec::new(ell, t).unwrap())
                .unwrap()
                .path;
            let w = path.as_slice();
            for (a, b) in w.iter().zip(closed_form_path(ell, t)) {
                dev = dev.max((a - b).abs());
            }
            kkt = kkt.max(kkt_check(&path, ell).kkt_residual.unwrap());
            if (0..t).any(|s| w[s] != -w[t - 1 - s]) {
                return Err(format!(
                    "path for ℓ={ell}, T={t} is not exactly antisymmetric"
                ));
            }
        }
    }
    if dev <= 1e-12 && kkt <= 1e-9 {
        Ok(format!(
            "max formula deviation {dev:.1e}, max KKT residual {kkt:.1e}"
        ))
    } else {
        Err(format!(
            "formula deviation {dev:.3e}, KKT residual {kkt:.3e}"
        ))
    }
}

fn criterion_5() -> Outcome {
    let iid = ErrorCovarianceSpec::iid(1.0).unwrap();
    let mut ratios = Vec::new();
    for n in [4, 6] {
        for t in [4, 5] {
            let path = optimal_carryover_path(&CarryoverDesignSpec::new(1, t).unwrap())
                .unwrap()
                .path;
            let design = realize_design(&round_counts(&path, n).unwrap(), n, 0).unwrap();
            let rounded = carryover_precision(&design, 1).trace();
            let oracle = brute_force_optimum(n, t, &iid, 1).unwrap().precision;
            ratios.push((n, t, rounded / oracle));
        }
    }
    let listed: Vec<String> = ratios
        .iter()
        .map(|(n, t, r)| format!("(N={n},T={t}) {r:.4}"))
        .collect();
    if ratios.iter().all(|r| r.2 >= 0.9) {
        Ok(format!("trace ratio to optimum: {}", listed.join(", ")))
    } else {
        Err(format!("trace ratio below 0.9: {}", listed.join(", ")))
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let none = CovariateSpec::none();
    let mut worst = [0.0f64; 3];
    for rep in 0..20 {
        let (n, t) = (10 + rep % 7, 6 + rep % 5);
        let design = optimal_design(n, t, rep as u64).unwrap();
        let control = PanelMatrix::from_values(two_way(n, t, &mut rng)).unwrap();
        let effects = [
            SyntheticEffect::direct(gaussian(1, 1, &mut rng)[0]),
            SyntheticEffect::carryover(vec![-0.007, -0.002, -0.001]).unwrap(),
        ];
        for effect in &effects {
            let ell = effect.lags();
            let panel = apply_synthetic_treatment(&control, &design, effect).unwrap();
            let err = |taus: &[f64]| {
                taus.iter()
                    .zip(effect.taus())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };
            worst[0] = worst[0].max(err(&estimate_ols(&panel, &design, ell, &none)
                .unwrap()
                .taus));
            worst[1] = worst[1].max(err(&estimate_feasible_gls(&panel, &design, ell, &none, 1)
                .unwrap()
                .taus));

            // LRME's own model adds a rank-one interactive term.
            let u = gaussian(n, 1, &mut rng);
            let v = gaussian(1, t, &mut rng);
            let with_factor = panel.with_values(panel.values() + &u * &v).unwrap();
            let cfg = LrmeConfig::new(1, 0.0)
                .unwrap()
                .with_tolerance(1e-14, 20_000)
                .unwrap();
            worst[2] = worst[2].max(err(&estimate_lrme(&with_factor, &design, ell, &cfg)
                .unwrap()
                .taus));
        }
    }
    let summary = format!(
        "max |τ̂ − τ|: OLS {:.1e}, GLS {:.1e}, LRME {:.1e}",
        worst[0], worst[1], worst[2]
    );
    if worst.iter().all(|&w| w <= 1e-8) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn criterion_7() -> Outcome {
    let (n, t, reps) = (50, 7, 300);
    let design = optimal_design(n, t, 7).unwrap();
    let model = SyntheticModel::factor(1, 1.0);
    let none = CovariateSpec::none();
    let (mut ols, mut gls) = (Vec::new(), Vec::new());
    for r in 0..reps {
        let control = generate_synthetic_panel(n, t, &model, 7_000 + r).unwrap();
        let panel =
            apply_synthetic_treatment(&control, &design, &SyntheticEffect::direct(-0.1)).unwrap();
        ols.push(estimate_ols(&panel, &design, 0, &none).unwrap().taus[0]);
        gls.push(
            estimate_feasible_gls(&panel, &design, 0, &none, 1)
                .unwrap()
                .taus[0],
        );
    }
    let (v_ols, v_gls) = (sample_variance(&ols), sample_variance(&gls));
    let summary = format!("Var(GLS) {v_gls:.4e} vs Var(OLS) {v_ols:.4e} over {reps} replications");
    if v_gls <= v_ols {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_8() -> Outcome {
    let source = generate_synthetic_panel(80, 60, &SyntheticModel::factor(1, 1.0), 808).unwrap();
    let mut cfg = ExperimentConfig::new(50, 7, 500, SyntheticEffect::direct(-0.1), 8);
    cfg.designs = vec![
        DesignSpec::Opt,
        DesignSpec::Ffba,
        DesignSpec::Ff,
        DesignSpec::Ba,
    ];
    cfg.methods = vec![MethodSpec::Ols, MethodSpec::Gls];
    let report = run_experiment(&source, &cfg).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for method in [MethodSpec::Ols, MethodSpec::Gls] {
        let rmse = |d| report.cell(d, method).unwrap().rmse;
        let (opt, ffba, ff, ba) = (
            rmse(DesignSpec::Opt),
            rmse(DesignSpec::Ffba),
            rmse(DesignSpec::Ff),
            rmse(DesignSpec::Ba),
        );
        ok &= opt < ffba && ffba < ff && opt < ba;
        lines.push(format!(
            "{method}: OPT {opt:.4} FFBA {ffba:.4} FF {ff:.4} BA {ba:.4}"
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn criterion_9() -> Outcome {
    let source = generate_synthetic_panel(80, 60, &SyntheticModel::factor(1, 1.0), 909).unwrap();
    let effect = SyntheticEffect::carryover(vec![-0.007, -0.002, -0.001]).unwrap();
    let mut cfg = ExperimentConfig::new(50, 7, 300, effect, 9);
    cfg.designs = vec![DesignSpec::Opt, DesignSpec::OptCo];
    cfg.methods = vec![MethodSpec::Gls];
    let report = run_experiment(&source, &cfg).map_err(|e| e.to_string())?;
    let opt = report.cell(DesignSpec::Opt, MethodSpec::Gls).unwrap().rmse;
    let co = report
        .cell(DesignSpec::OptCo, MethodSpec::Gls)
        .unwrap()
        .rmse;
    let summary = format!("GLS RMSE: OPT-CO {co:.5} vs OPT {opt:.5}");
    if co <= opt {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Two loading groups of six units, rank-one interactive term, no noise.
fn stratifiable_instance() -> (BlockSplit, DesignMatrix) {
    let (half, t) = (6, 3);
    let n = 2 * half;
    let u = DVector::from_fn(n, |i, _| if i < half { 1.0 } else { -1.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let blocks = (0..4)
        .map(|_| {
            let v = gaussian(t, 1, &mut rng);
            PanelMatrix::from_values(two_way(n, t, &mut rng) + &u * v.transpose()).unwrap()
        })
        .collect();
    // Optimal counts, but the +1 group is treated first.
    let counts = round_counts(&optimal_linear_path(t).unwrap(), n).unwrap();
    let entries = DMatrix::from_fn(n, t, |i, s| if i < counts[s] { 1i8 } else { -1 });
    (
        BlockSplit::from_blocks(blocks).unwrap(),
        DesignMatrix::new(entries, Regime::Irreversible).unwrap(),
    )
}

fn criterion_10() -> Outcome {
    let (blocks, start) = stratifiable_instance();
    let effect = SyntheticEffect::direct(-0.1);
    let start_error = minimax_error(&start, &blocks, &effect, &Estimator::Ols).unwrap();
    let mut finals = Vec::new();
    for seed in 0..10 {
        let res = sa_search(
            &start,
            &blocks,
            &SaConfig::new(effect.clone(), seed),
            &Estimator::Ols,
        )
        .map_err(|e| e.to_string())?;
        if res.max_error > start_error {
            return Err(format!(
                "seed {seed} ended above the start: {} > {start_error}",
                res.max_error
            ));
        }
        finals.push(res.max_error);
    }
    let worst = finals.iter().copied().fold(0.0, f64::max);
    let summary = format!("start {start_error:.3e}, worst final over 10 seeds {worst:.1e}");
    if worst <= 1e-8 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let none = CovariateSpec::none();
    let mut worst_rise: f64 = 0.0;
    for rep in 0..20 {
        let (n, t) = (8 + rep % 9, 5 + rep % 4);
        let design = optimal_design(n, t, rep as u64).unwrap();
        let y = two_way(n, t, &mut rng)
            + gaussian(n, 2, &mut rng) * gaussian(2, t, &mut rng)
            + gaussian(n, t, &mut rng) * 0.3;
        let panel = PanelMatrix::from_values(y).unwrap();
        let mu = 0.05 + 0.2 * rep as f64;
        let cfg = LrmeConfig::new(1 + rep % 2, mu).unwrap();
        let fit = estimate_lrme(&panel, &design, 0, &cfg).unwrap();
        for w in fit.diagnostics.objective_path.windows(2) {
            worst_rise = worst_rise.max((w[1] - w[0]) / w[0].max(1.0));
        }

        let sigma_max = panel.values().singular_values().max();
        let heavy = LrmeConfig::new(1, 1.01 * sigma_max).unwrap();
        let lrme = estimate_lrme(&panel, &design, 0, &heavy).unwrap();
        let ols = estimate_ols(&panel, &design, 0, &none).unwrap();
        if lrme.taus != ols.taus || lrme.alpha != ols.alpha || lrme.beta != ols.beta {
            return Err(format!("instance {rep}: μ = 1.01σ_max differs from OLS"));
        }
    }
    if worst_rise <= 1e-12 {
        Ok(format!(
            "largest relative objective rise {worst_rise:.1e}; μ = 1.01σ_max reproduces OLS"
        ))
    } else {
        Err(format!("objective rose by {worst_rise:.3e}"))
    }
}

fn criterion_12() -> Outcome {
    let reps = 2000;
    let none = CovariateSpec::none();
    let cases: Vec<(&str, DesignMatrix)> = vec![
        (
            "N=8 T=2 counts [2,6]",
            realize_design(&[2, 6], 8, 1).unwrap(),
        ),
        ("N=10 T=5 OPT", optimal_design(10, 5, 2).unwrap()),
        ("N=20 T=7 OPT", optimal_design(20, 7, 3).unwrap()),
        (
            "N=12 T=4 FFBA",
            benchmark_design(BenchmarkKind::Ffba, 12, 4, 4).unwrap(),
        ),
        (
            "N=9 T=6 FF",
            benchmark_design(BenchmarkKind::Ff, 9, 6, 5).unwrap(),
        ),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, (label, design)) in cases.iter().enumerate() {
        let (n, t) = (design.n_units(), design.n_periods());
        let mut rng = ChaCha8Rng::seed_from_u64(1200 + k as u64);
        let fixed = two_way(n, t, &mut rng);
        let estimates: Vec<f64> = (0..reps)
            .map(|_| {
                let y = &fixed + design.indicator() * 0.3 + gaussian(n, t, &mut rng);
                let panel = PanelMatrix::from_values(y).unwrap();
                estimate_ols(&panel, design, 0, &none).unwrap().taus[0]
            })
            .collect();
        // τ̂ is on the treated-minus-control scale, twice the ±1 coefficient.
        let empirical = sample_variance(&estimates) / 4.0;
        let theory = ols_variance(design, 1.0).unwrap();
        let se = empirical * (2.0 / (reps - 1) as f64).sqrt();
        let z = (empirical - theory) / se;
        ok &= z.abs() <= 3.0;
        lines.push(format!(
            "{label}: {empirical:.4e} vs {theory:.4e} (z = {z:+.2})"
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 12] = [
        (1, criterion_1, Duration::from_secs(1)),
        (2, criterion_2, Duration::from_secs(120)),
        (3, criterion_3, Duration::from_secs(120)),
        (4, criterion_4, Duration::from_secs(1)),
        (5, criterion_5, Duration::from_secs(120)),
        (6, criterion_6, Duration::from_secs(30)),
        (7, criterion_7, Duration::from_secs(120)),
        (8, criterion_8, Duration::from_secs(300)),
        (9, criterion_9, Duration::from_secs(300)),
        (10, criterion_10, Duration::from_secs(60)),
        (11, criterion_11, Duration::from_secs(30)),
        (12, criterion_12, Duration::from_secs(120)),
    ];
    let mut failed = Vec::new();
    for (id, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (verdict, detail) = match (&outcome, elapsed <= budget) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the {budget:?} budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if verdict == "FAIL" {
            failed.push(id);
        }
        println!(
            "criterion {id:>2}: {verdict} ({:.2}s) {detail}",
            elapsed.as_secs_f64()
        );
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

use std::io::Write;

use log::warn;
use serde::Serialize;
use tisp::experiments::{run_spectral, SpectralConfig, SpectralMethod, SpectralSummary, TuningMode};
use tisp::screening::{screen_proportional, ScreenOptions};
use tisp::simulation::{build_dictionary, gen_ar1_glm, gen_twinsine, Ar1Design, TwinSineSpec, TRAIN_STREAM};
use tisp::solver::{calibrate, resolve_k0, CalibrationMode};
use tisp::tuning::{lambda_grid, scv, solution_path, ScvMode, ScvOptions};
use tisp::{tisp_fit, FitResult, GlmFamily, Problem, SolverOptions, ThresholdRule};

use crate::args::{
    parse_rule, CriterionArg, FitArgs, Format, GridArgs, ModelArgs, PathArgs, ScreenArgs, SimKind,
    SimulateArgs, SpectralArgs, TuneArgs, TuningArg,
};
use crate::data::{read_dataset, read_groups, write_dataset};
use crate::error::CliError;
use crate::output::{index_list, sig10, sink, write_csv, write_json};

struct Setup {
    problem: Problem,
    rule: ThresholdRule,
    opts: SolverOptions,
    k0: f64,
    k0_heuristic: bool,
}

fn setup(m: &ModelArgs) -> Result<Setup, CliError> {
    let rule = parse_rule(&m.rule, m.eta)?;
    if !(m.omega > 0.0 && m.omega <= 2.0) {
        return Err(CliError::Config(format!("--omega must lie in (0, 2], got {}", m.omega)));
    }
    if m.k0.is_some_and(|k| !(k.is_finite() && k > 0.0)) {
        return Err(CliError::Config("--k0 must be positive".into()));
    }
    let data = read_dataset(&m.data)?;
    let family: GlmFamily = m.family.into();
    family.check_support(&data.y)?;
    let mut problem = Problem::new(data.x, data.y, family).with_intercept(m.intercept);
    if let Some(path) = &m.groups {
        let groups = read_groups(path, problem.n_features())?;
        problem = problem.with_groups(groups);
    }
    let problem = problem.with_rule(rule);
    let mut opts = SolverOptions::default().with_omega(m.omega);
    opts.max_iter = m.max_iter;
    if let Some(k0) = m.k0 {
        opts = opts.with_k0(k0);
    }
    let (k0, k0_heuristic) = resolve_k0(&problem, &opts)?;
    if k0_heuristic {
        warn!("k0 = {k0} is a heuristic bound for this family");
    }
    Ok(Setup { problem, rule, opts: opts.with_k0(k0), k0, k0_heuristic })
}

fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|j| j + 1).collect()
}

#[derive(Serialize)]
struct Calibrated {
    beta: Vec<f64>,
    intercept: f64,
    flagged: bool,
}

#[derive(Serialize)]
struct FitReport {
    family: &'static str,
    rule: ThresholdRule,
    lambda: f64,
    k0: f64,
    k0_heuristic: bool,
    omega_used: f64,
    relaxation_fallback: bool,
    converged: bool,
    iterations: usize,
    fixed_point_residual: f64,
    descent_violations: usize,
    objective: f64,
    intercept: f64,
    beta: Vec<f64>,
    /// 1-based.
    support: Vec<usize>,
    objective_trace: Vec<f64>,
    calibrated: Option<Calibrated>,
    warnings: Vec<String>,
}

fn solver_check(fit: &FitResult) {
    for w in &fit.warnings {
        warn!("{w}");
    }
    if !fit.converged {
        warn!("not converged after {} iterations", fit.iterations);
    }
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let s = setup(&a.model)?;
    if !(a.lambda.is_finite() && a.lambda >= 0.0) {
        return Err(CliError::Config(format!("--lambda must be >= 0, got {}", a.lambda)));
    }
    let problem = s.problem.clone().with_lambda(a.lambda);
    let fit = tisp_fit(&problem, &s.opts)?;
    solver_check(&fit);
    let calibrated = if a.calibrate {
        let mode = match s.rule {
            ThresholdRule::HardRidge { eta } => CalibrationMode::RestrictedRidge { eta },
            _ => CalibrationMode::RestrictedMle,
        };
        let c = calibrate(&problem.scaled(s.k0), &fit.support(), mode)?;
        Some(Calibrated {
            beta: (c.beta / s.k0).iter().copied().collect(),
            intercept: c.intercept,
            flagged: c.flagged,
        })
    } else {
        None
    };
    let report = FitReport {
        family: problem.family.name(),
        rule: s.rule,
        lambda: a.lambda,
        k0: s.k0,
        k0_heuristic: s.k0_heuristic,
        omega_used: fit.omega_used,
        relaxation_fallback: fit.relaxation_fallback,
        converged: fit.converged,
        iterations: fit.iterations,
        fixed_point_residual: fit.fixed_point_residual,
        descent_violations: fit.descent_violations,
        objective: fit.final_objective(),
        intercept: fit.intercept,
        beta: fit.beta.iter().copied().collect(),
        support: one_based(&fit.support()),
        objective_trace: fit.objective_trace.clone(),
        calibrated,
        warnings: fit.warnings.clone(),
    };
    let mut out = sink(a.output.out.as_deref())?;
    match a.output.format {
        Format::Json => write_json(&mut out, &report),
        Format::Csv => {
            eprintln!(
                "k0 = {}, converged = {}, iterations = {}, objective = {}",
                sig10(report.k0),
                report.converged,
                report.iterations,
                sig10(report.objective)
            );
            let mut header = vec!["term", "estimate"];
            if report.calibrated.is_some() {
                header.push("calibrated");
            }
            let mut rows = Vec::new();
            let mut push = |name: String, est: f64, cal: Option<f64>| {
                let mut row = vec![name, sig10(est)];
                row.extend(cal.map(sig10));
                rows.push(row);
            };
            push("intercept".into(), report.intercept, report.calibrated.as_ref().map(|c| c.intercept));
            for (j, &b) in report.beta.iter().enumerate() {
                push(format!("x{}", j + 1), b, report.calibrated.as_ref().map(|c| c.beta[j]));
            }
            write_csv(&mut out, &header, &rows)
        }
    }
}

fn grid_for(s: &Setup, g: &GridArgs) -> Result<tisp::tuning::LambdaGrid, CliError> {
    Ok(lambda_grid(&s.problem, s.k0, g.grid_size, g.min_ratio)?)
}

#[derive(Serialize)]
struct PathPoint {
    lambda: f64,
    converged: bool,
    iterations: usize,
    objective: f64,
    intercept: f64,
    support: Vec<usize>,
    beta: Vec<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct PathReport {
    k0: f64,
    lambda_max: f64,
    rule: ThresholdRule,
    points: Vec<PathPoint>,
}

pub fn path(a: &PathArgs) -> Result<(), CliError> {
    let s = setup(&a.model)?;
    let grid = grid_for(&s, &a.grid)?;
    let path = solution_path(&s.problem, &grid, &s.opts);
    let p = s.problem.n_features();
    let points: Vec<PathPoint> = path
        .fits
        .iter()
        .zip(&grid.values)
        .map(|(f, &lambda)| match f {
            Ok(fit) => PathPoint {
                lambda,
                converged: fit.converged,
                iterations: fit.iterations,
                objective: fit.final_objective(),
                intercept: fit.intercept,
                support: one_based(&fit.support()),
                beta: fit.beta.iter().copied().collect(),
                error: None,
            },
            Err(e) => PathPoint {
                lambda,
                converged: false,
                iterations: 0,
                objective: f64::NAN,
                intercept: 0.0,
                support: vec![],
                beta: vec![0.0; p],
                error: Some(e.to_string()),
            },
        })
        .collect();
    if points.iter().all(|pt| pt.error.is_some()) {
        return Err(CliError::Solver("every fit on the path failed".into()));
    }
    let report = PathReport { k0: s.k0, lambda_max: grid.lambda_max, rule: s.rule, points };
    let mut out = sink(a.output.out.as_deref())?;
    match a.output.format {
        Format::Json => write_json(&mut out, &report),
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .points
                .iter()
                .map(|pt| {
                    vec![
                        sig10(pt.lambda),
                        pt.support.len().to_string(),
                        pt.support.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";"),
                        sig10(pt.objective),
                        sig10(pt.intercept),
                        pt.iterations.to_string(),
                        pt.converged.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &mut out,
                &["lambda", "size", "support", "objective", "intercept", "iterations", "converged"],
                &rows,
            )
        }
    }
}

#[derive(Serialize)]
struct TuneRow {
    lambda: f64,
    support: Vec<usize>,
    df: f64,
    scv: f64,
    scv_aic: f64,
    scv_bic: f64,
    eta_per_fold: Option<Vec<f64>>,
    failed: bool,
    flagged: bool,
}

#[derive(Serialize)]
struct TuneReport {
    n: usize,
    k0: f64,
    folds: usize,
    seed: u64,
    criterion: ScvMode,
    selected: Option<usize>,
    selected_lambda: Option<f64>,
    selected_support: Option<Vec<usize>>,
    selected_beta: Option<Vec<f64>>,
    selected_intercept: Option<f64>,
    rows: Vec<TuneRow>,
}

pub fn tune(a: &TuneArgs) -> Result<(), CliError> {
    let s = setup(&a.model)?;
    if a.folds < 2 || a.folds > s.problem.n_obs() {
        return Err(CliError::Config(format!(
            "--folds must lie in 2..={}, got {}",
            s.problem.n_obs(),
            a.folds
        )));
    }
    let grid = grid_for(&s, &a.grid)?;
    let mode = match a.criterion {
        CriterionArg::Plain => ScvMode::Plain,
        CriterionArg::Aic => ScvMode::Aic,
        CriterionArg::Bic => ScvMode::Bic,
    };
    let report = scv(
        &s.problem,
        &grid,
        &ScvOptions { folds: a.folds, mode, rule_class: None, seed: a.seed, solver: s.opts.clone() },
    )?;
    let selected = report.selected();
    let chosen = selected.and_then(|l| report.fits[l].as_ref());
    let out_report = TuneReport {
        n: report.n,
        k0: report.k0,
        folds: a.folds,
        seed: a.seed,
        criterion: mode,
        selected,
        selected_lambda: selected.map(|l| report.rows[l].lambda),
        selected_support: selected.map(|l| one_based(&report.rows[l].pattern)),
        selected_beta: chosen.map(|f| f.beta.iter().copied().collect()),
        selected_intercept: chosen.map(|f| f.intercept),
        rows: report
            .rows
            .iter()
            .map(|r| TuneRow {
                lambda: r.lambda,
                support: one_based(&r.pattern),
                df: r.df,
                scv: r.scv,
                scv_aic: r.scv_aic,
                scv_bic: r.scv_bic,
                eta_per_fold: r.eta_per_fold.clone(),
                failed: r.failed,
                flagged: r.flagged,
            })
            .collect(),
    };
    if selected.is_none() {
        return Err(CliError::Solver("no grid point could be scored".into()));
    }
    let mut out = sink(a.output.out.as_deref())?;
    match a.output.format {
        Format::Json => write_json(&mut out, &out_report),
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .enumerate()
                .map(|(l, r)| {
                    vec![
                        sig10(r.lambda),
                        index_list(&r.pattern),
                        sig10(r.df),
                        sig10(r.scv),
                        sig10(r.scv_aic),
                        sig10(r.scv_bic),
                        r.failed.to_string(),
                        r.flagged.to_string(),
                        (Some(l) == selected).to_string(),
                    ]
                })
                .collect();
            write_csv(
                &mut out,
                &["lambda", "support", "df", "scv", "scv_aic", "scv_bic", "failed", "flagged", "selected"],
                &rows,
            )
        }
    }
}

#[derive(Serialize)]
struct ScreenReport {
    alpha: f64,
    kept_count: usize,
    k0: f64,
    iterations: usize,
    oscillating: bool,
    /// Groups (columns when ungrouped), 1-based.
    kept: Vec<usize>,
    kept_columns: Vec<usize>,
    first_kept: Vec<usize>,
    beta: Vec<f64>,
    intercept: f64,
}

pub fn screen(a: &ScreenArgs) -> Result<(), CliError> {
    let s = setup(&a.model)?;
    if !(a.alpha > 0.0 && a.alpha.is_finite()) {
        return Err(CliError::Config(format!("--alpha must be positive, got {}", a.alpha)));
    }
    let opts = ScreenOptions { max_iter: a.screen_iter, k0: a.model.k0 };
    let r = screen_proportional(&s.problem, a.alpha, s.rule, &opts)?;
    if r.oscillating {
        warn!("kept set did not stabilize within {} iterations", a.screen_iter);
    }
    let report = ScreenReport {
        alpha: a.alpha,
        kept_count: r.kept.len(),
        k0: r.k0_used,
        iterations: r.iterations,
        oscillating: r.oscillating,
        kept: one_based(&r.kept),
        kept_columns: one_based(&r.kept_columns),
        first_kept: one_based(&r.first_kept),
        beta: r.final_beta.iter().copied().collect(),
        intercept: r.intercept,
    };
    let mut out = sink(a.output.out.as_deref())?;
    match a.output.format {
        Format::Json => write_json(&mut out, &report),
        Format::Csv => {
            let rows: Vec<Vec<String>> = r
                .kept_columns
                .iter()
                .map(|&j| vec![format!("x{}", j + 1), sig10(r.final_beta[j])])
                .collect();
            write_csv(&mut out, &["column", "estimate"], &rows)
        }
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut out = sink(a.out.as_deref())?;
    match a.kind {
        SimKind::Ar1 => {
            let design = Ar1Design { n: a.n, p: a.p, rho: a.rho, b: a.b, seed: a.seed };
            let data = gen_ar1_glm(&design, a.family.into(), a.n).map_err(|e| CliError::Config(e.to_string()))?;
            write_dataset(&mut out, &data.x, &data.y)?;
            if let Some(aux) = &a.aux {
                let rows: Vec<Vec<String>> = data
                    .beta_true
                    .iter()
                    .enumerate()
                    .map(|(j, b)| vec![format!("x{}", j + 1), b.to_string()])
                    .collect();
                write_csv(&mut sink(Some(aux))?, &["term", "beta"], &rows)?;
            }
        }
        SimKind::Twinsine => {
            if !(a.sigma2 >= 0.0 && a.sigma2.is_finite()) {
                return Err(CliError::Config(format!("--sigma2 must be >= 0, got {}", a.sigma2)));
            }
            let spec = TwinSineSpec { sigma2: a.sigma2, seed: a.seed, ..TwinSineSpec::default() };
            let times = spec.training_times();
            let dict = build_dictionary(&times, spec.k_bins, spec.f_max)?;
            let (y, _) = gen_twinsine(&spec, &times, TRAIN_STREAM);
            write_dataset(&mut out, &dict.x, &y)?;
            if let Some(aux) = &a.aux {
                let mut text = String::new();
                for g in dict.groups.groups() {
                    let line: Vec<String> = g.iter().map(|j| (j + 1).to_string()).collect();
                    text.push_str(&line.join(" "));
                    text.push('\n');
                }
                sink(Some(aux))?.write_all(text.as_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn spectral(a: &SpectralArgs) -> Result<(), CliError> {
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<SpectralMethod>())
        .collect::<Result<Vec<_>, _>>()?;
    if a.runs == 0 {
        return Err(CliError::Config("--runs must be positive".into()));
    }
    let tuning = match a.tuning {
        TuningArg::LargeVal => TuningMode::LargeVal,
        TuningArg::ScvBic => TuningMode::ScvBic,
    };
    let mut table: Vec<SpectralSummary> = Vec::new();
    for &sigma2 in &a.sigma2 {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(CliError::Config(format!("--sigma2 must be >= 0, got {sigma2}")));
        }
        for &method in &methods {
            let cfg = SpectralConfig {
                spec: TwinSineSpec { sigma2, seed: a.seed, ..TwinSineSpec::default() },
                runs: a.runs,
                tuning,
                folds: a.folds,
                ..SpectralConfig::default()
            };
            let summary = run_spectral(method, &cfg)?;
            log::info!("{} σ² = {sigma2}: JD {} M {} S {}", method.label(), summary.jd, summary.m, summary.s);
            table.push(summary);
        }
    }
    let mut out = sink(a.output.out.as_deref())?;
    match a.output.format {
        Format::Json => write_json(&mut out, &table),
        Format::Csv => {
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|t| {
                    vec![
                        t.method.label().to_string(),
                        sig10(t.sigma2),
                        match t.tuning {
                            TuningMode::LargeVal => "large_val".into(),
                            TuningMode::ScvBic => "scv_bic".into(),
                        },
                        sig10(t.err),
                        sig10(t.jd),
                        sig10(t.m),
                        sig10(t.s),
                        sig10(t.jd_columns),
                        sig10(t.m_columns),
                        sig10(t.s_columns),
                    ]
                })
                .collect();
            write_csv(
                &mut out,
                &["method", "sigma2", "tuning", "err", "jd", "m", "s", "jd_columns", "m_columns", "s_columns"],
                &rows,
            )
        }
    }
}

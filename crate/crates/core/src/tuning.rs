//! λ grids, solution paths and selective cross-validation (SCV).
//!
//! SCV scores a grid point by its sparsity pattern: each fold refits only the
//! selected predictors (restricted MLE, or for hard-ridge a ridge refit whose
//! degrees of freedom match the full-data estimate) and the held-out negative
//! log-likelihoods are summed.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, TispError};
use crate::glm::{fisher_information_at, GlmFamily};
use crate::linalg::select_columns;
use crate::solver::{
    calibrate, resolve_k0, support_of, tisp_fit, CalibrationMode, FitResult, Problem, SolverOptions,
};
use crate::thresholding::ThresholdRule;

/// Strictly decreasing positive thresholds on the scaled design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub lambda_max: f64,
    pub k0: f64,
}

/// Largest useful threshold: the biggest group norm of the first surrogate
/// `Xᵀ(y − μ₀)/k0` (divided by its λ weight), where `μ₀` is the null-model
/// mean. With an intercept the null model is intercept-only, whose mean is
/// `ȳ` for every canonical link.
pub fn lambda_max(problem: &Problem, k0: f64) -> f64 {
    let mu0 = if problem.fit_intercept {
        problem.y.mean()
    } else {
        problem.family.mean(0.0)
    };
    let s = (&problem.x / k0).tr_mul(&problem.y.add_scalar(-mu0));
    problem
        .groups
        .groups()
        .iter()
        .enumerate()
        .filter_map(|(k, g)| {
            let w = problem.weights.as_ref().map_or(1.0, |w| w[k]);
            (w > 0.0).then(|| g.iter().map(|&j| s[j] * s[j]).sum::<f64>().sqrt() / w)
        })
        .fold(0.0, f64::max)
}

/// Log-spaced grid of `len` values from `λ_max` down to `min_ratio·λ_max`.
pub fn lambda_grid(problem: &Problem, k0: f64, len: usize, min_ratio: f64) -> Result<LambdaGrid> {
    if len < 2 {
        return Err(TispError::InvalidParameter(format!(
            "grid needs at least 2 points, got {len}"
        )));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(TispError::InvalidParameter(format!(
            "min_ratio must lie in (0, 1), got {min_ratio}"
        )));
    }
    if !problem.is_column_normalized() {
        log::warn!("design columns are not normalized; the λ range may be poorly scaled");
    }
    let top = lambda_max(problem, k0);
    if !(top > 0.0 && top.is_finite()) {
        return Err(TispError::DegenerateGrid(
            "the null model already explains y (λ_max = 0)".into(),
        ));
    }
    let step = min_ratio.ln() / (len - 1) as f64;
    let values = (0..len).map(|i| top * (step * i as f64).exp()).collect();
    Ok(LambdaGrid {
        values,
        lambda_max: top,
        k0,
    })
}

/// Independent zero-start fits at every grid value.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<Result<FitResult>>,
    /// Distinct sparsity patterns in order of first appearance.
    pub patterns: Vec<Vec<usize>>,
    pub k0: f64,
}

impl SolutionPath {
    pub fn pattern(&self, l: usize) -> Option<Vec<usize>> {
        self.fits[l].as_ref().ok().map(FitResult::support)
    }
}

pub fn solution_path(problem: &Problem, grid: &LambdaGrid, opts: &SolverOptions) -> SolutionPath {
    let opts = SolverOptions {
        k0: Some(grid.k0),
        beta_init: None,
        ..opts.clone()
    };
    let fits: Vec<Result<FitResult>> = grid
        .values
        .par_iter()
        .map(|&lambda| tisp_fit(&problem.clone().with_lambda(lambda), &opts))
        .collect();
    let mut patterns: Vec<Vec<usize>> = Vec::new();
    for (l, f) in fits.iter().enumerate() {
        match f {
            Ok(fit) => {
                let pat = fit.support();
                if !patterns.contains(&pat) {
                    patterns.push(pat);
                }
            }
            Err(e) => log::warn!("path point {l} (λ = {}) failed: {e}", grid.values[l]),
        }
    }
    SolutionPath {
        lambdas: grid.values.clone(),
        fits,
        patterns,
        k0: grid.k0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DfValue {
    pub df: f64,
}

/// Eigenvalues of the Fisher information of a restricted fit, clamped at 0.
pub fn fisher_eigenvalues(
    family: GlmFamily,
    x_restricted: &DMatrix<f64>,
    beta_restricted: &DVector<f64>,
    intercept: f64,
) -> Vec<f64> {
    if x_restricted.ncols() == 0 {
        return Vec::new();
    }
    let eta = (x_restricted * beta_restricted).add_scalar(intercept);
    let info = fisher_information_at(family, x_restricted, &eta);
    SymmetricEigen::new(info.matrix)
        .eigenvalues
        .iter()
        .map(|d| d.max(0.0))
        .collect()
}

/// `Σ dᵢ/(dᵢ + η)` over eigenvalues numerically distinguishable from zero.
pub fn df_from_eigenvalues(eigenvalues: &[f64], eta: f64) -> f64 {
    let top = eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * top.max(f64::MIN_POSITIVE);
    eigenvalues
        .iter()
        .filter(|&&d| d > floor)
        .map(|&d| d / (d + eta))
        .sum()
}

/// Ridge degrees of freedom `Tr{(I + ηI)⁻¹ I}` at the restricted fit.
pub fn df_ridge(
    family: GlmFamily,
    x_restricted: &DMatrix<f64>,
    beta_restricted: &DVector<f64>,
    intercept: f64,
    eta: f64,
) -> DfValue {
    DfValue {
        df: df_from_eigenvalues(
            &fisher_eigenvalues(family, x_restricted, beta_restricted, intercept),
            eta,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DfMatch {
    pub eta: f64,
    /// Set when the target exceeds the unpenalized df.
    pub flagged: bool,
}

/// Tolerance on the achieved df.
pub const DF_TOL: f64 = 1e-3;

/// Ridge parameter whose df equals `target`, by bisection.
pub fn match_df_eigen(eigenvalues: &[f64], target: f64) -> DfMatch {
    let df0 = df_from_eigenvalues(eigenvalues, 0.0);
    if target >= df0 {
        return DfMatch {
            eta: 0.0,
            flagged: target > df0 + DF_TOL,
        };
    }
    if target <= 0.0 {
        return DfMatch {
            eta: f64::INFINITY,
            flagged: true,
        };
    }
    let mut hi = 1.0;
    while df_from_eigenvalues(eigenvalues, hi) >= target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut mid = 0.5 * hi;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let df = df_from_eigenvalues(eigenvalues, mid);
        if (df - target).abs() <= 1e-12 * target.max(1.0) || hi - lo <= 1e-15 * hi {
            break;
        }
        if df > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    DfMatch {
        eta: mid,
        flagged: false,
    }
}

pub fn match_df(
    family: GlmFamily,
    x_restricted: &DMatrix<f64>,
    beta_restricted: &DVector<f64>,
    intercept: f64,
    target: f64,
) -> DfMatch {
    match_df_eigen(
        &fisher_eigenvalues(family, x_restricted, beta_restricted, intercept),
        target,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScvMode {
    Plain,
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleClass {
    /// Refits by restricted MLE; df is the pattern size.
    L1OrL0,
    /// Refits by df-matched restricted ridge.
    HardRidge,
}

impl RuleClass {
    pub fn of(rule: ThresholdRule) -> Self {
        match rule {
            ThresholdRule::HardRidge { .. } | ThresholdRule::Ridge { .. } => RuleClass::HardRidge,
            _ => RuleClass::L1OrL0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScvOptions {
    pub folds: usize,
    pub mode: ScvMode,
    /// Inferred from the problem's first rule when `None`.
    pub rule_class: Option<RuleClass>,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for ScvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            mode: ScvMode::Bic,
            rule_class: None,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScvRow {
    pub lambda: f64,
    pub pattern: Vec<usize>,
    pub df: f64,
    pub scv: f64,
    pub scv_aic: f64,
    pub scv_bic: f64,
    /// Held-out negative log-likelihood of every fold; `scv` is their sum.
    pub scv_per_fold: Vec<f64>,
    /// Ridge parameter of every fold refit (hard-ridge only).
    pub eta_per_fold: Option<Vec<f64>>,
    /// The path fit failed; the row is excluded from selection.
    pub failed: bool,
    /// A fold refit was flagged (non-convergence, separation or df mismatch).
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScvReport {
    pub n: usize,
    pub k0: f64,
    pub rule_class: RuleClass,
    pub mode: ScvMode,
    pub rows: Vec<ScvRow>,
    pub selected_plain: Option<usize>,
    pub selected_aic: Option<usize>,
    pub selected_bic: Option<usize>,
    /// Fold of every observation.
    pub fold_of: Vec<usize>,
    #[serde(skip)]
    pub fits: Vec<Option<FitResult>>,
}

impl ScvReport {
    /// Index chosen by the report's own criterion.
    pub fn selected(&self) -> Option<usize> {
        match self.mode {
            ScvMode::Plain => self.selected_plain,
            ScvMode::Aic => self.selected_aic,
            ScvMode::Bic => self.selected_bic,
        }
    }
}

/// Deterministic fold labels: observations are shuffled within strata (the
/// two classes for Bernoulli responses, everything otherwise) and dealt out
/// round robin.
pub fn assign_folds(y: &DVector<f64>, family: GlmFamily, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = if family == GlmFamily::BernoulliLogit {
        let (ones, zeros): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| y[i] == 1.0);
        vec![zeros, ones]
    } else {
        vec![(0..y.len()).collect()]
    };
    let mut fold_of = vec![0; y.len()];
    let mut next = 0;
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        for i in stratum {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    fold_of
}

pub fn scv_bic(scv: f64, n: usize, df: f64) -> f64 {
    2.0 * scv + (n as f64).ln() * df
}

pub fn scv_aic(scv: f64, df: f64) -> f64 {
    2.0 * scv + 2.0 * df
}

struct PatternScore {
    per_fold: Vec<f64>,
    etas: Option<Vec<f64>>,
    flagged: bool,
}

/// Held-out negative log-likelihood of every fold refit on `pattern`, summed.
/// `target_df` switches on df-matched ridge refits.
fn score_pattern(
    scaled: &Problem,
    fold_of: &[usize],
    folds: usize,
    pattern: &[usize],
    ridge_target: Option<(&DVector<f64>, f64, f64)>,
) -> Result<PatternScore> {
    let family = scaled.family;
    let mut per_fold = vec![0.0; folds];
    let mut flagged = false;
    let mut etas = ridge_target.map(|_| Vec::with_capacity(folds));
    for k in 0..folds {
        let train: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] != k).collect();
        let test: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] == k).collect();
        if test.is_empty() {
            continue;
        }
        let total = &mut per_fold[k];
        let sub = scaled.subset_rows(&train);
        let mode = match ridge_target {
            Some((beta_full, intercept, target)) if !pattern.is_empty() => {
                let xa = select_columns(&sub.x, pattern);
                let ba =
                    DVector::from_iterator(pattern.len(), pattern.iter().map(|&j| beta_full[j]));
                let m = match_df(family, &xa, &ba, intercept, target);
                flagged |= m.flagged;
                if let Some(e) = etas.as_mut() {
                    e.push(m.eta);
                }
                CalibrationMode::RestrictedRidge { eta: m.eta }
            }
            Some(_) => {
                if let Some(e) = etas.as_mut() {
                    e.push(0.0);
                }
                CalibrationMode::RestrictedMle
            }
            None => CalibrationMode::RestrictedMle,
        };
        let cal = calibrate(&sub, pattern, mode)?;
        flagged |= cal.flagged;
        for &i in &test {
            let eta: f64 = scaled.x.row(i).dot(&cal.beta.transpose()) + cal.intercept;
            *total -= family.log_density(scaled.y[i], eta);
        }
    }
    Ok(PatternScore {
        per_fold,
        etas,
        flagged,
    })
}

/// Selective cross-validation over `grid`.
pub fn scv(problem: &Problem, grid: &LambdaGrid, options: &ScvOptions) -> Result<ScvReport> {
    problem.validate()?;
    let n = problem.n_obs();
    if options.folds < 2 || options.folds > n {
        return Err(TispError::InvalidParameter(format!(
            "need 2 <= folds <= n, got {} folds for {n} observations",
            options.folds
        )));
    }
    let rule_class = options.rule_class.unwrap_or_else(|| {
        RuleClass::of(
            problem
                .rules
                .first()
                .copied()
                .unwrap_or(ThresholdRule::Soft),
        )
    });
    let ridge_eta = problem.rules.first().and_then(|r| r.eta()).unwrap_or(0.0);
    let path = solution_path(problem, grid, &options.solver);
    let scaled = problem.scaled(grid.k0);
    let fold_of = assign_folds(&problem.y, problem.family, options.folds, options.seed);

    // (pattern, df) per grid point; df is the pattern size or the ridge df
    let keyed: Vec<Option<(Vec<usize>, f64)>> = path
        .fits
        .iter()
        .map(|f| {
            f.as_ref().ok().map(|fit| {
                let pattern = support_of(&fit.beta_scaled);
                let df = match rule_class {
                    RuleClass::L1OrL0 => pattern.len() as f64,
                    RuleClass::HardRidge => {
                        let xa = select_columns(&scaled.x, &pattern);
                        let ba = DVector::from_iterator(
                            pattern.len(),
                            pattern.iter().map(|&j| fit.beta_scaled[j]),
                        );
                        df_ridge(problem.family, &xa, &ba, fit.intercept, ridge_eta).df
                    }
                };
                (pattern, df)
            })
        })
        .collect();

    let mut unique: Vec<usize> = Vec::new();
    let mut index_of: HashMap<(Vec<usize>, u64), usize> = HashMap::new();
    for (l, key) in keyed.iter().enumerate() {
        if let Some((pattern, df)) = key {
            index_of
                .entry((pattern.clone(), df.to_bits()))
                .or_insert_with(|| {
                    unique.push(l);
                    unique.len() - 1
                });
        }
    }
    let scores: Vec<Result<PatternScore>> = unique
        .par_iter()
        .map(|&l| {
            let (pattern, df) = keyed[l].as_ref().expect("only successful fits are keyed");
            let target = match rule_class {
                RuleClass::L1OrL0 => None,
                RuleClass::HardRidge => {
                    let fit = path.fits[l].as_ref().expect("keyed fit succeeded");
                    Some((&fit.beta_scaled, fit.intercept, *df))
                }
            };
            score_pattern(&scaled, &fold_of, options.folds, pattern, target)
        })
        .collect();

    let mut rows = Vec::with_capacity(grid.values.len());
    for (l, key) in keyed.iter().enumerate() {
        let row = match key {
            None => None,
            Some((pattern, df)) => match &scores[index_of[&(pattern.clone(), df.to_bits())]] {
                Ok(s) => {
                    let total: f64 = s.per_fold.iter().sum();
                    Some(ScvRow {
                        lambda: grid.values[l],
                        pattern: pattern.clone(),
                        df: *df,
                        scv: total,
                        scv_aic: scv_aic(total, *df),
                        scv_bic: scv_bic(total, n, *df),
                        scv_per_fold: s.per_fold.clone(),
                        eta_per_fold: s.etas.clone(),
                        failed: false,
                        flagged: s.flagged,
                    })
                }
                Err(e) => {
                    log::warn!("SCV refits failed at grid point {l}: {e}");
                    None
                }
            },
        };
        rows.push(row.unwrap_or_else(|| ScvRow {
            lambda: grid.values[l],
            pattern: key.as_ref().map(|k| k.0.clone()).unwrap_or_default(),
            df: f64::NAN,
            scv: f64::NAN,
            scv_aic: f64::NAN,
            scv_bic: f64::NAN,
            scv_per_fold: Vec::new(),
            eta_per_fold: None,
            failed: true,
            flagged: true,
        }));
    }
    let pick = |crit: fn(&ScvRow) -> f64| select_index(&rows, crit);
    Ok(ScvReport {
        n,
        k0: grid.k0,
        rule_class,
        mode: options.mode,
        selected_plain: pick(|r| r.scv),
        selected_aic: pick(|r| r.scv_aic),
        selected_bic: pick(|r| r.scv_bic),
        rows,
        fold_of,
        fits: path.fits.into_iter().map(|f| f.ok()).collect(),
    })
}

/// Minimizer of `crit` over non-failed rows; ties go to the smaller df and
/// then to the larger λ.
pub fn select_index(rows: &[ScvRow], crit: impl Fn(&ScvRow) -> f64) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| !r.failed && crit(r).is_finite())
        .min_by(|(_, a), (_, b)| {
            crit(a)
                .total_cmp(&crit(b))
                .then(a.df.total_cmp(&b.df))
                .then(b.lambda.total_cmp(&a.lambda))
        })
        .map(|(l, _)| l)
}

/// Grid and `k0` for a problem using the solver's default scaling.
pub fn default_grid(
    problem: &Problem,
    opts: &SolverOptions,
    len: usize,
    min_ratio: f64,
) -> Result<LambdaGrid> {
    let (k0, _) = resolve_k0(problem, opts)?;
    lambda_grid(problem, k0, len, min_ratio)
}

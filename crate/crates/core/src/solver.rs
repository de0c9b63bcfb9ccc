//! Group TISP: synchronous iterative thresholding for penalized GLMs.
//!
//! On a design scaled by `k0`, every iteration forms the surrogate
//! `β + Xᵀ(y − μ(β))` and thresholds it group by group. With relaxation
//! parameter `ω` the surrogate is first blended into a running state
//! `ξ ← (1 − ω)ξ + ω·surrogate` and `ξ` is thresholded instead.
//!
//! λ values always refer to the scaled design `X/k0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TispError};
use crate::glm::{
    mean_vector_capped, poisson_scaling_bound, scaling_bound, GlmFamily, POISSON_MEAN_CAP,
};
use crate::linalg::{select_columns, select_entries, solve_symmetric};
use crate::thresholding::{shrink_block_in_place, ThresholdRule};

/// Partition of the column indices `0..p` into nonempty disjoint blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    groups: Vec<Vec<usize>>,
    p: usize,
}

impl GroupSpec {
    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let mut seen = vec![false; p];
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(TispError::InvalidParameter(format!("group {k} is empty")));
            }
            for &j in g {
                if j >= p {
                    return Err(TispError::InvalidParameter(format!(
                        "group {k} references column {j} but the design has {p} columns"
                    )));
                }
                if seen[j] {
                    return Err(TispError::InvalidParameter(format!(
                        "column {j} appears in more than one group"
                    )));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(TispError::InvalidParameter(format!(
                "column {j} is not covered by any group"
            )));
        }
        Ok(Self { groups, p })
    }

    /// One group per column.
    pub fn singletons(p: usize) -> Self {
        Self {
            groups: (0..p).map(|j| vec![j]).collect(),
            p,
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_columns(&self) -> usize {
        self.p
    }

    /// Group index of every column.
    pub fn membership(&self) -> Vec<usize> {
        let mut out = vec![0; self.p];
        for (k, g) in self.groups.iter().enumerate() {
            for &j in g {
                out[j] = k;
            }
        }
        out
    }

    /// Groups whose coefficient block is not identically zero.
    pub fn active_groups(&self, beta: &DVector<f64>) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().any(|&j| beta[j] != 0.0))
            .map(|(k, _)| k)
            .collect()
    }

    /// Restriction of the partition to `columns`, renumbered `0..columns.len()`.
    pub fn restrict(&self, columns: &[usize]) -> GroupSpec {
        let mut position = vec![usize::MAX; self.p];
        for (i, &j) in columns.iter().enumerate() {
            position[j] = i;
        }
        let groups = self
            .groups
            .iter()
            .map(|g| {
                g.iter()
                    .filter(|&&j| position[j] != usize::MAX)
                    .map(|&j| position[j])
                    .collect::<Vec<_>>()
            })
            .filter(|g: &Vec<usize>| !g.is_empty())
            .collect();
        GroupSpec {
            groups,
            p: columns.len(),
        }
    }
}

/// Immutable input of a penalized fit.
#[derive(Debug, Clone)]
pub struct Problem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub family: GlmFamily,
    pub groups: GroupSpec,
    /// One rule per group.
    pub rules: Vec<ThresholdRule>,
    /// One threshold per group.
    pub lambdas: Vec<f64>,
    pub fit_intercept: bool,
    /// Optional per-group multipliers applied to `lambdas`.
    pub weights: Option<Vec<f64>>,
}

impl Problem {
    /// Ungrouped problem with soft thresholding at `λ = 0` and no intercept.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, family: GlmFamily) -> Self {
        let p = x.ncols();
        Self {
            x,
            y,
            family,
            groups: GroupSpec::singletons(p),
            rules: vec![ThresholdRule::Soft; p],
            lambdas: vec![0.0; p],
            fit_intercept: false,
            weights: None,
        }
    }

    /// Replaces the grouping; rules and thresholds are reset to the first
    /// group's values broadcast over the new groups.
    pub fn with_groups(mut self, groups: GroupSpec) -> Self {
        let rule = self.rules.first().copied().unwrap_or(ThresholdRule::Soft);
        let lambda = self.lambdas.first().copied().unwrap_or(0.0);
        let k = groups.len();
        self.groups = groups;
        self.rules = vec![rule; k];
        self.lambdas = vec![lambda; k];
        self.weights = None;
        self
    }

    pub fn with_rule(mut self, rule: ThresholdRule) -> Self {
        self.rules = vec![rule; self.groups.len()];
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambdas = vec![lambda; self.groups.len()];
        self
    }

    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Self {
        self.lambdas = lambdas;
        self
    }

    pub fn with_rules(mut self, rules: Vec<ThresholdRule>) -> Self {
        self.rules = rules;
        self
    }

    pub fn with_intercept(mut self, fit_intercept: bool) -> Self {
        self.fit_intercept = fit_intercept;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// True when every nonzero column has unit Euclidean norm.
    pub fn is_column_normalized(&self) -> bool {
        self.x.column_iter().all(|c| {
            let n = c.norm();
            n == 0.0 || (n - 1.0).abs() < 1e-8
        })
    }

    /// Threshold actually applied to group `k`.
    pub fn effective_lambda(&self, k: usize) -> f64 {
        self.lambdas[k] * self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.x.shape();
        if self.y.len() != n {
            return Err(TispError::Dimension(format!(
                "design has {n} rows but response has length {}",
                self.y.len()
            )));
        }
        if self.groups.n_columns() != p {
            return Err(TispError::Dimension(format!(
                "group partition covers {} columns but design has {p}",
                self.groups.n_columns()
            )));
        }
        let k = self.groups.len();
        if self.rules.len() != k || self.lambdas.len() != k {
            return Err(TispError::Dimension(format!(
                "expected {k} rules and thresholds, got {} and {}",
                self.rules.len(),
                self.lambdas.len()
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() != k {
                return Err(TispError::Dimension(format!(
                    "expected {k} lambda weights, got {}",
                    w.len()
                )));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(TispError::InvalidParameter(
                    "lambda weights must be finite and >= 0".into(),
                ));
            }
        }
        for r in &self.rules {
            r.validate()?;
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(TispError::InvalidParameter(
                "thresholds must be finite and >= 0".into(),
            ));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(TispError::Dimension(
                "design contains non-finite entries".into(),
            ));
        }
        self.family.check_support(&self.y)
    }

    /// Same problem on the design `X/k0`.
    pub fn scaled(&self, k0: f64) -> Problem {
        let mut out = self.clone();
        out.x /= k0;
        out
    }

    /// Same problem restricted to a subset of observations.
    pub fn subset_rows(&self, rows: &[usize]) -> Problem {
        let mut out = self.clone();
        out.x = crate::linalg::select_rows(&self.x, rows);
        out.y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        out
    }

    fn zero_columns(&self) -> Vec<usize> {
        self.x
            .column_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().all(|&v| v == 0.0))
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Design scaling divisor; computed from the certified bound when `None`.
    pub k0: Option<f64>,
    /// Relaxation parameter, in `(0, 2]`.
    pub omega: f64,
    /// Stop when the ∞-norm step falls below this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Objective increases above this absolute slack count as violations.
    pub descent_slack: f64,
    /// Starting coefficients on the original scale; zero when `None`.
    pub beta_init: Option<DVector<f64>>,
    /// Intercept Newton step every this many iterations.
    pub intercept_every: usize,
    pub poisson_mean_cap: f64,
    /// Once the active set has been stable for a while, solve the
    /// fixed-point equation on it by Newton's method and accept the result
    /// only if it is an exact fixed point with the same support and no
    /// larger objective.
    pub active_set_polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            k0: None,
            omega: 2.0,
            tol: 1e-8,
            max_iter: 10_000,
            descent_slack: 1e-9,
            beta_init: None,
            intercept_every: 5,
            poisson_mean_cap: POISSON_MEAN_CAP,
            active_set_polish: true,
        }
    }
}

impl SolverOptions {
    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_k0(mut self, k0: f64) -> Self {
        self.k0 = Some(k0);
        self
    }

    pub fn with_polish(mut self, on: bool) -> Self {
        self.active_set_polish = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 2.0) {
            return Err(TispError::InvalidParameter(format!(
                "omega must lie in (0, 2], got {}",
                self.omega
            )));
        }
        if let Some(k0) = self.k0 {
            if !(k0.is_finite() && k0 > 0.0) {
                return Err(TispError::InvalidParameter(format!(
                    "k0 must be positive, got {k0}"
                )));
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.intercept_every == 0 {
            return Err(TispError::InvalidParameter(
                "tol, max_iter and intercept_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Coefficients on the original design scale.
    pub beta: DVector<f64>,
    /// Coefficients on the scaled design `X/k0`.
    pub beta_scaled: DVector<f64>,
    pub intercept: f64,
    /// Objective on the scaled problem, one entry per iteration of the
    /// final run (the first entry is the starting point).
    pub objective_trace: Vec<f64>,
    pub fixed_point_residual: f64,
    /// Iterations over all runs, including an abandoned relaxed run.
    pub iterations: usize,
    pub converged: bool,
    pub k0_used: f64,
    pub k0_heuristic: bool,
    /// Objective increases beyond the slack in the final run.
    pub descent_violations: usize,
    pub omega_used: f64,
    /// Set when the relaxed run was abandoned and restarted with `ω = 1`.
    pub relaxation_fallback: bool,
    /// Set when the final iterate came from the active-set Newton polish.
    pub polished: bool,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Indices of nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        support_of(&self.beta)
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

pub fn support_of(beta: &DVector<f64>) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, &b)| b != 0.0)
        .map(|(j, _)| j)
        .collect()
}

/// Per-problem evaluation helpers shared by the fit loop and the public
/// single-step operations.
struct Kernel<'a> {
    problem: &'a Problem,
    lambdas: Vec<f64>,
    mean_cap: f64,
}

impl<'a> Kernel<'a> {
    fn new(problem: &'a Problem, mean_cap: f64) -> Self {
        let lambdas = (0..problem.groups.len())
            .map(|k| problem.effective_lambda(k))
            .collect();
        Self {
            problem,
            lambdas,
            mean_cap,
        }
    }

    fn eta(&self, beta: &DVector<f64>, intercept: f64) -> DVector<f64> {
        let mut eta = sparse_mul(&self.problem.x, beta);
        if intercept != 0.0 {
            eta.add_scalar_mut(intercept);
        }
        eta
    }

    fn surrogate(&self, beta: &DVector<f64>, eta: &DVector<f64>) -> (DVector<f64>, bool) {
        let m = mean_vector_capped(self.problem.family, eta, self.mean_cap);
        let resid = &self.problem.y - m.mu;
        (beta + self.problem.x.tr_mul(&resid), m.capped)
    }

    fn threshold(&self, s: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(s.len());
        let mut block = Vec::new();
        for (k, g) in self.problem.groups.groups().iter().enumerate() {
            block.clear();
            block.extend(g.iter().map(|&j| s[j]));
            shrink_block_in_place(self.problem.rules[k], &mut block, self.lambdas[k]);
            for (&j, &v) in g.iter().zip(&block) {
                out[j] = v;
            }
        }
        out
    }

    fn penalty(&self, beta: &DVector<f64>) -> f64 {
        self.problem
            .groups
            .groups()
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let norm = g.iter().map(|&j| beta[j] * beta[j]).sum::<f64>().sqrt();
                if norm == 0.0 {
                    0.0
                } else {
                    self.problem.rules[k].penalty(norm, self.lambdas[k])
                }
            })
            .sum()
    }

    fn neg_loglik(&self, eta: &DVector<f64>) -> f64 {
        let fam = self.problem.family;
        -self
            .problem
            .y
            .iter()
            .zip(eta.iter())
            .map(|(&y, &e)| fam.log_density(y, e))
            .sum::<f64>()
    }

    fn objective(&self, beta: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        self.neg_loglik(eta) + self.penalty(beta)
    }

    /// One damped Newton step on the intercept with `Xβ` held fixed.
    /// Returns the new intercept; the log-likelihood never decreases.
    fn intercept_newton(&self, xb: &DVector<f64>, intercept: f64) -> f64 {
        let fam = self.problem.family;
        let eta = xb.add_scalar(intercept);
        let mut grad = 0.0;
        let mut hess = 0.0;
        for (&y, &e) in self.problem.y.iter().zip(eta.iter()) {
            grad += y - fam.mean(e).min(self.mean_cap);
            hess += fam.variance(e);
        }
        if grad == 0.0 {
            return intercept;
        }
        let step = if hess > 1e-12 {
            grad / hess
        } else {
            grad.signum()
        };
        let base = self.neg_loglik(&eta);
        let mut t = 1.0;
        for _ in 0..40 {
            let cand = (intercept + t * step).clamp(-INTERCEPT_CAP, INTERCEPT_CAP);
            let val = self.neg_loglik(&xb.add_scalar(cand));
            if val <= base {
                return cand;
            }
            t *= 0.5;
        }
        intercept
    }

    fn polish_intercept(&self, xb: &DVector<f64>, mut intercept: f64) -> f64 {
        for _ in 0..100 {
            let next = self.intercept_newton(xb, intercept);
            let delta = (next - intercept).abs();
            intercept = next;
            if delta <= 1e-13 * (1.0 + intercept.abs()) {
                break;
            }
        }
        intercept
    }

    /// Newton's method on `F(β_A, α) = β_A − Θ⃗(β_A + X_Aᵀ(y − μ))` (and
    /// `Σ(y − μ) = 0` for the intercept) with the active groups held fixed.
    ///
    /// Writing the block Jacobian of the radial shrink as `Dg`, the Newton
    /// step solves `(D + XᵀWX) δ = −Dg⁻¹F` with `D = Dg⁻¹ − I`, bordered by
    /// the intercept row. Supports wider than `n` go through the Woodbury
    /// identity, with a small damping added to `D` when it is only
    /// semidefinite. An indefinite `D` falls back to the dense system.
    fn active_set_newton(
        &self,
        beta: &DVector<f64>,
        intercept: f64,
    ) -> Option<(DVector<f64>, f64)> {
        let problem = self.problem;
        let fam = problem.family;
        let groups = problem.groups.groups();
        let active = problem.groups.active_groups(beta);
        if active.is_empty() {
            return None;
        }
        let cols: Vec<usize> = active
            .iter()
            .flat_map(|&k| groups[k].iter().copied())
            .collect();
        let xa = select_columns(&problem.x, &cols);
        let (n, m) = xa.shape();
        let with_int = problem.fit_intercept;
        let mut b = select_entries(beta, &cols);
        let mut a = intercept;
        let mut last_defect = f64::INFINITY;
        for _ in 0..POLISH_NEWTON_STEPS {
            let eta = (&xa * &b).add_scalar(a);
            let resid = &problem.y - eta.map(|t| fam.mean(t).min(self.mean_cap));
            let w = eta.map(|t| fam.variance(t));
            let s = &b + xa.tr_mul(&resid);
            let mut blocks = Vec::with_capacity(active.len());
            let mut rhs = DVector::zeros(m);
            let mut off = 0;
            for &k in &active {
                let len = groups[k].len();
                let blk = s.rows(off, len);
                let r = blk.norm();
                let phi = problem.rules[k].apply(r, self.lambdas[k]);
                if phi == 0.0 {
                    return None;
                }
                let ratio = phi / r;
                let slope = problem.rules[k].slope(r, self.lambdas[k]);
                let u = blk / r;
                let f = b.rows(off, len) - blk * ratio;
                let uf = u.dot(&f);
                // Dg = ratio·(I − uuᵀ) + slope·uuᵀ
                let step = -(&f - &u * uf) / ratio - &u * (uf / slope);
                rhs.rows_mut(off, len).copy_from(&step);
                blocks.push(RadialBlock {
                    off,
                    len,
                    tangential: 1.0 / ratio - 1.0,
                    radial: 1.0 / slope - 1.0,
                    u,
                });
                off += len;
            }
            let defect = rhs.amax();
            let sqrt_w = w.map(f64::sqrt);
            let mut v = xa.clone();
            for (mut row, &wi) in v.row_iter_mut().zip(sqrt_w.iter()) {
                row *= wi;
            }
            let c = v.tr_mul(&sqrt_w);
            let mut woodbury = m > n;
            if woodbury && !blocks.iter().all(RadialBlock::is_positive) {
                if blocks.iter().all(RadialBlock::is_nonnegative) {
                    // A singular system rarely has a solution; give up once
                    // the defect stops shrinking.
                    if defect > 0.5 * last_defect {
                        return None;
                    }
                    last_defect = defect;
                    for blk in &mut blocks {
                        blk.radial = blk.radial.max(POLISH_DAMPING);
                        blk.tangential = blk.tangential.max(POLISH_DAMPING);
                    }
                } else {
                    woodbury = false;
                }
            }
            let (db, da) = if !woodbury {
                let dim = m + usize::from(with_int);
                let mut sys = DMatrix::zeros(dim, dim);
                sys.view_mut((0, 0), (m, m)).copy_from(&v.tr_mul(&v));
                for blk in &blocks {
                    let mut view = sys.view_mut((blk.off, blk.off), (blk.len, blk.len));
                    view += blk.matrix();
                }
                let mut full_rhs = DVector::zeros(dim);
                full_rhs.rows_mut(0, m).copy_from(&rhs);
                if with_int {
                    sys.view_mut((0, m), (m, 1)).copy_from(&c);
                    sys.view_mut((m, 0), (1, m)).copy_from(&c.transpose());
                    sys[(m, m)] = w.sum();
                    full_rhs[m] = resid.sum();
                }
                let delta = solve_symmetric(&sys, &full_rhs);
                let da = if with_int { delta[m] } else { 0.0 };
                (delta.rows(0, m).into_owned(), da)
            } else {
                let apply_inv = |x: &DVector<f64>| {
                    let mut out = x.clone();
                    for blk in &blocks {
                        let solved = blk.solve(&x.rows(blk.off, blk.len).into_owned());
                        out.rows_mut(blk.off, blk.len).copy_from(&solved);
                    }
                    out
                };
                let mut bmat = DMatrix::zeros(m, n);
                for i in 0..n {
                    let col = apply_inv(&v.row(i).transpose());
                    bmat.set_column(i, &col);
                }
                let mut small = &v * &bmat;
                for i in 0..n {
                    small[(i, i)] += 1.0;
                }
                let chol = small.cholesky()?;
                let solve = |r: &DVector<f64>| {
                    let z = apply_inv(r);
                    let t = chol.solve(&(&v * &z));
                    z - &bmat * t
                };
                let z1 = solve(&rhs);
                if with_int {
                    let z2 = solve(&c);
                    let denom = w.sum() - c.dot(&z2);
                    if !(denom.abs() > 0.0) {
                        return None;
                    }
                    let da = (resid.sum() - c.dot(&z1)) / denom;
                    (z1 - z2 * da, da)
                } else {
                    (z1, 0.0)
                }
            };
            if !db.iter().all(|v| v.is_finite()) || !da.is_finite() {
                return None;
            }
            b += &db;
            a += da;
            if db.amax().max(da.abs()) <= 1e-14 * (1.0 + b.amax().max(a.abs())) {
                break;
            }
        }
        let mut full = DVector::zeros(beta.len());
        for (i, &j) in cols.iter().enumerate() {
            full[j] = b[i];
        }
        Some((full, a))
    }
}

/// Block of `D = Dg⁻¹ − I`: `tangential·(I − uuᵀ) + radial·uuᵀ`.
struct RadialBlock {
    off: usize,
    len: usize,
    tangential: f64,
    radial: f64,
    u: DVector<f64>,
}

impl RadialBlock {
    fn matrix(&self) -> DMatrix<f64> {
        let uu = &self.u * self.u.transpose();
        DMatrix::identity(self.len, self.len) * self.tangential
            + uu * (self.radial - self.tangential)
    }

    fn is_positive(&self) -> bool {
        self.radial > 1e-12 && (self.len == 1 || self.tangential > 1e-12)
    }

    fn is_nonnegative(&self) -> bool {
        self.radial > -1e-12 && (self.len == 1 || self.tangential > -1e-12)
    }

    fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let ux = self.u.dot(x);
        if self.len == 1 {
            return x / self.radial;
        }
        (x - &self.u * ux) / self.tangential + &self.u * (ux / self.radial)
    }
}

/// Stable iterations of the active set before the first polish attempt;
/// later attempts happen after 2, 4, 8, … times as many.
const POLISH_AFTER: usize = 20;
const POLISH_NEWTON_STEPS: usize = 30;
/// Levenberg–Marquardt shift for a singular `D` on wide supports.
const POLISH_DAMPING: f64 = 1e-8;

/// `Xβ`, skipping zero coefficients.
fn sparse_mul(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.nrows());
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            out.axpy(b, &x.column(j), 1.0);
        }
    }
    out
}

/// Bound on the magnitude of an intercept.
const INTERCEPT_CAP: f64 = 50.0;

/// Number of consecutive objective increases treated as divergence.
const DIVERGENCE_RUN: usize = 3;

/// Total objective increases tolerated in a relaxed run before it is
/// abandoned as oscillating.
const RELAXED_VIOLATION_BUDGET: usize = 10;

struct RunOutcome {
    beta: DVector<f64>,
    intercept: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    violations: usize,
    diverged: bool,
    capped: bool,
    polished: bool,
}

fn run(kernel: &Kernel, beta0: DVector<f64>, omega: f64, opts: &SolverOptions) -> RunOutcome {
    let problem = kernel.problem;
    let relaxed = omega != 1.0;
    let mut beta = beta0;
    let mut intercept = 0.0;
    let mut xb = sparse_mul(&problem.x, &beta);
    if problem.fit_intercept {
        intercept = kernel.intercept_newton(&xb, intercept);
    }
    let mut eta = xb.add_scalar(intercept);
    let mut prev = kernel.objective(&beta, &eta);
    let mut trace = vec![prev];
    let mut xi: Option<DVector<f64>> = None;
    let mut violations = 0;
    let mut run_up = 0;
    let mut capped = false;
    let mut diverged = !prev.is_finite();
    let mut converged = false;
    let mut iterations = 0;
    let mut stable = 0;
    let mut polished = false;

    while iterations < opts.max_iter && !diverged {
        iterations += 1;
        if problem.fit_intercept && iterations % opts.intercept_every == 0 {
            intercept = kernel.intercept_newton(&xb, intercept);
            eta = xb.add_scalar(intercept);
        }
        let (s, c) = kernel.surrogate(&beta, &eta);
        capped |= c;
        let next = if relaxed {
            let state = match xi.take() {
                // the state starts at the first surrogate, so the opening
                // step coincides with the unrelaxed one
                None => s,
                Some(prev_xi) => prev_xi * (1.0 - omega) + s * omega,
            };
            let b = kernel.threshold(&state);
            xi = Some(state);
            b
        } else {
            kernel.threshold(&s)
        };
        let step = (&next - &beta).amax();
        if opts.active_set_polish {
            let same = next
                .iter()
                .zip(beta.iter())
                .all(|(a, b)| (*a != 0.0) == (*b != 0.0));
            stable = if same { stable + 1 } else { 0 };
        }
        beta = next;
        xb = sparse_mul(&problem.x, &beta);
        eta = xb.add_scalar(intercept);
        let mut f = kernel.objective(&beta, &eta);

        if step < opts.tol {
            let mut settled = true;
            if problem.fit_intercept {
                let polished = kernel.polish_intercept(&xb, intercept);
                if (polished - intercept).abs() > opts.tol {
                    settled = false;
                }
                intercept = polished;
                eta = xb.add_scalar(intercept);
                f = kernel.objective(&beta, &eta);
            }
            if settled {
                let (s, _) = kernel.surrogate(&beta, &eta);
                let residual = (&beta - kernel.threshold(&s)).amax();
                if residual <= opts.tol {
                    converged = true;
                }
            }
        }

        if !f.is_finite() {
            diverged = true;
        } else if f > prev + opts.descent_slack {
            violations += 1;
            run_up += 1;
            if run_up >= DIVERGENCE_RUN || (relaxed && violations >= RELAXED_VIOLATION_BUDGET) {
                diverged = true;
            }
        } else {
            run_up = 0;
        }
        trace.push(f);
        prev = f;
        if converged {
            break;
        }
        if opts.active_set_polish
            && !diverged
            && stable >= POLISH_AFTER
            && stable % POLISH_AFTER == 0
            && (stable / POLISH_AFTER).is_power_of_two()
        {
            if let Some((cb, ca)) = kernel.active_set_newton(&beta, intercept) {
                let same = cb
                    .iter()
                    .zip(beta.iter())
                    .all(|(a, b)| (*a != 0.0) == (*b != 0.0));
                let ce = kernel.eta(&cb, ca);
                let fc = kernel.objective(&cb, &ce);
                let (s, _) = kernel.surrogate(&cb, &ce);
                let residual = (&cb - kernel.threshold(&s)).amax();
                if same && fc.is_finite() && fc <= prev + opts.descent_slack && residual <= opts.tol
                {
                    iterations += 1;
                    beta = cb;
                    intercept = ca;
                    trace.push(fc);
                    converged = true;
                    polished = true;
                    break;
                }
            }
        }
    }

    RunOutcome {
        beta,
        intercept,
        trace,
        iterations,
        converged,
        violations,
        diverged,
        capped,
        polished,
    }
}

/// Resolves `k0` for a problem: the user's value, the certified bound, or
/// for Poisson the heuristic bound refined by a short preliminary run.
pub fn resolve_k0(problem: &Problem, opts: &SolverOptions) -> Result<(f64, bool)> {
    if let Some(k0) = opts.k0 {
        return Ok((k0, false));
    }
    if problem.family != GlmFamily::PoissonLog {
        let b = scaling_bound(problem.family, &problem.x, &problem.rules)?;
        return Ok((b.k0, b.heuristic));
    }
    let y_max = problem.y.max().max(1.0);
    let pilot = poisson_scaling_bound(&problem.x, &problem.rules, 0.0, y_max.ln())?;
    let scaled = problem.scaled(pilot.k0);
    let kernel = Kernel::new(&scaled, opts.poisson_mean_cap);
    let pilot_opts = SolverOptions {
        max_iter: 5,
        ..opts.clone()
    };
    let out = run(
        &kernel,
        DVector::zeros(problem.n_features()),
        1.0,
        &pilot_opts,
    );
    let beta_norm = out.beta.norm() / pilot.k0;
    let bound = poisson_scaling_bound(&problem.x, &problem.rules, beta_norm, out.intercept)?;
    Ok((bound.k0, true))
}

/// Fits a penalized GLM by group TISP from the zero start (or
/// `opts.beta_init`).
pub fn tisp_fit(problem: &Problem, opts: &SolverOptions) -> Result<FitResult> {
    problem.validate()?;
    opts.validate()?;
    let mut warnings = Vec::new();
    let zero_cols = problem.zero_columns();
    if !zero_cols.is_empty() {
        let msg = format!(
            "{} all-zero column(s) fixed at zero: {:?}",
            zero_cols.len(),
            zero_cols
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let (k0, heuristic) = resolve_k0(problem, opts)?;
    if heuristic {
        warnings.push(format!(
            "k0 = {k0} is a heuristic bound; descent is monitored at run time"
        ));
    }
    let scaled = problem.scaled(k0);
    let kernel = Kernel::new(&scaled, opts.poisson_mean_cap);
    let p = problem.n_features();
    let beta0 = match &opts.beta_init {
        Some(b) if b.len() == p => b * k0,
        Some(b) => {
            return Err(TispError::Dimension(format!(
                "initial beta has length {} but design has {p} columns",
                b.len()
            )))
        }
        None => DVector::zeros(p),
    };

    let mut outcome = run(&kernel, beta0.clone(), opts.omega, opts);
    let mut omega_used = opts.omega;
    let mut fallback = false;
    let mut total_iterations = outcome.iterations;
    if opts.omega != 1.0 && (outcome.diverged || !outcome.converged) {
        let reason = if outcome.diverged {
            "objective ascent"
        } else {
            "no convergence"
        };
        let msg = format!("relaxed run with omega = {} abandoned after {} iterations ({reason}); restarted with omega = 1", opts.omega, outcome.iterations);
        log::debug!("{msg}");
        warnings.push(msg);
        outcome = run(&kernel, beta0, 1.0, opts);
        total_iterations += outcome.iterations;
        omega_used = 1.0;
        fallback = true;
    }
    if outcome.diverged {
        return Err(TispError::Divergence(format!(
            "objective increased on {DIVERGENCE_RUN} consecutive steps with omega = 1 and k0 = {k0}; \
             the Fisher-information bound rho < max(1, 2 - L) is likely violated, try a larger k0"
        )));
    }
    if outcome.capped {
        warnings.push("Poisson means were capped during the fit".into());
    }
    let (s, _) = kernel.surrogate(&outcome.beta, &kernel.eta(&outcome.beta, outcome.intercept));
    let residual = (&outcome.beta - kernel.threshold(&s)).amax();
    Ok(FitResult {
        beta: &outcome.beta / k0,
        beta_scaled: outcome.beta,
        intercept: outcome.intercept,
        objective_trace: outcome.trace,
        fixed_point_residual: residual,
        iterations: total_iterations,
        converged: outcome.converged,
        k0_used: k0,
        k0_heuristic: heuristic,
        descent_violations: outcome.violations,
        omega_used,
        relaxation_fallback: fallback,
        polished: outcome.polished,
        warnings,
    })
}

/// Intercept maximizing the likelihood with the linear part `xb` held fixed.
pub(crate) fn fit_intercept_given(problem: &Problem, xb: &DVector<f64>, start: f64) -> f64 {
    Kernel::new(problem, POISSON_MEAN_CAP).polish_intercept(xb, start)
}

/// One unrelaxed TISP update on an (already scaled) problem.
pub fn tisp_step(problem: &Problem, beta: &DVector<f64>, intercept: f64) -> DVector<f64> {
    let kernel = Kernel::new(problem, POISSON_MEAN_CAP);
    let (s, _) = kernel.surrogate(beta, &kernel.eta(beta, intercept));
    kernel.threshold(&s)
}

/// State of the relaxed iteration: the pre-threshold vector `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedState {
    pub xi: DVector<f64>,
}

impl RelaxedState {
    /// State whose first relaxed step equals the plain step from `beta`.
    pub fn start(problem: &Problem, beta: &DVector<f64>, intercept: f64) -> Self {
        Self {
            xi: surrogate(problem, beta, intercept),
        }
    }
}

/// One relaxed update `ξ ← (1 − ω)ξ + ω·surrogate(β)`, `β ← Θ(ξ)`.
pub fn relaxed_step(
    problem: &Problem,
    beta: &DVector<f64>,
    intercept: f64,
    state: &mut RelaxedState,
    omega: f64,
) -> DVector<f64> {
    let kernel = Kernel::new(problem, POISSON_MEAN_CAP);
    let (s, _) = kernel.surrogate(beta, &kernel.eta(beta, intercept));
    state.xi = &state.xi * (1.0 - omega) + s * omega;
    kernel.threshold(&state.xi)
}

/// Surrogate vector `β + Xᵀ(y − μ(β))`.
pub fn surrogate(problem: &Problem, beta: &DVector<f64>, intercept: f64) -> DVector<f64> {
    let kernel = Kernel::new(problem, POISSON_MEAN_CAP);
    kernel.surrogate(beta, &kernel.eta(beta, intercept)).0
}

/// Penalized objective `−L(β, α) + Σₖ P_k(‖β_k‖₂; λ_k)` on the problem's own
/// design.
pub fn objective(problem: &Problem, beta: &DVector<f64>, intercept: f64) -> Result<f64> {
    problem.validate()?;
    if beta.len() != problem.n_features() {
        return Err(TispError::Dimension(format!(
            "beta has length {} but design has {} columns",
            beta.len(),
            problem.n_features()
        )));
    }
    let kernel = Kernel::new(problem, POISSON_MEAN_CAP);
    Ok(kernel.objective(beta, &kernel.eta(beta, intercept)))
}

/// `‖β − T(β)‖∞` for the unrelaxed update `T`.
pub fn fixed_point_residual(problem: &Problem, beta: &DVector<f64>, intercept: f64) -> f64 {
    (beta - tisp_step(problem, beta, intercept)).amax()
}

/// Smooth refit applied on a fixed support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    RestrictedMle,
    RestrictedRidge { eta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Full-length coefficients, zero off the pattern.
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub iterations: usize,
    /// Set when the coefficient cap was hit or Newton failed to converge.
    pub flagged: bool,
}

pub const CALIBRATION_TOL: f64 = 1e-10;
pub const CALIBRATION_MAX_ITER: usize = 100;
/// Cap on `‖β‖∞` for restricted refits (guards against separation).
pub const CALIBRATION_COEF_CAP: f64 = 1e4;

/// Newton–Raphson refit of `−L` (or `−L + ½η‖β‖²`) restricted to `pattern`,
/// with step halving. The intercept is fitted (unpenalized) when the problem
/// has one.
pub fn calibrate(
    problem: &Problem,
    pattern: &[usize],
    mode: CalibrationMode,
) -> Result<Calibration> {
    let p = problem.n_features();
    if let Some(&bad) = pattern.iter().find(|&&j| j >= p) {
        return Err(TispError::InvalidParameter(format!(
            "pattern index {bad} out of range for {p} columns"
        )));
    }
    let ridge = match mode {
        CalibrationMode::RestrictedMle => 0.0,
        CalibrationMode::RestrictedRidge { eta } => {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(TispError::InvalidParameter(format!(
                    "ridge parameter must be >= 0, got {eta}"
                )));
            }
            eta
        }
    };
    problem.family.check_support(&problem.y)?;
    if pattern.is_empty() && !problem.fit_intercept {
        return Ok(Calibration {
            beta: DVector::zeros(p),
            intercept: 0.0,
            iterations: 0,
            flagged: false,
        });
    }
    if ridge == 0.0 && pattern.len() > problem.n_obs() {
        log::warn!(
            "restricted refit has {} columns but only {} observations",
            pattern.len(),
            problem.n_obs()
        );
    }
    let xa = select_columns(&problem.x, pattern);
    let fit = newton_restricted(
        problem.family,
        &xa,
        &problem.y,
        ridge,
        problem.fit_intercept,
    );
    let mut beta = DVector::zeros(p);
    for (i, &j) in pattern.iter().enumerate() {
        beta[j] = fit.coef[i];
    }
    Ok(Calibration {
        beta,
        intercept: fit.intercept,
        iterations: fit.iterations,
        flagged: fit.flagged,
    })
}

pub(crate) struct RestrictedFit {
    pub coef: DVector<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub flagged: bool,
}

fn restricted_objective(
    family: GlmFamily,
    xa: &DMatrix<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
    intercept: f64,
    ridge: f64,
) -> f64 {
    let eta = (xa * coef).add_scalar(intercept);
    let nll: f64 = -y
        .iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| family.log_density(yi, e))
        .sum::<f64>();
    nll + 0.5 * ridge * coef.norm_squared()
}

pub(crate) fn newton_restricted(
    family: GlmFamily,
    xa: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
    with_intercept: bool,
) -> RestrictedFit {
    let m = xa.ncols();
    let dim = m + usize::from(with_intercept);
    let mut coef = DVector::zeros(m);
    let mut intercept = 0.0;
    if with_intercept {
        let mean = y.mean();
        intercept = match family {
            GlmFamily::GaussianIdentity => mean,
            GlmFamily::BernoulliLogit => family.link(mean.clamp(1e-6, 1.0 - 1e-6)),
            GlmFamily::PoissonLog => family.link(mean.max(1e-6)),
        };
    }
    let mut flagged = false;
    let mut current = restricted_objective(family, xa, y, &coef, intercept, ridge);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < CALIBRATION_MAX_ITER {
        iterations += 1;
        let eta = (xa * &coef).add_scalar(intercept);
        let resid = y - eta.map(|t| family.mean(t));
        let w = eta.map(|t| family.variance(t));
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        if m > 0 {
            let g = xa.tr_mul(&resid) - &coef * ridge;
            grad.rows_mut(0, m).copy_from(&g);
            let mut wx = xa.clone();
            for (mut row, &wi) in wx.row_iter_mut().zip(w.iter()) {
                row *= wi;
            }
            let mut h = xa.tr_mul(&wx);
            for d in 0..m {
                h[(d, d)] += ridge;
            }
            hess.view_mut((0, 0), (m, m)).copy_from(&h);
            if with_intercept {
                let cross = wx.row_sum().transpose();
                hess.view_mut((0, m), (m, 1)).copy_from(&cross);
                hess.view_mut((m, 0), (1, m)).copy_from(&cross.transpose());
            }
        }
        if with_intercept {
            grad[m] = resid.sum();
            hess[(m, m)] = w.sum();
        }
        let delta = solve_symmetric(&hess, &grad);
        if !delta.iter().all(|v| v.is_finite()) {
            flagged = true;
            break;
        }
        if delta.amax() <= CALIBRATION_TOL * (1.0 + coef.amax().max(intercept.abs())) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let mut cand = &coef + delta.rows(0, m) * t;
            let mut cand_int = if with_intercept {
                intercept + t * delta[m]
            } else {
                0.0
            };
            if cand.amax() > CALIBRATION_COEF_CAP {
                cand.iter_mut()
                    .for_each(|v| *v = v.clamp(-CALIBRATION_COEF_CAP, CALIBRATION_COEF_CAP));
                flagged = true;
            }
            if cand_int.abs() > CALIBRATION_COEF_CAP {
                cand_int = cand_int.clamp(-CALIBRATION_COEF_CAP, CALIBRATION_COEF_CAP);
                flagged = true;
            }
            let val = restricted_objective(family, xa, y, &cand, cand_int, ridge);
            if val.is_finite() && val <= current + 1e-12 * current.abs().max(1.0) {
                let gain = current - val;
                coef = cand;
                intercept = cand_int;
                current = val;
                accepted = true;
                if gain.abs() <= 1e-15 * current.abs().max(1.0) && t < 1.0 {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        flagged = true;
    }
    RestrictedFit {
        coef,
        intercept,
        iterations,
        flagged,
    }
}

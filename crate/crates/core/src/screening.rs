//! Proportional TISP screening: every iteration sets λ between the m-th and
//! (m+1)-th largest surrogate group norms, so exactly `m = ⌈αn⌉` groups are
//! kept.

use nalgebra::DVector;

use crate::error::{Result, TispError};
use crate::solver::{fit_intercept_given, resolve_k0, surrogate, Problem, SolverOptions};
use crate::thresholding::{shrink_block_in_place, ThresholdRule};

/// Iterations with an unchanged kept set needed to stop.
pub const STABLE_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenOptions {
    pub max_iter: usize,
    /// Design scaling divisor; the certified bound for `rule_shape` when `None`.
    pub k0: Option<f64>,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            k0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    /// Kept groups (columns for an ungrouped problem), ascending.
    pub kept: Vec<usize>,
    /// Columns of the kept groups, ascending.
    pub kept_columns: Vec<usize>,
    /// Kept groups after the first iteration.
    pub first_kept: Vec<usize>,
    pub iterations: usize,
    /// Coefficients on the original design scale.
    pub final_beta: DVector<f64>,
    pub intercept: f64,
    /// Threshold used at every iteration (scaled design).
    pub lambda_trace: Vec<f64>,
    /// Nonzero groups of the iterate after every iteration.
    pub nonzero_counts: Vec<usize>,
    /// Set when the kept set never stabilized within `max_iter`.
    pub oscillating: bool,
    pub k0_used: f64,
}

/// Indices of the `m` largest magnitudes, ties resolved toward the lower
/// index, together with the midpoint threshold separating them from the
/// rest (zero when nothing is left out).
pub fn top_m(magnitudes: &[f64], m: usize) -> (Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]).then(a.cmp(&b)));
    let lambda = if m < magnitudes.len() && m > 0 {
        0.5 * (magnitudes[order[m - 1]] + magnitudes[order[m]])
    } else if m == 0 {
        magnitudes.iter().copied().fold(0.0, f64::max)
    } else {
        0.0
    };
    let mut kept = order[..m.min(order.len())].to_vec();
    kept.sort_unstable();
    (kept, lambda)
}

pub fn screen_proportional(
    problem: &Problem,
    alpha: f64,
    rule_shape: ThresholdRule,
    options: &ScreenOptions,
) -> Result<ScreenResult> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TispError::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    rule_shape.validate()?;
    let shaped = problem.clone().with_rule(rule_shape);
    shaped.validate()?;
    let n_groups = problem.groups.len();
    let m = (alpha * problem.n_obs() as f64).ceil() as usize;
    if m > n_groups {
        return Err(TispError::InvalidParameter(format!(
            "ceil(alpha * n) = {m} exceeds the number of {} ({n_groups})",
            if n_groups == problem.n_features() {
                "columns"
            } else {
                "groups"
            }
        )));
    }
    let solver_opts = SolverOptions {
        k0: options.k0,
        ..SolverOptions::default()
    };
    let (k0, _) = resolve_k0(&shaped, &solver_opts)?;
    let scaled = shaped.scaled(k0);
    let groups = scaled.groups.groups();

    let p = scaled.n_features();
    let mut beta = DVector::zeros(p);
    let mut intercept = 0.0;
    let mut kept: Vec<usize> = Vec::new();
    let mut first_kept = Vec::new();
    let mut lambda_trace = Vec::new();
    let mut nonzero_counts = Vec::new();
    let mut repeats = 0;
    let mut iterations = 0;
    let mut block = Vec::new();

    while iterations < options.max_iter {
        if scaled.fit_intercept {
            intercept = fit_intercept_given(&scaled, &(&scaled.x * &beta), intercept);
        }
        let s = surrogate(&scaled, &beta, intercept);
        let norms: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().map(|&j| s[j] * s[j]).sum::<f64>().sqrt())
            .collect();
        let (next_kept, lambda) = top_m(&norms, m);
        let mut next = DVector::zeros(p);
        for &k in &next_kept {
            block.clear();
            block.extend(groups[k].iter().map(|&j| s[j]));
            shrink_block_in_place(rule_shape, &mut block, lambda);
            for (&j, &v) in groups[k].iter().zip(&block) {
                next[j] = v;
            }
        }
        iterations += 1;
        lambda_trace.push(lambda);
        nonzero_counts.push(scaled.groups.active_groups(&next).len());
        beta = next;
        if iterations == 1 {
            first_kept = next_kept.clone();
        } else if next_kept == kept {
            repeats += 1;
        } else {
            repeats = 0;
        }
        kept = next_kept;
        if repeats >= STABLE_REPEATS {
            break;
        }
    }
    let oscillating = repeats < STABLE_REPEATS;
    if oscillating {
        log::warn!(
            "screening support did not stabilize within {} iterations",
            options.max_iter
        );
    }
    let mut kept_columns: Vec<usize> = kept
        .iter()
        .flat_map(|&k| groups[k].iter().copied())
        .collect();
    kept_columns.sort_unstable();
    Ok(ScreenResult {
        kept,
        kept_columns,
        first_kept,
        iterations,
        final_beta: beta / k0,
        intercept,
        lambda_trace,
        nonzero_counts,
        oscillating,
        k0_used: k0,
    })
}

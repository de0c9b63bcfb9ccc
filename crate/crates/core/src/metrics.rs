//! Evaluation statistics for selection and prediction.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TispError};
use crate::glm::{log_likelihood, GlmFamily};

/// `100·(Σ log f(yᵢ; β̂) / Σ log f(yᵢ; β) − 1)` on test data.
pub fn scaled_deviance_error(
    family: GlmFamily,
    beta_hat: &DVector<f64>,
    intercept_hat: f64,
    beta_true: &DVector<f64>,
    x_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
) -> Result<f64> {
    let l_hat = log_likelihood(
        family,
        y_test,
        &(x_test * beta_hat).add_scalar(intercept_hat),
    )?;
    let l_true = log_likelihood(family, y_test, &(x_test * beta_true))?;
    sde_from_loglik(l_hat, l_true)
}

pub fn sde_from_loglik(l_hat: f64, l_true: f64) -> Result<f64> {
    if l_true == 0.0 {
        return Err(TispError::UndefinedMetric(
            "true-model test log-likelihood is zero".into(),
        ));
    }
    Ok(100.0 * (l_hat / l_true - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionStats {
    /// Fraction of relevant variables that were missed.
    pub masking: f64,
    /// Fraction of irrelevant variables that were selected.
    pub swamping: f64,
    /// Zero misses.
    pub joint_detection: bool,
}

/// Masking/swamping/joint detection of `estimated` against `truth` among
/// `p` candidates.
pub fn selection_stats(estimated: &[usize], truth: &[usize], p: usize) -> SelectionStats {
    let est: BTreeSet<usize> = estimated.iter().copied().collect();
    let tru: BTreeSet<usize> = truth.iter().copied().collect();
    let missed = tru.difference(&est).count();
    let false_alarms = est.difference(&tru).count();
    let irrelevant = p.saturating_sub(tru.len());
    let masking = if tru.is_empty() {
        0.0
    } else {
        missed as f64 / tru.len() as f64
    };
    let swamping = if irrelevant == 0 {
        0.0
    } else {
        false_alarms as f64 / irrelevant as f64
    };
    SelectionStats {
        masking,
        swamping,
        joint_detection: missed == 0,
    }
}

/// Mean over runs of masking, swamping and the joint-detection rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionSummary {
    pub masking: f64,
    pub swamping: f64,
    pub jd_rate: f64,
}

pub fn summarize_selection(stats: &[SelectionStats]) -> SelectionSummary {
    if stats.is_empty() {
        return SelectionSummary::default();
    }
    let n = stats.len() as f64;
    SelectionSummary {
        masking: stats.iter().map(|s| s.masking).sum::<f64>() / n,
        swamping: stats.iter().map(|s| s.swamping).sum::<f64>() / n,
        jd_rate: stats.iter().filter(|s| s.joint_detection).count() as f64 / n,
    }
}

/// Mean after dropping `floor(trim_fraction/2 · N)` values from each tail.
pub fn trimmed_mean(values: &[f64], trim_fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&trim_fraction) {
        return Err(TispError::InvalidParameter(format!(
            "trim fraction must lie in [0, 1), got {trim_fraction}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (trim_fraction / 2.0 * sorted.len() as f64).floor() as usize;
    let kept = &sorted[cut.min(sorted.len())..sorted.len().saturating_sub(cut)];
    if kept.is_empty() {
        return Err(TispError::InvalidParameter(format!(
            "trimming {trim_fraction} of {} values leaves nothing",
            values.len()
        )));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Effective prediction error `Σ(yᵢ − xᵢᵀβ̂ − α̂)²/N − σ²`. Can be negative
/// through sampling noise.
pub fn spectral_mse_star(
    y_test: &DVector<f64>,
    x_test: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    intercept_hat: f64,
    sigma2: f64,
) -> f64 {
    let n = y_test.len() as f64;
    let resid = y_test - (x_test * beta_hat).add_scalar(intercept_hat);
    resid.norm_squared() / n - sigma2
}

/// A tone counts as detected when some selected bin lies within
/// `tolerance_bins` of its bin.
pub fn tones_detected(
    selected_bins: &[usize],
    tone_bins: &[usize],
    tolerance_bins: usize,
) -> Vec<bool> {
    tone_bins
        .iter()
        .map(|&t| {
            selected_bins
                .iter()
                .any(|&b| b.abs_diff(t) <= tolerance_bins)
        })
        .collect()
}

//! Natural exponential family machinery with canonical links.
//!
//! Each family is described by its cumulant function `b`, so that
//! `log f(y; θ) = yθ − b(θ) + c(y)`, `E y = b′(θ)` and `var y = b″(θ)`.
//! The Gaussian family uses unit dispersion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, TispError};
use crate::linalg::spectral_norm;
use crate::thresholding::ThresholdRule;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Default cap on Poisson means, `exp(η)` is clamped to this value.
pub const POISSON_MEAN_CAP: f64 = 1e12;

/// Safety multiplier applied to the heuristic Poisson scaling bound.
pub const POISSON_SAFETY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    GaussianIdentity,
    BernoulliLogit,
    PoissonLog,
}

impl GlmFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GlmFamily::GaussianIdentity => "gaussian",
            GlmFamily::BernoulliLogit => "bernoulli",
            GlmFamily::PoissonLog => "poisson",
        }
    }

    /// Cumulant function `b(t)`.
    pub fn cumulant(&self, t: f64) -> f64 {
        match self {
            GlmFamily::GaussianIdentity => 0.5 * t * t,
            GlmFamily::BernoulliLogit => softplus(t),
            GlmFamily::PoissonLog => t.exp(),
        }
    }

    /// Inverse link `b′(t)`.
    pub fn mean(&self, t: f64) -> f64 {
        match self {
            GlmFamily::GaussianIdentity => t,
            GlmFamily::BernoulliLogit => sigmoid(t),
            GlmFamily::PoissonLog => t.exp(),
        }
    }

    /// Variance function `b″(t)`.
    pub fn variance(&self, t: f64) -> f64 {
        match self {
            GlmFamily::GaussianIdentity => 1.0,
            GlmFamily::BernoulliLogit => {
                let p = sigmoid(t);
                p * (1.0 - p)
            }
            GlmFamily::PoissonLog => t.exp(),
        }
    }

    /// Canonical link `g = (b′)⁻¹`.
    pub fn link(&self, mu: f64) -> f64 {
        match self {
            GlmFamily::GaussianIdentity => mu,
            GlmFamily::BernoulliLogit => (mu / (1.0 - mu)).ln(),
            GlmFamily::PoissonLog => mu.ln(),
        }
    }

    /// Base-measure term `c(y)`.
    pub fn base_measure(&self, y: f64) -> f64 {
        match self {
            GlmFamily::GaussianIdentity => -0.5 * y * y - HALF_LN_TWO_PI,
            GlmFamily::BernoulliLogit => 0.0,
            GlmFamily::PoissonLog => -ln_gamma(y + 1.0),
        }
    }

    /// Supremum of `b″` over the real line, `None` when unbounded.
    pub fn variance_sup(&self) -> Option<f64> {
        match self {
            GlmFamily::GaussianIdentity => Some(1.0),
            GlmFamily::BernoulliLogit => Some(0.25),
            GlmFamily::PoissonLog => None,
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        match self {
            GlmFamily::GaussianIdentity => y.is_finite(),
            GlmFamily::BernoulliLogit => y == 0.0 || y == 1.0,
            GlmFamily::PoissonLog => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        }
    }

    /// Checks every response value, reporting the first offender.
    pub fn check_support(&self, y: &DVector<f64>) -> Result<()> {
        match y.iter().position(|&v| !self.in_support(v)) {
            None => Ok(()),
            Some(index) => Err(TispError::Support {
                index,
                family: self.name(),
                value: y[index],
            }),
        }
    }

    /// Log-density of a single observation at linear predictor `eta`.
    pub fn log_density(&self, y: f64, eta: f64) -> f64 {
        y * eta - self.cumulant(eta) + self.base_measure(y)
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Mean vector together with a flag telling whether any entry was capped.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector {
    pub mu: DVector<f64>,
    pub capped: bool,
}

/// Componentwise `b′(η)` with the Poisson mean clamped at `cap`.
pub fn mean_vector_capped(family: GlmFamily, eta: &DVector<f64>, cap: f64) -> MeanVector {
    let mut capped = false;
    let mu = eta.map(|t| {
        let m = family.mean(t);
        if family == GlmFamily::PoissonLog && !(m <= cap) {
            capped = true;
            cap
        } else {
            m
        }
    });
    if capped {
        log::warn!("Poisson mean exceeded {cap:e} and was capped");
    }
    MeanVector { mu, capped }
}

pub fn mean_vector(family: GlmFamily, eta: &DVector<f64>) -> DVector<f64> {
    mean_vector_capped(family, eta, POISSON_MEAN_CAP).mu
}

/// Full log-likelihood `Σ yᵢηᵢ − b(ηᵢ) + c(yᵢ)`.
pub fn log_likelihood(family: GlmFamily, y: &DVector<f64>, eta: &DVector<f64>) -> Result<f64> {
    if y.len() != eta.len() {
        return Err(TispError::Dimension(format!(
            "response has length {} but linear predictor has length {}",
            y.len(),
            eta.len()
        )));
    }
    family.check_support(y)?;
    Ok(y.iter()
        .zip(eta.iter())
        .map(|(&yi, &ei)| family.log_density(yi, ei))
        .sum())
}

/// Deviance `2(L_saturated − L)`.
pub fn deviance(family: GlmFamily, y: &DVector<f64>, eta: &DVector<f64>) -> Result<f64> {
    let fitted = log_likelihood(family, y, eta)?;
    let saturated: f64 = y
        .iter()
        .map(|&yi| match family {
            GlmFamily::GaussianIdentity => family.log_density(yi, yi),
            // y log y − y with 0 log 0 = 0
            GlmFamily::PoissonLog if yi == 0.0 => family.base_measure(0.0),
            GlmFamily::PoissonLog => family.log_density(yi, yi.ln()),
            GlmFamily::BernoulliLogit => 0.0,
        })
        .sum();
    Ok(2.0 * (saturated - fitted))
}

/// Score `Xᵀ(y − μ)` at linear predictor `eta`.
pub fn score(
    family: GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    eta: &DVector<f64>,
) -> DVector<f64> {
    let resid = y - mean_vector(family, eta);
    x.tr_mul(&resid)
}

/// Fisher information `XᵀWX`, `W = diag b″(xᵢᵀβ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
}

pub fn fisher_information(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<FisherInfo> {
    if x.ncols() != beta.len() {
        return Err(TispError::Dimension(format!(
            "design has {} columns but beta has length {}",
            x.ncols(),
            beta.len()
        )));
    }
    let eta = x * beta;
    Ok(fisher_information_at(family, x, &eta))
}

/// Fisher information at an explicit linear predictor (which may include an
/// intercept or offset).
pub fn fisher_information_at(
    family: GlmFamily,
    x: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> FisherInfo {
    let weights = eta.map(|t| family.variance(t));
    let mut weighted = x.clone();
    for (mut row, &w) in weighted.row_iter_mut().zip(weights.iter()) {
        row *= w;
    }
    FisherInfo {
        matrix: x.tr_mul(&weighted),
    }
}

/// Design scaling divisor `k0` certifying monotone descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingBound {
    pub k0: f64,
    pub spectral_norm: f64,
    /// True when the bound is not a global certificate (Poisson).
    pub heuristic: bool,
}

fn rules_curvature(rules: &[ThresholdRule]) -> Result<f64> {
    let mut l = 0.0f64;
    for r in rules {
        r.validate()?;
        l = l.max(r.curvature());
    }
    Ok(l)
}

fn k0_from(norm: f64, variance_sup: f64, curvature: f64) -> f64 {
    norm * (variance_sup / 1.0f64.max(2.0 - curvature)).sqrt()
}

/// Least certified `k0 = ‖X‖₂·sqrt(sup b″ / max(1, 2 − L))`.
///
/// Poisson has no finite `sup b″`; it gets the heuristic bound of
/// [`poisson_scaling_bound`] evaluated at a zero coefficient norm.
pub fn scaling_bound(
    family: GlmFamily,
    x: &DMatrix<f64>,
    rules: &[ThresholdRule],
) -> Result<ScalingBound> {
    let curvature = rules_curvature(rules)?;
    let norm = spectral_norm(x);
    if norm == 0.0 {
        return Err(TispError::InvalidParameter(
            "design matrix is identically zero".into(),
        ));
    }
    match family.variance_sup() {
        Some(sup) => Ok(ScalingBound {
            k0: k0_from(norm, sup, curvature),
            spectral_norm: norm,
            heuristic: false,
        }),
        None => poisson_bound_with_norm(x, norm, curvature, 0.0, 0.0),
    }
}

/// Heuristic Poisson bound. Linear predictors are boxed by
/// `|ηᵢ| ≤ ‖xᵢ‖₂·‖β‖₂ + |α|`, giving `sup b″ ≤ exp(maxᵢ ‖xᵢ‖₂‖β‖₂ + |α|)`;
/// the resulting `k0` is multiplied by [`POISSON_SAFETY_FACTOR`].
pub fn poisson_scaling_bound(
    x: &DMatrix<f64>,
    rules: &[ThresholdRule],
    beta_norm: f64,
    intercept: f64,
) -> Result<ScalingBound> {
    let curvature = rules_curvature(rules)?;
    let norm = spectral_norm(x);
    if norm == 0.0 {
        return Err(TispError::InvalidParameter(
            "design matrix is identically zero".into(),
        ));
    }
    poisson_bound_with_norm(x, norm, curvature, beta_norm, intercept)
}

fn poisson_bound_with_norm(
    x: &DMatrix<f64>,
    norm: f64,
    curvature: f64,
    beta_norm: f64,
    intercept: f64,
) -> Result<ScalingBound> {
    let max_row = x.row_iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    let sup = (max_row * beta_norm + intercept.abs()).exp();
    Ok(ScalingBound {
        k0: POISSON_SAFETY_FACTOR * k0_from(norm, sup, curvature),
        spectral_norm: norm,
        heuristic: true,
    })
}

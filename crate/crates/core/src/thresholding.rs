//! Scalar and multivariate threshold functions and their penalties.
//!
//! Every rule here is an odd, nondecreasing, unbounded shrinkage map
//! `Θ(t; λ)` with `0 ≤ Θ(t; λ) ≤ t` for `t ≥ 0`. Each rule is paired with the
//! minimal-curvature penalty obtained by inverting `Θ`, subtracting the
//! identity, and integrating:
//!
//! ```text
//! Θ⁻¹(u; λ) = sup { t : Θ(t; λ) ≤ u }
//! s(u; λ)   = Θ⁻¹(u; λ) − u
//! P(θ; λ)   = ∫₀^|θ| s(u; λ) du
//! ```
//!
//! [`penalty_value`] evaluates the closed forms, while
//! [`penalty_from_rule_numeric`] runs the construction numerically and is
//! used as an oracle in tests.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TispError};

/// Shrinkage rule together with its shape parameters.
///
/// `λ` is not stored here; it is supplied per call (and per group in the
/// solver).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `sign(t)·max(|t| − λ, 0)`.
    Soft,
    /// `t / (1 + η)`; ignores `λ`.
    Ridge { eta: f64 },
    /// `t·1{|t| ≥ λ}`.
    Hard,
    /// Piecewise SCAD rule with concavity parameter `a > 2`.
    Scad { a: f64 },
    /// Firm shrinkage, `0 ≤ α ≤ 1`. `α = 0` is the identity, `α = 1` is hard.
    Firm { alpha: f64 },
    /// Hard selection followed by ridge shrinkage of the survivors.
    HardRidge { eta: f64 },
}

/// Default SCAD concavity.
pub const SCAD_DEFAULT_A: f64 = 3.7;

impl ThresholdRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdRule::Soft | ThresholdRule::Hard => Ok(()),
            ThresholdRule::Ridge { eta } | ThresholdRule::HardRidge { eta } => {
                if eta.is_finite() && eta >= 0.0 {
                    Ok(())
                } else {
                    Err(TispError::InvalidParameter(format!(
                        "ridge parameter eta must be finite and >= 0, got {eta}"
                    )))
                }
            }
            ThresholdRule::Scad { a } => {
                if a.is_finite() && a > 2.0 {
                    Ok(())
                } else {
                    Err(TispError::InvalidParameter(format!(
                        "SCAD parameter a must exceed 2, got {a}"
                    )))
                }
            }
            ThresholdRule::Firm { alpha } => {
                if (0.0..=1.0).contains(&alpha) {
                    Ok(())
                } else {
                    Err(TispError::InvalidParameter(format!(
                        "firm parameter alpha must lie in [0, 1], got {alpha}"
                    )))
                }
            }
        }
    }

    /// Short lowercase name used in reports and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdRule::Soft => "soft",
            ThresholdRule::Ridge { .. } => "ridge",
            ThresholdRule::Hard => "hard",
            ThresholdRule::Scad { .. } => "scad",
            ThresholdRule::Firm { .. } => "firm",
            ThresholdRule::HardRidge { .. } => "hard_ridge",
        }
    }

    /// Ridge parameter carried by the rule, if any.
    pub fn eta(&self) -> Option<f64> {
        match *self {
            ThresholdRule::Ridge { eta } | ThresholdRule::HardRidge { eta } => Some(eta),
            _ => None,
        }
    }

    /// Whether the rule produces exact zeros for small inputs.
    pub fn is_sparse(&self) -> bool {
        !matches!(self, ThresholdRule::Ridge { .. })
    }

    /// Evaluates `Θ(t; λ)`. Parameters are assumed valid.
    pub fn apply(&self, t: f64, lambda: f64) -> f64 {
        let m = t.abs();
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        let shrunk = match *self {
            ThresholdRule::Soft => (m - lambda).max(0.0),
            ThresholdRule::Ridge { eta } => m / (1.0 + eta),
            ThresholdRule::Hard => {
                if m >= lambda {
                    m
                } else {
                    0.0
                }
            }
            ThresholdRule::Scad { a } => {
                if m <= 2.0 * lambda {
                    (m - lambda).max(0.0)
                } else if m <= a * lambda {
                    ((a - 1.0) * m - a * lambda) / (a - 2.0)
                } else {
                    m
                }
            }
            ThresholdRule::Firm { alpha } => {
                if m >= lambda {
                    m
                } else if m < alpha * lambda {
                    0.0
                } else {
                    (m - alpha * lambda) / (1.0 - alpha)
                }
            }
            ThresholdRule::HardRidge { eta } => {
                if m >= lambda {
                    m / (1.0 + eta)
                } else {
                    0.0
                }
            }
        };
        // Θ(0) = 0 and oddness hold exactly
        if shrunk == 0.0 {
            0.0
        } else {
            sign * shrunk
        }
    }

    /// Closed-form minimal penalty `P_Θ(|θ|; λ)`.
    pub fn penalty(&self, theta: f64, lambda: f64) -> f64 {
        let u = theta.abs();
        match *self {
            ThresholdRule::Soft => lambda * u,
            ThresholdRule::Ridge { eta } => 0.5 * eta * u * u,
            ThresholdRule::Hard => hard_penalty(u, lambda),
            ThresholdRule::Scad { a } => {
                if u <= lambda {
                    lambda * u
                } else if u <= a * lambda {
                    -(u * u - 2.0 * a * lambda * u + lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    0.5 * (a + 1.0) * lambda * lambda
                }
            }
            ThresholdRule::Firm { alpha } => alpha * hard_penalty(u, lambda),
            ThresholdRule::HardRidge { eta } => {
                let knee = lambda / (1.0 + eta);
                if u < knee {
                    -0.5 * u * u + lambda * u
                } else {
                    0.5 * eta * u * u + 0.5 * lambda * lambda / (1.0 + eta)
                }
            }
        }
    }

    /// Derivative of `Θ(·; λ)` at `m > 0` on the branch containing `m`.
    pub fn slope(&self, m: f64, lambda: f64) -> f64 {
        match *self {
            ThresholdRule::Soft | ThresholdRule::Hard => 1.0,
            ThresholdRule::Ridge { eta } | ThresholdRule::HardRidge { eta } => 1.0 / (1.0 + eta),
            ThresholdRule::Scad { a } => {
                if m > 2.0 * lambda && m <= a * lambda {
                    (a - 1.0) / (a - 2.0)
                } else {
                    1.0
                }
            }
            ThresholdRule::Firm { alpha } => {
                if m < lambda {
                    1.0 / (1.0 - alpha)
                } else {
                    1.0
                }
            }
        }
    }

    /// Lower bound `-L` on the slope of `s(u; λ)`, reported as `L ∈ [0, 1]`.
    pub fn curvature(&self) -> f64 {
        match *self {
            ThresholdRule::Soft | ThresholdRule::Ridge { .. } => 0.0,
            ThresholdRule::Hard | ThresholdRule::HardRidge { .. } => 1.0,
            ThresholdRule::Scad { a } => 1.0 / (a - 1.0),
            ThresholdRule::Firm { alpha } => alpha,
        }
    }
}

fn hard_penalty(u: f64, lambda: f64) -> f64 {
    if u < lambda {
        -0.5 * u * u + lambda * u
    } else {
        0.5 * lambda * lambda
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(TispError::InvalidParameter(format!(
            "threshold lambda must be finite and >= 0, got {lambda}"
        )))
    }
}

/// Curvature constant `L_Θ` of a rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureConstant {
    pub l_theta: f64,
}

/// Penalty value together with the rule and `λ` it was evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    pub rule: ThresholdRule,
    pub lambda: f64,
}

pub fn threshold_scalar(rule: ThresholdRule, t: f64, lambda: f64) -> Result<f64> {
    rule.validate()?;
    check_lambda(lambda)?;
    Ok(rule.apply(t, lambda))
}

/// Multivariate rule: `a/‖a‖₂ · Θ(‖a‖₂; λ)`, with the zero vector fixed.
pub fn threshold_vector(
    rule: ThresholdRule,
    a: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    rule.validate()?;
    check_lambda(lambda)?;
    let mut out = a.clone();
    shrink_block_in_place(rule, out.as_mut_slice(), lambda);
    Ok(out)
}

/// In-place multivariate thresholding of a coefficient block.
pub(crate) fn shrink_block_in_place(rule: ThresholdRule, block: &mut [f64], lambda: f64) {
    if block.len() == 1 {
        block[0] = rule.apply(block[0], lambda);
        return;
    }
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let target = rule.apply(norm, lambda);
    if target == 0.0 {
        block.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let factor = target / norm;
        block.iter_mut().for_each(|v| *v *= factor);
    }
}

pub fn penalty_value(rule: ThresholdRule, theta: f64, lambda: f64) -> Result<PenaltyEval> {
    rule.validate()?;
    check_lambda(lambda)?;
    Ok(PenaltyEval {
        value: rule.penalty(theta, lambda),
        rule,
        lambda,
    })
}

pub fn curvature_constant(rule: ThresholdRule) -> Result<CurvatureConstant> {
    rule.validate()?;
    Ok(CurvatureConstant {
        l_theta: rule.curvature(),
    })
}

/// Number of points in the coarse grid used to bracket `Θ⁻¹`.
const INVERSION_GRID_POINTS: usize = 100_000;

/// Numeric generalized inverse `sup { t ≥ 0 : Θ(t; λ) ≤ u }`.
///
/// A coarse uniform grid brackets the supremum and bisection refines it.
struct NumericInverse {
    rule: ThresholdRule,
    lambda: f64,
    grid_step: f64,
    grid_len: usize,
    cursor: usize,
}

impl NumericInverse {
    fn new(rule: ThresholdRule, lambda: f64, theta_max: f64) -> Self {
        let eta = rule.eta().unwrap_or(0.0);
        let a = match rule {
            ThresholdRule::Scad { a } => a,
            _ => 1.0,
        };
        // Θ is the identity (or a fixed ridge shrink) beyond max(aλ, λ), so
        // this span contains Θ⁻¹(u) for every u ≤ theta_max.
        let span = (10.0 * lambda)
            .max(10.0 * theta_max)
            .max((1.0 + eta) * theta_max + a * lambda + lambda)
            .max(1e-12);
        let grid_len = INVERSION_GRID_POINTS;
        Self {
            rule,
            lambda,
            grid_step: span / (grid_len - 1) as f64,
            grid_len,
            cursor: 0,
        }
    }

    fn theta(&self, t: f64) -> f64 {
        self.rule.apply(t, self.lambda)
    }

    /// Evaluates at nondecreasing `u`; the grid cursor only moves forward.
    fn eval(&mut self, u: f64) -> f64 {
        while self.cursor + 1 < self.grid_len
            && self.theta((self.cursor + 1) as f64 * self.grid_step) <= u
        {
            self.cursor += 1;
        }
        let mut lo = self.cursor as f64 * self.grid_step;
        let mut hi = lo + self.grid_step;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.theta(mid) <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Runs the three-step construction numerically: inverts `Θ` by monotone
/// sup-inversion and integrates `s(u; λ)` with the trapezoid rule on a grid of
/// spacing at most `grid_step`.
pub fn penalty_from_rule_numeric(
    rule: ThresholdRule,
    theta: f64,
    lambda: f64,
    grid_step: f64,
) -> f64 {
    let upper = theta.abs();
    if upper == 0.0 || !(grid_step > 0.0) {
        return 0.0;
    }
    let steps = (upper / grid_step).ceil().max(1.0) as usize;
    let h = upper / steps as f64;
    let mut inverse = NumericInverse::new(rule, lambda, upper);
    let mut s_prev = inverse.eval(0.0);
    let mut total = 0.0;
    for i in 1..=steps {
        let u = if i == steps { upper } else { i as f64 * h };
        let s = inverse.eval(u) - u;
        total += 0.5 * h * (s_prev + s);
        s_prev = s;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_rules() -> Vec<ThresholdRule> {
        vec![
            ThresholdRule::Soft,
            ThresholdRule::Ridge { eta: 0.7 },
            ThresholdRule::Hard,
            ThresholdRule::Scad { a: 3.7 },
            ThresholdRule::Firm { alpha: 0.4 },
            ThresholdRule::HardRidge { eta: 0.5 },
        ]
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(
            threshold_scalar(ThresholdRule::Soft, 3.0, 1.0).unwrap(),
            2.0
        );
        assert_eq!(
            threshold_scalar(ThresholdRule::HardRidge { eta: 0.5 }, 3.0, 1.0).unwrap(),
            2.0
        );
        let firm = threshold_scalar(ThresholdRule::Firm { alpha: 0.4 }, 0.5, 1.0).unwrap();
        assert!((firm - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn scad_matches_grid_minimizer() {
        // independent oracle: minimise ½(t−θ)² + P_SCAD(θ) on a fine grid
        let rule = ThresholdRule::Scad { a: 3.7 };
        let t = 3.0;
        let mut best = (f64::INFINITY, 0.0);
        let mut theta = 0.0;
        while theta <= 4.0 {
            let f = 0.5 * (t - theta) * (t - theta) + rule.penalty(theta, 1.0);
            if f < best.0 {
                best = (f, theta);
            }
            theta += 1e-5;
        }
        assert!((best.1 - 2.588235294).abs() < 1e-4, "{}", best.1);
        assert!((rule.apply(t, 1.0) - 2.588235294117647).abs() < 1e-12);
    }

    #[test]
    fn parameter_domain_errors() {
        assert!(threshold_scalar(ThresholdRule::Scad { a: 2.0 }, 1.0, 1.0).is_err());
        assert!(threshold_scalar(ThresholdRule::Firm { alpha: 1.5 }, 1.0, 1.0).is_err());
        assert!(threshold_scalar(ThresholdRule::Ridge { eta: -0.1 }, 1.0, 1.0).is_err());
        assert!(threshold_scalar(ThresholdRule::HardRidge { eta: -1.0 }, 1.0, 1.0).is_err());
        assert!(threshold_scalar(ThresholdRule::Soft, 1.0, -1.0).is_err());
        assert!(penalty_value(ThresholdRule::Scad { a: 1.0 }, 1.0, 1.0).is_err());
        assert!(curvature_constant(ThresholdRule::Firm { alpha: -0.2 }).is_err());
    }

    #[test]
    fn vector_examples() {
        let out =
            threshold_vector(ThresholdRule::Soft, &DVector::from_vec(vec![3.0, 4.0]), 1.0).unwrap();
        assert!((out[0] - 2.4).abs() < 1e-14 && (out[1] - 3.2).abs() < 1e-14);
        for rule in all_rules() {
            let z = threshold_vector(rule, &DVector::zeros(2), 2.0).unwrap();
            assert_eq!(z, DVector::zeros(2));
        }
        let killed =
            threshold_vector(ThresholdRule::Hard, &DVector::from_vec(vec![0.3, 0.4]), 1.0).unwrap();
        assert_eq!(killed, DVector::zeros(2));
    }

    #[test]
    fn penalty_examples() {
        let p = |r, th, l| penalty_value(r, th, l).unwrap().value;
        assert!((p(ThresholdRule::Hard, 0.5, 1.0) - 0.375).abs() < 1e-15);
        assert!((p(ThresholdRule::Hard, 2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(
            (p(ThresholdRule::HardRidge { eta: 0.5 }, 1.0, 1.0) - (0.25 + 1.0 / 3.0)).abs() < 1e-15
        );
        assert_eq!(p(ThresholdRule::Soft, 2.0, 1.0), 2.0);
        assert_eq!(p(ThresholdRule::Soft, 0.0, 1.0), 0.0);
    }

    #[test]
    fn numeric_construction_examples() {
        let h = penalty_from_rule_numeric(ThresholdRule::Hard, 0.5, 1.0, 1e-4);
        assert!((h - 0.375).abs() < 1e-6, "{h}");
        let s = penalty_from_rule_numeric(ThresholdRule::Soft, 3.0, 2.0, 1e-4);
        assert!((s - 6.0).abs() < 1e-6, "{s}");
        let r = penalty_from_rule_numeric(ThresholdRule::Ridge { eta: 1.0 }, 2.0, 0.3, 1e-4);
        assert!((r - 2.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(
            curvature_constant(ThresholdRule::Hard).unwrap().l_theta,
            1.0
        );
        let scad = curvature_constant(ThresholdRule::Scad { a: 3.7 })
            .unwrap()
            .l_theta;
        assert!((scad - 1.0 / 2.7).abs() < 1e-15);
        assert_eq!(
            curvature_constant(ThresholdRule::Firm { alpha: 0.4 })
                .unwrap()
                .l_theta,
            0.4
        );
    }

    #[test]
    fn firm_slope_from_numeric_inverse() {
        // s(u) = Θ⁻¹(u) − u has slope −α on (0, λ)
        let rule = ThresholdRule::Firm { alpha: 0.4 };
        let mut inv = NumericInverse::new(rule, 1.0, 1.0);
        let (u0, u1) = (0.2, 0.6);
        let s0 = inv.eval(u0) - u0;
        let s1 = inv.eval(u1) - u1;
        assert!(((s1 - s0) / (u1 - u0) + 0.4).abs() < 1e-8);
    }

    #[test]
    fn numeric_curvature_bound_holds() {
        for rule in all_rules() {
            let l = rule.curvature();
            let mut inv = NumericInverse::new(rule, 1.0, 6.0);
            let h = 1e-3;
            let mut s_prev = inv.eval(0.0);
            for i in 1..6000 {
                let u = i as f64 * h;
                let s = inv.eval(u) - u;
                assert!((s - s_prev) / h >= -l - 1e-6, "{rule:?} at {u}");
                s_prev = s;
            }
        }
    }

    #[test]
    fn lambda_zero_degenerates() {
        for t in [-2.0, -0.3, 0.0, 0.7, 5.0] {
            assert_eq!(ThresholdRule::Soft.apply(t, 0.0), t);
            assert_eq!(ThresholdRule::Hard.apply(t, 0.0), t);
            assert_eq!(ThresholdRule::Scad { a: 3.7 }.apply(t, 0.0), t);
            assert!((ThresholdRule::HardRidge { eta: 1.0 }.apply(t, 0.0) - t / 2.0).abs() < 1e-15);
        }
        assert_eq!(ThresholdRule::Hard.penalty(3.0, 0.0), 0.0);
    }

    #[test]
    fn firm_endpoints() {
        let hard = ThresholdRule::Firm { alpha: 1.0 };
        for t in [0.2, 0.99, 1.0, 2.0] {
            assert_eq!(hard.apply(t, 1.0), ThresholdRule::Hard.apply(t, 1.0));
        }
        let ident = ThresholdRule::Firm { alpha: 0.0 };
        assert_eq!(ident.apply(0.3, 1.0), 0.3);
    }
}

//! Solver invariants: descent, fixed points, group relabeling, zero columns
//! and the hard-rule refit consistency.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tisp::glm::log_likelihood;
use tisp::solver::{calibrate, CalibrationMode};
use tisp::{tisp_fit, GlmFamily, GroupSpec, Problem, SolverOptions, ThresholdRule};

const RULES: [ThresholdRule; 6] = [
    ThresholdRule::Soft,
    ThresholdRule::Ridge { eta: 0.5 },
    ThresholdRule::Hard,
    ThresholdRule::Scad { a: 3.7 },
    ThresholdRule::Firm { alpha: 0.4 },
    ThresholdRule::HardRidge { eta: 0.3 },
];

fn gaussian_problem(seed: u64, n: usize, p: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { 1.5 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    Problem::new(x, y, GlmFamily::GaussianIdentity)
}

fn logistic_problem(seed: u64, n: usize, p: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let eta = x.column(0) * 2.0 - x.column(1);
    let y = eta.map(|e| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-e).exp())));
    Problem::new(x, y, GlmFamily::BernoulliLogit)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_descends_and_limits_are_fixed_points(
        seed in 0u64..10_000,
        rule_idx in 0usize..6,
        lambda in 0.05f64..0.6,
        logistic in any::<bool>(),
        intercept in any::<bool>(),
    ) {
        let base = if logistic { logistic_problem(seed, 30, 12) } else { gaussian_problem(seed, 30, 12) };
        let problem = base
            .with_rule(RULES[rule_idx])
            .with_lambda(lambda)
            .with_intercept(intercept);
        let opts = SolverOptions::default().with_omega(1.0).with_polish(false);
        let fit = tisp_fit(&problem, &opts).unwrap();
        prop_assert_eq!(fit.descent_violations, 0);
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        if fit.converged {
            prop_assert!(fit.fixed_point_residual <= 1e-6);
        }
    }

    #[test]
    fn polished_fits_are_fixed_points(
        seed in 0u64..10_000,
        rule_idx in 0usize..6,
        lambda in 0.05f64..0.6,
    ) {
        let problem = gaussian_problem(seed, 25, 40).with_rule(RULES[rule_idx]).with_lambda(lambda);
        let fit = tisp_fit(&problem, &SolverOptions::default()).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.fixed_point_residual <= 1e-6);
    }

    #[test]
    fn zero_columns_change_nothing(seed in 0u64..10_000, rule_idx in 0usize..6, extra in 1usize..20) {
        let base = gaussian_problem(seed, 20, 6);
        let wide = DMatrix::from_fn(20, 6 + extra, |i, j| if j < 6 { base.x[(i, j)] } else { 0.0 });
        let augmented = Problem::new(wide, base.y.clone(), base.family);
        let opts = SolverOptions::default();
        let a = tisp_fit(&base.with_rule(RULES[rule_idx]).with_lambda(0.2), &opts).unwrap();
        let b = tisp_fit(&augmented.with_rule(RULES[rule_idx]).with_lambda(0.2), &opts).unwrap();
        prop_assert_eq!(a.k0_used, b.k0_used);
        prop_assert_eq!(a.beta.as_slice(), &b.beta.as_slice()[..6]);
        prop_assert!(b.beta.iter().skip(6).all(|&v| v == 0.0));
        prop_assert_eq!(a.final_objective(), b.final_objective());
    }
}

#[test]
fn soft_polish_reaches_the_convex_optimum() {
    for seed in 0..10 {
        let problem = gaussian_problem(seed, 30, 50).with_lambda(0.1);
        let plain = tisp_fit(&problem, &SolverOptions::default().with_polish(false)).unwrap();
        let polished = tisp_fit(&problem, &SolverOptions::default()).unwrap();
        let (fa, fb) = (plain.final_objective(), polished.final_objective());
        assert!((fa - fb).abs() <= 1e-6 * fa.abs().max(1.0), "seed {seed}: {fa} vs {fb}");
    }
}

#[test]
fn group_relabeling_permutes_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, p) = (30, 9);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y = x.column(0) * 2.0 - x.column(4) + DVector::from_fn(n, |_, _| 0.3 * rng.random::<f64>());
    let groups = vec![vec![0, 1], vec![2, 3, 4], vec![5], vec![6, 7, 8]];
    // New column c holds old column perm[c]; groups are listed in a new order
    // and shuffled inside.
    let perm = [6, 8, 7, 5, 4, 2, 3, 1, 0];
    let x_perm = DMatrix::from_fn(n, p, |i, c| x[(i, perm[c])]);
    let new_of_old = |old: usize| perm.iter().position(|&o| o == old).unwrap();
    let groups_perm: Vec<Vec<usize>> = [3usize, 2, 1, 0]
        .iter()
        .map(|&g| groups[g].iter().rev().map(|&j| new_of_old(j)).collect())
        .collect();
    for rule in RULES {
        let a = Problem::new(x.clone(), y.clone(), GlmFamily::GaussianIdentity)
            .with_groups(GroupSpec::new(groups.clone(), p).unwrap())
            .with_rule(rule)
            .with_lambda(0.3)
            .with_intercept(true);
        let b = Problem::new(x_perm.clone(), y.clone(), GlmFamily::GaussianIdentity)
            .with_groups(GroupSpec::new(groups_perm.clone(), p).unwrap())
            .with_rule(rule)
            .with_lambda(0.3)
            .with_intercept(true);
        let opts = SolverOptions::default().with_omega(1.0);
        let fa = tisp_fit(&a, &opts).unwrap();
        let fb = tisp_fit(&b, &opts).unwrap();
        for c in 0..p {
            assert!(
                (fb.beta[c] - fa.beta[perm[c]]).abs() < 1e-9,
                "{rule:?} column {c}: {} vs {}",
                fb.beta[c],
                fa.beta[perm[c]]
            );
        }
        assert!((fa.intercept - fb.intercept).abs() < 1e-9);
    }
}

#[test]
fn singleton_groups_reproduce_the_ungrouped_fit() {
    let problem = gaussian_problem(5, 30, 10).with_rule(ThresholdRule::Hard).with_lambda(0.3);
    let grouped = problem.clone().with_groups(GroupSpec::singletons(10)).with_rule(ThresholdRule::Hard).with_lambda(0.3);
    let opts = SolverOptions::default();
    assert_eq!(tisp_fit(&problem, &opts).unwrap().beta, tisp_fit(&grouped, &opts).unwrap().beta);
}

#[test]
fn hard_limit_is_the_restricted_mle() {
    for seed in 0..10 {
        let problem = gaussian_problem(seed, 40, 15).with_rule(ThresholdRule::Hard).with_lambda(0.3);
        let fit = tisp_fit(&problem, &SolverOptions::default()).unwrap();
        let scaled = problem.scaled(fit.k0_used);
        let support = fit.support();
        let refit = calibrate(&scaled, &support, CalibrationMode::RestrictedMle).unwrap();
        let nll = |b: &DVector<f64>, a: f64| {
            -log_likelihood(scaled.family, &scaled.y, &(&scaled.x * b).add_scalar(a)).unwrap()
        };
        let before = nll(&fit.beta_scaled, fit.intercept);
        let after = nll(&refit.beta, refit.intercept);
        assert!((before - after).abs() <= 1e-6 * before.abs(), "seed {seed}: {before} vs {after}");
    }
}

#[test]
fn bad_options_are_rejected() {
    let problem = gaussian_problem(1, 10, 3);
    assert!(tisp_fit(&problem, &SolverOptions::default().with_omega(2.5)).is_err());
    assert!(tisp_fit(&problem, &SolverOptions::default().with_k0(-1.0)).is_err());
    assert!(tisp_fit(&problem.clone().with_lambda(-0.1), &SolverOptions::default()).is_err());
    let short_y = Problem::new(problem.x.clone(), DVector::zeros(4), problem.family);
    assert!(tisp_fit(&short_y, &SolverOptions::default()).is_err());
}

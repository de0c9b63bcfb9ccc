//! Proportional screening: cardinality, the marginal first step and the
//! effect of iterating on a correlated design.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tisp::glm::mean_vector;
use tisp::screening::{screen_proportional, ScreenOptions};
use tisp::simulation::{Ar1Design, NormalStream, TRAIN_STREAM};
use tisp::{GlmFamily, GroupSpec, Problem, ThresholdRule};

fn shape() -> impl Strategy<Value = ThresholdRule> {
    prop_oneof![
        Just(ThresholdRule::Hard),
        Just(ThresholdRule::Soft),
        Just(ThresholdRule::HardRidge { eta: 0.1 }),
        Just(ThresholdRule::Scad { a: 3.7 }),
    ]
}

fn design(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
    Ar1Design { n, p, rho: 0.5, b: 1.0, seed }.design(n, TRAIN_STREAM)
}

/// Marginal ranking oracle: indices of the `m` largest `|Xᵀ(y − μ(0))|`,
/// lower index first on ties.
fn marginal_top(x: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily, m: usize) -> Vec<usize> {
    let mu0 = mean_vector(family, &DVector::zeros(y.len()));
    let corr = x.tr_mul(&(y - mu0));
    let mut idx: Vec<usize> = (0..corr.len()).collect();
    idx.sort_by(|&a, &b| corr[b].abs().partial_cmp(&corr[a].abs()).unwrap().then(a.cmp(&b)));
    let mut top = idx[..m].to_vec();
    top.sort_unstable();
    top
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn keeps_exactly_m_every_iteration(
        seed in 0u64..10_000,
        alpha in 0.05f64..0.6,
        rule in shape(),
        logistic in any::<bool>(),
    ) {
        let (n, p) = (30, 40);
        let x = design(seed, n, p);
        let mut z = NormalStream::new(seed, 9);
        let eta = x.column(0) * 1.5 - x.column(3);
        let (family, y) = if logistic {
            (GlmFamily::BernoulliLogit, eta.map(|e| f64::from(z.next_uniform() < 1.0 / (1.0 + (-e).exp()))))
        } else {
            (GlmFamily::GaussianIdentity, eta.map(|e| e + z.next_normal()))
        };
        let m = (alpha * n as f64).ceil() as usize;
        let problem = Problem::new(x.clone(), y.clone(), family);
        let r = screen_proportional(&problem, alpha, rule, &ScreenOptions::default()).unwrap();
        prop_assert!(r.nonzero_counts.iter().all(|&c| c == m), "{:?}", r.nonzero_counts);
        prop_assert_eq!(r.kept.len(), m);
        prop_assert_eq!(r.kept.clone(), r.final_beta.iter().enumerate().filter(|(_, &b)| b != 0.0).map(|(j, _)| j).collect::<Vec<_>>());
        prop_assert_eq!(r.first_kept, marginal_top(&x, &y, family, m));
    }

    #[test]
    fn grouped_screen_keeps_m_groups(seed in 0u64..10_000, alpha in 0.05f64..0.4) {
        let (n, p) = (20, 30);
        let x = design(seed, n, p);
        let mut z = NormalStream::new(seed, 9);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + x[(i, 1)] + z.next_normal());
        let groups: Vec<Vec<usize>> = (0..15).map(|k| vec![2 * k, 2 * k + 1]).collect();
        let problem = Problem::new(x, y, GlmFamily::GaussianIdentity)
            .with_groups(GroupSpec::new(groups, p).unwrap());
        let m = (alpha * n as f64).ceil() as usize;
        let r = screen_proportional(&problem, alpha, ThresholdRule::Hard, &ScreenOptions::default()).unwrap();
        prop_assert!(r.nonzero_counts.iter().all(|&c| c == m));
        prop_assert_eq!(r.kept_columns.len(), 2 * m);
    }
}

#[test]
fn iterating_moves_past_the_marginal_ranking() {
    // Columns 10 and 11 enter with opposite signs, so at ρ = 0.9 their joint
    // effect is nearly invisible to marginal correlations.
    let (n, p) = (60, 100);
    let x = Ar1Design { n, p, rho: 0.9, b: 1.0, seed: 0 }.design(n, TRAIN_STREAM);
    let mut beta = DVector::zeros(p);
    beta[10] = 3.0;
    beta[11] = -3.0;
    beta[40] = 2.0;
    let mut z = NormalStream::new(0, 7);
    let y = &x * &beta + DVector::from_fn(n, |_, _| 0.3 * z.next_normal());
    let problem = Problem::new(x, y, GlmFamily::GaussianIdentity);
    let r = screen_proportional(&problem, 0.2, ThresholdRule::Soft, &ScreenOptions::default()).unwrap();
    assert!(!r.oscillating);
    assert_eq!(r.first_kept, (35..47).collect::<Vec<_>>());
    assert_eq!(r.kept, (34..46).collect::<Vec<_>>());
}

#[test]
fn too_many_kept_is_an_error() {
    let x = design(1, 20, 8);
    let y = DVector::from_fn(20, |i, _| i as f64);
    let problem = Problem::new(x, y, GlmFamily::GaussianIdentity);
    assert!(screen_proportional(&problem, 0.5, ThresholdRule::Hard, &ScreenOptions::default()).is_err());
    assert!(screen_proportional(&problem, 0.4, ThresholdRule::Hard, &ScreenOptions::default()).is_ok());
}

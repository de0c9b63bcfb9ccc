//! Small dense linear-algebra helpers shared by the solver and the tuner.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POWER_MAX_ITER: usize = 1000;
pub const POWER_REL_TOL: f64 = 1e-10;

/// Spectral norm `‖X‖₂` by power iteration on `XᵀX`.
///
/// Starts from the all-ones vector restricted to the nonzero columns, and
/// falls back to a seeded random start when that vector lies in the null
/// space.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let live: Vec<bool> = x
        .column_iter()
        .map(|c| c.iter().any(|&v| v != 0.0))
        .collect();
    if !live.iter().any(|&l| l) {
        return 0.0;
    }
    if live.iter().any(|&l| !l) {
        let cols: Vec<usize> = (0..p).filter(|&j| live[j]).collect();
        return spectral_norm(&select_columns(x, &cols));
    }
    let start = DVector::from_iterator(p, live.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    let estimate = power_iterate(x, start);
    if estimate > 0.0 {
        return estimate;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = DVector::from_iterator(
        p,
        live.iter()
            .map(|&l| if l { rng.random::<f64>() - 0.5 } else { 0.0 }),
    );
    power_iterate(x, start)
}

fn power_iterate(x: &DMatrix<f64>, mut v: DVector<f64>) -> f64 {
    let norm = v.norm();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;
    let mut rayleigh = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let xv = x * &v;
        let w = x.tr_mul(&xv);
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        let converged = (next - rayleigh).abs() <= POWER_REL_TOL * next.abs();
        rayleigh = next;
        if converged {
            break;
        }
    }
    rayleigh.max(0.0).sqrt()
}

/// Sweep limit for the SVD fallback.
const SVD_MAX_ITER: usize = 10_000;

/// Solves the symmetric system `A z = b`, preferring Cholesky and falling back
/// to an SVD pseudo-inverse when `A` is not numerically positive definite.
/// Returns NaNs when neither succeeds.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = a.clone().cholesky() {
        let z = chol.solve(b);
        if z.iter().all(|v| v.is_finite()) {
            return z;
        }
    }
    let zeros = || DVector::from_element(b.len(), f64::NAN);
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return zeros();
    }
    let Some(svd) = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
    else {
        return zeros();
    };
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| zeros())
}

/// Gathers the listed columns into a new matrix.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// Gathers the listed rows into a new matrix.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Scales every column to unit Euclidean norm; returns the scaled matrix and
/// the original norms. All-zero columns are left untouched with scale 1.
pub fn normalize_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.ncols());
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
            scales.push(n);
        } else {
            scales.push(1.0);
        }
    }
    (out, scales)
}

/// Applies previously computed column scales to another matrix.
pub fn apply_column_scales(x: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut col, &s) in out.column_iter_mut().zip(scales) {
        col /= s;
    }
    out
}

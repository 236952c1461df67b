//! Small dense helpers shared by the analysis and simulation modules.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Dimension above which [`spectral_radius`] switches from a Schur
/// decomposition to a power-norm estimate.
pub const SCHUR_LIMIT: usize = 1024;

pub fn column_sums(m: &Mat) -> Vec<f64> {
    (0..m.ncols()).map(|c| m.column(c).iter().sum()).collect()
}

pub fn row_sums(m: &Mat) -> Vec<f64> {
    (0..m.nrows()).map(|r| m.row(r).iter().sum()).collect()
}

/// Largest absolute deviation of a column sum from one.
pub fn column_sum_defect(m: &Mat) -> f64 {
    column_sums(m)
        .into_iter()
        .fold(0.0, |acc, s| acc.max(libm::fabs(s - 1.0)))
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(libm::fabs(*x)))
}

/// Ordinary Kronecker product.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for y in 0..bc {
                for x in 0..br {
                    out[(i * br + x, j * bc + y)] = s * b[(x, y)];
                }
            }
        }
    }
    out
}

/// Eigenvalue magnitudes sorted in decreasing order, or `None` when the
/// Schur iteration fails to converge.
pub fn eigenvalue_magnitudes(m: &Mat) -> Option<Vec<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000 * n.max(1))?;
    let mut mags: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    Some(mags)
}

/// Spectral radius. Exact (Schur) up to [`SCHUR_LIMIT`]; above it the
/// Gelfand estimate `||F^n x||^(1/n)` with `n = 400` from a fixed start.
pub fn spectral_radius(m: &Mat) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= SCHUR_LIMIT {
        if let Some(mags) = eigenvalue_magnitudes(m) {
            return mags[0];
        }
    }
    let mut x = Vector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    x /= x.norm();
    let steps = 400;
    let mut log_growth = 0.0;
    for _ in 0..steps {
        x = m * &x;
        let norm = x.norm();
        if norm == 0.0 {
            return 0.0;
        }
        log_growth += libm::log(norm);
        x /= norm;
    }
    libm::exp(log_growth / steps as f64)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extremes(m: &Mat) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn db(x: f64) -> f64 {
    10.0 * libm::log10(x)
}

//! Matrix-free solvers for the large moment operators.

use alloc::vec::Vec;

use crate::linalg::{self, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    pub restart: usize,
    pub max_iters: usize,
    /// Relative residual target.
    pub tol: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            restart: 60,
            max_iters: 3000,
            tol: 1e-12,
        }
    }
}

/// Restarted GMRES for `op(x) = b`. Returns the iterate and its relative
/// residual.
pub fn gmres<F: Fn(&Vector) -> Vector>(op: F, b: &Vector, opts: KrylovOptions) -> (Vector, f64) {
    let n = b.len();
    let bnorm = b.norm();
    let mut x = Vector::zeros(n);
    if bnorm == 0.0 {
        return (x, 0.0);
    }
    let mut done = 0;
    while done < opts.max_iters {
        let r = b - op(&x);
        let beta = r.norm();
        if beta / bnorm <= opts.tol {
            break;
        }
        let m = opts.restart.min(n);
        let mut basis: Vec<Vector> = Vec::with_capacity(m + 1);
        basis.push(r / beta);
        let mut h = Mat::zeros(m + 1, m);
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::with_capacity(m), Vec::with_capacity(m));
        let mut g = Vector::zeros(m + 1);
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let mut w = op(&basis[j]);
            for (i, v) in basis.iter().enumerate() {
                let hij = w.dot(v);
                h[(i, j)] = hij;
                w.axpy(-hij, v, 1.0);
            }
            let hn = w.norm();
            h[(j + 1, j)] = hn;
            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let d = libm::hypot(h[(j, j)], h[(j + 1, j)]);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (h[(j, j)] / d, h[(j + 1, j)] / d) };
            cs.push(c);
            sn.push(s);
            h[(j, j)] = d;
            h[(j + 1, j)] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            used = j + 1;
            done += 1;
            if libm::fabs(g[j + 1]) / bnorm <= opts.tol || hn == 0.0 || done >= opts.max_iters {
                break;
            }
            basis.push(w / hn);
        }
        let mut y = Vector::zeros(used);
        for i in (0..used).rev() {
            let mut acc = g[i];
            for l in i + 1..used {
                acc -= h[(i, l)] * y[l];
            }
            y[i] = acc / h[(i, i)];
        }
        for (i, v) in basis.iter().take(used).enumerate() {
            x.axpy(y[i], v, 1.0);
        }
    }
    let r = b - op(&x);
    (x, r.norm() / bnorm)
}

/// Largest Ritz-value magnitude after `steps` Arnoldi steps from `start`.
pub fn arnoldi_spectral_radius<F: Fn(&Vector) -> Vector>(op: F, start: &Vector, steps: usize) -> f64 {
    let m = steps.min(start.len()).max(1);
    let mut basis: Vec<Vector> = Vec::with_capacity(m + 1);
    basis.push(start.normalize());
    let mut h = Mat::zeros(m, m);
    let mut size = m;
    for j in 0..m {
        let mut w = op(&basis[j]);
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = w.dot(v);
                h[(i, j)] += c;
                w.axpy(-c, v, 1.0);
            }
        }
        let hn = w.norm();
        if j + 1 == m || hn <= 1e-14 {
            size = j + 1;
            break;
        }
        h[(j + 1, j)] = hn;
        basis.push(w / hn);
    }
    let hh = h.view((0, 0), (size, size)).into_owned();
    linalg::eigenvalue_magnitudes(&hh).map_or(f64::NAN, |v| v[0])
}

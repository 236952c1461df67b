//! Entrywise Monte-Carlo accumulation with standard errors.

use crate::linalg::Mat;

/// Sample mean of a random matrix together with the entrywise standard
/// error of that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: Mat,
    pub std_err: Mat,
    pub draws: usize,
}

impl MomentEstimate {
    /// Largest `|mean - reference| / std_err` over entries with nonzero error,
    /// and the largest absolute deviation over entries with zero error.
    pub fn deviation_from(&self, reference: &Mat) -> (f64, f64) {
        let mut z_max: f64 = 0.0;
        let mut exact_max: f64 = 0.0;
        for (idx, m) in self.mean.iter().enumerate() {
            let d = libm::fabs(m - reference.as_slice()[idx]);
            let se = self.std_err.as_slice()[idx];
            if se > 0.0 {
                z_max = z_max.max(d / se);
            } else {
                exact_max = exact_max.max(d);
            }
        }
        (z_max, exact_max)
    }
}

/// Running sums for [`MomentEstimate`]. Uses shifted sums (the first draw is
/// the shift) so constant entries produce an exactly zero variance.
#[derive(Debug, Clone)]
pub struct MatrixAccumulator {
    shift: Option<Mat>,
    sum: Mat,
    sum_sq: Mat,
    draws: usize,
}

impl MatrixAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            shift: None,
            sum: Mat::zeros(rows, cols),
            sum_sq: Mat::zeros(rows, cols),
            draws: 0,
        }
    }

    pub fn push(&mut self, sample: &Mat) {
        let shift = self.shift.get_or_insert_with(|| sample.clone());
        for ((s, q), (x, c)) in self
            .sum
            .iter_mut()
            .zip(self.sum_sq.iter_mut())
            .zip(sample.iter().zip(shift.iter()))
        {
            let d = x - c;
            *s += d;
            *q += d * d;
        }
        self.draws += 1;
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn finish(self) -> MomentEstimate {
        let n = self.draws.max(1) as f64;
        let (rows, cols) = self.sum.shape();
        let shift = self.shift.unwrap_or_else(|| Mat::zeros(rows, cols));
        let mut mean = Mat::zeros(rows, cols);
        let mut std_err = Mat::zeros(rows, cols);
        for idx in 0..rows * cols {
            let s = self.sum.as_slice()[idx];
            let q = self.sum_sq.as_slice()[idx];
            let centered = s / n;
            mean.as_mut_slice()[idx] = shift.as_slice()[idx] + centered;
            if self.draws > 1 {
                let var = ((q - s * centered) / (n - 1.0)).max(0.0);
                std_err.as_mut_slice()[idx] = libm::sqrt(var / n);
            }
        }
        MomentEstimate {
            mean,
            std_err,
            draws: self.draws,
        }
    }
}

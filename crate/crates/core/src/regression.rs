//! Synthetic linear-regression agents with the quadratic risk
//! `J_k(w) = (1/N) Σ_n (d_k(n) - u_{k,n}ᵀ w)²`.

use alloc::vec::Vec;

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, Mat, Vector};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressionError {
    #[error("dimension error: {0}")]
    DimensionError(&'static str),
    #[error("{0} is not positive definite")]
    NonPositiveDefinite(&'static str),
    #[error("sample index {index} out of range for {samples} samples")]
    IndexError { index: usize, samples: usize },
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("weighted normal equations are singular")]
    SingularSystem,
    #[error("batch size must be at least 1")]
    BatchSize,
}

/// Samples `(u_{k,n}, d_k(n))` of one agent, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    /// Standard deviation `σ_{v,k}` of the label noise used at generation.
    pub noise_std: f64,
}

impl AgentDataset {
    pub fn from_parts(
        features: Vec<f64>,
        labels: Vec<f64>,
        dim: usize,
        noise_std: f64,
    ) -> Result<Self, RegressionError> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(RegressionError::DimensionError("features must be N x M"));
        }
        if labels.is_empty() {
            return Err(RegressionError::DimensionError("dataset is empty"));
        }
        Ok(Self {
            features,
            labels,
            dim,
            noise_std,
        })
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    pub fn label(&self, n: usize) -> f64 {
        self.labels[n]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Adds `2 u_n (u_nᵀ w - d_n)` into `out`.
    #[inline]
    pub fn add_sample_gradient(&self, n: usize, w: &[f64], out: &mut [f64]) {
        let u = self.feature(n);
        let residual: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - self.labels[n];
        for (o, x) in out.iter_mut().zip(u) {
            *o += 2.0 * x * residual;
        }
    }
}

/// Generation parameters for [`generate_problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub agents: usize,
    pub samples: usize,
    pub dim: usize,
    /// Feature covariance `R_u`.
    pub feature_cov: Mat,
    /// Covariance `R_w` of the generative model `w*`.
    pub model_cov: Mat,
    /// `σ_{v,k}` for each agent.
    pub noise_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub datasets: Vec<AgentDataset>,
    pub w_star: Vector,
}

fn cholesky_factor(m: &Mat, what: &'static str) -> Result<Mat, RegressionError> {
    Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or(RegressionError::NonPositiveDefinite(what))
}

fn gaussian<R: Rng + ?Sized>(factor: &Mat, rng: &mut R, out: &mut [f64]) {
    let m = factor.nrows();
    let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..=i).map(|j| factor[(i, j)] * z[j]).sum();
    }
}

/// Draws `w* ~ N(0, R_w)` and, per agent, `u ~ N(0, R_u)` and
/// `d = uᵀ w* + v` with `v ~ N(0, σ_{v,k}²)`.
pub fn generate_problem(spec: &ProblemSpec, seed: u64) -> Result<Problem, RegressionError> {
    let m = spec.dim;
    if spec.agents == 0 || m == 0 {
        return Err(RegressionError::DimensionError("need K >= 1 and M >= 1"));
    }
    if spec.samples < m {
        return Err(RegressionError::DimensionError("need N >= M"));
    }
    if spec.feature_cov.shape() != (m, m) || spec.model_cov.shape() != (m, m) {
        return Err(RegressionError::DimensionError("covariances must be M x M"));
    }
    if spec.noise_std.len() != spec.agents || spec.noise_std.iter().any(|s| !(*s >= 0.0)) {
        return Err(RegressionError::DimensionError("one nonnegative noise level per agent"));
    }
    let lu = cholesky_factor(&spec.feature_cov, "feature covariance")?;
    let lw = cholesky_factor(&spec.model_cov, "model covariance")?;

    let mut w_star = alloc::vec![0.0; m];
    gaussian(&lw, &mut rng::stream(seed, rng::DATA_KEY, 0), &mut w_star);

    let datasets = (0..spec.agents)
        .map(|k| {
            let mut r = rng::stream(seed, rng::DATA_KEY, k as u64 + 1);
            let sigma = spec.noise_std[k];
            let mut features = alloc::vec![0.0; spec.samples * m];
            let mut labels = alloc::vec![0.0; spec.samples];
            for n in 0..spec.samples {
                let u = &mut features[n * m..(n + 1) * m];
                gaussian(&lu, &mut r, u);
                let noise: f64 = StandardNormal.sample(&mut r);
                labels[n] = u.iter().zip(&w_star).map(|(a, b)| a * b).sum::<f64>() + sigma * noise;
            }
            AgentDataset {
                features,
                labels,
                dim: m,
                noise_std: sigma,
            }
        })
        .collect();
    Ok(Problem {
        datasets,
        w_star: Vector::from_vec(w_star),
    })
}

/// Sufficient statistics of one agent's empirical risk.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRisk {
    /// `R̂_u = (1/N) Σ u uᵀ`.
    pub feature_cov: Mat,
    /// `r̂_du = (1/N) Σ u d`.
    pub cross_cov: Vector,
    /// `(1/N) Σ d²`.
    pub label_power: f64,
}

impl QuadraticRisk {
    pub fn from_dataset(ds: &AgentDataset) -> Result<Self, RegressionError> {
        let m = ds.dim();
        let n = ds.samples() as f64;
        let mut r = Mat::zeros(m, m);
        let mut c = Vector::zeros(m);
        let mut p = 0.0;
        for s in 0..ds.samples() {
            let u = ds.feature(s);
            let d = ds.label(s);
            for j in 0..m {
                c[j] += u[j] * d;
                for i in 0..m {
                    r[(i, j)] += u[i] * u[j];
                }
            }
            p += d * d;
        }
        r /= n;
        c /= n;
        let (lo, hi) = linalg::symmetric_extremes(&r);
        if ds.samples() < m || !(lo > 1e-12 * hi) {
            return Err(RegressionError::NonPositiveDefinite("empirical feature covariance"));
        }
        Ok(Self {
            feature_cov: r,
            cross_cov: c,
            label_power: p / n,
        })
    }

    pub fn dim(&self) -> usize {
        self.cross_cov.len()
    }

    pub fn value(&self, w: &Vector) -> f64 {
        (w.transpose() * &self.feature_cov * w)[(0, 0)] - 2.0 * w.dot(&self.cross_cov) + self.label_power
    }

    /// `∇J(w) = 2 (R̂_u w - r̂_du)`.
    pub fn gradient(&self, w: &Vector) -> Vector {
        (&self.feature_cov * w - &self.cross_cov) * 2.0
    }

    /// `∇²J = 2 R̂_u`, independent of `w`.
    pub fn hessian(&self) -> Mat {
        &self.feature_cov * 2.0
    }

    /// Minimizer of this agent's own risk.
    pub fn local_minimizer(&self) -> Result<Vector, RegressionError> {
        Cholesky::new(self.feature_cov.clone())
            .map(|c| c.solve(&self.cross_cov))
            .ok_or(RegressionError::SingularSystem)
    }
}

/// Minibatch gradient `(1/|B|) Σ_{n ∈ B} 2 u_n (u_nᵀ w - d_n)`.
pub fn stochastic_gradient(ds: &AgentDataset, w: &Vector, batch: &[usize]) -> Result<Vector, RegressionError> {
    if batch.is_empty() {
        return Err(RegressionError::EmptyBatch);
    }
    if w.len() != ds.dim() {
        return Err(RegressionError::DimensionError("iterate dimension differs from features"));
    }
    let mut g = alloc::vec![0.0; ds.dim()];
    for &n in batch {
        if n >= ds.samples() {
            return Err(RegressionError::IndexError {
                index: n,
                samples: ds.samples(),
            });
        }
        ds.add_sample_gradient(n, w.as_slice(), &mut g);
    }
    let scale = 1.0 / batch.len() as f64;
    Ok(Vector::from_iterator(ds.dim(), g.into_iter().map(|x| x * scale)))
}

/// Minimizer of `Σ_k p̄_k q_k J_k(w)`.
pub fn limit_point(risks: &[QuadraticRisk], pbar: &[f64], q: &[f64]) -> Result<Vector, RegressionError> {
    if risks.is_empty() || risks.len() != pbar.len() || risks.len() != q.len() {
        return Err(RegressionError::DimensionError("one weight pair per risk"));
    }
    let m = risks[0].dim();
    let mut lhs = Mat::zeros(m, m);
    let mut rhs = Vector::zeros(m);
    for ((risk, &p), &qk) in risks.iter().zip(pbar).zip(q) {
        lhs += &risk.feature_cov * (p * qk);
        rhs += &risk.cross_cov * (p * qk);
    }
    Cholesky::new(lhs)
        .map(|c| c.solve(&rhs))
        .ok_or(RegressionError::SingularSystem)
}

/// How the stochastic gradient picks its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    /// `B` indices drawn uniformly with replacement.
    Sampled(usize),
    /// Every sample, giving the exact gradient.
    Full,
}

impl Batch {
    pub fn validate(self) -> Result<Self, RegressionError> {
        match self {
            Batch::Sampled(0) => Err(RegressionError::BatchSize),
            b => Ok(b),
        }
    }
}

/// Centered per-sample gradient statistics at a point.
struct GradientSpread {
    cov: Mat,
    /// `E‖g - ḡ‖²`
    second: f64,
    /// `E‖g - ḡ‖⁴`
    fourth: f64,
}

fn gradient_spread(ds: &AgentDataset, w: &Vector) -> GradientSpread {
    let m = ds.dim();
    let n = ds.samples();
    let mut grads = alloc::vec![0.0; n * m];
    let mut mean = alloc::vec![0.0; m];
    for s in 0..n {
        let g = &mut grads[s * m..(s + 1) * m];
        ds.add_sample_gradient(s, w.as_slice(), g);
        for (a, b) in mean.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let mut cov = Mat::zeros(m, m);
    let mut fourth = 0.0;
    for s in 0..n {
        let g = &mut grads[s * m..(s + 1) * m];
        for (a, b) in g.iter_mut().zip(&mean) {
            *a -= b;
        }
        let sq: f64 = g.iter().map(|x| x * x).sum();
        fourth += sq * sq;
        for j in 0..m {
            for i in 0..m {
                cov[(i, j)] += g[i] * g[j];
            }
        }
    }
    cov /= n as f64;
    GradientSpread {
        second: cov.trace(),
        cov,
        fourth: fourth / n as f64,
    }
}

/// Covariance of the minibatch gradient noise at `w` for uniform
/// with-replacement batches of size `batch`.
pub fn noise_covariance(ds: &AgentDataset, w: &Vector, batch: usize) -> Result<Mat, RegressionError> {
    if batch == 0 {
        return Err(RegressionError::BatchSize);
    }
    Ok(gradient_spread(ds, w).cov / batch as f64)
}

/// `E‖s‖²` and `E‖s‖⁴` of the gradient noise, exact under
/// with-replacement sampling.
fn noise_moments(ds: &AgentDataset, w: &Vector, batch: Batch) -> (f64, f64) {
    let b = match batch {
        Batch::Full => return (0.0, 0.0),
        Batch::Sampled(b) => b,
    };
    let spread = gradient_spread(ds, w);
    let bf = b as f64;
    let m2 = spread.second / bf;
    let frob2: f64 = spread.cov.iter().map(|x| x * x).sum();
    let m4 = (bf * spread.fourth + bf * (bf - 1.0) * (spread.second * spread.second + 2.0 * frob2))
        / (bf * bf * bf * bf);
    (m2, m4)
}

/// Smoothness and convexity constants of the problem. `kappa` and `kappa_s` are
/// declared, not estimated: the quadratic risk has a constant Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityConstants {
    pub nu: f64,
    pub delta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub kappa_s: f64,
    pub alpha_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// `R_k` at the limit point for the configured batch size.
    pub covariances: Vec<Mat>,
    pub beta_s2: f64,
    pub sigma_s2: f64,
    pub beta_s4: f64,
    pub sigma_s4: f64,
}

/// Probe-point configuration for [`estimate_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub probes: usize,
    pub batch: Batch,
    pub seed: u64,
}

/// Estimates the regularity constants and noise bounds.
///
/// `σ_s² = max_k E‖s_k(w°)‖²`; `β_s²` is the largest
/// `(E‖s_k(w)‖² - σ_s²)/‖w° - w‖²` (clamped at zero) over probe points
/// `w = w° + ρ ξ`, `ξ ~ N(0, I)`, `ρ = 10^U(-1, 1)`. Fourth-order analogues
/// use fourth powers. `δ` is `2 max_n ‖u_n‖²` over every stored sample.
pub fn estimate_constants(
    risks: &[QuadraticRisk],
    datasets: &[AgentDataset],
    w_opt: &Vector,
    opts: ProbeOptions,
) -> Result<(RegularityConstants, NoiseModel), RegressionError> {
    opts.batch.validate()?;
    if opts.probes == 0 || risks.is_empty() || risks.len() != datasets.len() {
        return Err(RegressionError::DimensionError("need probes and one risk per dataset"));
    }
    let (mut lambda_min, mut lambda_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in risks {
        let (lo, hi) = linalg::symmetric_extremes(&r.hessian());
        lambda_min = lambda_min.min(lo);
        lambda_max = lambda_max.max(hi);
    }
    let mut delta: f64 = 0.0;
    for ds in datasets {
        for n in 0..ds.samples() {
            let sq: f64 = ds.feature(n).iter().map(|x| x * x).sum();
            delta = delta.max(2.0 * sq);
        }
    }

    let covariances = datasets
        .iter()
        .map(|ds| match opts.batch {
            Batch::Full => Ok(Mat::zeros(ds.dim(), ds.dim())),
            Batch::Sampled(b) => noise_covariance(ds, w_opt, b),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let at_opt: Vec<(f64, f64)> = datasets.iter().map(|ds| noise_moments(ds, w_opt, opts.batch)).collect();
    let sigma_s2 = at_opt.iter().map(|x| x.0).fold(0.0, f64::max);
    let sigma_s4 = at_opt.iter().map(|x| x.1).fold(0.0, f64::max);

    let mut probe_rng = rng::stream(opts.seed, rng::AUX_KEY, 1);
    let m = w_opt.len();
    let (mut beta_s2, mut beta_s4) = (0.0f64, 0.0f64);
    for _ in 0..opts.probes {
        let radius = libm::pow(10.0, probe_rng.random::<f64>() * 2.0 - 1.0);
        let xi = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut probe_rng));
        let offset = if xi.norm() > 0.0 { xi.normalize() * radius } else { Vector::zeros(m) };
        let w = w_opt + &offset;
        let d2 = offset.norm_squared();
        for ds in datasets {
            let (m2, m4) = noise_moments(ds, &w, opts.batch);
            beta_s2 = beta_s2.max((m2 - sigma_s2) / d2);
            beta_s4 = beta_s4.max((m4 - sigma_s4) / (d2 * d2));
        }
    }

    Ok((
        RegularityConstants {
            nu: lambda_min,
            delta,
            lambda_min,
            lambda_max,
            kappa: 0.0,
            kappa_s: 0.0,
            alpha_s: 1.0,
        },
        NoiseModel {
            covariances,
            beta_s2,
            sigma_s2,
            beta_s4,
            sigma_s4,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn spec(k: usize, n: usize, m: usize, sigma: f64) -> ProblemSpec {
        ProblemSpec {
            agents: k,
            samples: n,
            dim: m,
            feature_cov: Mat::identity(m, m),
            model_cov: Mat::identity(m, m),
            noise_std: alloc::vec![sigma; k],
        }
    }

    #[test]
    fn noiseless_labels_are_exact() {
        let p = generate_problem(&spec(2, 50, 3, 0.0), 1).unwrap();
        for ds in &p.datasets {
            for n in 0..ds.samples() {
                let fit: f64 = ds.feature(n).iter().zip(p.w_star.iter()).map(|(a, b)| a * b).sum();
                assert_eq!(fit, ds.label(n));
            }
        }
    }

    #[test]
    fn generation_errors() {
        assert!(matches!(generate_problem(&spec(2, 2, 3, 0.1), 1), Err(RegressionError::DimensionError(_))));
        let mut s = spec(2, 10, 2, 0.1);
        s.feature_cov = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(generate_problem(&s, 1).unwrap_err(), RegressionError::NonPositiveDefinite("feature covariance"));
    }

    #[test]
    fn degenerate_features_rejected_by_risk() {
        let ds = AgentDataset::from_parts(alloc::vec![1.0, 2.0, 2.0, 4.0], alloc::vec![1.0, 2.0], 2, 0.0).unwrap();
        assert!(matches!(QuadraticRisk::from_dataset(&ds), Err(RegressionError::NonPositiveDefinite(_))));
    }

    #[test]
    fn full_batch_is_full_gradient() {
        let p = generate_problem(&spec(1, 200, 3, 0.3), 5).unwrap();
        let ds = &p.datasets[0];
        let risk = QuadraticRisk::from_dataset(ds).unwrap();
        let w = Vector::from_vec(alloc::vec![0.3, -1.0, 2.0]);
        let all: Vec<usize> = (0..ds.samples()).collect();
        let g = stochastic_gradient(ds, &w, &all).unwrap();
        assert!((g - risk.gradient(&w)).amax() < 1e-12);
        let w_loc = risk.local_minimizer().unwrap();
        assert!(stochastic_gradient(ds, &w_loc, &all).unwrap().amax() < 1e-12);
    }

    #[test]
    fn single_sample_gradient_by_hand() {
        let ds = AgentDataset::from_parts(alloc::vec![1.0, 0.0], alloc::vec![3.0], 2, 0.0).unwrap();
        let g = stochastic_gradient(&ds, &Vector::from_vec(alloc::vec![1.0, 1.0]), &[0]).unwrap();
        assert_eq!(g.as_slice(), &[-4.0, 0.0]);
        assert_eq!(
            stochastic_gradient(&ds, &Vector::zeros(2), &[1]).unwrap_err(),
            RegressionError::IndexError { index: 1, samples: 1 }
        );
        assert_eq!(stochastic_gradient(&ds, &Vector::zeros(2), &[]).unwrap_err(), RegressionError::EmptyBatch);
    }

    #[test]
    fn scalar_limit_point() {
        let ds = AgentDataset::from_parts(alloc::vec![1.0, 2.0], alloc::vec![2.0, 3.0], 1, 0.0).unwrap();
        let r = QuadraticRisk::from_dataset(&ds).unwrap();
        let w = limit_point(&[r], &[1.0], &[1.0]).unwrap();
        assert_relative_eq!(w[0], 1.6, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_limit_point_is_w_star() {
        let p = generate_problem(&spec(3, 100, 4, 0.0), 2).unwrap();
        let risks: Vec<_> = p.datasets.iter().map(|d| QuadraticRisk::from_dataset(d).unwrap()).collect();
        let w = limit_point(&risks, &[0.2, 0.5, 0.3], &[1.0, 0.4, 0.7]).unwrap();
        assert!((w - &p.w_star).amax() < 1e-10);
    }

    #[test]
    fn limit_point_residual_is_small() {
        let p = generate_problem(&spec(4, 300, 3, 0.5), 3).unwrap();
        let risks: Vec<_> = p.datasets.iter().map(|d| QuadraticRisk::from_dataset(d).unwrap()).collect();
        let pbar = [0.1, 0.2, 0.3, 0.4];
        let q = [0.5, 0.6, 0.7, 1.0];
        let w = limit_point(&risks, &pbar, &q).unwrap();
        let mut g = Vector::zeros(3);
        for i in 0..4 {
            g += risks[i].gradient(&w) * (pbar[i] * q[i]);
        }
        assert!(g.norm() <= 1e-8);
        assert_eq!(limit_point(&risks, &[0.0; 4], &q).unwrap_err(), RegressionError::SingularSystem);
    }

    #[test]
    fn noise_covariance_hand_cases() {
        // Per-sample gradients 2·1·(0-1) = -2 and 2·(-1)·(0+1) = -2.
        let ds = AgentDataset::from_parts(alloc::vec![1.0, -1.0], alloc::vec![1.0, -1.0], 1, 0.0).unwrap();
        let r = noise_covariance(&ds, &Vector::zeros(1), 1).unwrap();
        assert_eq!(r[(0, 0)], 0.0);
        let p = generate_problem(&spec(1, 100, 2, 0.0), 4).unwrap();
        let r = noise_covariance(&p.datasets[0], &p.w_star, 1).unwrap();
        assert!(r.amax() < 1e-24);
        assert_eq!(noise_covariance(&p.datasets[0], &p.w_star, 0).unwrap_err(), RegressionError::BatchSize);
    }

    #[test]
    fn noise_covariance_batch_scaling() {
        let p = generate_problem(&spec(1, 500, 3, 0.4), 6).unwrap();
        let w = Vector::from_vec(alloc::vec![0.1, 0.2, 0.3]);
        let r1 = noise_covariance(&p.datasets[0], &w, 1).unwrap();
        for b in [2usize, 7, 500] {
            let rb = noise_covariance(&p.datasets[0], &w, b).unwrap();
            assert!((rb - &r1 / b as f64).amax() <= 1e-12);
        }
        // symmetric PSD
        assert!((r1.clone() - r1.transpose()).amax() < 1e-15);
        let (lo, _) = linalg::symmetric_extremes(&r1);
        assert!(lo >= -1e-12);
    }

    #[test]
    fn single_sample_batches_average_to_full_gradient() {
        let p = generate_problem(&spec(1, 64, 2, 0.7), 8).unwrap();
        let ds = &p.datasets[0];
        let risk = QuadraticRisk::from_dataset(ds).unwrap();
        let w = Vector::from_vec(alloc::vec![1.5, -0.5]);
        let mut avg = Vector::zeros(2);
        for n in 0..ds.samples() {
            avg += stochastic_gradient(ds, &w, &[n]).unwrap();
        }
        avg /= ds.samples() as f64;
        assert!((avg - risk.gradient(&w)).amax() < 1e-12);
    }

    #[test]
    fn hessian_is_constant_identity_case() {
        // Features e1, e2 scaled so that R̂_u = I.
        let s = 2f64.sqrt();
        let ds = AgentDataset::from_parts(alloc::vec![s, 0.0, 0.0, s], alloc::vec![0.0, 0.0], 2, 0.0).unwrap();
        let risk = QuadraticRisk::from_dataset(&ds).unwrap();
        assert!((risk.hessian() - Mat::identity(2, 2) * 2.0).amax() < 1e-15);
        let (c, noise) = estimate_constants(
            &[risk],
            &[ds],
            &Vector::zeros(2),
            ProbeOptions { probes: 4, batch: Batch::Sampled(2), seed: 1 },
        )
        .unwrap();
        assert_relative_eq!(c.lambda_min, 2.0, epsilon = 1e-14);
        assert_relative_eq!(c.lambda_max, 2.0, epsilon = 1e-14);
        assert_eq!(c.nu, c.lambda_min);
        assert!(noise.sigma_s2 < 1e-28);
    }

    #[test]
    fn full_batch_deterministic_gradients_have_no_noise() {
        // One sample per agent: every minibatch is the full batch.
        let ds = AgentDataset::from_parts(alloc::vec![1.0], alloc::vec![0.5], 1, 0.0).unwrap();
        let risk = QuadraticRisk::from_dataset(&ds).unwrap();
        let (_, noise) = estimate_constants(&[risk], &[ds], &Vector::zeros(1), ProbeOptions { probes: 8, batch: Batch::Sampled(1), seed: 2 }).unwrap();
        assert_eq!(noise.beta_s2, 0.0);
        assert_eq!(noise.sigma_s2, 0.0);
        assert_eq!(noise.beta_s4, 0.0);
    }

    #[test]
    fn full_batch_has_no_noise() {
        let p = generate_problem(&spec(2, 100, 2, 0.5), 12).unwrap();
        let risks: Vec<_> = p.datasets.iter().map(|d| QuadraticRisk::from_dataset(d).unwrap()).collect();
        let (_, noise) =
            estimate_constants(&risks, &p.datasets, &p.w_star, ProbeOptions { probes: 5, batch: Batch::Full, seed: 1 })
                .unwrap();
        assert_eq!((noise.beta_s2, noise.sigma_s2, noise.beta_s4, noise.sigma_s4), (0.0, 0.0, 0.0, 0.0));
        assert!(noise.covariances.iter().all(|c| c.amax() == 0.0));
        assert_eq!(Batch::Sampled(0).validate(), Err(RegressionError::BatchSize));
    }

    #[test]
    fn probe_and_regression_estimators_agree() {
        use rand::SeedableRng;
        let p = generate_problem(&spec(1, 2000, 3, 0.3), 10).unwrap();
        let ds = &p.datasets[0];
        let risk = QuadraticRisk::from_dataset(ds).unwrap();
        let w_opt = risk.local_minimizer().unwrap();
        let (_, noise) = estimate_constants(
            std::slice::from_ref(&risk),
            core::slice::from_ref(ds),
            &w_opt,
            ProbeOptions { probes: 32, batch: Batch::Sampled(1), seed: 3 },
        )
        .unwrap();
        assert!(noise.beta_s2.is_finite() && noise.beta_s2 > 0.0);

        // Direct regression of sampled ‖s‖² on ‖w̃‖² over 10³ probes.
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let (mut sxx, mut sxy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0);
        let n = 1000;
        for _ in 0..n {
            let radius = libm::pow(10.0, r.random::<f64>() * 2.0 - 1.0);
            let xi = Vector::from_fn(3, |_, _| StandardNormal.sample(&mut r)).normalize() * radius;
            let w = &w_opt + &xi;
            let idx = r.random_range(0..ds.samples());
            let s = stochastic_gradient(ds, &w, &[idx]).unwrap() - risk.gradient(&w);
            let x = xi.norm_squared();
            let y = s.norm_squared();
            sxx += x * x;
            sxy += x * y;
            sx += x;
            sy += y;
        }
        let nf = n as f64;
        let slope = (sxy - sx * sy / nf) / (sxx - sx * sx / nf);
        let ratio = noise.beta_s2 / slope;
        assert!((0.5..=2.0).contains(&ratio), "probe {} vs regression {}", noise.beta_s2, slope);
    }

    proptest! {
        #[test]
        fn generation_is_deterministic(seed in any::<u64>()) {
            let a = generate_problem(&spec(2, 20, 2, 0.2), seed).unwrap();
            let b = generate_problem(&spec(2, 20, 2, 0.2), seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

use super::krylov::{arnoldi_spectral_radius, gmres, KrylovOptions};
use super::moments::MomentMatrices;
use super::TheoryError;
use crate::linalg::{self, Mat, Vector};
use crate::sampler::Schedule;

/// Operators up to this dimension are formed densely and solved directly.
pub const DENSE_LIMIT: usize = 1024;

/// Which steady-state expression to evaluate.
///
/// `Forward` propagates `bvec(E[w̃ w̃ᵀ])` through one global iteration:
/// `z = F z + n` with `F = G_T G_t^{T-1}` and
/// `n = C̃_T r + G_T Σ_{j=0}^{T-2} G_t^j C_t r`, `C̃_T` carrying noise through
/// the sampled combine; `MSD = (1/K) bvec(I)ᵀ z`.
///
/// `Printed` evaluates the weighted form
/// `z = (I - Fᵀ)^{-1} ((I + Fᵀ) C_T + G_Tᵀ Σ_{j=1}^{T-1} (G_t^{j-1})ᵀ C_t) r`,
/// `MSD = (1/K) zᵀ bvec(I)`, with `C_T = E[(𝓐 ⊗_b 𝓐)(𝓜 ⊗_b 𝓜)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsdForm {
    Forward,
    Printed,
}

impl MsdForm {
    pub fn name(self) -> &'static str {
        match self {
            MsdForm::Forward => "forward",
            MsdForm::Printed => "printed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Dense,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsdResult {
    pub forward: f64,
    pub printed: f64,
    /// Spectral radius of `G_T G_t^{T-1}`.
    pub rho: f64,
    pub solver: Solver,
}

impl MsdResult {
    pub fn value(&self, form: MsdForm) -> f64 {
        match form {
            MsdForm::Forward => self.forward,
            MsdForm::Printed => self.printed,
        }
    }
}

/// `Σ_{j=0}^{n-1} D^j v` for a block-diagonal `D` (or its transpose).
fn geometric_sum(apply: impl Fn(&Vector) -> Vector, v: &Vector, n: usize) -> Vector {
    let mut acc = v.clone();
    let mut total = Vector::zeros(v.len());
    for j in 0..n {
        total += &acc;
        if j + 1 < n {
            acc = apply(&acc);
        }
    }
    total
}

pub fn theoretical_msd(moments: &MomentMatrices, sched: &Schedule) -> Result<MsdResult, TheoryError> {
    let k = moments.agents();
    let m = moments.dim();
    let t = sched.local_steps;
    let dim = k * k * m * m;
    let g = &moments.combine;
    let d_pow = moments.g_local.pow(t - 1);
    let r = moments.noise_vector();
    let id_vec = super::blocks::bvec(&Mat::identity(k * m, k * m), k, m)?;

    let c_local_r = moments.c_local.apply(&r);
    let local_fwd = geometric_sum(|v| moments.g_local.apply(v), &c_local_r, t - 1);
    let n_fwd = g.apply_c_forward_to_noise(&moments.r_blocks) + g.apply_g(&local_fwd);

    let c_t_r = g.apply_c_to_noise(&moments.r_blocks);
    let local_printed = geometric_sum(|v| moments.g_local.apply_transpose(v), &c_local_r, t - 1);
    let f_t = |v: &Vector| d_pow.apply_transpose(&g.apply_g_transpose(v));
    let n_printed = &c_t_r + f_t(&c_t_r) + g.apply_g_transpose(&local_printed);

    if dim <= DENSE_LIMIT {
        let f = g.g_dense() * d_pow.to_dense();
        let rho = linalg::spectral_radius(&f);
        if !(rho < 1.0) {
            return Err(TheoryError::UnstableSpectrum { rho });
        }
        let lhs = Mat::identity(dim, dim) - &f;
        let z_fwd = lhs.clone().lu().solve(&n_fwd).ok_or(TheoryError::UnstableSpectrum { rho })?;
        let z_printed = lhs.transpose().lu().solve(&n_printed).ok_or(TheoryError::UnstableSpectrum { rho })?;
        return Ok(MsdResult {
            forward: id_vec.dot(&z_fwd) / k as f64,
            printed: z_printed.dot(&id_vec) / k as f64,
            rho,
            solver: Solver::Dense,
        });
    }

    let f = |v: &Vector| g.apply_g(&d_pow.apply(v));
    let rho = arnoldi_spectral_radius(f, &id_vec, 120.min(dim));
    if !(rho < 1.0) {
        return Err(TheoryError::UnstableSpectrum { rho });
    }
    let opts = KrylovOptions::default();
    let (z_fwd, res_f) = gmres(|v| v - f(v), &n_fwd, opts);
    let (z_printed, res_p) = gmres(|v| v - f_t(v), &n_printed, opts);
    let residual = res_f.max(res_p);
    if !(residual <= 1e-9) {
        return Err(TheoryError::SolveFailed { residual });
    }
    Ok(MsdResult {
        forward: id_vec.dot(&z_fwd) / k as f64,
        printed: z_printed.dot(&id_vec) / k as f64,
        rho,
        solver: Solver::Krylov,
    })
}

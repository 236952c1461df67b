use alloc::string::String;

use super::moments::Exactness;
use super::msd::MsdForm;
use crate::regression::RegularityConstants;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `2 λ_min / (λ_max² + β_s²)`
    pub mu_max: f64,
    /// `max_k 1 - 2 μ q_k λ_min + μ² q_k (λ_max² + β_s²)`
    pub gamma: f64,
    /// `γ < 1`
    pub admissible: bool,
}

pub fn stability_report(
    constants: &RegularityConstants,
    beta_s2: f64,
    participation: &[f64],
    step_size: f64,
) -> StabilityReport {
    let curvature = constants.lambda_max * constants.lambda_max + beta_s2;
    let mu = step_size;
    let gamma = participation
        .iter()
        .map(|&q| 1.0 - 2.0 * mu * q * constants.lambda_min + mu * mu * q * curvature)
        .fold(f64::NEG_INFINITY, f64::max);
    StabilityReport {
        mu_max: 2.0 * constants.lambda_min / curvature,
        gamma,
        admissible: gamma < 1.0,
    }
}

/// Steady-state and stability summary of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub msd_lin: f64,
    pub msd_db: f64,
    pub form: MsdForm,
    /// The other steady-state expression, for comparison.
    pub msd_alternate_lin: f64,
    pub gamma: f64,
    pub mu_max: f64,
    pub admissible: bool,
    pub rho: f64,
    pub alpha0: f64,
    pub agents: usize,
    pub dim: usize,
    pub mode: String,
    pub exactness: Exactness,
}

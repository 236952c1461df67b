//! Second-order moment operators of the error recursion, the steady-state
//! MSD expression and the stability quantities.

mod blocks;
mod krylov;
mod moments;
mod msd;
mod oracle;
mod stability;

pub use blocks::{block_kron, bvec, slot, unbvec, BlockDiagonal};
pub use krylov::{arnoldi_spectral_radius, gmres, KrylovOptions};
pub use moments::{
    build_combine_moments, build_local_moments, build_moments, CombineMoments, Exactness, MomentMatrices,
    MomentOptions, ScalarTables,
};
pub use msd::{theoretical_msd, MsdForm, MsdResult, Solver, DENSE_LIMIT};
pub use oracle::{mc_moment_oracle, mc_scalar_tables, OracleEstimate};
pub use stability::{stability_report, StabilityReport, TheoryReport};

use crate::law::LawError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("shape error: {0}")]
    ShapeError(&'static str),
    #[error("spectral radius {rho} is not below one")]
    UnstableSpectrum { rho: f64 },
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("linear solve failed to converge (residual {residual:e})")]
    SolveFailed { residual: f64 },
}

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Asynchronous diffusion learning: random participation, neighbor
//! sub-sampling and local updates.
//!
//! The crate is `no_std` (with `alloc`). It contains the sampler, the
//! adapt-then-combine simulator, the synthetic regression problem and the
//! steady-state moment analysis. File formats, configuration and the command
//! line live in the `asyncdiff` crate.

extern crate alloc;

pub mod diffusion;
pub mod law;
pub mod linalg;
pub mod regression;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod theory;
pub mod topology;

pub use linalg::{Mat, Vector};
pub use sampler::{Realization, Schedule};
pub use topology::{Mode, NetworkSpec, ValidNetwork};

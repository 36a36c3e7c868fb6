//! Weighted block-sparse compressed sensing for Hilbert-space-valued vectors.
//!
//! The crate is organized bottom-up:
//!
//! - [`block_model`]: block structures, weighted mixed norms, weighted sparsity and
//!   (quasi-)best weighted s-term approximations.
//! - [`multiindex`]: multi-indices, tensorized Chebyshev polynomials, the weight rule
//!   `ω_ν = 2^{‖ν‖₀/2} Π v_j^{ν_j}` and enumeration of the active index set.
//! - [`sensing`]: sampling matrices (Chebyshev system and sub-Gaussian ensembles) and
//!   exhaustive restricted-isometry estimates.
//! - [`solver`]: the weighted group basis-pursuit-denoising solver, its KKT certificate
//!   and a priori error bounds.
//! - [`pde`]: a 1-D affine-parametric diffusion problem discretized with P1 elements.
//! - [`pipeline`]: end-to-end recovery of the parametric solution with error reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod block_model;
pub mod error;
pub mod io;
pub mod multiindex;
pub mod pde;
pub mod pipeline;
pub mod sensing;
pub mod solver;

pub use block_model::{BlockStructure, BlockSupport, BlockVector, WeightSequence};
pub use error::{Error, Result, Stage};
pub use multiindex::{IndexSet, MultiIndex, WeightRule};
pub use pde::{AffineDiffusion, FemMesh, HilbertMap, Snapshot};
pub use pipeline::{ExperimentConfig, RecoveryReport};
pub use sensing::{Provenance, RipEstimate, SensingMatrix};
pub use solver::{KktCertificate, SolveResult, SolveSettings, SolveStatus};

/// Dense real matrix used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;

//! Entropic Wasserstein gradient flows on discrete domains.
//!
//! The crate implements JKO-style implicit stepping for functionals of a
//! probability density, where each step solves an entropically smoothed
//! optimal transport problem by alternating KL projections carried entirely
//! by diagonal scaling vectors. Kernels (`kernels`), proximal maps (`prox`),
//! the single-density stepper (`jko`) and the multi-density generalization
//! (`multicoupling`) are independent layers over the shared `domain` types.
//! `oracle` holds slow dense reference solvers used for cross-checking.

pub mod domain;
pub mod error;
pub mod io;
pub mod jko;
pub mod kernels;
pub mod laplacian;
pub mod multicoupling;
pub mod oracle;
pub mod prox;

pub use domain::{normalize_density, Density, DomainSpec, GridDomain, MeshDomain, PotentialField};
pub use error::{Error, Result};
pub use jko::{constraint_violation, jko_step, run_flow, FlowParams, ScalingState, StepDiagnostics};
pub use kernels::KernelOp;
pub use laplacian::LaplacianMatrix;
pub use prox::ProxFn;

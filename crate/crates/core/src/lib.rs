//! Numerical laboratory for autoregressive condition refinement in diffusion
//! sampling.
//!
//! The crate covers five layers:
//!
//! - [`measures`]: empirical measures, the bivariate Gaussian joint over
//!   `(x, c)`, seeded random streams and dense linear algebra.
//! - [`gaussian_lab`]: closed-form conditional and marginal scores,
//!   Monte-Carlo score-matching losses and the conditioning error terms.
//! - [`diffusion`]: noise schedules, forward corruption, guided reverse
//!   steps and deterministic trajectories with SNR instrumentation.
//! - [`ar_chain`]: autoregressive condition processes, ergodicity and
//!   gradient-norm decay measurement, extraneous-information decomposition.
//! - [`ot`], [`wgf`], [`aco`]: log-domain Sinkhorn, particle Wasserstein
//!   gradient flows and the full condition optimization loop.
//!
//! All numeric types are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which every experiment uses.

// `!(x > 0)` also rejects NaN; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aco;
pub mod ar_chain;
pub mod diffusion;
pub mod error;
pub mod gaussian_lab;
pub mod measures;
pub mod ot;
pub mod scalar;
pub mod stats;
pub mod wgf;

pub use error::{Error, Result};
pub use measures::{second_moment, EmpiricalMeasure, GaussianJoint, LinearMap, Matrix, RngStream};
pub use scalar::Real;

pub type EmpiricalMeasure64 = measures::EmpiricalMeasure<f64>;
pub type GaussianJoint64 = measures::GaussianJoint<f64>;
pub type Matrix64 = measures::Matrix<f64>;
pub type LinearMap64 = measures::LinearMap<f64>;
pub type NoiseSchedule64 = diffusion::NoiseSchedule<f64>;
pub type Trajectory64 = diffusion::Trajectory<f64>;
pub type ArModel64 = ar_chain::ArModel<f64>;
pub type SubspaceSpec64 = ar_chain::SubspaceSpec<f64>;
pub type CostMatrix64 = ot::CostMatrix<f64>;
pub type TransportPlan64 = ot::TransportPlan<f64>;
pub type EnergyFunctional64 = wgf::EnergyFunctional<f64>;
pub type FlowTrace64 = wgf::FlowTrace<f64>;
pub type AcoConfig64 = aco::AcoConfig<f64>;
pub type AcoState64 = aco::AcoState<f64>;
pub type EmaBuffer64 = aco::EmaBuffer<f64>;

pub type EmpiricalMeasure32 = measures::EmpiricalMeasure<f32>;
pub type GaussianJoint32 = measures::GaussianJoint<f32>;

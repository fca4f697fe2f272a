//! Smoothing-transform fixed points: moment analysis, population-dynamics
//! simulation, tail estimation and the `α = 2` mixture solution.
//!
//! Numerical kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod model;
pub mod moments;
pub mod pool_io;
pub mod rng;
pub mod roots;
pub mod scalar;
pub mod serde_ext;
pub mod special;
pub mod stats;
pub mod tail;

pub use engine::{ConvergenceDiagnostics, ConvergenceOptions, SamplePool, StopReason};
pub use error::{Error, Result};
pub use model::{NLaw, QLaw, RealizedWeights, TLaw, WeightModel};
pub use moments::{AssumptionReport, MomentEvaluator, MomentProfile, RootPair, RootSearch, Verdict};
pub use scalar::Scalar;
pub use stats::Estimate;
pub use tail::{TailReport, TailVerdict};

pub type Pool = SamplePool<f64>;
pub type Pool32 = SamplePool<f32>;
pub type Weights = RealizedWeights<f64>;
pub type Weights32 = RealizedWeights<f32>;
pub type Mixture = special::MixtureSolution<f64>;
pub type Mixture32 = special::MixtureSolution<f32>;

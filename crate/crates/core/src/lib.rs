//! Synthesis and simulation toolkit for stochastic MPC of linear networked
//! control systems whose feedback information arrives with a random Age of
//! Information (AoI).
//!
//! The pipeline: describe the plant and constraints ([`model`]), model the
//! channel and pick the planned information pattern with its risk chain
//! ([`aoi`]), build stacked prediction matrices ([`prediction`]), assemble
//! and solve the policy SDP ([`synthesis`] on top of [`conic`]), and validate
//! the result by Monte Carlo simulation ([`sim`]). The [`cli`] module wires
//! everything to a binary.

pub mod aoi;
pub mod cli;
pub mod conic;
pub mod model;
pub mod prediction;
pub mod scalar;
pub mod sim;
pub mod synthesis;

pub use scalar::{cast, Scalar, SolverScalar};

/// Default-precision aliases; these are the types the CLI binds.
pub type Problem = model::ProblemSpec<f64>;
pub type ValidatedProblem = model::ValidatedProblem<f64>;
pub type Chain = aoi::AoiChain<f64>;
pub type Table = aoi::AoiTable<f64>;
pub type Beta = aoi::BetaSelection<f64>;
pub type Stacked = prediction::StackedSystem<f64>;
pub type Policy = prediction::FeedbackPolicy<f64>;
pub type Synthesis = synthesis::SynthesisResult<f64>;

/// Reduced-precision aliases for experimentation.
pub type Problem32 = model::ProblemSpec<f32>;
pub type Chain32 = aoi::AoiChain<f32>;
pub type Policy32 = prediction::FeedbackPolicy<f32>;

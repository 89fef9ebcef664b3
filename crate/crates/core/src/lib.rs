//! Consistent estimation of the number of hidden units of a one-hidden-layer
//! MLP regression model `y = β + Σ a_i φ(b_i + w_iᵀx) + ε` with Gaussian
//! noise, by penalized maximum likelihood over a compact parameter set.
//!
//! The crate is organized as:
//!
//! - [`mlp`], [`transfer`]: parameters, forward pass, analytic derivatives.
//! - [`likelihood`]: Gaussian log-likelihood, density ratios, normalized score.
//! - [`optimizer`]: multistart projected Levenberg–Marquardt over Θ_k.
//! - [`selection`]: penalties, the penalty growth checks, `k̂`.
//! - [`reparam`]: identifiable / unidentifiable split and the second-order
//!   expansion of the likelihood ratio.
//! - [`identifiability`]: canonical form, moment diagnostic, Gram test.
//! - [`simulate`]: data generation and the Monte-Carlo experiments.

pub mod error;
pub mod identifiability;
pub mod likelihood;
pub mod mlp;
pub mod optimizer;
pub mod reparam;
pub mod seeding;
pub mod selection;
pub mod simulate;
pub mod transfer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use likelihood::{Dataset, NoiseModel};
pub use mlp::{HiddenUnit, MlpParams, ParamFile};
pub use optimizer::{FitConfig, FitResult, ParamSpace};
pub use selection::{Penalty, SelectionResult};
pub use simulate::{ExperimentPlan, InputDistribution};
pub use transfer::TransferFunction;

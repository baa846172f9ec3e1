//! Bayesian optimal design of sampling times for hierarchical growth models.
//!
//! The crate provides parametric and spline-warped growth curves, their
//! priors, a simulator, a two-stage Laplace approximation of the posterior,
//! the expected Kullback-Leibler utility, and design search by coordinate
//! exchange with a Gaussian-process emulator.

pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod growth;
pub mod inference;
pub mod model;
pub mod optimize;
pub mod params;
pub mod priors;
pub mod rng;
pub mod simulate;
pub mod utility;

pub use error::{Error, Result};
pub use gaussian::{GaussianApprox, GaussianRecord};
pub use growth::{mean_response, ode_rhs, spline_b, spline_b_prime, GrowthModelSpec, ModelKind, Phase2Exponent};
pub use inference::{joint_posterior, laplace_b_given_theta, laplace_theta, LaplaceFit, LaplaceSettings};
pub use model::{GrowthModel, HierarchicalModel};
pub use params::{EffectsVector, NaturalParams, ParamLayout, ParamName, ParamVector};
pub use priors::{log_prior_density, prior_moments, sample_prior, Flexibility, PriorDraw, PriorEntry, PriorSpec, Transform};
pub use rng::{derive_seed, substream, Domain, SimRng};
pub use simulate::{simulate_dataset, Dataset, Observation, Protocol, TimeDesign};
pub use utility::{expected_utility, kld_mvn, UtilityEstimate};

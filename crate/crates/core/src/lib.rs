//! Adversarial risk for (overparameterized) linear regression.
//!
//! The crate is organised around the closed form of the worst-case squared
//! error of a linear predictor under an `l_p`-bounded input perturbation:
//!
//! ```text
//! max_{|dx|_p <= delta} (y - (x + dx)^T b)^2 = (|y - x^T b| + delta |b|_q)^2,   1/p + 1/q = 1
//! ```
//!
//! Around it live the norm machinery ([`norm_geometry`]), the risk formulas and
//! attacks ([`adversarial_risk`]), synthetic data generators ([`data_models`]),
//! the estimators that are compared ([`estimators`]) and the large-system
//! limits of risk and parameter norm ([`asymptotics`]).

pub mod adversarial_risk;
pub mod asymptotics;
pub mod data_models;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod norm_geometry;
pub mod rng;

pub use adversarial_risk::{AdversarialBudget, RiskReport};
pub use data_models::{Covariance, DataModel, Dataset, ModelFamily, Population, Scaling};
pub use error::{Error, Result};
pub use estimators::{Estimator, FittedModel};
pub use norm_geometry::{Exponent, NormOrder};

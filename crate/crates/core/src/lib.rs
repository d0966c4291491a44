//! Estimators of a population mean from data with outcomes missing at random.
//!
//! The crate covers inverse-propensity weighting, propensity stratification,
//! regression prediction and several doubly robust combinations of the two,
//! together with a synthetic population whose true mean is known and a Monte
//! Carlo harness that compares the estimators under correct and misspecified
//! propensity and outcome models.
//!
//! Modules:
//! - [`datagen`]: the synthetic population and seeded samples.
//! - [`glm`]: logit/robit binary regression and (weighted) least squares.
//! - [`estimators`]: every estimator of the mean.
//! - [`simbench`]: replicate runs and Bias / %Bias / RMSE / MAE summaries.
//! - [`cli`]: the `drmean` command-line tool.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod linalg;
pub mod simbench;

pub use error::{Error, Result};

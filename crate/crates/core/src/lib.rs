//! Monte-Carlo degrees of freedom for multi-class classifiers.
//!
//! Observations live in the categorical exponential family; a classifier is
//! any procedure mapping soft labels to fitted mean parameters. The library
//! estimates the divergence of that map by finite differences under shared
//! randomness and turns it into a model-selection criterion.

pub mod categorical;
pub mod datagen;
pub mod dof;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod net;
pub mod rng;

pub use error::{Error, Result};

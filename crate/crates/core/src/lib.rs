//! Contrastive counterfactual augmentation for conditional average treatment
//! effect estimation.

pub mod augment;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod imputers;
pub mod linalg;
pub mod metrics;
pub mod neuralnet;
pub mod rng;
pub mod synthetic;
pub mod theory;

pub use error::{Error, Result};

//! Simultaneous evaluation of binary classifiers against co-primary
//! sensitivity and specificity endpoints.

pub mod cli;
pub mod error;
pub mod inference;
pub mod mbeta;
pub mod mvnorm;
pub mod rng;
pub mod sampling;
pub mod selection;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{ClassLabel, CoPrimaryEstimate, SimilarityMatrix, StudyConfig, Threshold};

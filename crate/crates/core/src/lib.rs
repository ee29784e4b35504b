//! Open-world learning without labels on precomputed feature vectors.
//!
//! An agent classifies a stream of features, nominates unknowns into a
//! residual buffer, clusters the buffer with first-neighbor clustering,
//! quality-gates the clusters and learns the accepted ones as new classes.
//! Scoring uses the open-world metric (OWM), which combines accuracy on
//! knowns routed known with B-cubed on unknowns routed unknown.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the common instantiations.

pub mod checkpoint;
pub mod discovery;
pub mod error;
pub mod evm;
pub mod features;
pub mod learners;
pub mod linalg;
pub mod linear;
pub mod manager;
pub mod metrics;
pub mod ood;
pub mod pipeline;
pub mod scalar;
pub mod stats;
pub mod types;

pub use error::{OwlError, Result};
pub use scalar::Scalar;
pub use types::{ClassId, GroundTruth, Prediction};

pub type FeatureSet64 = features::FeatureSet<f64>;
pub type FeatureSet32 = features::FeatureSet<f32>;
pub type EvmModel64 = evm::EvmModel<f64>;
pub type EvmModel32 = evm::EvmModel<f32>;
pub type Agent64 = pipeline::Agent<f64>;
pub type Agent32 = pipeline::Agent<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type AugmentedProbs64 = learners::AugmentedProbs<f64>;

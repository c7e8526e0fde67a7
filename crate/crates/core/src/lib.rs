//! Timing side-channel laboratory for enclave-hosted stream processing.

pub mod attack;
pub mod engine;
pub mod features;
pub mod generators;
pub mod models;
pub mod observer;
mod scalar;

pub use scalar::Scalar;

pub type FeatureVector = features::FeatureVector<f64>;
pub type LabeledDataset = features::LabeledDataset<f64>;
pub type TrainedModel = models::TrainedModel<f64>;

//! Deterministic federated-learning simulator built around element-wise
//! parameter decoupling. A quantile threshold over per-parameter importance
//! scores (squared local/global drift, squared gradients, or absolute update
//! magnitudes) splits each client's model into a personalized part kept
//! locally and a shared part aggregated by the server.
//!
//! The numeric core is generic over the scalar type ([`Scalar`]); the
//! aliases below fix `f64`, which every shipped experiment uses.

pub mod config;
pub mod data;
pub mod decouple;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod importance;
pub mod layout;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense tensor with `f64` entries.
pub type Tensor = tensor::TensorG<f64>;
/// Flat model parameters with `f64` entries.
pub type ParamVector = params::ParamVectorG<f64>;
/// Per-parameter importance scores with `f64` entries.
pub type ScoreVector = importance::ScoreVectorG<f64>;
/// Dataset with `f64` pixel values.
pub type Dataset = data::DatasetG<f64>;
/// Client state over `f64` models.
pub type ClientState = federation::ClientStateG<f64>;
/// Server state over `f64` models.
pub type ServerState = federation::ServerStateG<f64>;

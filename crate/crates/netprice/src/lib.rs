//! Fair personalized pricing on social networks.
//!
//! A retailer assigns each customer an individual price for one product.
//! Customers compare prices with their graph neighbors, and perceived
//! unfairness feeds back into demand; regulators bound the gap between
//! the average prices of two protected groups. This crate trains
//! graph-aware pricing policies (MLP/GCN/GAT/GraphSAGE encoders with a
//! sigmoid pricing head) against that market model, using an adversarial
//! debiasing module and a group-gap regularizer, and ships the experiment
//! harness that evaluates them on synthetic or file-based networks.
//!
//! The numeric core is generic over the scalar type via [`Scalar`];
//! the shipped pipeline runs on `f64` (see [`Real`]).

pub mod autodiff;
pub mod config;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod market;
pub mod policy;
pub mod report;
pub mod scalar;
pub mod seeding;
pub mod synth;
pub mod table;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type the shipped pipeline (config, experiments, CLI) runs on.
pub type Real = f64;

/// Dense matrix over the pipeline scalar.
pub type Tensor64 = autodiff::Tensor<f64>;
/// Dense matrix over `f32`, for callers that trade precision for space.
pub type Tensor32 = autodiff::Tensor<f32>;
/// Pricing policy over the pipeline scalar.
pub type Policy64 = policy::Policy<f64>;

/// Version tag written into manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

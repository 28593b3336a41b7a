//! Discrete-event simulator for multi-task asynchronous federated learning
//! with buffered aggregation and variance-driven request reallocation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, with `32`-suffixed variants for single precision.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod delay_model;
pub mod error;
pub mod event_engine;
pub mod fedast_server;
pub mod harness;
pub mod local_trainer;
pub mod metrics;
pub mod objectives;
pub mod realloc;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = objectives::ModelVector<f64>;
pub type Model32 = objectives::ModelVector<f32>;
pub type Task = objectives::TaskSpec<f64>;
pub type Task32 = objectives::TaskSpec<f32>;
pub type Shard = objectives::ClientShard<f64>;
pub type Shard32 = objectives::ClientShard<f32>;
pub type Workload = event_engine::Workload<f64>;
pub type Workload32 = event_engine::Workload<f32>;
pub type Server<'w> = fedast_server::FedAst<'w, f64>;
pub type Server32<'w> = fedast_server::FedAst<'w, f32>;

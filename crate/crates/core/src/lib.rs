//! Document classification with tree-structured sentence encoders, label-wise
//! sentence selection and bidirectional propagation over a document graph.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which every command-line path uses.

pub mod app;
pub mod checkpoint;
pub mod chunks;
pub mod config;
pub mod corpus;
pub mod cv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod propagation;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod tree;
pub mod tune;

pub use config::{Ablation, Channel, Task, TrainConfig};
pub use error::{Error, ParseError, Result};
pub use model::GraphTreeModel;
pub use scalar::Scalar;

pub type Real = f64;
pub type Tensor64 = tensor::Tensor<Real>;
pub type Tape64 = tape::Tape<Real>;
pub type Model = model::GraphTreeModel<Real>;
pub type ParamStore64 = params::ParamStore<Real>;
pub type TrainOutcome64 = train::TrainOutcome<Real>;

//! Camera pose regression with a GoogLeNet-style inception network.
//!
//! The crate is self-contained: dense tensors with reverse-mode
//! differentiation ([`graph`], [`ops`]), the pose network ([`posenet`]), the
//! pose loss and Adam ([`loss`], [`optim`]), synthetic pose-labelled imagery
//! ([`data`]), the training loop ([`train`]) and trajectory metrics ([`eval`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod latency;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod pose;
pub mod posenet;
pub mod tensor;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
pub use graph::{ComputeGraph, Gradients, NodeId, Op, Parameter};
pub use loss::{PoseLossSpec, PoseResiduals};
pub use optim::{AdamConfig, AdamState};
pub use pose::Pose;
pub use posenet::{InceptionSpec, NetworkSpec, PoseNet};
pub use tensor::Tensor;

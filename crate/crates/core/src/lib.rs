//! Spiking neural network training with surrogate-gradient backpropagation
//! through time and spike-trace gradient scaling.
//!
//! The crate is organised bottom-up: [`tensor`] holds the dense kernels,
//! [`neuron`] the leaky integrate-and-fire dynamics, [`layers`] the model
//! and its forward/backward passes, [`trace`] and [`gradscale`] the spike
//! relations and the scaled update, and [`train`] the loop that ties them
//! together.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradscale;
pub mod layers;
pub mod neuron;
pub mod tensor;
pub mod trace;
pub mod train;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use error::{Error, Result};
pub use layers::{Model, ModelSpec};
pub use tensor::Tensor;
pub use train::TrainConfig;

//! Spiking neural networks built on the dual-adaptive leaky integrate-and-fire
//! (DA-LIF) neuron: per-layer learnable spatial and temporal membrane decays,
//! trained by spatio-temporal backpropagation with a rectangular surrogate
//! gradient. Includes a finite-difference gradient oracle, deterministic
//! data pipelines (IDX images, packed event streams, a synthetic temporal
//! task), and synaptic-operation energy profiling.

pub mod data;
pub mod energy;
pub mod error;
pub mod graph;
pub mod neuron;
pub mod optim;
pub mod stbp;
pub mod tensor;

pub use error::Error;
pub use tensor::{RngStream, Tensor};

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

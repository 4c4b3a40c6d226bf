pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod interpret;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

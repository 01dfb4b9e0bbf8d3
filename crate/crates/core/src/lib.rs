pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod model;
pub mod molecule;
pub mod parallel;
pub mod sampler;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};

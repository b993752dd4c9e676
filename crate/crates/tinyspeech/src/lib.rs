pub mod cli;
pub mod complexity;
pub mod condenser;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod quant;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

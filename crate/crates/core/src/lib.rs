pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod scoring;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{DType, Float, Gradients, Tape, Tensor, Var};

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Scalar, Tape, Tensor, Var};

pub mod audio;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod physics;
pub mod rng;
pub mod score;
pub mod sde;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

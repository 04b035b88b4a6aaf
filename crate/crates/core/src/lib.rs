pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod error;
pub mod frontend;
pub mod model;
pub mod ops;
pub mod quant;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use frontend::{Frontend, FrontendMode, FrontendSpec, Wavelet};
pub use model::{Architecture, GradSet, Group, Mode, Model, ModelConfig};
pub use tensor::{DType, Scalar, Shape, Tensor};

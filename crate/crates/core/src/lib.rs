pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod steering;
pub mod synthmetrics;
pub mod tensor;
pub mod corpus;
pub mod model;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type SteeringVectors32 = steering::SteeringVectorSet<f32>;
pub type SteeringVectors64 = steering::SteeringVectorSet<f64>;
pub type ActivationCache32 = steering::ActivationCache<f32>;
pub type ActivationCache64 = steering::ActivationCache<f64>;

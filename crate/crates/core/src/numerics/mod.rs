//! Dense tensors, differentiable layers, losses and the momentum optimizer.
//!
//! Layers are generic over [`Scalar`]: the networks train in `f32`, while the
//! gradient and adjointness checks run the same code in `f64`.

pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod param;
pub mod pool;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use layers::{Activation, Layer, LayerKind, Phase, Sequential, Tape};
pub use optim::{zero_grads, Hyperparams, Sgd};
pub use param::{dedup_params, Param, ParamData};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

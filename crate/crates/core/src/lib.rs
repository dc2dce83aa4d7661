//! Fast-MpoxNet on the CPU: a small tensor engine with reverse-mode
//! differentiation, the ShuffleNetV2-style backbone with attention-based
//! local/global fusion, training, evaluation metrics, augmentation and
//! Grad-CAM.
//!
//! Everything numeric is generic over [`Scalar`]; the crate-root aliases
//! fix the working precision to `f32`.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod metrics;
pub mod model;
pub mod nn;
mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{finite_difference_check, no_grad, FdReport, ScalarFn, Var};
pub use model::{build_model, load_checkpoint, save_checkpoint, FastMpoxModel, ModelConfig};
pub use error::{CheckpointError, Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
pub type Model32 = FastMpoxModel<f32>;
pub type Model64 = FastMpoxModel<f64>;

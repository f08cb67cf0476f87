//! Small deterministic numeric core: dense tensors, hand-differentiated layers,
//! ADAM and a finite-difference gradient checker.
//!
//! Everything is generic over [`Real`] so the same layer code runs in `f32`
//! for training and in `f64` for gradient checks.

mod adam;
mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, ParamStore};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TensorEntry};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use gru::{BiGru, BiGruCache, GruCell, GruStepCache};
pub use layers::{
    affine_backward, affine_forward, dropout_apply, relu, relu_backward, softmax, softmax_backward, Affine, Dropout,
    Mode,
};
pub use params::Params;
pub(crate) use tensor::dot as tensor_dot;
pub use tensor::{Real, Tensor};

//! Small reverse-mode kit for the regularizer network: tensors, the layers
//! the U-Net needs with hand-written vector-Jacobian products, a flat named
//! parameter store, ADAM and a finite-difference gradient checker.

mod adam;
pub mod checks;
mod gradcheck;
mod layers;
mod params;
mod tensor;
mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checks::{layer_gradchecks, GradcheckEntry};
pub use gradcheck::{gradcheck, Differentiable, GradcheckReport};
pub use layers::{avgpool2, avgpool2_vjp, concat, conv2d, conv2d_vjp, relu, relu_vjp, split, upsample2, upsample2_vjp};
pub use params::{ParamEntry, ParamSet};
pub use tensor::Tensor;
pub use unet::{cnn_apply, cnn_vjp, UNet, UNetTape};

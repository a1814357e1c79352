//! Minimal differentiable engine: same-padded convolutions, ReLU and
//! softmax composed into sequential fully-convolutional models, with
//! analytic backward passes.

mod activation;
mod conv;
pub mod gradcheck;
mod io;
mod model;
mod scalar;
mod tensor;

pub use activation::{relu_backward, relu_forward, softmax};
pub use conv::{ConvGrads, ConvLayer};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use model::{
    argmax_mask, batch_tensor, image_tensor, Layer, Model, ModelKind, Trace, CLASS_COUNT,
    DEFAULT_SCNN_WIDTHS,
};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! Reverse-mode differentiation over dense tensors: enough machinery to
//! back-propagate a pose loss through correlation, FFT, log-polar
//! resampling, and small convolutional feature extractors.

mod conv;
mod elementwise;
pub mod gradcheck;
mod reduce;
mod sample;
mod shape;
mod softmax;
mod tape;
mod tensor;

pub use sample::bilinear_at;
pub use softmax::softmax_values;
pub use tape::{GradSink, Tape, Var};
pub use tensor::{ComplexTensor, Scalar, Tensor};

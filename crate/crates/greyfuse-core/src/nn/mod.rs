//! Minimal deterministic tensor engine.
//!
//! f32 values, CPU only, one thread, fixed reduction order: the same inputs
//! always produce bitwise identical outputs and gradients. The op set is
//! exactly what the two-stream network needs (conv / batch norm / relu /
//! max pool / GAP / linear / slicing / concatenation / scalar losses).

mod conv;
mod layers;
mod params;
mod sgd;
mod tape;

pub use conv::{col2im, conv2d_backward, conv2d_forward, im2col, maxpool2d_forward};
pub use layers::{BatchNorm, Conv2d, ConvBnRelu, Linear};
pub use params::{uniform_fan_in, ParamId, ParamKind, ParamStore, Parameter};
pub use sgd::Sgd;
pub use tape::{NodeId, Tape};

pub type Arr = ndarray::ArrayD<f32>;

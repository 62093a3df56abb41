//! Minimal CHW tensor layers with hand-written backward passes, generic over
//! `f32` (training) and `f64` (gradient checking).

mod conv;
mod linear;
mod ops;
mod tensor;

pub use self::conv::{Conv2d, ConvCache};
pub use self::linear::Linear;
pub use self::ops::{concat_channels, silu, silu_backward_inplace, split_channels, upsample2x, upsample2x_backward};
pub use self::tensor::{Param, Real, Tensor};

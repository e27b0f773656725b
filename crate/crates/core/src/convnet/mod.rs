//! A small CPU convolutional network engine: 2-D convolution, ReLU, max
//! pooling, batch normalization and fully-connected layers, with exact
//! backpropagation to the parameters and to the input image.
//!
//! The engine is generic over the float type. Gradient checks run in `f64`;
//! training runs in `f32`. Work inside a batch is split across rayon threads
//! by sample (forward, input gradients) or by output unit (parameter
//! gradients), and every reduction runs in a fixed order, so results do not
//! depend on the thread count.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod sgd;
mod spec;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{batch_loss, logistic_loss, ClassWeights, LabelVector};
pub use network::{Forward, Gradients, Network};
pub use sgd::{sgd_step, Sgd};
pub use spec::{format_layers, parse_layers, LayerSpec, NetworkSpec, Padding, DEFAULT_BODY};
pub use tensor::Tensor;

/// Float types the engine runs on.
pub trait Scalar:
    num_traits::Float
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Batch normalization behaviour: batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

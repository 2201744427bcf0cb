//! A small dense-tensor library with tape-based reverse-mode automatic
//! differentiation.
//!
//! The operator set is deliberately narrow: valid convolutions, transposed
//! convolutions with an explicit output size, batch normalization, PReLU,
//! affine layers, sigmoid, forward-difference image gradients and the
//! elementwise/reduction ops needed to write losses. Everything is generic
//! over [`Element`] so the same graph can be evaluated in `f32` for training
//! and in `f64` for finite-difference gradient checks.

mod conv;
mod element;
mod error;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use conv::{Conv2dSpec, ConvTranspose2dSpec};
pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::gradcheck;
pub use optim::{Adam, AdamConfig};
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Normalization epsilon used by batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum used by batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

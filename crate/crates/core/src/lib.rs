//! k-Winners-Take-All networks: the activation itself, hand-written
//! backpropagation for small CNNs and MLPs, SGD training, gradient attacks,
//! and Monte Carlo checks of the discontinuity geometry k-WTA induces.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod error;
pub mod kwta;
pub mod nn;
pub mod par;
pub mod tensor;
pub mod theorylab;
pub mod training;

pub use error::{Error, IdxError, Result};
pub use kwta::{ActivationPattern, KwtaConfig};
pub use nn::{Activation, LayerSpec, Model};
pub use tensor::{DType, Real, Rng, Tensor};

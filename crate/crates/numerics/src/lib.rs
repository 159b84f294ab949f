//! Minimal dense numerics for the timeline summarizer: row-major tensors,
//! a tape for reverse-mode differentiation, clipped Adagrad, a
//! finite-difference gradient checker and the checkpoint container.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). Gradient checks
//! and tests run at 64 bits; the aliases below name the common choices.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{NumericsError, Result};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use optim::{adagrad_step, clip_global_norm, ADAGRAD_EPS};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;

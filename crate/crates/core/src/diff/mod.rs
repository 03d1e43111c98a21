//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records primitives as they are evaluated; [`Tape::backward`]
//! walks the record in reverse and returns a [`Gradients`] table. Every
//! primitive is generic over `f32` (training) and `f64` (gradient checks).

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

pub use ndarray::NdFloat as Float;

pub type Tensor<F> = ndarray::Array2<F>;

/// Converts an `f64` constant into the working precision.
#[inline]
pub fn c<F: Float>(v: f64) -> F {
    F::from(v).expect("float constant")
}

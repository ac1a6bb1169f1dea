//! Minimal reverse-mode automatic differentiation for small dense networks.
//!
//! Values are row-major `f64` matrices. A [`Graph`] is built eagerly during
//! the forward pass and consumed by [`Graph::backward`]. The op set is the one
//! needed by sequence transformers and skeleton graph convolutions: matmul,
//! broadcasting adds, layer norm, fused multi-head attention, row gathers,
//! joint mixing, temporal unfolding and the two training losses.

mod graph;
mod optim;
mod param;

pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use optim::Adam;
pub use param::{ParamId, ParamStore};

pub type Matrix = ndarray::Array2<f64>;

use rand::Rng;

/// Uniform fan-based initialization, `U(-sqrt(6 / (fan_in + fan_out)), ..)`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

//! Dense rank-2 tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to the tensors registered on it.
//! Calling [`Graph::backward`] on a `1x1` result walks the tape in reverse and
//! accumulates adjoints into every node that depends on a trainable leaf.
//!
//! ```
//! use jam_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum_all(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod check;
mod error;
mod graph;
mod tensor;

pub use check::{finite_diff_check, GradCheck};
pub use error::AutodiffError;
pub use graph::{Graph, Var};
pub use tensor::Tensor;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

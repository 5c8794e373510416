//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Graphs are built eagerly: each primitive computes its value immediately and
//! records its parents. [`Graph::backward`] with `create_graph = true` returns
//! gradients that are themselves graph nodes, so a second backward pass yields
//! mixed second derivatives (gradients through a gradient step).
//!
//! ```
//! use mc_autodiff::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.variable(Tensor::scalar(2.0));
//! let y = x.square().mul(x).unwrap(); // x^3
//! let dx = g.backward(y, &[x], true).unwrap()[0];
//! let ddx = g.backward(dx, &[x], false).unwrap()[0];
//! assert_eq!(dx.item(), 12.0);
//! assert_eq!(ddx.item(), 12.0);
//! ```

mod backward;
mod error;
mod fd;
mod graph;
mod tensor;

pub use error::{AutodiffError, Result};
pub use fd::{fd_gradient, max_relative_error};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

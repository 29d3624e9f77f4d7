//! Rank-4 `f32`/`f64` tensors with a recorded operation graph and
//! reverse-mode differentiation, sized for small convolutional networks on
//! a CPU.
//!
//! ```
//! use sod_tensor::{Graph, ParamStore, Tensor};
//!
//! let store = ParamStore::<f64>::new();
//! let g = Graph::new(&store);
//! let x = g.variable(Tensor::full([1, 1, 2, 2], 3.0));
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum_all(y);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0; 4]);
//! ```

mod backward;
mod element;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod nn;
mod ops;
mod optim;
mod param;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use graph::{ExecMode, Gradients, Graph, OpCost, Var};
pub use ops::LOSS_EPS;
pub use optim::Adam;
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::{Shape, Tensor};

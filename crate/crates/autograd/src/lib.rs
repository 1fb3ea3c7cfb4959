//! Reverse-mode automatic differentiation over dense, row-major CPU tensors.
//!
//! Tensors are immutable values that remember the operation that produced
//! them. Calling [`Tensor::backward`] on a scalar walks that record in
//! reverse topological order and returns the gradients of every leaf that
//! was created with [`Tensor::param`] (or [`Tensor::requires_grad_leaf`]).
//! Intermediate values that do not depend on such a leaf never record a
//! backward closure, so frozen networks cost only their forward pass.
//!
//! The op set is deliberately narrow: what a small convolutional restorer,
//! a VGG-style feature extractor and cosine-similarity losses need.

mod element;
mod error;
mod ops;
mod tensor;

pub use element::Element;
pub use error::{Error, Result};
pub use tensor::{Gradients, Tensor};

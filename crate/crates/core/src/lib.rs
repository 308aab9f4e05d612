//! LoRA-Edge: tensor-train adapters for pre-trained convolutional networks.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, contraction and convolution kernels.
//! - [`linalg`]: truncated SVD (one-sided Jacobi).
//! - [`tt`]: TT-SVD, reconstruction, and rank bookkeeping.
//! - [`nn`]: a small CNN engine with manual backpropagation, Adam, and
//!   model bundles on disk.
//! - [`peft`]: LoRA-Edge and the baseline adapters (LoRA-C, linear LoRA,
//!   bias and BN tuning), merging, and trainable-parameter reports.
//! - [`harness`]: synthetic domain-shift data, fine-tuning loops, metrics,
//!   and the ablation and initialization sweeps.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod numfmt;
pub mod peft;
pub mod tensor;
pub mod tt;

pub use error::{Error, Result};
pub use tensor::Tensor;

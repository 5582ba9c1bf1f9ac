//! Differentiable operations, implemented as methods on [`crate::Graph`],
//! plus the tape-free kernels they are built on.

pub(crate) mod broadcast;
pub mod conv;
pub mod elementwise;
pub mod matmul;
pub mod norm;
pub(crate) mod reduce;
pub mod resample;
pub mod shape;

//! Dense tensors, a reverse-mode tape, and the kernels the RSTT model is
//! assembled from: batched matmul, softmax, layer norm, GELU, convolutions,
//! pixel shuffle, and resampling.
//!
//! ```
//! use rstt_tensor::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(&x, &x).unwrap();
//! let loss = g.sum(&sq).unwrap();
//! let grads = g.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub mod error;
pub mod float;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};
pub use float::{DType, Float};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::shape::MixRow;
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic RNG.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Deterministic numerical kernel: dense algebra, a two-layer perceptron,
//! SGD, a finite-difference oracle and seedable random streams.

pub mod gradcheck;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use linalg::{Matrix, RealVector};
pub use mlp::{Mlp2Cache, Mlp2Params};
pub use optim::{sgd_step, SgdConfig, SgdState};
pub use rng::{sample_normal, Rng};

//! Dense `f64` tensors, the kernels the fusion blocks are built from, a
//! reverse-mode tape for those kernels, and a finite-difference checker.

mod gradcheck;
pub mod io;
mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use ops::{
    add_row, dropout_mask, layer_norm, linear, matmul, mlp, relu, rms_norm, sigmoid, sigmoid_scalar, softmax_rows,
    softmax_rows_masked, DropoutMode, NORM_EPS,
};
pub use params::{named_rng, MlpSpec, ParamSet};
pub use tape::{GradTape, Gradients, RowWeights, Var};
pub use tensor::Tensor;

/// Helpers shared by unit tests, integration tests and benches.
pub mod testing {
    use rand::Rng;

    use super::{named_rng, Tensor};

    /// Entries uniform in `[-1, 1)`, deterministic per seed.
    pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = named_rng(seed, "random_tensor");
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }
}

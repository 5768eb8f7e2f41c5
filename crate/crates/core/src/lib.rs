#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod detect;
pub mod error;
pub mod eval;
pub mod gcfat;
pub mod numerics;
pub mod pipeline;
pub mod scene;
pub mod sffa;
pub mod vga;
pub mod voxel;

pub use error::{Error, Result};
pub use numerics::{GradTape, ParamSet, Tensor};

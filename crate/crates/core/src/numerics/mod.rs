//! Dense-array math and the small trainable-layer substrate the rest of the
//! crate is built on.

mod gradcheck;
mod mlp;
mod ops;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradReport, REL_ERR_FLOOR};
pub use mlp::{Activation, Linear, Mlp, MlpCache, MlpGrads};
pub use ops::{
    block_pool, cosine, dot, matmul, matmul_nt, max_norm_row, mean_rows, softmax_rows,
    squared_distance, transpose,
};
pub use tensor::{DType, Tensor};

//! Dense matrix kernel with hand-derived adjoints.

mod gradcheck;
mod matrix;
pub mod ops;
mod param;

pub use gradcheck::{check_gradient, central_difference, GradCheckOptions, GradCheckReport, ParamCheck};
pub use matrix::Matrix;
pub use ops::{
    l2_normalize_cols, l2_normalize_cols_backward, matmul_backward, roll, roll_backward,
    softmax_cols, softmax_cols_backward, softmax_rows, softmax_rows_backward, L2_EPSILON,
};
pub use param::{Param, ParamSet};

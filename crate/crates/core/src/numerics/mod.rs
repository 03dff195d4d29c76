//! Dense containers and the low-level kernels the networks are built from.

mod adam;
mod conv;
mod gradcheck;
mod linalg;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use conv::{
    conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, relu_backward,
    Activation, ConvGrads, Kernel, Padding,
};
pub use gradcheck::finite_diff_grad;
pub use linalg::{
    ensure_finite_matrix, orthonormal_columns, spectral_norm_sq, symmetric_eigen_desc,
    DenseMatrix,
};
pub use tensor::FeatureMap;

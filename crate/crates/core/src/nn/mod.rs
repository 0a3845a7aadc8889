//! Dense tensors, layers with explicit backward passes, and the optimizer.

pub mod activation;
pub mod batchnorm;
pub mod dense;
pub mod gradcheck;
pub mod layer;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use activation::{sigmoid, Relu};
pub use batchnorm::BatchNorm;
pub use dense::Dense;
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport, LayerObjective, Objective};
pub use layer::{join_path, xavier_uniform, Layer, LayerState, Mode};
pub use loss::{cross_entropy, softmax, softmax_row, CrossEntropy};
pub use optim::SgdNesterov;
pub use tensor::Tensor;

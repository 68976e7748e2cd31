//! Numeric foundation: tensors, parameter vectors with `l2` geometry,
//! replayable random streams, reverse-mode gradients, and normal/binomial
//! distribution helpers.

pub mod autodiff;
pub mod normal;
pub mod params;
pub mod rng;
pub mod tensor;

pub use autodiff::{finite_difference, grad, value_and_grad, Graph, Var};
pub use normal::{normal_cdf, normal_quantile};
pub use params::{clip_l2, gaussian_perturb, l2, l2_project, Layout, ParameterVector, Segment};
pub use rng::RngStream;
pub use tensor::Tensor;

//! Detection and removal of mislabeled samples in image-classification
//! training sets.
//!
//! A convolutional autoencoder with mean/log-variance latent heads is trained
//! on the (noisy) images alone. Every sample is then projected to the latent
//! mean, and DBSCAN is run per class with an epsilon picked from the
//! k-distance curve; points that end up as noise are removed. Two baselines
//! (KNN relabeling on raw pixels and on an eigenspace projection) and the
//! evaluation metrics used to compare them live alongside.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the widths
//! used in practice (f32 for training, f64 for checks and linear algebra).

// `!(x > 0.0)` is the NaN-rejecting guard used throughout; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod cae;
pub mod cluster;
pub mod data;
mod error;
pub mod evaluation;
pub mod linalg;
pub mod pipeline;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Graph, LayerParams, ParameterSet, Slot, Var};
pub use data::{ImageShape, LabeledDataset, NoiseLedger, SourceFormat};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParameterSet32 = ParameterSet<f32>;
pub type ParameterSet64 = ParameterSet<f64>;

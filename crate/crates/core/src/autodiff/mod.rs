//! Minimal dense autodiff engine: convolution, transposed convolution,
//! dense layers, reshapes and elementwise activations.

pub mod conv;
mod graph;
pub mod optim;
pub mod params;

pub use conv::ConvGeometry;
pub use graph::{Graph, Var};
pub use optim::{adam_step, regularizer_penalty, AdamConfig, AdamState};
pub use params::{LayerParams, ParameterSet, Slot, PARAMS_MAGIC};

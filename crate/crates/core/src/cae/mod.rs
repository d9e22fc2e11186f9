//! Convolutional autoencoder with latent mean / log-variance heads.

pub mod arch;
pub mod loss;
pub mod model;
pub mod train;

pub use arch::{Activation, CaeArchitecture, LayerSpec, Widths, DEFAULT_LATENT_DIM};
pub use loss::{loss_kl, loss_mse, loss_total, psnr, KlFormula, PsnrSummary};
pub use model::{init_params, Checkpoint};
pub use train::{
    build_loss, history_csv, project, reconstruct_batch, reconstruction_psnr, train, EpochStats, LossGraph, Trainer,
    TrainingConfig,
};

/// Latent embedding of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint<T> {
    pub sample_index: usize,
    /// Current (possibly noised) label.
    pub label: u8,
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
}

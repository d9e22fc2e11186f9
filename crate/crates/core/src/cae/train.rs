//! Training loop, latent projection and reconstruction quality.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, ParameterSet, Slot, Var};
use crate::cae::arch::CaeArchitecture;
use crate::cae::loss::{psnr, KlFormula, PsnrSummary};
use crate::cae::model::{decode, encode, init_params, stack_batch};
use crate::cae::LatentPoint;
use crate::data::ImageView;
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta_kl: f64,
    pub rng_seed: u64,
    pub kl_formula: KlFormula,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            beta_kl: 1e-3,
            rng_seed: 0,
            kl_formula: KlFormula::Standard,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            bail!(Argument, "epochs and batch size must be >= 1");
        }
        if !(self.beta_kl >= 0.0) || !(self.learning_rate > 0.0) {
            bail!(Argument, "beta_kl must be >= 0 and learning rate > 0");
        }
        Ok(())
    }
}

/// Per-epoch averages over samples. `loss_total` is `beta * kl + mse`
/// (the kernel penalty is optimised but not reported).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_kl: f64,
    pub mean_psnr: f64,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss_total,loss_mse,loss_kl,mean_psnr\n");
    for e in history {
        s.push_str(&format!("{},{:.6},{:.6},{:.6},{:.4}\n", e.epoch, e.loss_total, e.loss_mse, e.loss_kl, e.mean_psnr));
    }
    s
}

/// Mutable training state; keeps optimizer moments and RNG streams so an
/// interrupted budget can be continued.
pub struct Trainer<T: Scalar> {
    pub arch: CaeArchitecture,
    pub cfg: TrainingConfig,
    pub params: ParameterSet<T>,
    adam: AdamState<T>,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    pub history: Vec<EpochStats>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<T: Scalar> Trainer<T> {
    pub fn new(arch: CaeArchitecture, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        let params = init_params(&arch, &mut stream(cfg.rng_seed, 0));
        Ok(Trainer {
            adam: AdamState::new(&params),
            shuffle_rng: stream(cfg.rng_seed, 1),
            noise_rng: stream(cfg.rng_seed, 2),
            arch,
            cfg,
            params,
            history: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// One optimisation step on a batch; returns `(mse, kl, reconstruction)`.
    fn step(&mut self, batch: Tensor<T>) -> Result<(f64, f64, Tensor<T>)> {
        let n = batch.shape()[0];
        let latent = self.arch.latent_dim;
        let eta = Tensor::from_fn(vec![n, latent], |_| {
            let v: f64 = StandardNormal.sample(&mut self.noise_rng);
            T::from_f64_lossy(v)
        });

        let mut g = Graph::new();
        let LossGraph { recon, mse, kl, loss } = build_loss(&mut g, &self.arch, &self.params, batch, eta, &self.cfg)?;

        let mse_v = g.value(mse).item()?.to_f64_lossy();
        let kl_v = g.value(kl).item()?.to_f64_lossy();
        let loss_v = g.value(loss).item()?.to_f64_lossy();
        if !loss_v.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss_v}")));
        }
        let reconstruction = g.value(recon).clone();
        let grads = g.backward(loss, &self.params)?;
        adam_step(&mut self.params, &grads, &mut self.adam, &AdamConfig::with_learning_rate(self.cfg.learning_rate))?;
        Ok((mse_v, kl_v, reconstruction))
    }

    /// Start the sigmoid output at the per-channel mean intensity. Starting
    /// at 0.5 on mostly dark images drives every decoder ReLU negative within
    /// the first few hundred steps and the reconstruction collapses to a constant.
    fn init_output_bias(&mut self, images: ImageView<'_>) -> Result<()> {
        let c = images.shape.channels;
        let mut sums = vec![0.0f64; c];
        for img in images.images {
            for (i, &v) in img.data().iter().enumerate() {
                sums[i % c] += v as f64;
            }
        }
        let count = (images.len() * images.shape.pixels() / c) as f64;
        let Some(name) = self.arch.decoder.last().and_then(|l| l.name()) else {
            bail!(State, "decoder has no output layer");
        };
        let Some(layer) = self.params.get_mut(name) else {
            bail!(State, "missing parameters for {name}");
        };
        for (b, s) in layer.biases.data_mut().iter_mut().zip(&sums) {
            let p = (s / count).clamp(1e-3, 1.0 - 1e-3);
            *b = T::from_f64_lossy((p / (1.0 - p)).ln());
        }
        Ok(())
    }

    /// One pass over `images` in a freshly shuffled order.
    pub fn run_epoch(&mut self, images: ImageView<'_>) -> Result<EpochStats> {
        if images.is_empty() {
            bail!(Argument, "cannot train on an empty dataset");
        }
        if images.shape != self.arch.input {
            bail!(Shape, "dataset images {} vs architecture input {}", images.shape, self.arch.input);
        }
        let epoch = self.history.len() + 1;
        if epoch == 1 {
            self.init_output_bias(images)?;
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (mut mse_sum, mut kl_sum) = (0.0, 0.0);
        let mut psnrs = Vec::with_capacity(images.len());
        for chunk in order.chunks(self.cfg.batch_size) {
            let refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &images.images[i]).collect();
            let batch: Tensor<T> = stack_batch(&refs)?;
            let (mse, kl, recon) = self.step(batch).map_err(|e| match e {
                Error::Numeric(detail) => Error::TrainingDiverged { epoch, detail },
                other => other,
            })?;
            mse_sum += mse;
            kl_sum += kl;
            let per = images.shape.pixels();
            for (j, img) in refs.iter().enumerate() {
                let r = Tensor::new(img.shape().to_vec(), recon.data()[j * per..(j + 1) * per].to_vec())?;
                psnrs.push(psnr(&img.cast::<T>(), &r, images.bit_depth)?);
            }
        }
        let n = images.len() as f64;
        let stats = EpochStats {
            epoch,
            loss_total: (self.cfg.beta_kl * kl_sum + mse_sum) / n,
            loss_mse: mse_sum / n,
            loss_kl: kl_sum / n,
            mean_psnr: PsnrSummary::from_values(&psnrs).mean,
        };
        self.history.push(stats);
        Ok(stats)
    }

    /// Continue training until `epochs` total epochs have been run.
    pub fn train_until(
        &mut self,
        images: ImageView<'_>,
        epochs: usize,
        progress: &mut dyn FnMut(&EpochStats),
    ) -> Result<()> {
        while self.history.len() < epochs {
            let stats = self.run_epoch(images)?;
            progress(&stats);
        }
        Ok(())
    }
}

/// Handles to the pieces of one batch objective.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub recon: Var,
    pub mse: Var,
    pub kl: Var,
    /// `beta * kl + mse + kernel penalties`.
    pub loss: Var,
}

/// Record the training objective for `batch` on `g`, decoding from the
/// reparameterised sample `mu + exp(log_var / 2) * eta`.
pub fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    arch: &CaeArchitecture,
    params: &ParameterSet<T>,
    batch: Tensor<T>,
    eta: Tensor<T>,
    cfg: &TrainingConfig,
) -> Result<LossGraph> {
    let x = g.input(batch);
    let (mu, log_var) = encode(g, arch, params, x)?;
    let half = g.scale(log_var, T::from_f64_lossy(0.5));
    let sd = g.exp(half);
    let e = g.input(eta);
    let spread = g.mul(sd, e)?;
    let z = g.add(mu, spread)?;
    let recon = decode(g, arch, params, z)?;

    let diff = g.sub(recon, x)?;
    let sq = g.square(diff);
    let mse = g.sum(sq);
    let kl = kl_term(g, mu, log_var, cfg.kl_formula)?;
    let weighted = g.scale(kl, T::from_f64_lossy(cfg.beta_kl));
    let mut loss = g.add(weighted, mse)?;
    for layer in arch.trainable() {
        let (l1, l2) = layer.regularization();
        if l1 == 0.0 && l2 == 0.0 {
            continue;
        }
        let w = g.param(params, layer.name().unwrap(), Slot::Weight)?;
        let pen = g.l1_l2(w, T::from_f64_lossy(l1), T::from_f64_lossy(l2));
        loss = g.add(loss, pen)?;
    }
    Ok(LossGraph { recon, mse, kl, loss })
}

fn kl_term<T: Scalar>(g: &mut Graph<T>, mu: Var, log_var: Var, formula: KlFormula) -> Result<Var> {
    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let inner = match formula {
        KlFormula::Standard => {
            let a = g.add(mu2, var)?;
            let b = g.sub(a, log_var)?;
            g.add_scalar(b, -T::one())
        }
        KlFormula::Literal => {
            let a = g.add(log_var, mu2)?;
            let b = g.add(a, var)?;
            g.add_scalar(b, T::one())
        }
    };
    let total = g.sum(inner);
    Ok(g.scale(total, T::from_f64_lossy(0.5)))
}

/// Train a fresh model for `cfg.epochs` epochs. Only pixels are seen.
pub fn train<T: Scalar>(
    images: ImageView<'_>,
    arch: &CaeArchitecture,
    cfg: &TrainingConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<(ParameterSet<T>, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(arch.clone(), cfg.clone())?;
    trainer.train_until(images, cfg.epochs, progress)?;
    Ok((trainer.params, trainer.history))
}

const INFERENCE_BATCH: usize = 256;

/// Latent mean and standard deviation of every image, in sample order.
pub fn project<T: Scalar>(
    images: ImageView<'_>,
    labels: &[u8],
    arch: &CaeArchitecture,
    params: &ParameterSet<T>,
) -> Result<Vec<LatentPoint<T>>> {
    if labels.len() != images.len() {
        bail!(Shape, "{} labels for {} images", labels.len(), images.len());
    }
    if images.shape != arch.input {
        bail!(Shape, "images {} vs architecture input {}", images.shape, arch.input);
    }
    let l = arch.latent_dim;
    let mut out = Vec::with_capacity(images.len());
    for (b, chunk) in images.images.chunks(INFERENCE_BATCH).enumerate() {
        let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
        let mut g = Graph::inference();
        let x = g.input(stack_batch::<T>(&refs)?);
        let (mu, log_var) = encode(&mut g, arch, params, x)?;
        let (mu, log_var) = (g.value(mu).data(), g.value(log_var).data());
        for j in 0..chunk.len() {
            let idx = b * INFERENCE_BATCH + j;
            let sigma: Vec<T> =
                log_var[j * l..(j + 1) * l].iter().map(|&v| (v * T::from_f64_lossy(0.5)).exp()).collect();
            let mu_j = mu[j * l..(j + 1) * l].to_vec();
            if mu_j.iter().chain(&sigma).any(|v| !v.is_finite()) {
                bail!(Numeric, "non-finite latent for sample {}", idx);
            }
            out.push(LatentPoint { sample_index: idx, label: labels[idx], mu: mu_j, sigma });
        }
    }
    Ok(out)
}

/// Decode every image from its latent mean and summarise PSNR.
pub fn reconstruction_psnr<T: Scalar>(
    images: ImageView<'_>,
    arch: &CaeArchitecture,
    params: &ParameterSet<T>,
) -> Result<PsnrSummary> {
    let mut values = Vec::with_capacity(images.len());
    for chunk in images.images.chunks(INFERENCE_BATCH) {
        let (_, recon) = reconstruct_batch(chunk, arch, params)?;
        let per = images.shape.pixels();
        for (j, img) in chunk.iter().enumerate() {
            let r = Tensor::new(img.shape().to_vec(), recon.data()[j * per..(j + 1) * per].to_vec())?;
            values.push(psnr(&img.cast::<T>(), &r, images.bit_depth)?);
        }
    }
    Ok(PsnrSummary::from_values(&values))
}

/// Deterministic encode (latent mean) + decode of a batch.
pub fn reconstruct_batch<T: Scalar>(
    images: &[Tensor<f32>],
    arch: &CaeArchitecture,
    params: &ParameterSet<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let refs: Vec<&Tensor<f32>> = images.iter().collect();
    let mut g = Graph::inference();
    let x = g.input(stack_batch::<T>(&refs)?);
    let (mu, _) = encode(&mut g, arch, params, x)?;
    let recon = decode(&mut g, arch, params, mu)?;
    let mu_v = g.value(mu).clone();
    Ok((mu_v, g.take_value(recon)))
}

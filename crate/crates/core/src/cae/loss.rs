//! Reconstruction, KL and composite losses plus PSNR.

use crate::cae::LatentPoint;
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which KL expression to optimise.
///
/// `Standard` is the Gaussian KL to a unit normal,
/// `1/2 * sum(mu^2 + sigma^2 - 1 - log sigma^2)`. `Literal` keeps the
/// `(1 + log sigma^2)` term with a positive sign:
/// `1/2 * sum((1 + log sigma^2) + mu^2 + sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KlFormula {
    #[default]
    Standard,
    Literal,
}

impl KlFormula {
    pub fn as_str(&self) -> &'static str {
        match self {
            KlFormula::Standard => "standard",
            KlFormula::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(KlFormula::Standard),
            "literal" | "paper-literal" => Ok(KlFormula::Literal),
            other => bail!(Argument, "unknown kl formula {:?}", other),
        }
    }
}

/// Sum over the batch of squared L2 reconstruction distances.
pub fn loss_mse<T: Scalar>(inputs: &[Tensor<T>], reconstructions: &[Tensor<T>]) -> Result<f64> {
    if inputs.len() != reconstructions.len() {
        bail!(Shape, "{} inputs vs {} reconstructions", inputs.len(), reconstructions.len());
    }
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(reconstructions) {
        if x.shape() != y.shape() {
            bail!(Shape, "input {:?} vs reconstruction {:?}", x.shape(), y.shape());
        }
        for (&a, &b) in x.data().iter().zip(y.data()) {
            let d = b.to_f64_lossy() - a.to_f64_lossy();
            total += d * d;
        }
    }
    Ok(total)
}

/// KL term summed over a batch of latent points.
pub fn loss_kl<T: Scalar>(latents: &[LatentPoint<T>], formula: KlFormula) -> Result<f64> {
    let mut total = 0.0;
    for p in latents {
        if p.mu.len() != p.sigma.len() {
            bail!(Shape, "mu has {} entries, sigma {}", p.mu.len(), p.sigma.len());
        }
        for (&m, &s) in p.mu.iter().zip(&p.sigma) {
            let (m, s) = (m.to_f64_lossy(), s.to_f64_lossy());
            if !(s > 0.0) || !s.is_finite() {
                bail!(Numeric, "sigma must be positive and finite, got {} (sample {})", s, p.sample_index);
            }
            let var = s * s;
            total += match formula {
                KlFormula::Standard => 0.5 * (m * m + var - 1.0 - var.ln()),
                KlFormula::Literal => 0.5 * ((1.0 + var.ln()) + m * m + var),
            };
        }
    }
    Ok(total)
}

/// `beta * kl + mse`.
pub fn loss_total(mse: f64, kl: f64, beta_kl: f64) -> f64 {
    beta_kl * kl + mse
}

/// Peak signal-to-noise ratio in dB between two images of the same shape.
///
/// Pixels are rescaled by `2^d - 1` before differencing, and the squared
/// error is summed over every channel with `W * H * C` in the numerator.
/// Identical images give `f64::INFINITY`.
pub fn psnr<T: Scalar>(original: &Tensor<T>, reconstruction: &Tensor<T>, bit_depth: u32) -> Result<f64> {
    if original.shape() != reconstruction.shape() {
        bail!(Shape, "psnr of {:?} vs {:?}", original.shape(), reconstruction.shape());
    }
    if !(1..=32).contains(&bit_depth) {
        bail!(Argument, "bit depth {} unsupported", bit_depth);
    }
    let peak = ((1u64 << bit_depth) - 1) as f64;
    let sse: f64 = original
        .data()
        .iter()
        .zip(reconstruction.data())
        .map(|(&p, &q)| {
            let d = p.to_f64_lossy() * peak - q.to_f64_lossy() * peak;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let count = original.len() as f64;
    Ok(10.0 * (peak * peak * count / sse).log10())
}

/// Mean over finite values; infinities (exact reconstructions) are counted
/// and excluded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsnrSummary {
    pub mean: f64,
    pub finite: usize,
    pub infinite: usize,
}

impl PsnrSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        PsnrSummary { mean, finite: finite.len(), infinite: values.len() - finite.len() }
    }
}

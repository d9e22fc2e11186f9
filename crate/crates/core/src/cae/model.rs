//! Parameter initialisation, forward passes and checkpoints.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParameterSet, Slot, Var};
use crate::cae::arch::{Activation, CaeArchitecture, LayerSpec};
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform He-style initialisation: kernels in `±sqrt(6 / fan_in)`, zero biases.
pub fn init_params<T: Scalar>(arch: &CaeArchitecture, rng: &mut ChaCha8Rng) -> ParameterSet<T> {
    let mut params = ParameterSet::new();
    for layer in arch.trainable() {
        let (wshape, bshape) = layer.param_shapes().expect("trainable layer has parameters");
        let bound = (6.0 / layer.fan_in().max(1) as f64).sqrt();
        let weights = Tensor::from_fn(wshape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)));
        params.insert(layer.name().unwrap(), weights, Tensor::zeros(bshape));
    }
    params
}

fn activate<T: Scalar>(g: &mut Graph<T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
    }
}

/// Run `layers` on `x` (batch-leading), binding parameters from `params`.
pub fn run_layers<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    layers: &[LayerSpec],
    mut x: Var,
) -> Result<Var> {
    for layer in layers {
        x = match layer {
            LayerSpec::Conv { name, geom, activation, .. } => {
                let w = g.param(params, name, Slot::Weight)?;
                let b = g.param(params, name, Slot::Bias)?;
                let y = g.conv2d(x, w, b, *geom)?;
                activate(g, y, *activation)
            }
            LayerSpec::TransposedConv { name, geom, activation, .. } => {
                let w = g.param(params, name, Slot::Weight)?;
                let b = g.param(params, name, Slot::Bias)?;
                let y = g.conv_transpose2d(x, w, b, *geom)?;
                activate(g, y, *activation)
            }
            LayerSpec::Dense { name, activation, .. } => {
                let w = g.param(params, name, Slot::Weight)?;
                let b = g.param(params, name, Slot::Bias)?;
                let y = g.dense(x, w, b)?;
                activate(g, y, *activation)
            }
            LayerSpec::Flatten => g.flatten(x)?,
            LayerSpec::Reshape { dims } => {
                let n = g.value(x).shape()[0];
                g.reshape(x, vec![n, dims[0], dims[1], dims[2]])?
            }
        };
    }
    Ok(x)
}

/// Encoder forward: returns `(mu, log_variance)`, each `[N, latent_dim]`.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    arch: &CaeArchitecture,
    params: &ParameterSet<T>,
    images: Var,
) -> Result<(Var, Var)> {
    let expected = arch.input.dims();
    if g.value(images).shape().get(1..) != Some(expected.as_slice()) {
        bail!(Shape, "batch {:?} does not match input {}", g.value(images).shape(), arch.input);
    }
    let heads = run_layers(g, params, &arch.encoder, images)?;
    let mu = g.columns(heads, 0, arch.latent_dim)?;
    let log_var = g.columns(heads, arch.latent_dim, arch.latent_dim)?;
    Ok((mu, log_var))
}

pub fn decode<T: Scalar>(g: &mut Graph<T>, arch: &CaeArchitecture, params: &ParameterSet<T>, z: Var) -> Result<Var> {
    run_layers(g, params, &arch.decoder, z)
}

/// Stack images into one `[N, H, W, C]` batch tensor.
pub fn stack_batch<T: Scalar>(images: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        bail!(Argument, "empty batch");
    };
    let per = first.len();
    let mut data = Vec::with_capacity(per * images.len());
    for img in images {
        if img.shape() != first.shape() {
            bail!(Shape, "mixed image shapes {:?} / {:?}", first.shape(), img.shape());
        }
        data.extend(img.data().iter().map(|&v| T::from_f32(v).unwrap()));
    }
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, data)
}

const CHECKPOINT_MAGIC: &str = "LJTCKPT";

/// Architecture + parameters, with free-form `meta.*` header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub arch: CaeArchitecture,
    pub params: ParameterSet<T>,
    pub meta: Vec<(String, String)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{CHECKPOINT_MAGIC}\ndtype={}\n", T::DTYPE);
        for (k, v) in &self.meta {
            header.push_str(&format!("meta.{k}={v}\n"));
        }
        header.push_str(&self.arch.descriptor());
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.extend_from_slice(&self.params.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(end) = find(bytes, b"\nend\n") else {
            bail!(Format, "checkpoint header is not terminated");
        };
        let header = std::str::from_utf8(&bytes[..end + 1])
            .map_err(|_| Error::Format("checkpoint header is not utf-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            bail!(Format, "not a checkpoint file");
        }
        let dtype = lines.next().and_then(|l| l.strip_prefix("dtype="));
        if dtype != Some(T::DTYPE) {
            bail!(Format, "checkpoint dtype {:?}, expected {}", dtype, T::DTYPE);
        }
        let mut meta = Vec::new();
        let mut descriptor = String::new();
        for line in lines {
            if let Some(kv) = line.strip_prefix("meta.") {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                meta.push((k.to_string(), v.to_string()));
            } else {
                descriptor.push_str(line);
                descriptor.push('\n');
            }
        }
        let arch = CaeArchitecture::from_descriptor(&descriptor)?;
        let params = ParameterSet::from_bytes(&bytes[end + 5..])?;
        let expected: ParameterSet<T> = {
            let mut p = ParameterSet::new();
            for layer in arch.trainable() {
                let (w, b) = layer.param_shapes().unwrap();
                p.insert(layer.name().unwrap(), Tensor::zeros(w), Tensor::zeros(b));
            }
            p
        };
        if !expected.same_structure(&params) {
            bail!(Format, "checkpoint parameters do not match its architecture");
        }
        Ok(Checkpoint { arch, params, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

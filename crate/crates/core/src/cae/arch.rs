//! Encoder/decoder layer plans.

use crate::autodiff::ConvGeometry;
use crate::data::ImageShape;
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// One layer of the network. Trainable layers carry their own L1/L2 kernel
/// penalty weights.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        name: String,
        geom: ConvGeometry,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
        l1: f64,
        l2: f64,
    },
    TransposedConv {
        name: String,
        geom: ConvGeometry,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
        l1: f64,
        l2: f64,
    },
    Dense {
        name: String,
        inputs: usize,
        units: usize,
        activation: Activation,
        l1: f64,
        l2: f64,
    },
    Flatten,
    /// Restores an image layout `[h, w, c]` after a dense layer.
    Reshape {
        dims: [usize; 3],
    },
}

impl LayerSpec {
    pub fn name(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv { name, .. } | LayerSpec::TransposedConv { name, .. } | LayerSpec::Dense { name, .. } => {
                Some(name)
            }
            _ => None,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::TransposedConv { .. })
    }

    /// Kernel and bias shapes of a trainable layer.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self {
            LayerSpec::Conv { geom, in_channels, out_channels, .. } => {
                Some((vec![geom.kernel, geom.kernel, *in_channels, *out_channels], vec![*out_channels]))
            }
            LayerSpec::TransposedConv { geom, in_channels, out_channels, .. } => {
                Some((vec![*in_channels, geom.kernel, geom.kernel, *out_channels], vec![*out_channels]))
            }
            LayerSpec::Dense { inputs, units, .. } => Some((vec![*inputs, *units], vec![*units])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            LayerSpec::Conv { geom, in_channels, .. } | LayerSpec::TransposedConv { geom, in_channels, .. } => {
                geom.kernel * geom.kernel * in_channels
            }
            LayerSpec::Dense { inputs, .. } => *inputs,
            _ => 0,
        }
    }

    pub fn regularization(&self) -> (f64, f64) {
        match self {
            LayerSpec::Conv { l1, l2, .. }
            | LayerSpec::TransposedConv { l1, l2, .. }
            | LayerSpec::Dense { l1, l2, .. } => (*l1, *l2),
            _ => (0.0, 0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if let LayerSpec::Conv { geom, .. } | LayerSpec::TransposedConv { geom, .. } = self {
            if geom.kernel == 0 || geom.stride == 0 {
                bail!(Argument, "kernel size and stride must be >= 1 in {:?}", self.name());
            }
        }
        let (l1, l2) = self.regularization();
        if l1 < 0.0 || l2 < 0.0 {
            bail!(Argument, "negative regularization in {:?}", self.name());
        }
        Ok(())
    }

    fn describe(&self) -> String {
        match self {
            LayerSpec::Conv { name, geom, in_channels, out_channels, activation, .. } => format!(
                "{name}:conv k{} s{} p{} {in_channels}->{out_channels} {}",
                geom.kernel,
                geom.stride,
                geom.padding,
                activation.as_str()
            ),
            LayerSpec::TransposedConv { name, geom, in_channels, out_channels, activation, .. } => format!(
                "{name}:tconv k{} s{} p{} op{} {in_channels}->{out_channels} {}",
                geom.kernel,
                geom.stride,
                geom.padding,
                geom.output_padding,
                activation.as_str()
            ),
            LayerSpec::Dense { name, inputs, units, activation, .. } => {
                format!("{name}:dense {inputs}->{units} {}", activation.as_str())
            }
            LayerSpec::Flatten => "flatten".to_string(),
            LayerSpec::Reshape { dims } => format!("reshape {}x{}x{}", dims[0], dims[1], dims[2]),
        }
    }
}

/// Channel widths of the five encoder convolutions and the hidden dense
/// layer; the decoder mirrors them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub conv: [usize; 5],
    pub hidden: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Widths { conv: [16, 32, 32, 64, 64], hidden: 128 }
    }
}

/// Encoder (5 conv, flatten, 2 dense) and decoder (1 dense, 6 conv).
///
/// The last encoder dense layer has `2 * latent_dim` units: the first half
/// is the latent mean, the second half the log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct CaeArchitecture {
    pub input: ImageShape,
    pub latent_dim: usize,
    pub widths: Widths,
    pub l1: f64,
    pub l2: f64,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

pub const DEFAULT_LATENT_DIM: usize = 24;
pub const DEFAULT_REGULARIZATION: f64 = 1e-5;

fn conv(name: &str, stride: usize, cin: usize, cout: usize, act: Activation, l1: f64, l2: f64) -> LayerSpec {
    LayerSpec::Conv {
        name: name.to_string(),
        geom: ConvGeometry::new(3, stride, 1),
        in_channels: cin,
        out_channels: cout,
        activation: act,
        l1,
        l2,
    }
}

fn dense(name: &str, inputs: usize, units: usize, act: Activation, l1: f64, l2: f64) -> LayerSpec {
    LayerSpec::Dense { name: name.to_string(), inputs, units, activation: act, l1, l2 }
}

impl CaeArchitecture {
    pub fn new(input: ImageShape, latent_dim: usize) -> Result<Self> {
        Self::with_options(input, latent_dim, Widths::default(), DEFAULT_REGULARIZATION, DEFAULT_REGULARIZATION)
    }

    pub fn with_options(input: ImageShape, latent_dim: usize, widths: Widths, l1: f64, l2: f64) -> Result<Self> {
        if latent_dim == 0 {
            bail!(Argument, "latent dimension must be >= 1");
        }
        if widths.conv.contains(&0) || widths.hidden == 0 {
            bail!(Argument, "layer widths must be >= 1");
        }
        if l1 < 0.0 || l2 < 0.0 {
            bail!(Argument, "regularization weights must be >= 0");
        }
        let (h0, w0, c) = (input.height, input.width, input.channels);
        let half = |n: usize| n.div_ceil(2);
        let (h1, w1) = (half(h0), half(w0));
        let (h2, w2) = (half(h1), half(w1));
        if h2 == 0 || w2 == 0 {
            bail!(Shape, "input {} too small for two stride-2 stages", input);
        }
        let [c1, c2, c3, c4, c5] = widths.conv;
        let relu = Activation::Relu;
        let flat = h2 * w2 * c5;

        let encoder = vec![
            conv("enc.conv1", 1, c, c1, relu, l1, l2),
            conv("enc.conv2", 2, c1, c2, relu, l1, l2),
            conv("enc.conv3", 1, c2, c3, relu, l1, l2),
            conv("enc.conv4", 2, c3, c4, relu, l1, l2),
            conv("enc.conv5", 1, c4, c5, relu, l1, l2),
            LayerSpec::Flatten,
            dense("enc.dense1", flat, widths.hidden, relu, l1, l2),
            dense("enc.dense2", widths.hidden, 2 * latent_dim, Activation::Identity, l1, l2),
        ];

        // Output padding makes each stride-2 transposed conv land exactly on
        // the matching encoder extent.
        let up = |from: usize, to: usize| ConvGeometry::new(3, 2, 1).with_output_padding(to + 1 - 2 * from);
        let tconv = |name: &str, geom: ConvGeometry, cin: usize, cout: usize| LayerSpec::TransposedConv {
            name: name.to_string(),
            geom,
            in_channels: cin,
            out_channels: cout,
            activation: relu,
            l1,
            l2,
        };
        if up(h2, h1).output_padding > 1 || up(h1, h0).output_padding > 1 {
            bail!(Shape, "cannot mirror input {}", input);
        }
        let decoder = vec![
            dense("dec.dense", latent_dim, flat, relu, l1, l2),
            LayerSpec::Reshape { dims: [h2, w2, c5] },
            conv("dec.conv1", 1, c5, c4, relu, l1, l2),
            tconv("dec.conv2", up(h2, h1), c4, c3),
            conv("dec.conv3", 1, c3, c2, relu, l1, l2),
            tconv("dec.conv4", up(h1, h0), c2, c1),
            conv("dec.conv5", 1, c1, c1, relu, l1, l2),
            conv("dec.conv6", 1, c1, c, Activation::Sigmoid, l1, l2),
        ];
        let arch = CaeArchitecture { input, latent_dim, widths, l1, l2, encoder, decoder };
        arch.validate()?;
        Ok(arch)
    }

    /// Checks layer counts, head sizes and that the decoder reproduces the input shape.
    pub fn validate(&self) -> Result<()> {
        for layer in self.encoder.iter().chain(&self.decoder) {
            layer.validate()?;
        }
        let enc_conv = self.encoder.iter().filter(|l| l.is_conv()).count();
        let enc_flat = self.encoder.iter().filter(|l| matches!(l, LayerSpec::Flatten)).count();
        let enc_dense = self.encoder.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
        let dec_conv = self.decoder.iter().filter(|l| l.is_conv()).count();
        let dec_dense = self.decoder.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
        if (enc_conv, enc_flat, enc_dense, dec_dense, dec_conv) != (5, 1, 2, 1, 6) {
            bail!(
                Argument,
                "layer counts enc conv/flatten/dense={}/{}/{} dec dense/conv={}/{}",
                enc_conv,
                enc_flat,
                enc_dense,
                dec_dense,
                dec_conv
            );
        }
        match self.encoder.last() {
            Some(LayerSpec::Dense { units, .. }) if *units == 2 * self.latent_dim => {}
            _ => bail!(Argument, "last encoder layer must be a dense head of {} units", 2 * self.latent_dim),
        }
        match self.decoder.first() {
            Some(LayerSpec::Dense { inputs, .. }) if *inputs == self.latent_dim => {}
            _ => bail!(Argument, "first decoder layer must take {} latent inputs", self.latent_dim),
        }
        let out = self.trace_shape(&self.decoder, None)?;
        if out != self.input.dims() {
            bail!(Shape, "decoder output {:?} differs from input {}", out, self.input);
        }
        Ok(())
    }

    /// Per-sample output shape after running `layers` on `[h, w, c]` (or on a
    /// latent vector when `start` is `None`).
    fn trace_shape(&self, layers: &[LayerSpec], start: Option<Vec<usize>>) -> Result<Vec<usize>> {
        let mut shape = start.unwrap_or_else(|| vec![self.latent_dim]);
        for layer in layers {
            shape = match layer {
                LayerSpec::Conv { geom, in_channels, out_channels, .. } => {
                    if shape.len() != 3 || shape[2] != *in_channels {
                        bail!(Shape, "{:?} got {:?}", layer.name(), shape);
                    }
                    vec![geom.conv_out(shape[0])?, geom.conv_out(shape[1])?, *out_channels]
                }
                LayerSpec::TransposedConv { geom, in_channels, out_channels, .. } => {
                    if shape.len() != 3 || shape[2] != *in_channels {
                        bail!(Shape, "{:?} got {:?}", layer.name(), shape);
                    }
                    vec![geom.transposed_out(shape[0])?, geom.transposed_out(shape[1])?, *out_channels]
                }
                LayerSpec::Dense { inputs, units, .. } => {
                    if shape.iter().product::<usize>() != *inputs || shape.len() != 1 {
                        bail!(Shape, "{:?} got {:?}", layer.name(), shape);
                    }
                    vec![*units]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Reshape { dims } => {
                    if shape.iter().product::<usize>() != dims.iter().product::<usize>() {
                        bail!(Shape, "reshape {:?} from {:?}", dims, shape);
                    }
                    dims.to_vec()
                }
            };
        }
        Ok(shape)
    }

    pub fn trainable(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder.iter().chain(&self.decoder).filter(|l| l.name().is_some())
    }

    /// Structured text description stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("input={}\n", self.input));
        s.push_str(&format!("latent_dim={}\n", self.latent_dim));
        let w = &self.widths.conv;
        s.push_str(&format!("widths={},{},{},{},{}\n", w[0], w[1], w[2], w[3], w[4]));
        s.push_str(&format!("hidden={}\n", self.widths.hidden));
        s.push_str(&format!("l1={}\n", self.l1));
        s.push_str(&format!("l2={}\n", self.l2));
        for layer in &self.encoder {
            s.push_str(&format!("encoder={}\n", layer.describe()));
        }
        for layer in &self.decoder {
            s.push_str(&format!("decoder={}\n", layer.describe()));
        }
        s
    }

    /// Rebuild from [`CaeArchitecture::descriptor`] output.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut input = None;
        let mut latent = None;
        let mut widths = Widths::default();
        let mut l1 = DEFAULT_REGULARIZATION;
        let mut l2 = DEFAULT_REGULARIZATION;
        let bad = |k: &str, v: &str| crate::Error::Format(format!("architecture field {k}={v:?}"));
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            match k {
                "input" => {
                    let dims: Vec<usize> =
                        v.split('x').map(|d| d.parse().map_err(|_| bad(k, v))).collect::<Result<_>>()?;
                    let [height, width, channels] = dims[..] else { return Err(bad(k, v)) };
                    input = Some(ImageShape { height, width, channels });
                }
                "latent_dim" => latent = Some(v.parse().map_err(|_| bad(k, v))?),
                "widths" => {
                    let ws: Vec<usize> =
                        v.split(',').map(|d| d.parse().map_err(|_| bad(k, v))).collect::<Result<_>>()?;
                    widths.conv = ws.try_into().map_err(|_| bad(k, v))?;
                }
                "hidden" => widths.hidden = v.parse().map_err(|_| bad(k, v))?,
                "l1" => l1 = v.parse().map_err(|_| bad(k, v))?,
                "l2" => l2 = v.parse().map_err(|_| bad(k, v))?,
                _ => {}
            }
        }
        let (Some(input), Some(latent)) = (input, latent) else {
            bail!(Format, "architecture descriptor lacks input or latent_dim");
        };
        let arch = Self::with_options(input, latent, widths, l1, l2)?;
        if arch.descriptor() != text {
            bail!(Format, "architecture descriptor does not match the layer plan it names");
        }
        Ok(arch)
    }
}

//! Named parameter sets and their binary container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "LJT1" | u32 scalar width in bytes | u32 layer count
//! per layer: u32 name length | name (utf-8)
//!            weights: u32 rank | u64 dims.. | raw values
//!            biases:  u32 rank | u64 dims.. | raw values
//! ```

use indexmap::IndexMap;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &[u8; 4] = b"LJT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

/// Layer name -> (weights, biases), in insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet<T> {
    layers: IndexMap<String, LayerParams<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet { layers: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, weights: Tensor<T>, biases: Tensor<T>) {
        self.layers.insert(name.into(), LayerParams { weights, biases });
    }

    pub fn get(&self, name: &str) -> Result<&LayerParams<T>> {
        match self.layers.get(name) {
            Some(layer) => Ok(layer),
            None => bail!(Shape, "no parameters for layer {:?}", name),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut LayerParams<T>> {
        self.layers.get_mut(name)
    }

    pub fn tensor(&self, name: &str, slot: Slot) -> Result<&Tensor<T>> {
        let layer = self.get(name)?;
        Ok(match slot {
            Slot::Weight => &layer.weights,
            Slot::Bias => &layer.biases,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerParams<T>)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut LayerParams<T>)> {
        self.layers.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Same layers and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = ParameterSet::new();
        for (name, layer) in self.iter() {
            out.insert(
                name,
                Tensor::zeros(layer.weights.shape().to_vec()),
                Tensor::zeros(layer.biases.shape().to_vec()),
            );
        }
        out
    }

    pub fn same_structure(&self, other: &ParameterSet<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self.iter().zip(other.iter()).all(|((na, a), (nb, b))| {
                na == nb && a.weights.shape() == b.weights.shape() && a.biases.shape() == b.biases.shape()
            })
    }

    pub fn total_values(&self) -> usize {
        self.iter().map(|(_, l)| l.weights.len() + l.biases.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.total_values() * T::BYTES);
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (name, layer) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for t in [&layer.weights, &layer.biases] {
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in t.data() {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != PARAMS_MAGIC {
            bail!(Format, "parameter container does not start with LJT1");
        }
        let width = r.u32()? as usize;
        if width != T::BYTES {
            bail!(Format, "container stores {}-byte scalars, expected {} ({})", width, T::BYTES, T::DTYPE);
        }
        let count = r.u32()? as usize;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| crate::error::Error::Format("layer name is not utf-8".into()))?
                .to_string();
            let weights = r.tensor::<T>()?;
            let biases = r.tensor::<T>()?;
            set.insert(name, weights, biases);
        }
        if r.pos != bytes.len() {
            bail!(Format, "{} trailing bytes after parameters", bytes.len() - r.pos);
        }
        Ok(set)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!(Truncation, "parameter container ends at byte {}", self.bytes.len());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            bail!(Format, "implausible tensor rank {}", rank);
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::new(shape, data)
    }
}

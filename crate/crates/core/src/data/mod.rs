//! Dataset model, binary readers/writers and label-noise injection.

mod cifar;
mod idx;
mod noise;
mod store;

use std::path::Path;

pub use cifar::{encode_cifar10, parse_cifar10, read_cifar10, write_cifar10, CIFAR_RECORD_BYTES};
pub use idx::{
    encode_idx_images, encode_idx_labels, parse_idx, read_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use noise::{inject_noise, Flip, NoiseLedger};
pub use store::{
    dataset_files, load_dataset_dir, save_dataset_dir, CIFAR_BATCH_FILE, IDX_IMAGES_FILE, IDX_LABELS_FILE,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Height, width and channel count of every image in a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// On-disk encoding a dataset was read from; cleaned output is written back in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    Idx,
    Cifar10,
}

/// Images normalized to [0, 1] with current and ground-truth labels.
///
/// `labels` may be noised; `true_labels` never changes after ingest except
/// through [`LabeledDataset::with_truth_from_ledger`], which restores the
/// originals recorded at injection time.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub format: SourceFormat,
    pub shape: ImageShape,
    pub bit_depth: u32,
    pub num_classes: usize,
    images: Vec<Tensor<f32>>,
    labels: Vec<u8>,
    true_labels: Vec<u8>,
}

/// Read-only access to the pixels of a dataset without any labels.
#[derive(Clone, Copy, Debug)]
pub struct ImageView<'a> {
    pub images: &'a [Tensor<f32>],
    pub shape: ImageShape,
    pub bit_depth: u32,
}

impl<'a> ImageView<'a> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        format: SourceFormat,
        shape: ImageShape,
        bit_depth: u32,
        num_classes: usize,
        images: Vec<Tensor<f32>>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            bail!(Consistency, "{} images but {} labels", images.len(), labels.len());
        }
        if let Some(bad) = images.iter().position(|img| img.shape() != shape.dims().as_slice()) {
            bail!(Shape, "image {} has shape {:?}, expected {}", bad, images[bad].shape(), shape);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            bail!(Format, "label {} outside [0, {})", bad, num_classes);
        }
        if !(1..=16).contains(&bit_depth) {
            bail!(Argument, "bit depth {} unsupported", bit_depth);
        }
        Ok(LabeledDataset {
            name: name.into(),
            format,
            shape,
            bit_depth,
            num_classes,
            images,
            true_labels: labels.clone(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn true_labels(&self) -> &[u8] {
        &self.true_labels
    }

    pub fn image_view(&self) -> ImageView<'_> {
        ImageView { images: &self.images, shape: self.shape, bit_depth: self.bit_depth }
    }

    /// Largest representable raw pixel value, `2^d - 1`.
    pub fn max_value(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }

    /// Raw integer pixel values of image `i`, recovered from the normalized form.
    pub fn raw_pixels(&self, i: usize) -> Vec<u8> {
        let max = self.max_value() as f32;
        self.images[i].data().iter().map(|&v| (v * max).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub(crate) fn with_labels(&self, labels: Vec<u8>) -> Self {
        debug_assert_eq!(labels.len(), self.len());
        LabeledDataset { labels, ..self.clone() }
    }

    /// Copy with current labels replaced; images and ground truth are kept.
    pub fn relabeled(&self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            bail!(Consistency, "{} labels for {} samples", labels.len(), self.len());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.num_classes) {
            bail!(Argument, "label {} outside [0, {})", bad, self.num_classes);
        }
        Ok(self.with_labels(labels))
    }

    /// Samples at `indices` (in the given order), keeping labels and truth.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            bail!(Argument, "index {} out of range for {} samples", bad, self.len());
        }
        Ok(LabeledDataset {
            name: self.name.clone(),
            format: self.format,
            shape: self.shape,
            bit_depth: self.bit_depth,
            num_classes: self.num_classes,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
        })
    }

    /// Seeded, class-stratified subsample of `n` samples (by ground-truth
    /// label), returned in source order.
    pub fn stratified_subset(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.len() {
            bail!(Argument, "subset size {} not in 1..={}", n, self.len());
        }
        if n == self.len() {
            return Ok(self.clone());
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.true_labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let quotas = proportional_quotas(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(n);
        for (members, quota) in by_class.iter_mut().zip(quotas) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..quota]);
        }
        chosen.sort_unstable();
        self.subset(&chosen)
    }

    /// Restore ground-truth labels from an injection ledger: flipped samples
    /// get their recorded original label, everything else is assumed clean.
    pub fn with_truth_from_ledger(&self, ledger: &NoiseLedger) -> Result<Self> {
        if ledger.dataset_size != self.len() {
            bail!(Consistency, "ledger covers {} samples, dataset has {}", ledger.dataset_size, self.len());
        }
        let mut truth = self.labels.clone();
        for (&i, flip) in &ledger.flips {
            if self.labels[i] != flip.assigned {
                bail!(
                    Consistency,
                    "sample {} has label {}, ledger says {} was assigned",
                    i,
                    self.labels[i],
                    flip.assigned
                );
            }
            truth[i] = flip.original;
        }
        let mut out = self.clone();
        out.true_labels = truth;
        Ok(out)
    }

    /// Indices whose label equals `class`, ascending.
    pub fn class_indices(&self, class: u8) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect()
    }
}

/// Largest-remainder allocation of `total` slots proportionally to `sizes`;
/// every quota is within one of its exact share and never exceeds its size.
pub fn proportional_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut remainders: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| ((s * total) % n, i)).collect();
    // Largest remainder first; ties go to the lower class index.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = total - quotas.iter().sum::<usize>();
    for &(_, i) in remainders.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// Derive a dataset name from a file path (the file stem).
pub(crate) fn name_from_path(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".to_string())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotas_are_proportional() {
        assert_eq!(proportional_quotas(&[100; 10], 100), vec![10; 10]);
        let q = proportional_quotas(&[5, 3, 2], 5);
        assert_eq!(q.iter().sum::<usize>(), 5);
        assert_eq!(q, vec![3, 1, 1]);
    }

    #[test]
    fn stratified_subset_keeps_class_balance() {
        let ds = fixtures::toy(1000, 10);
        let sub = ds.stratified_subset(100, 3).unwrap();
        assert_eq!(sub.len(), 100);
        for c in 0..10u8 {
            assert_eq!(sub.true_labels().iter().filter(|&&l| l == c).count(), 10);
        }
        assert_eq!(sub, ds.stratified_subset(100, 3).unwrap());
    }

    #[test]
    fn rejects_inconsistent_lengths() {
        let shape = ImageShape { height: 1, width: 1, channels: 1 };
        let r = LabeledDataset::new("x", SourceFormat::Idx, shape, 8, 10, vec![], vec![1]);
        assert!(matches!(r, Err(crate::Error::Consistency(_))));
    }
}

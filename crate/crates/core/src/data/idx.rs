//! IDX (MNIST-family) reader and writer. Big-endian headers, unsigned byte payloads.

use std::path::Path;

use crate::data::{name_from_path, ImageShape, LabeledDataset, SourceFormat};
use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of classes assumed for IDX label files (digits / garment types).
const IDX_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().unwrap())),
        None => bail!(Truncation, "{} header ends at byte {}", what, bytes.len()),
    }
}

pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let mut name = name_from_path(images_path);
    if let Some(parent) = images_path.parent().and_then(|p| p.file_name()) {
        name = format!("{}/{}", parent.to_string_lossy(), name);
    }
    parse_idx(&images, &labels, &name)
}

/// Parse in-memory IDX image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8], name: &str) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        bail!(Format, "images magic {:#010x}, expected {:#010x}", magic, IDX_IMAGES_MAGIC);
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;

    let lmagic = be_u32(labels, 0, "labels")?;
    if lmagic != IDX_LABELS_MAGIC {
        bail!(Format, "labels magic {:#010x}, expected {:#010x}", lmagic, IDX_LABELS_MAGIC);
    }
    let lcount = be_u32(labels, 4, "labels")? as usize;
    if lcount != count {
        bail!(Consistency, "{} images but {} labels", count, lcount);
    }

    let pixels = rows * cols;
    let payload = &images[16..];
    if payload.len() < count * pixels {
        bail!(Truncation, "images payload has {} bytes, header promises {}", payload.len(), count * pixels);
    }
    let lpayload = &labels[8..];
    if lpayload.len() < count {
        bail!(Truncation, "labels payload has {} bytes, header promises {}", lpayload.len(), count);
    }

    let shape = ImageShape { height: rows, width: cols, channels: 1 };
    let images = payload[..count * pixels]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|raw| {
            Tensor::new(shape.dims(), raw.iter().map(|&b| b as f32 / 255.0).collect())
                .expect("chunk length equals pixel count")
        })
        .collect();
    let label_vec = lpayload[..count].to_vec();
    let classes = label_vec.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(IDX_CLASSES);
    LabeledDataset::new(name, SourceFormat::Idx, shape, 8, classes, images, label_vec)
}

pub fn encode_idx_images(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    if dataset.shape.channels != 1 {
        bail!(Format, "IDX image files hold single-channel images, got {}", dataset.shape);
    }
    let mut out = Vec::with_capacity(16 + dataset.len() * dataset.shape.pixels());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    out.extend_from_slice(&(dataset.shape.height as u32).to_be_bytes());
    out.extend_from_slice(&(dataset.shape.width as u32).to_be_bytes());
    for i in 0..dataset.len() {
        out.extend_from_slice(&dataset.raw_pixels(i));
    }
    Ok(out)
}

/// Current (possibly noised) labels as an IDX label file.
pub fn encode_idx_labels(dataset: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + dataset.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    out.extend_from_slice(dataset.labels());
    out
}

pub fn write_idx(dataset: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let images = encode_idx_images(dataset)?;
    std::fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, encode_idx_labels(dataset)).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

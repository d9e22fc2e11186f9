//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! channel-planar pixel bytes (1024 R, 1024 G, 1024 B, each row-major 32x32).

use std::path::Path;

use crate::data::{name_from_path, ImageShape, LabeledDataset, SourceFormat};
use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const CIFAR_CLASSES: usize = 10;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

pub fn read_cifar10(batch_paths: &[impl AsRef<Path>]) -> Result<LabeledDataset> {
    if batch_paths.is_empty() {
        bail!(Argument, "no CIFAR-10 batch files given");
    }
    let mut bytes = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let chunk = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if chunk.len() % CIFAR_RECORD_BYTES != 0 || chunk.is_empty() {
            bail!(
                Format,
                "{}: length {} is not a positive multiple of {}",
                path.display(),
                chunk.len(),
                CIFAR_RECORD_BYTES
            );
        }
        bytes.extend_from_slice(&chunk);
    }
    let name = if batch_paths.len() == 1 { name_from_path(batch_paths[0].as_ref()) } else { "cifar-10".to_string() };
    parse_cifar10(&bytes, &name)
}

pub fn parse_cifar10(bytes: &[u8], name: &str) -> Result<LabeledDataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        bail!(Format, "CIFAR-10 data length {} is not a positive multiple of {}", bytes.len(), CIFAR_RECORD_BYTES);
    }
    let shape = ImageShape { height: SIDE, width: SIDE, channels: 3 };
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= CIFAR_CLASSES {
            bail!(Format, "record {} has label byte {}", i, label);
        }
        let planes = &record[1..];
        let mut hwc = Vec::with_capacity(3 * PLANE);
        for p in 0..PLANE {
            for c in 0..3 {
                hwc.push(planes[c * PLANE + p] as f32 / 255.0);
            }
        }
        images.push(Tensor::new(shape.dims(), hwc)?);
        labels.push(label);
    }
    LabeledDataset::new(name, SourceFormat::Cifar10, shape, 8, CIFAR_CLASSES, images, labels)
}

pub fn encode_cifar10(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    if dataset.shape.dims() != [SIDE, SIDE, 3] {
        bail!(Format, "CIFAR-10 records hold 32x32x3 images, got {}", dataset.shape);
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for i in 0..dataset.len() {
        out.push(dataset.labels()[i]);
        let hwc = dataset.raw_pixels(i);
        for c in 0..3 {
            out.extend((0..PLANE).map(|p| hwc[p * 3 + c]));
        }
    }
    Ok(out)
}

pub fn write_cifar10(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let bytes = encode_cifar10(dataset)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_record() {
        let mut rec = vec![255u8; CIFAR_RECORD_BYTES];
        rec[0] = 3;
        let ds = parse_cifar10(&rec, "fixture").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels(), &[3]);
        assert_eq!(ds.shape.dims(), vec![32, 32, 3]);
        assert!(ds.images()[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_record_is_format_error() {
        assert!(matches!(parse_cifar10(&[0u8; 3072], "x"), Err(Error::Format(_))));
    }

    #[test]
    fn bad_label_is_format_error() {
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
        rec[0] = 10;
        assert!(matches!(parse_cifar10(&rec, "x"), Err(Error::Format(_))));
    }

    #[test]
    fn planes_are_deinterleaved() {
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
        rec[1 + 5] = 10; // R at pixel 5
        rec[1 + PLANE + 5] = 20; // G
        rec[1 + 2 * PLANE + 5] = 30; // B
        let ds = parse_cifar10(&rec, "x").unwrap();
        let px = &ds.images()[0].data()[15..18];
        assert_eq!(px, &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
        assert_eq!(encode_cifar10(&ds).unwrap(), rec);
    }
}

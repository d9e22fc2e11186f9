//! Dataset directories: an IDX image/label pair or a set of CIFAR-10 batches.

use std::path::{Path, PathBuf};

use crate::data::{read_cifar10, read_idx, write_cifar10, write_idx, LabeledDataset, SourceFormat};
use crate::error::{bail, Error, Result};

pub const IDX_IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const IDX_LABELS_FILE: &str = "train-labels-idx1-ubyte";
pub const CIFAR_BATCH_FILE: &str = "data_batch.bin";

/// Files a dataset directory would be read from, by format.
pub fn dataset_files(dir: &Path) -> Result<(SourceFormat, Vec<PathBuf>)> {
    let images = dir.join(IDX_IMAGES_FILE);
    if images.is_file() {
        return Ok((SourceFormat::Idx, vec![images, dir.join(IDX_LABELS_FILE)]));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut batches = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("data_batch") && name.ends_with(".bin") {
            batches.push(path);
        }
    }
    if batches.is_empty() {
        bail!(Argument, "{}: no {IDX_IMAGES_FILE} or data_batch*.bin files", dir.display());
    }
    batches.sort();
    Ok((SourceFormat::Cifar10, batches))
}

/// Read every sample in `dir`, in file order.
pub fn load_dataset_dir(dir: &Path) -> Result<LabeledDataset> {
    let (format, files) = dataset_files(dir)?;
    let mut ds = match format {
        SourceFormat::Idx => read_idx(&files[0], &files[1])?,
        SourceFormat::Cifar10 => read_cifar10(&files)?,
    };
    if let Some(name) = dir.file_name() {
        ds.name = name.to_string_lossy().into_owned();
    }
    Ok(ds)
}

/// Write `dataset` into `dir` in its source format; returns the files written.
pub fn save_dataset_dir(dataset: &LabeledDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match dataset.format {
        SourceFormat::Idx => {
            let (img, lab) = (dir.join(IDX_IMAGES_FILE), dir.join(IDX_LABELS_FILE));
            write_idx(dataset, &img, &lab)?;
            Ok(vec![img, lab])
        }
        SourceFormat::Cifar10 => {
            let path = dir.join(CIFAR_BATCH_FILE);
            write_cifar10(dataset, &path)?;
            Ok(vec![path])
        }
    }
}

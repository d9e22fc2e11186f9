use std::path::{Path, PathBuf};

use latentclean::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::Settings;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Config echo, its hash, and hashes of every input and output file, written
/// to `<run>/<command>.manifest`.
pub fn write_manifest(
    run: &Path,
    command: &str,
    settings: &Settings,
    inputs: &[(String, PathBuf)],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let mut s = format!("command={command}\n");
    for (k, v) in settings.echo() {
        s.push_str(&format!("config.{k}={v}\n"));
    }
    s.push_str(&format!("config_sha256={}\n", settings.hash()));
    for (label, p) in inputs {
        s.push_str(&format!("input.{label}={}\n", sha256_file(p)?));
    }
    let mut outs: Vec<&PathBuf> = outputs.iter().collect();
    outs.sort();
    for p in outs {
        s.push_str(&format!("output.{}={}\n", relative(p, run), sha256_file(p)?));
    }
    let path = run.join(format!("{command}.manifest"));
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

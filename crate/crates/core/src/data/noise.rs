//! Symmetric label-noise injection and its ledger.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{bail, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flip {
    pub original: u8,
    pub assigned: u8,
}

/// Which samples were relabeled by [`inject_noise`], and from/to what.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLedger {
    pub noise_rate: f64,
    pub rng_seed: u64,
    pub dataset_size: usize,
    pub flips: BTreeMap<usize, Flip>,
}

impl NoiseLedger {
    pub fn is_flipped(&self, index: usize) -> bool {
        self.flips.contains_key(&index)
    }

    pub fn flipped_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.flips.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    /// Number of flips for `n` samples at `rate`: round half up.
    pub fn flip_count(rate: f64, n: usize) -> usize {
        (rate * n as f64 + 0.5).floor() as usize
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# noise ledger");
        let _ = writeln!(s, "# seed={}", self.rng_seed);
        let _ = writeln!(s, "# rate={}", self.noise_rate);
        let _ = writeln!(s, "# samples={}", self.dataset_size);
        let _ = writeln!(s, "index,original,assigned");
        for (i, f) in &self.flips {
            let _ = writeln!(s, "{},{},{}", i, f.original, f.assigned);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut rate = None;
        let mut samples = None;
        let mut flips = BTreeMap::new();
        let mut seen_columns = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    let v = v.trim();
                    let bad = || Error::Format(format!("ledger line {}: bad value {:?}", lineno + 1, v));
                    match k.trim() {
                        "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                        "rate" => rate = Some(v.parse::<f64>().map_err(|_| bad())?),
                        "samples" => samples = Some(v.parse::<usize>().map_err(|_| bad())?),
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_columns {
                if line != "index,original,assigned" {
                    bail!(Format, "ledger line {}: expected column header", lineno + 1);
                }
                seen_columns = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parsed: Option<(usize, u8, u8)> = match fields.as_slice() {
                [i, o, a] => (|| Some((i.parse().ok()?, o.parse().ok()?, a.parse().ok()?)))(),
                _ => None,
            };
            let Some((i, original, assigned)) = parsed else {
                bail!(Format, "ledger line {}: malformed record {:?}", lineno + 1, line);
            };
            if original == assigned {
                bail!(Consistency, "ledger line {}: flip keeps label {}", lineno + 1, original);
            }
            flips.insert(i, Flip { original, assigned });
        }
        let (Some(rng_seed), Some(noise_rate), Some(dataset_size)) = (seed, rate, samples) else {
            bail!(Format, "ledger header must carry seed, rate and samples");
        };
        if let Some((&i, _)) = flips.iter().next_back() {
            if i >= dataset_size {
                bail!(Consistency, "ledger index {} beyond {} samples", i, dataset_size);
            }
        }
        Ok(NoiseLedger { noise_rate, rng_seed, dataset_size, flips })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Flip `round(rate * N)` uniformly chosen labels to a uniformly chosen
/// different class. Images and ground truth are left untouched.
pub fn inject_noise(dataset: &LabeledDataset, noise_rate: f64, rng_seed: u64) -> Result<(LabeledDataset, NoiseLedger)> {
    if !(0.0..=1.0).contains(&noise_rate) {
        bail!(Argument, "noise rate {} outside [0, 1]", noise_rate);
    }
    let n = dataset.len();
    let count = NoiseLedger::flip_count(noise_rate, n);
    if count > 0 && dataset.num_classes < 2 {
        bail!(Argument, "label noise needs at least 2 classes, dataset has {}", dataset.num_classes);
    }
    let k = dataset.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let mut labels = dataset.labels().to_vec();
    let mut flips = BTreeMap::new();
    for i in chosen {
        let original = labels[i];
        let mut assigned = rng.random_range(0..(k - 1)) as u8;
        if assigned >= original {
            assigned += 1;
        }
        labels[i] = assigned;
        flips.insert(i, Flip { original, assigned });
    }
    let ledger = NoiseLedger { noise_rate, rng_seed, dataset_size: n, flips };
    Ok((dataset.with_labels(labels), ledger))
}

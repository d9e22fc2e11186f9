//! Per-class outlier removal in the latent space.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cae::LatentPoint;
use crate::cluster::{
    dbscan, find_elbow, kdist_curve, ClusterAssignment, DbscanParams, ElbowRule, EpsilonEstimate, Role,
    DEFAULT_MIN_POINTS, DEFAULT_SMOOTHING,
};
use crate::data::{save_dataset_dir, LabeledDataset, NoiseLedger};
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

pub const REMOVAL_MANIFEST_FILE: &str = "removed.csv";

/// How the DBSCAN radius is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum EpsilonMode {
    /// k-distance elbow of each class separately.
    #[default]
    PerClass,
    /// One elbow from the pooled k-distance curve of all samples.
    Global,
    Fixed(f64),
}

impl fmt::Display for EpsilonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonMode::PerClass => f.write_str("auto-per-class"),
            EpsilonMode::Global => f.write_str("auto-global"),
            EpsilonMode::Fixed(e) => write!(f, "{e}"),
        }
    }
}

impl std::str::FromStr for EpsilonMode {
    type Err = Error;

    /// `auto-per-class`, `auto-global`, or a positive number.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto-per-class" | "auto" => Ok(EpsilonMode::PerClass),
            "auto-global" => Ok(EpsilonMode::Global),
            other => match other.parse::<f64>() {
                Ok(e) if e > 0.0 && e.is_finite() => Ok(EpsilonMode::Fixed(e)),
                _ => Err(Error::Argument(format!(
                    "epsilon mode must be auto-per-class, auto-global or a positive number, got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectConfig {
    pub min_points: usize,
    pub mode: EpsilonMode,
    pub elbow: ElbowRule,
    /// Moving-average width for the second-difference elbow.
    pub window: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            min_points: DEFAULT_MIN_POINTS,
            mode: EpsilonMode::PerClass,
            elbow: ElbowRule::Chord,
            window: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDetection {
    pub class: u8,
    /// Dataset indices carrying this label, ascending.
    pub members: Vec<usize>,
    /// Radius used; `None` when the class was skipped.
    pub epsilon: Option<f64>,
    pub estimate: Option<EpsilonEstimate>,
    /// Sorted k-distance curve of the class (empty when skipped).
    pub kdist: Vec<f64>,
    pub assignment: Option<ClusterAssignment>,
    /// Dataset indices classified as noise.
    pub outliers: Vec<usize>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub config: DetectConfig,
    pub global_estimate: Option<EpsilonEstimate>,
    pub classes: Vec<ClassDetection>,
    /// Union of per-class outliers, ascending.
    pub removed: Vec<usize>,
    /// Complement of `removed`, ascending.
    pub retained: Vec<usize>,
}

impl DetectionResult {
    pub fn retained_dataset(&self, dataset: &LabeledDataset) -> Result<LabeledDataset> {
        dataset.subset(&self.retained)
    }

    /// Rebuild the removal bookkeeping from a manifest written by
    /// [`DetectionResult::removal_csv`]. Cluster assignments and curves are
    /// not recoverable and are left empty.
    pub fn from_removal_csv(dataset: &LabeledDataset, text: &str, config: DetectConfig) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.starts_with("sample_index,class,epsilon_used") => {}
            _ => bail!(Format, "removal manifest lacks its header"),
        }
        let mut removed = Vec::new();
        let mut eps: Vec<Option<f64>> = vec![None; dataset.num_classes];
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let parsed = (cols.len() >= 3)
                .then(|| {
                    Some((cols[0].parse::<usize>().ok()?, cols[1].parse::<u8>().ok()?, cols[2].parse::<f64>().ok()?))
                })
                .flatten();
            let Some((i, class, e)) = parsed else {
                bail!(Format, "removal manifest line {}: {line:?}", n + 2);
            };
            if i >= dataset.len() || dataset.labels()[i] != class {
                bail!(Consistency, "removal manifest line {}: sample {i} with class {class} not in dataset", n + 2);
            }
            eps[class as usize] = Some(e);
            removed.push(i);
        }
        removed.sort_unstable();
        if removed.windows(2).any(|w| w[0] == w[1]) {
            bail!(Consistency, "removal manifest lists a sample twice");
        }
        let classes = (0..dataset.num_classes)
            .map(|c| {
                let members = dataset.class_indices(c as u8);
                let outliers = removed.iter().copied().filter(|&i| dataset.labels()[i] as usize == c).collect();
                ClassDetection {
                    class: c as u8,
                    members,
                    epsilon: eps[c],
                    estimate: None,
                    kdist: Vec::new(),
                    assignment: None,
                    outliers,
                    warning: None,
                }
            })
            .collect();
        let mut gone = vec![false; dataset.len()];
        for &i in &removed {
            gone[i] = true;
        }
        let retained = (0..dataset.len()).filter(|&i| !gone[i]).collect();
        Ok(DetectionResult { config, global_estimate: None, classes, removed, retained })
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().filter_map(|c| c.warning.as_deref())
    }

    /// Radius applied to a removed sample's class.
    fn epsilon_of(&self, class: u8) -> Option<f64> {
        self.classes.iter().find(|c| c.class == class).and_then(|c| c.epsilon)
    }

    /// CSV `sample_index,class,epsilon_used[,was_flipped]`.
    pub fn removal_csv(&self, dataset: &LabeledDataset, ledger: Option<&NoiseLedger>) -> String {
        let mut s = String::from("sample_index,class,epsilon_used");
        s.push_str(if ledger.is_some() { ",was_flipped\n" } else { "\n" });
        for &i in &self.removed {
            let class = dataset.labels()[i];
            let eps = self.epsilon_of(class).unwrap_or(f64::NAN);
            s.push_str(&format!("{i},{class},{eps:.6}"));
            if let Some(l) = ledger {
                s.push_str(&format!(",{}", l.is_flipped(i) as u8));
            }
            s.push('\n');
        }
        s
    }
}

/// Cluster each class's latent means and drop the density outliers. Only the
/// current labels are consulted.
pub fn detect_and_remove<T: Scalar>(
    dataset: &LabeledDataset,
    latents: &[LatentPoint<T>],
    config: &DetectConfig,
) -> Result<DetectionResult> {
    if latents.len() != dataset.len() {
        bail!(Consistency, "{} latent points for {} samples", latents.len(), dataset.len());
    }
    for (i, (p, &l)) in latents.iter().zip(dataset.labels()).enumerate() {
        if p.sample_index != i || p.label != l {
            bail!(Consistency, "latent point {i} refers to sample {} with label {}", p.sample_index, p.label);
        }
    }
    if config.min_points == 0 {
        bail!(Argument, "min_points must be >= 1");
    }
    let global_estimate = match config.mode {
        EpsilonMode::Global => {
            let all: Vec<&[T]> = latents.iter().map(|p| p.mu.as_slice()).collect();
            let curve = kdist_curve(&all, config.min_points)?;
            Some(find_elbow(&curve, config.elbow, config.window)?)
        }
        _ => None,
    };
    let classes: Vec<ClassDetection> = (0..dataset.num_classes)
        .into_par_iter()
        .map(|c| detect_class(dataset, latents, c as u8, config, global_estimate))
        .collect::<Result<_>>()?;
    let mut removed: Vec<usize> = classes.iter().flat_map(|c| c.outliers.iter().copied()).collect();
    removed.sort_unstable();
    let mut gone = vec![false; dataset.len()];
    for &i in &removed {
        gone[i] = true;
    }
    let retained = (0..dataset.len()).filter(|&i| !gone[i]).collect();
    Ok(DetectionResult { config: *config, global_estimate, classes, removed, retained })
}

fn detect_class<T: Scalar>(
    dataset: &LabeledDataset,
    latents: &[LatentPoint<T>],
    class: u8,
    config: &DetectConfig,
    global: Option<EpsilonEstimate>,
) -> Result<ClassDetection> {
    let members = dataset.class_indices(class);
    let mut out = ClassDetection {
        class,
        members,
        epsilon: None,
        estimate: None,
        kdist: Vec::new(),
        assignment: None,
        outliers: Vec::new(),
        warning: None,
    };
    let n = out.members.len();
    if n < config.min_points + 1 {
        out.warning = Some(format!("class {class}: {n} samples, too few to cluster; skipped"));
        return Ok(out);
    }
    let points: Vec<&[T]> = out.members.iter().map(|&i| latents[i].mu.as_slice()).collect();
    out.kdist = kdist_curve(&points, config.min_points)?;
    let epsilon = match (config.mode, global) {
        (EpsilonMode::Fixed(e), _) => e,
        (EpsilonMode::Global, Some(g)) => g.epsilon,
        _ => {
            if config.elbow == ElbowRule::SecondDifference && n <= config.window {
                out.warning = Some(format!("class {class}: {n} samples, too few for the elbow search; skipped"));
                return Ok(out);
            }
            let est = find_elbow(&out.kdist, config.elbow, config.window)?;
            if est.flat {
                out.warning = Some(format!("class {class}: flat k-distance curve"));
            }
            out.estimate = Some(est);
            est.epsilon
        }
    };
    if !(epsilon > 0.0) {
        out.warning = Some(format!("class {class}: zero radius; skipped"));
        return Ok(out);
    }
    let assignment = dbscan(&points, &DbscanParams::new(epsilon, config.min_points)?)?;
    out.outliers =
        assignment.roles.iter().zip(&out.members).filter(|(&r, _)| r == Role::Noise).map(|(_, &i)| i).collect();
    out.epsilon = Some(epsilon);
    out.assignment = Some(assignment);
    Ok(out)
}

/// Write the retained samples in the source format, plus the removal manifest.
pub fn write_cleaned(
    dataset: &LabeledDataset,
    result: &DetectionResult,
    dir: &Path,
    ledger: Option<&NoiseLedger>,
) -> Result<Vec<PathBuf>> {
    let mut files = save_dataset_dir(&result.retained_dataset(dataset)?, dir)?;
    let manifest = dir.join(REMOVAL_MANIFEST_FILE);
    std::fs::write(&manifest, result.removal_csv(dataset, ledger)).map_err(|e| Error::io(&manifest, e))?;
    files.push(manifest);
    Ok(files)
}

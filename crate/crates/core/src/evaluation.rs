//! Label-agreement scores, detection quality against the injection ledger,
//! and the reconstruction-quality sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cae::{project, reconstruction_psnr, CaeArchitecture, EpochStats, Trainer, TrainingConfig};
use crate::data::{LabeledDataset, NoiseLedger};
use crate::error::{bail, Error, Result};
use crate::pipeline::{detect_and_remove, DetectConfig, DetectionResult};
use crate::scalar::Scalar;

/// Sample index -> label.
pub type LabelMap = BTreeMap<usize, u8>;

pub fn label_map(indices: &[usize], labels: &[u8]) -> LabelMap {
    indices.iter().map(|&i| (i, labels[i])).collect()
}

fn check_subset(source: &LabelMap, candidate: &LabelMap) -> Result<()> {
    if let Some(i) = candidate.keys().find(|i| !source.contains_key(i)) {
        bail!(Argument, "candidate sample {i} is not in the source");
    }
    Ok(())
}

/// Samples are the set elements: the intersection counts candidate samples
/// whose label agrees with the source, the union is every indexed sample.
pub fn jaccard(source: &LabelMap, candidate: &LabelMap) -> Result<f64> {
    check_subset(source, candidate)?;
    if source.is_empty() {
        bail!(Degenerate, "jaccard of an empty source");
    }
    let agree = candidate.iter().filter(|(i, l)| source[i] == **l).count();
    Ok(agree as f64 / source.len() as f64)
}

/// Jaccard over `(index, label)` pairs.
pub fn jaccard_strict(source: &LabelMap, candidate: &LabelMap) -> Result<f64> {
    check_subset(source, candidate)?;
    let agree = candidate.iter().filter(|(i, l)| source[i] == **l).count();
    let union = source.len() + candidate.len() - agree;
    if union == 0 {
        bail!(Degenerate, "jaccard of two empty sets");
    }
    Ok(agree as f64 / union as f64)
}

/// `j_denoised - j_noised`; negative means the labels got worse.
pub fn performance(j_denoised: f64, j_noised: f64) -> f64 {
    j_denoised - j_noised
}

/// Fraction of retained samples whose current label is the true one.
pub fn retained_accuracy(dataset: &LabeledDataset, result: &DetectionResult) -> Result<f64> {
    if result.retained.is_empty() {
        bail!(Degenerate, "every sample was removed");
    }
    let correct = result.retained.iter().filter(|&&i| dataset.labels()[i] == dataset.true_labels()[i]).count();
    Ok(correct as f64 / result.retained.len() as f64)
}

/// `(precision, recall)` of the removed set against the flipped set; each is
/// `None` when its denominator is empty.
pub fn removal_precision_recall(result: &DetectionResult, ledger: &NoiseLedger) -> (Option<f64>, Option<f64>) {
    let hits = result.removed.iter().filter(|&&i| ledger.is_flipped(i)).count() as f64;
    let p = (!result.removed.is_empty()).then(|| hits / result.removed.len() as f64);
    let r = (!ledger.is_empty()).then(|| hits / ledger.len() as f64);
    (p, r)
}

/// Scores of one detection run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub dataset: String,
    pub samples: usize,
    pub retained: usize,
    pub jaccard_noised: f64,
    pub jaccard_denoised: f64,
    pub jaccard_strict_noised: f64,
    pub jaccard_strict_denoised: f64,
    pub performance: f64,
    pub retained_accuracy: f64,
    pub removal_precision: Option<f64>,
    pub removal_recall: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub removed_per_class: Vec<usize>,
    /// Free-form configuration echo.
    pub config: Vec<(String, String)>,
}

impl EvaluationReport {
    /// Score `result` on `dataset`, whose `true_labels` must hold the truth.
    /// Each label set is compared with the true labels of the samples it covers.
    pub fn build(
        dataset: &LabeledDataset,
        result: &DetectionResult,
        ledger: Option<&NoiseLedger>,
        mean_psnr: Option<f64>,
        config: Vec<(String, String)>,
    ) -> Result<Self> {
        let all: Vec<usize> = (0..dataset.len()).collect();
        let truth_all = label_map(&all, dataset.true_labels());
        let noised = label_map(&all, dataset.labels());
        let truth_kept = label_map(&result.retained, dataset.true_labels());
        let denoised = label_map(&result.retained, dataset.labels());
        let jn = jaccard(&truth_all, &noised)?;
        let jd = jaccard(&truth_kept, &denoised)?;
        let (removal_precision, removal_recall) = match ledger {
            Some(l) => removal_precision_recall(result, l),
            None => (None, None),
        };
        Ok(EvaluationReport {
            dataset: dataset.name.clone(),
            samples: dataset.len(),
            retained: result.retained.len(),
            jaccard_noised: jn,
            jaccard_denoised: jd,
            jaccard_strict_noised: jaccard_strict(&truth_all, &noised)?,
            jaccard_strict_denoised: jaccard_strict(&truth_kept, &denoised)?,
            performance: performance(jd, jn),
            retained_accuracy: retained_accuracy(dataset, result)?,
            removal_precision,
            removal_recall,
            mean_psnr,
            removed_per_class: result.classes.iter().map(|c| c.outliers.len()).collect(),
            config,
        })
    }

    /// `key=value` lines; floats use their shortest exact representation.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "dataset={}", self.dataset);
        let _ = writeln!(s, "samples={}", self.samples);
        let _ = writeln!(s, "retained={}", self.retained);
        let _ = writeln!(s, "jaccard_noised={}", self.jaccard_noised);
        let _ = writeln!(s, "jaccard_denoised={}", self.jaccard_denoised);
        let _ = writeln!(s, "jaccard_strict_noised={}", self.jaccard_strict_noised);
        let _ = writeln!(s, "jaccard_strict_denoised={}", self.jaccard_strict_denoised);
        let _ = writeln!(s, "performance={}", self.performance);
        let _ = writeln!(s, "retained_accuracy={}", self.retained_accuracy);
        let _ = writeln!(s, "removal_precision={}", opt(self.removal_precision));
        let _ = writeln!(s, "removal_recall={}", opt(self.removal_recall));
        let _ = writeln!(s, "mean_psnr={}", opt(self.mean_psnr));
        let per: Vec<String> = self.removed_per_class.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "removed_per_class={}", per.join(","));
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut config = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let Some((k, v)) = line.split_once('=') else {
                bail!(Format, "report line {}: expected key=value", n + 1);
            };
            match k.strip_prefix("config.") {
                Some(ck) => config.push((ck.to_string(), v.to_string())),
                None => {
                    fields.insert(k, v);
                }
            }
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Format(format!("report lacks {k}")));
        let num =
            |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad number for {k}"))) };
        let count =
            |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad count for {k}"))) };
        let opt = |k: &str| -> Result<Option<f64>> {
            match get(k)? {
                "none" => Ok(None),
                v => v.parse().map(Some).map_err(|_| Error::Format(format!("bad number for {k}"))),
            }
        };
        let per = get("removed_per_class")?;
        let removed_per_class = if per.is_empty() {
            Vec::new()
        } else {
            per.split(',')
                .map(|v| v.parse().map_err(|_| Error::Format("bad removed_per_class".into())))
                .collect::<Result<_>>()?
        };
        Ok(EvaluationReport {
            dataset: get("dataset")?.to_string(),
            samples: count("samples")?,
            retained: count("retained")?,
            jaccard_noised: num("jaccard_noised")?,
            jaccard_denoised: num("jaccard_denoised")?,
            jaccard_strict_noised: num("jaccard_strict_noised")?,
            jaccard_strict_denoised: num("jaccard_strict_denoised")?,
            performance: num("performance")?,
            retained_accuracy: num("retained_accuracy")?,
            removal_precision: opt("removal_precision")?,
            removal_recall: opt("removal_recall")?,
            mean_psnr: opt("mean_psnr")?,
            removed_per_class,
            config,
        })
    }
}

/// Spearman rank correlation, averaging ranks over ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        bail!(Argument, "spearman needs two equal-length series of 2+ values");
    }
    let (rx, ry) = (ranks(x)?, ranks(y)?);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        bail!(Degenerate, "spearman is undefined for a constant series");
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        bail!(Numeric, "NaN in ranked series");
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRecord {
    pub epochs: usize,
    pub mean_psnr: f64,
    pub retained_accuracy: f64,
    pub performance: f64,
    pub removed: usize,
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from("epochs,mean_psnr,retained_accuracy,performance,removed\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{:.4},{:.6},{:.6},{}",
            r.epochs, r.mean_psnr, r.retained_accuracy, r.performance, r.removed
        );
    }
    s
}

/// Train one model through ascending epoch `budgets`, running detection and
/// scoring at each. `dataset.true_labels` must hold the truth.
pub fn psnr_accuracy_sweep<T: Scalar>(
    dataset: &LabeledDataset,
    arch: &CaeArchitecture,
    cfg: &TrainingConfig,
    budgets: &[usize],
    detect: &DetectConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<SweepRecord>> {
    if budgets.is_empty() || budgets.windows(2).any(|w| w[1] <= w[0]) || budgets[0] == 0 {
        bail!(Argument, "epoch budgets must be positive and strictly ascending");
    }
    let mut trainer = Trainer::<T>::new(arch.clone(), cfg.clone())?;
    let mut records = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        trainer.train_until(dataset.image_view(), budget, progress).map_err(|e| match e {
            Error::TrainingDiverged { epoch, detail } => {
                Error::TrainingDiverged { epoch, detail: format!("{detail} (budget {budget})") }
            }
            other => other,
        })?;
        let psnr = reconstruction_psnr(dataset.image_view(), arch, &trainer.params)?;
        let latents = project(dataset.image_view(), dataset.labels(), arch, &trainer.params)?;
        let result = detect_and_remove(dataset, &latents, detect)?;
        let report = EvaluationReport::build(dataset, &result, None, Some(psnr.mean), Vec::new())?;
        records.push(SweepRecord {
            epochs: budget,
            mean_psnr: psnr.mean,
            retained_accuracy: report.retained_accuracy,
            performance: report.performance,
            removed: result.removed.len(),
        });
    }
    Ok(records)
}

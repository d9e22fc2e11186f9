//! Relabeling baselines: nearest representatives in pixel space and in the
//! representatives' eigenspace.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{proportional_quotas, LabeledDataset};
use crate::error::{bail, Result};
use crate::linalg::{eigen_top_n, pca_project, Matrix};

pub const DEFAULT_FRACTION: f64 = 0.1;
pub const DEFAULT_K: usize = 11;
pub const DEFAULT_COMPONENTS: usize = 24;

/// Labelled reference samples drawn from the dataset being relabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativeSet {
    /// Dataset indices, ascending.
    pub indices: Vec<usize>,
    /// Flattened pixels in [0, 1].
    pub vectors: Vec<Vec<f32>>,
    /// Current (possibly noised) labels.
    pub labels: Vec<u8>,
    pub seed: u64,
}

impl RepresentativeSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Seeded sample of `round(fraction * n)` items, stratified by current label.
pub fn select_representatives(dataset: &LabeledDataset, fraction: f64, seed: u64) -> Result<RepresentativeSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Argument, "representative fraction {fraction} not in (0, 1]");
    }
    let total = (fraction * dataset.len() as f64).round() as usize;
    if total == 0 {
        bail!(Argument, "fraction {fraction} of {} samples selects nothing", dataset.len());
    }
    let mut by_class: Vec<Vec<usize>> = (0..dataset.num_classes).map(|c| dataset.class_indices(c as u8)).collect();
    let quotas = proportional_quotas(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(total);
    for (members, quota) in by_class.iter_mut().zip(quotas) {
        members.shuffle(&mut rng);
        indices.extend_from_slice(&members[..quota]);
    }
    indices.sort_unstable();
    Ok(RepresentativeSet {
        vectors: indices.iter().map(|&i| dataset.images()[i].data().to_vec()).collect(),
        labels: indices.iter().map(|&i| dataset.labels()[i]).collect(),
        indices,
        seed,
    })
}

/// Majority label among the `k` nearest references of every query. Equal
/// distances go to the earlier reference, equal votes to the smaller class,
/// and a query never counts itself (matched by sample id).
pub fn knn_vote(
    queries: &[Vec<f64>],
    query_ids: &[usize],
    refs: &[Vec<f64>],
    ref_ids: &[usize],
    ref_labels: &[u8],
    k: usize,
    num_classes: usize,
) -> Result<Vec<u8>> {
    if k == 0 || k > refs.len() {
        bail!(Argument, "K = {k} with {} representatives", refs.len());
    }
    if queries.len() != query_ids.len() || refs.len() != ref_ids.len() || refs.len() != ref_labels.len() {
        bail!(Shape, "ids and vectors differ in length");
    }
    queries
        .par_iter()
        .zip(query_ids)
        .map(|(q, &qid)| {
            let mut d: Vec<(f64, usize)> = refs
                .iter()
                .enumerate()
                .filter(|&(j, _)| ref_ids[j] != qid)
                .map(|(j, r)| (q.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                .collect();
            // A representative querying itself has one fewer candidate.
            let k = k.min(d.len());
            if k == 0 {
                bail!(Argument, "no representatives other than sample {qid}");
            }
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            d.select_nth_unstable_by(k - 1, cmp);
            let mut votes = vec![0usize; num_classes];
            for &(_, j) in &d[..k] {
                votes[ref_labels[j] as usize] += 1;
            }
            let best = votes.iter().max().copied().unwrap_or(0);
            Ok(votes.iter().position(|&v| v == best).unwrap_or(0) as u8)
        })
        .collect()
}

fn flattened(dataset: &LabeledDataset) -> Vec<Vec<f64>> {
    dataset.images().iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect()
}

/// Replace every label with the K-nearest-representative vote in pixel space.
pub fn knn_relabel(dataset: &LabeledDataset, reps: &RepresentativeSet, k: usize) -> Result<LabeledDataset> {
    let refs: Vec<Vec<f64>> = reps.vectors.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
    let ids: Vec<usize> = (0..dataset.len()).collect();
    let labels = knn_vote(&flattened(dataset), &ids, &refs, &reps.indices, &reps.labels, k, dataset.num_classes)?;
    dataset.relabeled(labels)
}

/// As [`knn_relabel`], after projecting everything onto the top
/// `n_components` eigenvectors of the representatives' covariance.
pub fn eigen_relabel(
    dataset: &LabeledDataset,
    reps: &RepresentativeSet,
    n_components: usize,
    k: usize,
) -> Result<LabeledDataset> {
    let refs: Vec<Vec<f64>> = reps.vectors.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
    let basis = eigen_top_n(&Matrix::from_rows(&refs)?, n_components)?;
    let rep_coords = pca_project(&refs, &basis, n_components)?;
    let coords = pca_project(&flattened(dataset), &basis, n_components)?;
    let ids: Vec<usize> = (0..dataset.len()).collect();
    let labels = knn_vote(&coords, &ids, &rep_coords, &reps.indices, &reps.labels, k, dataset.num_classes)?;
    dataset.relabeled(labels)
}

/// CSV `sample_index,old_label,new_label` over every sample.
pub fn relabel_csv(before: &LabeledDataset, after: &LabeledDataset) -> Result<String> {
    if before.len() != after.len() {
        bail!(Consistency, "relabeled dataset has {} samples, original {}", after.len(), before.len());
    }
    let mut s = String::from("sample_index,old_label,new_label\n");
    for (i, (a, b)) in before.labels().iter().zip(after.labels()).enumerate() {
        s.push_str(&format!("{i},{a},{b}\n"));
    }
    Ok(s)
}

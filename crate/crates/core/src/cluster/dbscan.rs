use std::collections::VecDeque;

use crate::cluster::kdist::dist2;
use crate::error::{bail, Result};
use crate::scalar::Scalar;

pub const DEFAULT_MIN_POINTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbscanParams {
    pub epsilon: f64,
    /// Neighbourhood size, the point itself included, that makes a core point.
    pub min_points: usize,
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_points: usize) -> Result<Self> {
        let p = DbscanParams { epsilon, min_points };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            bail!(Argument, "epsilon must be positive and finite, got {}", self.epsilon);
        }
        if self.min_points == 0 {
            bail!(Argument, "min_points must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Core,
    Border,
    Noise,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Core => "core",
            Role::Border => "border",
            Role::Noise => "noise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Cluster id per point; `None` for noise.
    pub clusters: Vec<Option<usize>>,
    pub roles: Vec<Role>,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.clusters.iter().flatten().max().map_or(0, |&c| c + 1)
    }

    pub fn noise_indices(&self) -> Vec<usize> {
        self.roles.iter().enumerate().filter(|(_, &r)| r == Role::Noise).map(|(i, _)| i).collect()
    }

    /// CSV `sample_index,cluster,role`; noise is cluster -1. `sample_index`
    /// maps point positions to dataset indices.
    pub fn to_csv(&self, sample_index: &[usize]) -> Result<String> {
        if sample_index.len() != self.roles.len() {
            bail!(Shape, "{} sample indices for {} points", sample_index.len(), self.roles.len());
        }
        let mut s = String::from("sample_index,cluster,role\n");
        for ((idx, c), r) in sample_index.iter().zip(&self.clusters).zip(&self.roles) {
            let c = c.map_or(-1, |c| c as i64);
            s.push_str(&format!("{idx},{c},{}\n", r.as_str()));
        }
        Ok(s)
    }
}

/// DBSCAN with exact all-pairs neighbourhoods, scanning points in index
/// order. A border point joins the first cluster that reaches it.
pub fn dbscan<T: Scalar, P: AsRef<[T]>>(points: &[P], params: &DbscanParams) -> Result<ClusterAssignment> {
    params.validate()?;
    if points.is_empty() {
        bail!(Argument, "dbscan needs at least one point");
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        bail!(Shape, "points have differing dimensions");
    }
    let eps2 = params.epsilon * params.epsilon;
    let region = |i: usize| -> Vec<usize> {
        let p = points[i].as_ref();
        (0..points.len()).filter(|&j| dist2(p, points[j].as_ref()) <= eps2).collect()
    };

    let n = points.len();
    let mut clusters: Vec<Option<usize>> = vec![None; n];
    let mut roles = vec![Role::Noise; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = region(i);
        if seeds.len() < params.min_points {
            continue;
        }
        let id = next;
        next += 1;
        clusters[i] = Some(id);
        roles[i] = Role::Core;
        let mut queue: VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(q) = queue.pop_front() {
            if clusters[q].is_none() {
                clusters[q] = Some(id);
                roles[q] = Role::Border;
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let reach = region(q);
            if reach.len() >= params.min_points {
                roles[q] = Role::Core;
                queue.extend(reach.into_iter().filter(|&j| !visited[j] || clusters[j].is_none()));
            }
        }
    }
    Ok(ClusterAssignment { clusters, roles })
}

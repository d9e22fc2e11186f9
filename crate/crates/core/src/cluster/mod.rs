//! Density clustering over latent points and k-distance selection of its
//! radius.

mod dbscan;
mod kdist;

pub use dbscan::{dbscan, ClusterAssignment, DbscanParams, Role, DEFAULT_MIN_POINTS};
pub use kdist::{
    chord_elbow, estimate_epsilon, find_elbow, kdist_csv, kdist_curve, ElbowRule, EpsilonEstimate, DEFAULT_SMOOTHING,
};

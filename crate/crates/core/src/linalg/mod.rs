//! Covariance, eigendecomposition and PCA projection.

mod eigen;
mod matrix;

pub use eigen::{
    covariance, eigen_top_n, pca_project, symmetric_eigen, EigenBasis, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE,
};
pub use matrix::{dot, norm, Matrix};

use crate::cae::LatentPoint;
use crate::error::Result;
use crate::scalar::Scalar;

/// Two-component PCA of the latent means, as CSV
/// `sample_index,label,is_flipped,pc1,pc2`.
pub fn pca_scatter_csv<T: Scalar>(points: &[LatentPoint<T>], is_flipped: &dyn Fn(usize) -> bool) -> Result<String> {
    let rows: Vec<&[T]> = points.iter().map(|p| p.mu.as_slice()).collect();
    let basis = eigen_top_n(&Matrix::from_rows(&rows)?, 2)?;
    let coords = pca_project(&rows, &basis, 2)?;
    let mut s = String::from("sample_index,label,is_flipped,pc1,pc2\n");
    for (p, c) in points.iter().zip(&coords) {
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            p.sample_index,
            p.label,
            is_flipped(p.sample_index) as u8,
            c[0].to_f64_lossy(),
            c[1].to_f64_lossy()
        ));
    }
    Ok(s)
}

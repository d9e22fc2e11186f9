//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the
//! principal-component basis built on it.

use crate::error::{bail, Result};
use crate::linalg::matrix::{dot, norm, Matrix};
use crate::scalar::Scalar;

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Negative eigenvalues down to this (relative to the largest) are rounding.
pub const NEGATIVE_CLAMP: f64 = 1e-8;

/// Population covariance (divisor = number of rows) of the rows of `samples`.
pub fn covariance<T: Scalar>(samples: &Matrix<T>) -> Result<Matrix<T>> {
    let (centered, _) = center(samples)?;
    let k = T::from_usize(samples.rows()).unwrap();
    let mut c = centered.transpose().matmul(&centered)?;
    let cols = c.cols();
    for i in 0..cols {
        for j in 0..cols {
            c[(i, j)] /= k;
        }
    }
    symmetrize(&mut c);
    Ok(c)
}

fn center<T: Scalar>(samples: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
    let (k, x) = (samples.rows(), samples.cols());
    if k < 2 {
        bail!(Argument, "covariance needs at least 2 samples, got {k}");
    }
    let kf = T::from_usize(k).unwrap();
    let mut mean = vec![T::zero(); x];
    for i in 0..k {
        for (m, &v) in mean.iter_mut().zip(samples.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= kf;
    }
    let mut c = samples.clone();
    for i in 0..k {
        for j in 0..x {
            c[(i, j)] = samples[(i, j)] - mean[j];
        }
    }
    Ok((c, mean))
}

fn symmetrize<T: Scalar>(m: &mut Matrix<T>) {
    let half = T::from_f64_lossy(0.5);
    for i in 0..m.rows() {
        for j in i + 1..m.cols() {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// All eigenpairs of a symmetric matrix, eigenvalues descending, vectors as
/// columns of the returned matrix.
pub fn symmetric_eigen<T: Scalar>(m: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = m.rows();
    if m.cols() != n {
        bail!(Shape, "eigendecomposition needs a square matrix, got {}x{}", n, m.cols());
    }
    if !m.is_finite() {
        bail!(Numeric, "matrix contains non-finite values");
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let fro = norm(a.data());
    // f32 cannot resolve 1e-10; fall back to a few ulps of the scale.
    let tol = JACOBI_TOLERANCE.max(8.0 * T::epsilon().to_f64_lossy());
    let limit = T::from_f64_lossy(tol) * fro;
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= limit {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_norm(&a) > limit {
        bail!(Numeric, "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap().then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok((values, vectors))
}

fn off_norm<T: Scalar>(a: &Matrix<T>) -> T {
    let mut s = T::zero();
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Zero `a[p][q]` with one Givens rotation applied on both sides.
fn rotate<T: Scalar>(a: &mut Matrix<T>, v: &mut Matrix<T>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == T::zero() {
        return;
    }
    let one = T::one();
    let theta = (a[(q, q)] - a[(p, p)]) / (apq + apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + one).sqrt());
    let c = one / (t * t + one).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        let (akp, akq) = (a[(k, p)], a[(k, q)]);
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Mean vector plus the leading principal directions of a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis<T> {
    pub mean: Vec<T>,
    /// Unit-norm eigenvectors, one per entry, by descending eigenvalue.
    pub vectors: Vec<Vec<T>>,
    pub values: Vec<T>,
}

impl<T: Scalar> EigenBasis<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Top `n` eigenpairs of the covariance of the rows of `samples`.
///
/// With fewer samples than dimensions (k < x) the k x k matrix `A A^T / k` of
/// the centred samples is decomposed instead; each of its eigenvectors `v`
/// maps to the covariance eigenvector `A^T v` with the same eigenvalue.
pub fn eigen_top_n<T: Scalar>(samples: &Matrix<T>, n: usize) -> Result<EigenBasis<T>> {
    let (k, x) = (samples.rows(), samples.cols());
    if n == 0 || n > k.min(x) {
        bail!(Argument, "requested {n} components from {k} samples of dimension {x}");
    }
    let (centered, mean) = center(samples)?;
    let kf = T::from_usize(k).unwrap();
    let (values, vectors) = if k < x {
        let mut gram = centered.matmul(&centered.transpose())?;
        for v in gram.data_mut() {
            *v /= kf;
        }
        symmetrize(&mut gram);
        let (vals, small) = symmetric_eigen(&gram)?;
        let top = vals[0].max(T::zero());
        let at = centered.transpose();
        let mut vecs: Vec<Vec<T>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut u = at.mat_vec(&small.column(j))?;
            let len = norm(&u);
            // Directions with no variance are not recoverable through A^T;
            // complete them orthogonally instead.
            if vals[j] <= T::from_f64_lossy(1e-12) * top || len == T::zero() {
                u = orthogonal_completion(&vecs, x);
            } else {
                for c in &mut u {
                    *c /= len;
                }
            }
            vecs.push(u);
        }
        (vals[..n].to_vec(), vecs)
    } else {
        let cov = covariance(samples)?;
        let (vals, full) = symmetric_eigen(&cov)?;
        (vals[..n].to_vec(), (0..n).map(|j| full.column(j)).collect())
    };
    let top = values[0].abs().max(T::one());
    let mut clamped = Vec::with_capacity(n);
    for &v in &values {
        if v < T::zero() {
            if v < -T::from_f64_lossy(NEGATIVE_CLAMP) * top {
                bail!(Numeric, "covariance eigenvalue {v} is negative");
            }
            clamped.push(T::zero());
        } else {
            clamped.push(v);
        }
    }
    let vectors = vectors.into_iter().map(canonical_sign).collect();
    Ok(EigenBasis { mean, vectors, values: clamped })
}

/// First standard axis made orthogonal to `basis` (Gram-Schmidt), normalised.
fn orthogonal_completion<T: Scalar>(basis: &[Vec<T>], dim: usize) -> Vec<T> {
    for axis in 0..dim {
        let mut u = vec![T::zero(); dim];
        u[axis] = T::one();
        for _ in 0..2 {
            for b in basis {
                let d = dot(&u, b);
                for (ui, &bi) in u.iter_mut().zip(b) {
                    *ui -= d * bi;
                }
            }
        }
        let len = norm(&u);
        if len > T::from_f64_lossy(1e-3) {
            return u.into_iter().map(|v| v / len).collect();
        }
    }
    vec![T::zero(); dim]
}

/// Flip so the largest-magnitude component is nonnegative.
fn canonical_sign<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let mut best = 0;
    for (i, c) in v.iter().enumerate() {
        if c.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&c| c < T::zero()) {
        for c in &mut v {
            *c = -*c;
        }
    }
    v
}

/// `out[i][j] = (points[i] - mean) . vectors[j]` for the first `n` vectors.
pub fn pca_project<T: Scalar, P: AsRef<[T]>>(points: &[P], basis: &EigenBasis<T>, n: usize) -> Result<Vec<Vec<T>>> {
    if n > basis.len() {
        bail!(Argument, "asked for {n} coordinates from a basis of {}", basis.len());
    }
    let mut centered = vec![T::zero(); basis.dim()];
    points
        .iter()
        .map(|p| {
            let p = p.as_ref();
            if p.len() != basis.dim() {
                bail!(Shape, "point of dimension {} for basis of dimension {}", p.len(), basis.dim());
            }
            for ((c, &x), &m) in centered.iter_mut().zip(p).zip(&basis.mean) {
                *c = x - m;
            }
            Ok(basis.vectors[..n].iter().map(|v| dot(&centered, v)).collect())
        })
        .collect()
}

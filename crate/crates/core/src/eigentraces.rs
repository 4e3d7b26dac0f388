//! PCA Eigenspace of training windows and projection into it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigendecomposition, Matrix};
use crate::scalar::Scalar;
use crate::window::WindowMatrix;

/// Trained Eigenspace: the average window `mean`, the eigenvectors of the
/// scatter matrix `Q = P Pᵀ` as columns of `eigvecs` (descending eigenvalue
/// order) and the eigenvalues themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EigenModel<T> {
    pub d: usize,
    pub k: usize,
    pub mean: Vec<T>,
    pub eigvals: Vec<T>,
    /// `d x k`, orthonormal columns.
    pub eigvecs: Matrix<T>,
    /// Subtract `mean` before projecting. Off by default: windows are
    /// projected as-is, `z = Eᵀ t`.
    #[serde(default)]
    pub center: bool,
}

/// Fit the Eigenspace of the training windows, keeping `k` components.
pub fn fit_eigenmodel<T: Scalar>(train: &WindowMatrix<T>, k: usize) -> Result<EigenModel<T>> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training window matrix has no columns"));
    }
    let d = train.dim();
    if k < 1 || k > d {
        return Err(Error::InvalidConfig(format!("component count must be in 1..={d}, got {k}")));
    }
    let m = T::of_usize(train.len());

    let mut mean = vec![T::zero(); d];
    for col in train.columns() {
        for (c, &x) in mean.iter_mut().zip(col) {
            *c += x;
        }
    }
    for c in mean.iter_mut() {
        *c /= m;
    }

    // Q = P Pᵀ, unnormalized
    let mut q: Matrix<T> = Matrix::zeros(d, d);
    let mut centered = vec![T::zero(); d];
    for col in train.columns() {
        for ((p, &x), &c) in centered.iter_mut().zip(col).zip(&mean) {
            *p = x - c;
        }
        for i in 0..d {
            let pi = centered[i];
            if pi == T::zero() {
                continue;
            }
            let row = q.row_mut(i);
            for j in i..d {
                row[j] += pi * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            q[(i, j)] = q[(j, i)];
        }
    }

    let (eigvals, eigvecs) = if q.max_abs() == T::zero() {
        (vec![T::zero(); k], truncate_columns(&Matrix::identity(d), k))
    } else {
        let eig = symmetric_eigendecomposition(&q)?;
        let vals = eig.values.into_iter().take(k).map(|v| v.max(T::zero())).collect();
        (vals, truncate_columns(&eig.vectors, k))
    };

    Ok(EigenModel {
        d,
        k,
        mean,
        eigvals,
        eigvecs,
        center: false,
    })
}

fn truncate_columns<T: Scalar>(m: &Matrix<T>, k: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(m.nrows(), k);
    for i in 0..m.nrows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[..k]);
    }
    out
}

impl<T: Scalar> EigenModel<T> {
    /// `Eᵀ t`, or `Eᵀ (t - c)` when centering is enabled.
    pub fn project(&self, t: &[T]) -> Result<Vec<T>> {
        if t.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: t.len(),
            });
        }
        if self.center {
            let shifted: Vec<T> = t.iter().zip(&self.mean).map(|(&x, &c)| x - c).collect();
            self.eigvecs.tr_mul_vec(&shifted)
        } else {
            self.eigvecs.tr_mul_vec(t)
        }
    }

    /// Project every window; rows of the result are the `k`-vectors.
    pub fn project_matrix(&self, windows: &WindowMatrix<T>) -> Result<Matrix<T>> {
        if windows.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: windows.dim(),
            });
        }
        let rows: Vec<Vec<T>> = (0..windows.len())
            .into_par_iter()
            .map(|j| self.project(windows.column(j)))
            .collect::<Result<_>>()?;
        let data = rows.into_iter().flatten().collect();
        Matrix::from_row_major(windows.len(), self.k, data)
    }

    /// Map a projected vector back to window space: `E z` (plus the mean
    /// when centering is enabled).
    pub fn reconstruct(&self, z: &[T]) -> Result<Vec<T>> {
        let mut t = self.eigvecs.mul_vec(z)?;
        if self.center {
            for (x, &c) in t.iter_mut().zip(&self.mean) {
                *x += c;
            }
        }
        Ok(t)
    }
}

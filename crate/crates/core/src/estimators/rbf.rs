//! Gaussian radial-basis-function network used as a class-probability
//! estimator.
//!
//! Hidden units sit at k-means centers and share one width computed from
//! the spread of the centers. The linear output layer (plus bias) is fit by
//! ridge regression onto 1 for target rows and 0 for artificial rows, and
//! its output is clipped to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_cluster;
use super::{check_labels, Class, ProbabilityEstimator};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, squared_distance, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfnConfig {
    pub m_clusters: usize,
    pub min_std: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_ridge() -> f64 {
    1e-6
}

impl Default for RbfnConfig {
    fn default() -> Self {
        RbfnConfig {
            m_clusters: 5,
            min_std: 0.1,
            ridge: default_ridge(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RbfnEstimator<T> {
    /// `M x h`
    pub centers: Matrix<T>,
    /// Shared variance `σ²`.
    pub width: T,
    pub weights: Vec<T>,
    pub bias: T,
}

/// `exp(-‖x - μ‖² / (2σ²))`
pub fn rbf_activation<T: Scalar>(x: &[T], mu: &[T], sigma2: T) -> Result<T> {
    if !(sigma2 > T::zero()) {
        return Err(Error::NonPositiveWidth);
    }
    if x.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            actual: x.len(),
        });
    }
    Ok((-squared_distance(x, mu) / (T::of(2.0) * sigma2)).exp())
}

/// `σ² = (max pairwise center distance)² / (number of centers)`, floored at
/// `min_std²`. A single center has no spread and gets the floor.
pub fn shared_width<T: Scalar>(centers: &Matrix<T>, min_std: f64) -> T {
    let m = centers.nrows();
    let mut max_d2 = T::zero();
    for i in 0..m {
        for j in (i + 1)..m {
            max_d2 = max_d2.max(squared_distance(centers.row(i), centers.row(j)));
        }
    }
    let floor = T::of(min_std * min_std);
    if m == 0 {
        return floor;
    }
    (max_d2 / T::of_usize(m)).max(floor)
}

impl<T: Scalar> RbfnEstimator<T> {
    pub fn activations(&self, x: &[T]) -> Result<Vec<T>> {
        self.centers.rows_iter().map(|mu| rbf_activation(x, mu, self.width)).collect()
    }

    /// Linear output `Σ w_j φ_j(x) + b` before clipping.
    pub fn output(&self, x: &[T]) -> Result<T> {
        let phi = self.activations(x)?;
        Ok(phi.iter().zip(&self.weights).fold(self.bias, |s, (&p, &w)| s + p * w))
    }
}

impl<T: Scalar> ProbabilityEstimator<T> for RbfnEstimator<T> {
    fn raw_probability(&self, x: &[T]) -> Result<T> {
        let f = self.output(x)?;
        Ok(f.max(T::zero()).min(T::one()))
    }
}

pub fn fit_rbfn<T: Scalar>(x: &Matrix<T>, labels: &[Class], cfg: &RbfnConfig, seed: u64) -> Result<RbfnEstimator<T>> {
    check_labels(x.nrows(), labels)?;
    let m = cfg.m_clusters;
    let centers = kmeans_cluster(x, m, seed)?;
    let width = shared_width(&centers, cfg.min_std);
    let mut est = RbfnEstimator {
        centers,
        width,
        weights: vec![T::zero(); m],
        bias: T::zero(),
    };

    // normal equations of the ridge problem over [φ_1..φ_M, 1]
    let p = m + 1;
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![T::zero(); p];
    let mut phi = vec![T::one(); p];
    for (row, &label) in x.rows_iter().zip(labels) {
        for (dst, a) in phi.iter_mut().zip(est.activations(row)?) {
            *dst = a;
        }
        phi[m] = T::one();
        let y = if label == Class::Target { T::one() } else { T::zero() };
        for i in 0..p {
            rhs[i] += phi[i] * y;
            let gi = gram.row_mut(i);
            for j in i..p {
                gi[j] += phi[i] * phi[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
        gram[(i, i)] += T::of(cfg.ridge);
    }
    let w = solve_spd(&gram, &rhs)?;
    est.weights.copy_from_slice(&w[..m]);
    est.bias = w[m];
    Ok(est)
}

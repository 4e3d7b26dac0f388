//! Diagonal-covariance Gaussian mixture fitted by expectation maximization.

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_with_assignments, nearest};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub m_components: usize,
    pub min_std: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            m_components: 5,
            min_std: 0.1,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GmmModel<T> {
    /// Mixing weights `a_v`, positive and summing to 1.
    pub weights: Vec<T>,
    /// `M x h` component means.
    pub means: Matrix<T>,
    /// `M x h` per-attribute variances, each at least `min_std²`.
    pub variances: Matrix<T>,
    /// Effective number of points per component.
    pub counts: Vec<T>,
    /// Log-likelihood of the training data after initialization and after
    /// every EM iteration.
    #[serde(default)]
    pub log_likelihoods: Vec<T>,
}

impl<T: Scalar> GmmModel<T> {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `log a_v + log N(x | μ_v, Σ_v)` for every component.
    pub fn weighted_log_densities(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let half_log_2pi = T::of(0.5) * (T::of(2.0) * T::PI()).ln();
        Ok((0..self.n_components())
            .map(|v| {
                let mut s = self.weights[v].ln();
                for ((&xi, &mu), &var) in x.iter().zip(self.means.row(v)).zip(self.variances.row(v)) {
                    let d = xi - mu;
                    s -= half_log_2pi + T::of(0.5) * var.ln() + d * d / (T::of(2.0) * var);
                }
                s
            })
            .collect())
    }
}

/// `log Σ_v a_v N(x | μ_v, Σ_v)` via log-sum-exp.
pub fn gmm_log_density<T: Scalar>(model: &GmmModel<T>, x: &[T]) -> Result<T> {
    model.weighted_log_densities(x).map(|l| log_sum_exp(&l))
}

/// Component posteriors `P(φ_v | x)`.
pub fn em_posterior<T: Scalar>(model: &GmmModel<T>, x: &[T]) -> Result<Vec<T>> {
    let l = model.weighted_log_densities(x)?;
    let total = log_sum_exp(&l);
    Ok(l.into_iter().map(|v| (v - total).exp()).collect())
}

/// Fit a mixture by EM, starting from k-means clusters. Iterates until the
/// log-likelihood gain drops below `cfg.tol` or `cfg.max_iter` updates have
/// been made.
pub fn fit_gmm_em<T: Scalar>(x: &Matrix<T>, cfg: &GmmConfig, seed: u64) -> Result<GmmModel<T>> {
    let n = x.nrows();
    let m = cfg.m_components;
    if m < 1 || n < m {
        return Err(Error::TooFewPoints { needed: m.max(1), got: n });
    }
    let h = x.ncols();
    let var_floor = T::of(cfg.min_std * cfg.min_std);

    // hard k-means responsibilities as the starting point
    let (centers, _) = kmeans_with_assignments(x, m, seed)?;
    let mut resp = Matrix::zeros(n, m);
    for (i, row) in x.rows_iter().enumerate() {
        resp[(i, nearest(&centers, row).0)] = T::one();
    }
    let mut model = GmmModel {
        weights: vec![T::one() / T::of_usize(m); m],
        means: centers,
        variances: Matrix::zeros(m, h),
        counts: vec![T::zero(); m],
        log_likelihoods: Vec::new(),
    };
    m_step(x, &resp, &mut model, var_floor);
    let mut ll = e_step(x, &model, &mut resp)?;
    model.log_likelihoods.push(ll);

    for _ in 0..cfg.max_iter {
        m_step(x, &resp, &mut model, var_floor);
        let next = e_step(x, &model, &mut resp)?;
        model.log_likelihoods.push(next);
        let gain = next - ll;
        ll = next;
        if gain < T::of(cfg.tol) {
            break;
        }
    }
    Ok(model)
}

/// Fill `resp` with posteriors and return the data log-likelihood.
fn e_step<T: Scalar>(x: &Matrix<T>, model: &GmmModel<T>, resp: &mut Matrix<T>) -> Result<T> {
    let mut ll = T::zero();
    for (i, row) in x.rows_iter().enumerate() {
        let l = model.weighted_log_densities(row)?;
        let total = log_sum_exp(&l);
        ll += total;
        for (dst, v) in resp.row_mut(i).iter_mut().zip(l) {
            *dst = (v - total).exp();
        }
    }
    Ok(ll)
}

fn m_step<T: Scalar>(x: &Matrix<T>, resp: &Matrix<T>, model: &mut GmmModel<T>, var_floor: T) {
    let n = x.nrows();
    let m = model.n_components();
    let h = x.ncols();
    let tiny = T::min_positive_value().sqrt();
    for v in 0..m {
        let nv: T = (0..n).map(|i| resp[(i, v)]).sum();
        model.counts[v] = nv;
        if nv <= tiny {
            // collapsed component keeps its parameters and a negligible weight
            model.weights[v] = tiny;
            continue;
        }
        model.weights[v] = nv / T::of_usize(n);
        let mut mean = vec![T::zero(); h];
        for (i, row) in x.rows_iter().enumerate() {
            let r = resp[(i, v)];
            for (mu, &xi) in mean.iter_mut().zip(row) {
                *mu += r * xi;
            }
        }
        for mu in mean.iter_mut() {
            *mu /= nv;
        }
        let mut var = vec![T::zero(); h];
        for (i, row) in x.rows_iter().enumerate() {
            let r = resp[(i, v)];
            for ((s, &xi), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = xi - mu;
                *s += r * d * d;
            }
        }
        for s in var.iter_mut() {
            *s = (*s / nv).max(var_floor);
        }
        model.means.row_mut(v).copy_from_slice(&mean);
        model.variances.row_mut(v).copy_from_slice(&var);
    }
    let total: T = model.weights.iter().copied().sum();
    for w in model.weights.iter_mut() {
        *w /= total;
    }
}

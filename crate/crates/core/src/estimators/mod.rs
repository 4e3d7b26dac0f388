//! Target-class probability estimators `P(T|x)`.
//!
//! Both estimators are trained on target vectors labeled [`Class::Target`]
//! and reference samples labeled [`Class::Artificial`]. Raw outputs lie in
//! `[0, 1]`; [`ProbabilityEstimator::estimate`] clamps them into
//! `[PROBABILITY_EPSILON, 1 - PROBABILITY_EPSILON]` so the odds ratio used by
//! the Bayes combination stays finite.

pub mod forest;
pub mod gmm;
pub mod kmeans;
pub mod rbf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub use forest::{fit_forest, forest_class_probability, tree_class_probability, DecisionTree, FeatureSubset, ForestConfig, ForestEstimator};
pub use gmm::{em_posterior, fit_gmm_em, gmm_log_density, GmmConfig, GmmModel};
pub use kmeans::kmeans_cluster;
pub use rbf::{fit_rbfn, rbf_activation, shared_width, RbfnConfig, RbfnEstimator};

pub const PROBABILITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    Target,
    Artificial,
}

pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let eps = T::of(PROBABILITY_EPSILON);
    if p.is_nan() {
        return T::of(0.5);
    }
    p.max(eps).min(T::one() - eps)
}

pub trait ProbabilityEstimator<T: Scalar>: Send + Sync {
    /// Unclamped `P(T|x)` in `[0, 1]`.
    fn raw_probability(&self, x: &[T]) -> Result<T>;

    /// `P(T|x)` clamped into `[ε, 1-ε]`.
    fn estimate(&self, x: &[T]) -> Result<T> {
        self.raw_probability(x).map(clamp_probability)
    }
}

/// A fitted estimator of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "T: Scalar")]
pub enum Estimator<T> {
    Rbfn(RbfnEstimator<T>),
    Forest(ForestEstimator<T>),
}

impl<T: Scalar> ProbabilityEstimator<T> for Estimator<T> {
    fn raw_probability(&self, x: &[T]) -> Result<T> {
        match self {
            Estimator::Rbfn(e) => e.raw_probability(x),
            Estimator::Forest(e) => e.raw_probability(x),
        }
    }
}

/// Which estimator to train, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "lowercase")]
pub enum EstimatorConfig {
    Rbfn(RbfnConfig),
    Forest(ForestConfig),
}

impl EstimatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorConfig::Rbfn(_) => "rbfn",
            EstimatorConfig::Forest(_) => "forest",
        }
    }

    pub fn fit<T: Scalar>(&self, x: &Matrix<T>, labels: &[Class], seed: u64) -> Result<Estimator<T>> {
        match self {
            EstimatorConfig::Rbfn(cfg) => fit_rbfn(x, labels, cfg, seed).map(Estimator::Rbfn),
            EstimatorConfig::Forest(cfg) => fit_forest(x, labels, cfg, seed).map(Estimator::Forest),
        }
    }
}

pub(crate) fn check_labels(x_rows: usize, labels: &[Class]) -> Result<()> {
    if labels.len() != x_rows {
        return Err(Error::LengthMismatch(x_rows, labels.len()));
    }
    let has_t = labels.contains(&Class::Target);
    let has_a = labels.contains(&Class::Artificial);
    if !(has_t && has_a) {
        return Err(Error::SingleClassInput);
    }
    Ok(())
}

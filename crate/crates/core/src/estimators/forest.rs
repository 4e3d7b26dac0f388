//! Random forest of information-gain decision trees whose leaves keep class
//! counts, used to estimate `P(T|x)` as the average leaf relative frequency.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_labels, Class, ProbabilityEstimator};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// How many attributes to sample at each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// `round(log2 h)`
    Log2,
    /// `0.5 √h`
    HalfSqrt,
    /// `√h`
    Sqrt,
    /// `2 √h`
    TwiceSqrt,
    Fixed(usize),
}

impl FeatureSubset {
    /// Resolved attribute count for `h` attributes, within `1..=h`.
    pub fn resolve(self, h: usize) -> usize {
        let hf = h as f64;
        let raw = match self {
            FeatureSubset::Log2 => hf.log2().round() as usize,
            FeatureSubset::HalfSqrt => (0.5 * hf.sqrt()).round() as usize,
            FeatureSubset::Sqrt => hf.sqrt().round() as usize,
            FeatureSubset::TwiceSqrt => (2.0 * hf.sqrt()).round() as usize,
            FeatureSubset::Fixed(k) => k,
        };
        raw.clamp(1, h.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub h_prime: FeatureSubset,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
}

fn default_true() -> bool {
    true
}

fn default_min_leaf() -> usize {
    1
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            h_prime: FeatureSubset::Log2,
            bootstrap: true,
            max_depth: None,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Node<T> {
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        n_target: u32,
        n_artificial: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecisionTree<T> {
    pub n_features: usize,
    /// Node 0 is the root.
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> DecisionTree<T> {
    /// A tree that is a single leaf with the given counts.
    pub fn leaf(n_features: usize, n_target: u32, n_artificial: u32) -> Self {
        DecisionTree {
            n_features,
            nodes: vec![Node::Leaf { n_target, n_artificial }],
        }
    }

    /// Class counts of the leaf that `x` falls into.
    pub fn leaf_counts(&self, x: &[T]) -> Result<(u32, u32)> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { n_target, n_artificial } => return Ok((*n_target, *n_artificial)),
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Relative frequency `n_T / (n_T + n_A)` at the leaf reached by `x`.
pub fn tree_class_probability<T: Scalar>(tree: &DecisionTree<T>, x: &[T]) -> Result<T> {
    let (t, a) = tree.leaf_counts(x)?;
    Ok(T::of(t as f64) / T::of((t + a).max(1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ForestEstimator<T> {
    pub h_prime: usize,
    pub seed: u64,
    pub trees: Vec<DecisionTree<T>>,
}

/// Mean of the per-tree relative class frequencies.
pub fn forest_class_probability<T: Scalar>(forest: &ForestEstimator<T>, x: &[T]) -> Result<T> {
    if forest.trees.is_empty() {
        return Err(Error::EmptyInput("forest has no trees"));
    }
    let mut s = T::zero();
    for tree in &forest.trees {
        s += tree_class_probability(tree, x)?;
    }
    Ok(s / T::of_usize(forest.trees.len()))
}

impl<T: Scalar> ProbabilityEstimator<T> for ForestEstimator<T> {
    fn raw_probability(&self, x: &[T]) -> Result<T> {
        forest_class_probability(self, x)
    }
}

/// Grow `cfg.n_trees` trees. Tree `g` uses its own generator seeded with
/// `seed ^ g`, so the result does not depend on thread scheduling.
pub fn fit_forest<T: Scalar>(x: &Matrix<T>, labels: &[Class], cfg: &ForestConfig, seed: u64) -> Result<ForestEstimator<T>> {
    check_labels(x.nrows(), labels)?;
    if x.nrows() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: x.nrows() });
    }
    if cfg.n_trees < 1 {
        return Err(Error::InvalidConfig("forest needs at least one tree".into()));
    }
    let h_prime = cfg.h_prime.resolve(x.ncols());
    let is_target: Vec<bool> = labels.iter().map(|&c| c == Class::Target).collect();
    let columns = x.transpose();
    let (ranks, distinct) = rank_columns(&columns);
    let grower = Grower {
        columns,
        ranks,
        distinct,
        is_target,
        xlogx: (0..=x.nrows())
            .map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() })
            .collect(),
        h_prime,
        min_leaf: cfg.min_leaf.max(1),
        max_depth: cfg.max_depth,
    };
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ g as u64);
            let n = x.nrows();
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(rows, &mut rng)
        })
        .collect();
    Ok(ForestEstimator { h_prime, seed, trees })
}

fn rank_columns<T: Scalar>(columns: &Matrix<T>) -> (Vec<Vec<u32>>, Vec<Vec<T>>) {
    columns
        .rows_iter()
        .map(|col| {
            let mut sorted = col.to_vec();
            sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            sorted.dedup();
            let ranks = col
                .iter()
                .map(|v| sorted.partition_point(|s| s < v) as u32)
                .collect();
            (ranks, sorted)
        })
        .unzip()
}

struct SplitChoice<T> {
    feature: usize,
    threshold: T,
    gain: f64,
}

/// Shared, read-only state for growing the trees of one forest.
struct Grower<T> {
    /// `h x n`: row `f` holds attribute `f` of every training row.
    columns: Matrix<T>,
    /// Dense rank of each value within its attribute; equal values share a rank.
    ranks: Vec<Vec<u32>>,
    /// Sorted distinct values of each attribute, indexed by rank.
    distinct: Vec<Vec<T>>,
    is_target: Vec<bool>,
    /// `c · log2(c)` for every count up to `n`.
    xlogx: Vec<f64>,
    h_prime: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
}

impl<T: Scalar> Grower<T> {
    /// `(t + a) · H(t, a)` in bits.
    fn weighted_entropy(&self, t: usize, a: usize) -> f64 {
        self.xlogx[t + a] - self.xlogx[t] - self.xlogx[a]
    }

    fn best_split_on(&self, rows: &[usize], feature: usize, parent: f64, scratch: &mut Vec<u64>) -> Option<SplitChoice<T>> {
        let ranks = &self.ranks[feature];
        // rank in the high bits, class in the lowest bit
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (u64::from(ranks[i]) << 1) | u64::from(self.is_target[i])));
        scratch.sort_unstable();
        let n = scratch.len();
        let total_t = scratch.iter().filter(|&&k| k & 1 == 1).count();
        let mut left_t = 0;
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n - 1 {
            left_t += (scratch[k] & 1) as usize;
            if scratch[k] >> 1 == scratch[k + 1] >> 1 {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < self.min_leaf || nr < self.min_leaf {
                continue;
            }
            let right_t = total_t - left_t;
            let child = self.weighted_entropy(left_t, nl - left_t) + self.weighted_entropy(right_t, nr - right_t);
            let gain = (parent - child) / n as f64;
            if best.is_none_or(|b| gain > b.1) {
                best = Some((k, gain));
            }
        }
        best.map(|(k, gain)| {
            let values = &self.distinct[feature];
            let (lo, hi) = (values[(scratch[k] >> 1) as usize], values[(scratch[k + 1] >> 1) as usize]);
            let mid = (lo + hi) * T::of(0.5);
            SplitChoice {
                feature,
                threshold: if mid < hi { mid } else { lo },
                gain,
            }
        })
    }

    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> DecisionTree<T> {
        let h = self.columns.nrows();
        let mut nodes: Vec<Node<T>> = vec![Node::Leaf {
            n_target: 0,
            n_artificial: 0,
        }];
        // (node index, rows, depth)
        let mut stack = vec![(0usize, rows, 0usize)];
        let mut features: Vec<usize> = (0..h).collect();
        let mut scratch = Vec::new();

        while let Some((id, rows, depth)) = stack.pop() {
            let n_t = rows.iter().filter(|&&i| self.is_target[i]).count();
            let n_a = rows.len() - n_t;
            let leaf = Node::Leaf {
                n_target: n_t as u32,
                n_artificial: n_a as u32,
            };
            let pure = n_t == 0 || n_a == 0;
            let capped = self.max_depth.is_some_and(|d| depth >= d);
            if pure || capped || rows.len() < 2 * self.min_leaf {
                nodes[id] = leaf;
                continue;
            }

            // Sample h' attributes; if none of them can split the node, keep
            // drawing from the remaining attributes until one can.
            features.shuffle(rng);
            let parent = self.weighted_entropy(n_t, n_a);
            let mut best: Option<SplitChoice<T>> = None;
            for (tried, &f) in features.iter().enumerate() {
                if tried >= self.h_prime && best.is_some() {
                    break;
                }
                if let Some(c) = self.best_split_on(&rows, f, parent, &mut scratch) {
                    if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            let Some(split) = best else {
                nodes[id] = leaf;
                continue;
            };

            let col = self.columns.row(split.feature);
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| col[i] <= split.threshold);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf {
                n_target: 0,
                n_artificial: 0,
            });
            nodes.push(Node::Leaf {
                n_target: 0,
                n_artificial: 0,
            });
            nodes[id] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            stack.push((right, right_rows, depth + 1));
            stack.push((left, left_rows, depth + 1));
        }
        DecisionTree { n_features: h, nodes }
    }
}

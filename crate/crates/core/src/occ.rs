//! One-class classification with artificially generated counter-examples.
//!
//! Targets are modelled against a reference distribution `A` (a diagonal
//! Gaussian fitted to the targets). A probability estimator learns
//! `P(T|x)` from targets and samples of `A`, and Bayes' rule turns it back
//! into a target density:
//!
//! `P(x|T) = (1 - P(T)) / P(T) · P(T|x) / (1 - P(T|x)) · P(x|A)`
//!
//! Everything is evaluated in natural-log space. The decision threshold is
//! an order statistic of held-out target scores chosen so that a fixed
//! fraction (the target rejection rate) of them is rejected.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Class, Estimator, EstimatorConfig, ProbabilityEstimator, RbfnConfig, PROBABILITY_EPSILON};
use crate::eval::{rank_auc, roc_auc};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::trace::Label;

/// Lower bound on every reference standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Smallest target set `train_occ` accepts.
pub const MIN_TARGETS: usize = 20;

/// Calibration grid used by `occ sweep` when none is given.
pub const DEFAULT_TRR_GRID: [f64; 9] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4];

/// Diagonal Gaussian reference distribution `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReferenceDistribution<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
}

impl<T: Scalar> ReferenceDistribution<T> {
    pub fn dim(&self) -> usize {
        self.means.len()
    }
}

/// Per-attribute mean and population standard deviation, floored at
/// [`STD_FLOOR`].
pub fn fit_reference<T: Scalar>(targets: &Matrix<T>) -> Result<ReferenceDistribution<T>> {
    let n = targets.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("reference distribution needs at least one target"));
    }
    let h = targets.ncols();
    let nf = T::of_usize(n);
    let mut means = vec![T::zero(); h];
    for row in targets.rows_iter() {
        for (m, &x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); h];
    for row in targets.rows_iter() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let floor = T::of(STD_FLOOR);
    let stds = var.into_iter().map(|v| (v / nf).sqrt().max(floor)).collect();
    Ok(ReferenceDistribution { means, stds })
}

/// `log P(x|A) = Σ_j [-log(√(2π) σ_j) - (x_j - μ_j)² / (2σ_j²)]`
pub fn reference_log_density<T: Scalar>(reference: &ReferenceDistribution<T>, x: &[T]) -> Result<T> {
    if x.len() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: x.len(),
        });
    }
    let half_log_2pi = T::of(0.5) * (T::of(2.0) * T::PI()).ln();
    let mut s = T::zero();
    for ((&xj, &mu), &sd) in x.iter().zip(&reference.means).zip(&reference.stds) {
        let z = (xj - mu) / sd;
        s -= half_log_2pi + sd.ln() + T::of(0.5) * z * z;
    }
    Ok(s)
}

/// `n` i.i.d. draws from the reference distribution, one per row.
pub fn sample_artificial<T: Scalar>(reference: &ReferenceDistribution<T>, n: usize, seed: u64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = reference.dim();
    let mut data = Vec::with_capacity(n * h);
    for _ in 0..n {
        for (&mu, &sd) in reference.means.iter().zip(&reference.stds) {
            data.push(mu + sd * T::sample_standard_normal(&mut rng));
        }
    }
    Matrix::from_row_major(n, h, data).expect("buffer sized n x h")
}

/// `log P(x|T)` from the estimator output `P(T|x)`, `log P(x|A)` and the
/// target prior.
pub fn combine_bayes<T: Scalar>(p_t_given_x: T, log_p_x_given_a: T, prior_t: T) -> Result<T> {
    let eps = T::of(PROBABILITY_EPSILON);
    if !(p_t_given_x >= eps && p_t_given_x <= T::one() - eps) {
        return Err(Error::InvalidProbability(p_t_given_x.as_f64()));
    }
    if !(prior_t > T::zero() && prior_t < T::one()) {
        return Err(Error::InvalidProbability(prior_t.as_f64()));
    }
    if log_p_x_given_a.is_nan() {
        return Err(Error::InvalidProbability(f64::NAN));
    }
    let prior_odds = (-prior_t).ln_1p() - prior_t.ln();
    let odds = p_t_given_x.ln() - (-p_t_given_x).ln_1p();
    Ok(prior_odds + odds + log_p_x_given_a)
}

/// Decision threshold on `log P(x|T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Threshold<T> {
    /// Nothing is rejected.
    RejectNone,
    /// Reject when `log P(x|T) <= value`.
    LogDensity(T),
}

impl<T: Scalar> Threshold<T> {
    pub fn rejects(&self, log_p_x_given_t: T) -> bool {
        match *self {
            Threshold::RejectNone => false,
            Threshold::LogDensity(t) => log_p_x_given_t <= t,
        }
    }

    /// Threshold value, `-inf` for [`Threshold::RejectNone`].
    pub fn log_value(&self) -> T {
        match *self {
            Threshold::RejectNone => T::neg_infinity(),
            Threshold::LogDensity(t) => t,
        }
    }
}

/// Number of calibration scores rejected at rate `trr`: `floor(trr · n)`.
pub fn rejection_count(trr: f64, n: usize) -> usize {
    // absorbs the representation error of decimal rates such as 0.29
    (trr * n as f64 + 1e-9).floor() as usize
}

/// The `floor(trr · n)`-th smallest score, so that exactly that many
/// scores satisfy `score <= threshold`. When the order statistic is tied
/// with the next score the threshold steps down below the tie, rejecting
/// fewer rather than more.
pub fn calibrate_threshold<T: Scalar>(scores: &[T], trr: f64) -> Result<Threshold<T>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(0.0..1.0).contains(&trr) {
        return Err(Error::InvalidConfig(format!("target rejection rate must be in [0, 1), got {trr}")));
    }
    let k = rejection_count(trr, scores.len());
    if k == 0 {
        return Ok(Threshold::RejectNone);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut idx = k - 1;
    while idx + 1 < sorted.len() && sorted[idx] == sorted[idx + 1] {
        if idx == 0 {
            return Ok(Threshold::RejectNone);
        }
        idx -= 1;
    }
    Ok(Threshold::LogDensity(sorted[idx]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccConfig {
    pub num_repeats: usize,
    /// Percent of targets held out for threshold calibration.
    pub percentage_heldout: f64,
    /// Fraction of the estimator's training set that is artificial.
    pub proportion_generated: f64,
    pub target_rejection_rate: f64,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    /// Raw density cutoff; replaces the calibrated threshold when set.
    #[serde(default)]
    pub absolute_threshold: Option<f64>,
    /// Folds of the cross-validation recorded in the training report; 0
    /// skips it.
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

fn default_cv_folds() -> usize {
    10
}

impl Default for OccConfig {
    fn default() -> Self {
        OccConfig {
            num_repeats: 10,
            percentage_heldout: 10.0,
            proportion_generated: 0.5,
            target_rejection_rate: 0.05,
            estimator: EstimatorConfig::Rbfn(RbfnConfig::default()),
            seed: 0,
            absolute_threshold: None,
            cv_folds: default_cv_folds(),
        }
    }
}

impl OccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_repeats < 1 {
            return bad("num_repeats must be >= 1".into());
        }
        if !(self.percentage_heldout > 0.0 && self.percentage_heldout < 100.0) {
            return bad(format!("percentage_heldout must be in (0, 100), got {}", self.percentage_heldout));
        }
        if !(self.proportion_generated > 0.0 && self.proportion_generated < 1.0) {
            return bad(format!(
                "proportion_generated must be in (0, 1), got {}",
                self.proportion_generated
            ));
        }
        if !(0.0..1.0).contains(&self.target_rejection_rate) {
            return bad(format!(
                "target_rejection_rate must be in [0, 1), got {}",
                self.target_rejection_rate
            ));
        }
        if let Some(a) = self.absolute_threshold {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("absolute_threshold must be a positive density, got {a}"));
            }
        }
        if self.cv_folds == 1 {
            return bad("cv_folds must be 0 or >= 2".into());
        }
        Ok(())
    }

    /// `P(T) = 1 - proportion_generated`
    pub fn prior_t(&self) -> f64 {
        1.0 - self.proportion_generated
    }

    /// Artificial rows for `n_targets` estimator targets:
    /// `n_T · p / (1 - p)`, rounded, at least 1.
    pub fn artificial_count(&self, n_targets: usize) -> usize {
        let p = self.proportion_generated;
        ((n_targets as f64 * p / (1.0 - p)).round() as usize).max(1)
    }

    fn heldout_count(&self, n: usize) -> usize {
        ((n as f64 * self.percentage_heldout / 100.0).round() as usize).clamp(1, n.saturating_sub(2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: usize,
    /// Mean fraction of fold targets accepted.
    pub tpr: f64,
    /// Mean AUC of the estimator output, fold targets against reference samples.
    pub auc: f64,
    pub fold_tpr: Vec<f64>,
    pub fold_auc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_targets: usize,
    pub n_train: usize,
    pub n_heldout: usize,
    pub n_artificial: usize,
    /// Index of the repeat whose model was kept.
    pub selected_repeat: usize,
    /// Held-out AUC of the estimator output for every repeat, targets
    /// against reference samples.
    pub repeat_heldout_auc: Vec<f64>,
    pub heldout_auc: f64,
    /// Fraction of held-out targets the final threshold rejects.
    pub heldout_rejection_rate: f64,
    pub cross_validation: Option<CrossValidation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OccModel<T> {
    pub reference: ReferenceDistribution<T>,
    pub estimator: Estimator<T>,
    pub prior_t: T,
    pub threshold: Threshold<T>,
    pub config: OccConfig,
    /// `log P(x|T)` of the held-out targets, kept for recalibration.
    pub heldout_scores: Vec<T>,
    pub report: TrainingReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Target,
    Anomaly,
}

impl Verdict {
    pub fn as_label(self) -> Label {
        match self {
            Verdict::Target => Label::Normal,
            Verdict::Anomaly => Label::Attack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OccScore<T> {
    pub log_p_x_given_t: T,
    pub p_t_given_x: T,
    pub log_p_x_given_a: T,
    pub verdict: Verdict,
}

impl<T: Scalar> OccModel<T> {
    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn classify(&self, x: &[T]) -> Result<OccScore<T>> {
        classify(self, x)
    }

    /// Classify every row of `x` in parallel.
    pub fn classify_rows(&self, x: &Matrix<T>) -> Result<Vec<OccScore<T>>> {
        (0..x.nrows()).into_par_iter().map(|i| classify(self, x.row(i))).collect()
    }

    fn log_p_x_given_t(&self, x: &[T]) -> Result<T> {
        let p = self.estimator.estimate(x)?;
        let la = reference_log_density(&self.reference, x)?;
        combine_bayes(p, la, self.prior_t)
    }

    /// The same model with its threshold recalibrated from the stored
    /// held-out scores at rate `trr`.
    pub fn with_trr(&self, trr: f64) -> Result<OccModel<T>> {
        let mut m = self.clone();
        m.threshold = calibrate_threshold(&self.heldout_scores, trr)?;
        m.config.target_rejection_rate = trr;
        m.config.absolute_threshold = None;
        m.report.heldout_rejection_rate = rejected_fraction(&m.threshold, &m.heldout_scores);
        Ok(m)
    }
}

pub fn classify<T: Scalar>(model: &OccModel<T>, x: &[T]) -> Result<OccScore<T>> {
    let p = model.estimator.estimate(x)?;
    let la = reference_log_density(&model.reference, x)?;
    let lt = combine_bayes(p, la, model.prior_t)?;
    let verdict = if model.threshold.rejects(lt) {
        Verdict::Anomaly
    } else {
        Verdict::Target
    };
    Ok(OccScore {
        log_p_x_given_t: lt,
        p_t_given_x: p,
        log_p_x_given_a: la,
        verdict,
    })
}

fn rejected_fraction<T: Scalar>(threshold: &Threshold<T>, scores: &[T]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| threshold.rejects(s)).count() as f64 / scores.len() as f64
}

/// Independent sub-seed for stream `tag` of a master seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(tag);
    rng.next_u64()
}

const STREAM_SPLIT: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_ESTIMATOR: u64 = 3;
const STREAM_PROBE: u64 = 4;
const STREAM_CV: u64 = 5;
const STREAM_REPEAT: u64 = 1 << 16;
const STREAM_FOLD: u64 = 1 << 17;

fn threshold_for<T: Scalar>(cfg: &OccConfig, scores: &[T]) -> Result<Threshold<T>> {
    match cfg.absolute_threshold {
        Some(a) => Ok(Threshold::LogDensity(T::of(a.ln()))),
        None => calibrate_threshold(scores, cfg.target_rejection_rate),
    }
}

/// How well the estimator's `P(T|x)` ranks target rows above reference
/// samples.
fn estimator_auc<T: Scalar>(estimator: &Estimator<T>, targets: &Matrix<T>, artificial: &Matrix<T>) -> Result<f64> {
    let score = |m: &Matrix<T>| -> Result<Vec<T>> { m.rows_iter().map(|r| estimator.estimate(r)).collect() };
    rank_auc(&score(targets)?, &score(artificial)?)
}

/// One training pass: split, fit reference and estimator, calibrate.
fn fit_once<T: Scalar>(targets: &Matrix<T>, cfg: &OccConfig, seed: u64) -> Result<OccModel<T>> {
    let n = targets.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT)));
    let n_held = cfg.heldout_count(n);
    let mut held_idx = order[..n_held].to_vec();
    let mut train_idx = order[n_held..].to_vec();
    held_idx.sort_unstable();
    train_idx.sort_unstable();
    let train = targets.select_rows(&train_idx);
    let held = targets.select_rows(&held_idx);

    let reference = fit_reference(&train)?;
    let n_art = cfg.artificial_count(train.nrows());
    let artificial = sample_artificial(&reference, n_art, derive_seed(seed, STREAM_SAMPLE));
    let x = train.vstack(&artificial)?;
    let labels: Vec<Class> = (0..x.nrows())
        .map(|i| if i < train.nrows() { Class::Target } else { Class::Artificial })
        .collect();
    let estimator = cfg.estimator.fit(&x, &labels, derive_seed(seed, STREAM_ESTIMATOR))?;

    let mut model = OccModel {
        reference,
        estimator,
        prior_t: T::of(cfg.prior_t()),
        threshold: Threshold::RejectNone,
        config: cfg.clone(),
        heldout_scores: Vec::new(),
        report: TrainingReport {
            n_targets: n,
            n_train: train.nrows(),
            n_heldout: n_held,
            n_artificial: n_art,
            selected_repeat: 0,
            repeat_heldout_auc: Vec::new(),
            heldout_auc: f64::NAN,
            heldout_rejection_rate: 0.0,
            cross_validation: None,
        },
    };
    model.heldout_scores = held.rows_iter().map(|r| model.log_p_x_given_t(r)).collect::<Result<_>>()?;
    model.threshold = threshold_for(cfg, &model.heldout_scores)?;
    model.report.heldout_rejection_rate = rejected_fraction(&model.threshold, &model.heldout_scores);
    let probe = sample_artificial(&model.reference, n_held, derive_seed(seed, STREAM_PROBE));
    model.report.heldout_auc = estimator_auc(&model.estimator, &held, &probe)?;
    Ok(model)
}

fn cross_validate<T: Scalar>(targets: &Matrix<T>, cfg: &OccConfig) -> Result<CrossValidation> {
    let k = cfg.cv_folds;
    let n = targets.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_CV)));
    let results: Vec<(f64, f64)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let mut test_idx: Vec<usize> = order.iter().skip(f).step_by(k).copied().collect();
            let mut train_idx: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(i, _)| i % k != f)
                .map(|(_, &r)| r)
                .collect();
            test_idx.sort_unstable();
            train_idx.sort_unstable();
            let fold_seed = derive_seed(cfg.seed, STREAM_FOLD + f as u64);
            let model = fit_once(&targets.select_rows(&train_idx), cfg, fold_seed)?;
            let test = targets.select_rows(&test_idx);
            let scores = model.classify_rows(&test)?;
            let accepted = scores.iter().filter(|s| s.verdict == Verdict::Target).count();
            let probe = sample_artificial(&model.reference, test.nrows(), derive_seed(fold_seed, STREAM_PROBE));
            let auc = estimator_auc(&model.estimator, &test, &probe)?;
            Ok((accepted as f64 / test.nrows() as f64, auc))
        })
        .collect::<Result<_>>()?;
    let fold_tpr: Vec<f64> = results.iter().map(|r| r.0).collect();
    let fold_auc: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(CrossValidation {
        folds: k,
        tpr: fold_tpr.iter().sum::<f64>() / k as f64,
        auc: fold_auc.iter().sum::<f64>() / k as f64,
        fold_tpr,
        fold_auc,
    })
}

/// Train the one-class classifier on target rows.
///
/// `num_repeats` passes run with seeds derived from `cfg.seed`; the pass
/// with the median held-out AUC (lower median, ties by pass index) is kept.
pub fn train_occ<T: Scalar>(targets: &Matrix<T>, cfg: &OccConfig) -> Result<OccModel<T>> {
    cfg.validate()?;
    let n = targets.nrows();
    let needed = MIN_TARGETS.max(cfg.cv_folds);
    if n < needed {
        return Err(Error::TooFewTargets { needed, got: n });
    }
    let repeats: Vec<OccModel<T>> = (0..cfg.num_repeats)
        .into_par_iter()
        .map(|r| fit_once(targets, cfg, derive_seed(cfg.seed, STREAM_REPEAT + r as u64)))
        .collect::<Result<_>>()?;
    let aucs: Vec<f64> = repeats.iter().map(|m| m.report.heldout_auc).collect();
    let mut rank: Vec<usize> = (0..aucs.len()).collect();
    rank.sort_by(|&a, &b| aucs[a].total_cmp(&aucs[b]).then(a.cmp(&b)));
    let chosen = rank[(rank.len() - 1) / 2];

    let cross_validation = if cfg.cv_folds >= 2 {
        Some(cross_validate(targets, cfg)?)
    } else {
        None
    };
    let mut model = repeats.into_iter().nth(chosen).expect("chosen < num_repeats");
    model.report.selected_repeat = chosen;
    model.report.repeat_heldout_auc = aucs;
    model.report.cross_validation = cross_validation;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub trr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_trr: f64,
    pub curve: Vec<SweepPoint>,
}

/// Recalibrate `model` at every rate in `grid` and measure the AUC of the
/// resulting accept/reject decisions on labeled validation rows. The best
/// rate maximizes that AUC, ties going to the smallest rate.
pub fn sweep_trr<T: Scalar>(model: &OccModel<T>, validation: &Matrix<T>, truth: &[Label], grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("calibration grid is empty".into()));
    }
    if validation.nrows() != truth.len() {
        return Err(Error::LengthMismatch(validation.nrows(), truth.len()));
    }
    if !(truth.contains(&Label::Normal) && truth.contains(&Label::Attack)) {
        return Err(Error::SingleClassValidation);
    }
    let scores: Vec<T> = model.classify_rows(validation)?.iter().map(|s| s.log_p_x_given_t).collect();
    let mut curve = Vec::with_capacity(grid.len());
    for &trr in grid {
        let threshold = calibrate_threshold(&model.heldout_scores, trr)?;
        let hard: Vec<f64> = scores.iter().map(|&s| if threshold.rejects(s) { 0.0 } else { 1.0 }).collect();
        curve.push(SweepPoint {
            trr,
            auc: roc_auc(&hard, truth)?,
        });
    }
    let best = curve
        .iter()
        .reduce(|b, p| {
            if p.auc > b.auc || (p.auc == b.auc && p.trr < b.trr) {
                p
            } else {
                b
            }
        })
        .expect("grid is non-empty");
    Ok(SweepResult {
        best_trr: best.trr,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{ForestConfig, RbfnEstimator};
    use proptest::prelude::*;

    /// A model whose estimator returns the constant `p` everywhere.
    fn constant_model(p: f64, reference: ReferenceDistribution<f64>, threshold: Threshold<f64>) -> OccModel<f64> {
        let h = reference.dim();
        OccModel {
            estimator: Estimator::Rbfn(RbfnEstimator {
                centers: Matrix::zeros(1, h),
                width: 1.0,
                weights: vec![0.0],
                bias: p,
            }),
            reference,
            prior_t: 0.5,
            threshold,
            config: OccConfig::default(),
            heldout_scores: vec![],
            report: TrainingReport {
                n_targets: 0,
                n_train: 0,
                n_heldout: 0,
                n_artificial: 0,
                selected_repeat: 0,
                repeat_heldout_auc: vec![],
                heldout_auc: 0.5,
                heldout_rejection_rate: 0.0,
                cross_validation: None,
            },
        }
    }

    fn standard(h: usize) -> ReferenceDistribution<f64> {
        ReferenceDistribution {
            means: vec![0.0; h],
            stds: vec![1.0; h],
        }
    }

    /// Two tight clusters at `±3` on every attribute, interleaved.
    fn clustered_targets(n: usize, h: usize, seed: u64) -> Matrix<f64> {
        let noise = sample_artificial(&standard(h), n, seed);
        let data = noise
            .rows_iter()
            .enumerate()
            .flat_map(|(i, r)| {
                let c = if i % 2 == 0 { 3.0 } else { -3.0 };
                r.iter().map(move |&z| c + 0.5 * z).collect::<Vec<_>>()
            })
            .collect();
        Matrix::from_row_major(n, h, data).unwrap()
    }

    #[test]
    fn reference_moments() {
        let x = Matrix::from_row_major(2, 1, vec![0.0, 2.0]).unwrap();
        let r = fit_reference(&x).unwrap();
        assert_eq!((r.means[0], r.stds[0]), (1.0, 1.0));
        let c = Matrix::from_row_major(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(fit_reference(&c).unwrap().stds[0], 1e-6);
        assert!(matches!(fit_reference(&Matrix::<f64>::zeros(0, 2)), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn reference_of_standardized_sample() {
        let r = fit_reference(&sample_artificial(&standard(3), 20000, 5)).unwrap();
        for j in 0..3 {
            assert!(r.means[j].abs() < 0.05 && (r.stds[j] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn standard_normal_log_density() {
        let r = standard(1);
        assert!((reference_log_density(&r, &[0.0]).unwrap() + 0.918938533).abs() < 1e-8);
        assert!((reference_log_density(&r, &[1.0]).unwrap() + 1.418938533).abs() < 1e-8);
        assert!((reference_log_density(&standard(2), &[0.0, 0.0]).unwrap() + 1.837877066).abs() < 1e-8);
        assert!(matches!(
            reference_log_density(&r, &[0.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn artificial_sampling() {
        let r = standard(4);
        assert_eq!(sample_artificial(&r, 50, 3), sample_artificial(&r, 50, 3));
        assert_ne!(sample_artificial(&r, 50, 3), sample_artificial(&r, 50, 4));
        let big = sample_artificial(&standard(1), 100_000, 11);
        let mean = big.as_slice().iter().sum::<f64>() / 1e5;
        assert!(mean.abs() < 4.0 / 1e5f64.sqrt());
    }

    #[test]
    fn bayes_examples() {
        let lq = 0.1f64.ln();
        assert_eq!(combine_bayes(0.5, lq, 0.5).unwrap(), lq);
        assert!((combine_bayes(0.8, lq, 0.5).unwrap().exp() - 0.4).abs() < 1e-12);
        assert!((combine_bayes(0.5, lq, 0.25).unwrap().exp() - 0.3).abs() < 1e-12);
        assert!(matches!(combine_bayes(1.0, lq, 0.5), Err(Error::InvalidProbability(_))));
        assert!(matches!(combine_bayes(0.5, lq, 1.0), Err(Error::InvalidProbability(_))));
    }

    #[test]
    fn calibration_examples() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(calibrate_threshold(&scores, 0.05).unwrap(), Threshold::LogDensity(5.0));
        assert_eq!(calibrate_threshold(&scores, 0.0).unwrap(), Threshold::RejectNone);
        assert_eq!(calibrate_threshold(&[7.0], 0.05).unwrap(), Threshold::RejectNone);
        assert!(matches!(calibrate_threshold::<f64>(&[], 0.05), Err(Error::EmptyScores)));
        assert_eq!(rejection_count(0.29, 100), 29);
    }

    #[test]
    fn calibration_steps_below_ties() {
        let t = calibrate_threshold(&[1.0, 2.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(t, Threshold::LogDensity(1.0));
        assert_eq!(calibrate_threshold(&[2.0, 2.0, 2.0], 0.5).unwrap(), Threshold::RejectNone);
    }

    #[test]
    fn reject_none_accepts_everything() {
        let m = constant_model(1e-6, standard(2), Threshold::RejectNone);
        assert_eq!(m.classify(&[1e6, -1e6]).unwrap().verdict, Verdict::Target);
    }

    #[test]
    fn boundary_score_is_anomalous() {
        let mut m = constant_model(0.7, standard(2), Threshold::RejectNone);
        let s = m.classify(&[0.3, -1.0]).unwrap().log_p_x_given_t;
        m.threshold = Threshold::LogDensity(s);
        assert_eq!(m.classify(&[0.3, -1.0]).unwrap().verdict, Verdict::Anomaly);
        assert_eq!(m.classify(&[0.0, 0.0]).unwrap().verdict, Verdict::Target);
    }

    #[test]
    fn far_point_is_anomalous() {
        let targets = clustered_targets(400, 3, 1);
        let cfg = OccConfig {
            num_repeats: 1,
            cv_folds: 0,
            ..OccConfig::default()
        };
        let model = train_occ(&targets, &cfg).unwrap();
        let x: Vec<f64> = (0..3).map(|j| model.reference.means[j] + 10.0 * model.reference.stds[j]).collect();
        let s = model.classify(&x).unwrap();
        let la: f64 = (0..3)
            .map(|j| {
                let sd = model.reference.stds[j];
                -(2.0 * std::f64::consts::PI).sqrt().ln() - sd.ln() - 50.0
            })
            .sum();
        let hand = la + (s.p_t_given_x / (1.0 - s.p_t_given_x)).ln();
        assert!((s.log_p_x_given_t - hand).abs() < 1e-9);
        assert_eq!(s.verdict, Verdict::Anomaly);
    }

    #[test]
    fn balanced_training_set() {
        let cfg = OccConfig::default();
        assert_eq!(cfg.artificial_count(25689), 25689);
        assert_eq!(cfg.prior_t(), 0.5);
        let skewed = OccConfig {
            proportion_generated: 0.75,
            ..OccConfig::default()
        };
        assert_eq!(skewed.artificial_count(100), 300);
    }

    #[test]
    fn training_is_deterministic_and_calibrated() {
        let targets = clustered_targets(300, 4, 2);
        let cfg = OccConfig {
            num_repeats: 3,
            cv_folds: 3,
            seed: 17,
            ..OccConfig::default()
        };
        let a = train_occ(&targets, &cfg).unwrap();
        let b = train_occ(&targets, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.report.n_heldout, 30);
        assert_eq!(a.report.n_artificial, a.report.n_train);
        assert_eq!(a.prior_t, 0.5);
        assert!(a.report.heldout_rejection_rate <= 0.05 + 0.03);
        assert_eq!(a.report.repeat_heldout_auc.len(), 3);
        let cv = a.report.cross_validation.as_ref().unwrap();
        assert_eq!(cv.fold_tpr.len(), 3);
        assert!(cv.auc > 0.5);
        let mut sorted = a.report.repeat_heldout_auc.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(a.report.heldout_auc, sorted[1]);
    }

    #[test]
    fn forest_arm_trains() {
        let targets = clustered_targets(200, 4, 3);
        let cfg = OccConfig {
            num_repeats: 1,
            cv_folds: 0,
            estimator: EstimatorConfig::Forest(ForestConfig {
                n_trees: 10,
                ..ForestConfig::default()
            }),
            ..OccConfig::default()
        };
        let m = train_occ(&targets, &cfg).unwrap();
        assert!(m.report.heldout_auc > 0.5);
    }

    #[test]
    fn too_few_targets() {
        let targets = clustered_targets(19, 2, 0);
        assert!(matches!(
            train_occ(&targets, &OccConfig::default()),
            Err(Error::TooFewTargets { needed: 20, got: 19 })
        ));
    }

    #[test]
    fn absolute_threshold_override() {
        let targets = clustered_targets(100, 2, 4);
        let cfg = OccConfig {
            num_repeats: 1,
            cv_folds: 0,
            absolute_threshold: Some(0.05),
            ..OccConfig::default()
        };
        let m = train_occ(&targets, &cfg).unwrap();
        assert_eq!(m.threshold, Threshold::LogDensity(0.05f64.ln()));
    }

    fn sweep_fixture() -> (OccModel<f64>, Matrix<f64>, Vec<Label>) {
        let targets = clustered_targets(300, 2, 6);
        let cfg = OccConfig {
            num_repeats: 1,
            cv_folds: 0,
            ..OccConfig::default()
        };
        let model = train_occ(&targets, &cfg).unwrap();
        let normal = clustered_targets(60, 2, 7);
        let attack = sample_artificial(
            &ReferenceDistribution {
                means: vec![2.0, -2.0],
                stds: vec![1.5, 1.5],
            },
            60,
            8,
        );
        let x = normal.vstack(&attack).unwrap();
        let truth = [vec![Label::Normal; 60], vec![Label::Attack; 60]].concat();
        (model, x, truth)
    }

    #[test]
    fn sweep_contract() {
        let (model, x, truth) = sweep_fixture();
        let one = sweep_trr(&model, &x, &truth, &[0.05]).unwrap();
        assert_eq!(one.best_trr, 0.05);
        let grid = [0.01, 0.05, 0.1, 0.2, 0.4];
        let res = sweep_trr(&model, &x, &truth, &grid).unwrap();
        assert_eq!(res.curve.len(), 5);
        for p in &res.curve {
            let m = model.with_trr(p.trr).unwrap();
            let mut cm = [[0.0f64; 2]; 2];
            for (row, &t) in x.rows_iter().zip(&truth) {
                let accepted = m.classify(row).unwrap().verdict == Verdict::Target;
                cm[(t == Label::Normal) as usize][accepted as usize] += 1.0;
            }
            let tpr = cm[1][1] / (cm[1][0] + cm[1][1]);
            let tnr = cm[0][0] / (cm[0][0] + cm[0][1]);
            assert!((p.auc - (tpr + tnr) / 2.0).abs() < 1e-12);
        }
        let max = res.curve.iter().map(|p| p.auc).fold(f64::MIN, f64::max);
        let first = res.curve.iter().find(|p| p.auc == max).unwrap();
        assert_eq!(res.best_trr, first.trr);
        assert!(matches!(
            sweep_trr(&model, &x, &vec![Label::Normal; x.nrows()], &grid),
            Err(Error::SingleClassValidation)
        ));
    }

    proptest! {
        #[test]
        fn log_space_identity(pi in 0usize..5, q_exp in -300.0f64..0.0) {
            let p = [1e-6, 0.01, 0.5, 0.99, 1.0 - 1e-6][pi];
            let q = 10f64.powf(q_exp);
            let got = combine_bayes(p, q.ln(), 0.5).unwrap().exp();
            let want = p / (1.0 - p) * q;
            prop_assert!(((got - want) / want).abs() < 1e-12, "{got} vs {want}");
        }

        #[test]
        fn combine_is_increasing(p in 1e-6f64..0.999, dp in 1e-4f64..1e-3, la in -500.0f64..0.0, dl in 1e-6f64..10.0, prior in 0.01f64..0.99) {
            let base = combine_bayes(p, la, prior).unwrap();
            prop_assert!(combine_bayes((p + dp).min(1.0 - 1e-6), la, prior).unwrap() > base);
            prop_assert!(combine_bayes(p, la + dl, prior).unwrap() > base);
        }

        #[test]
        fn calibration_is_exact(
            scores in prop::collection::hash_set(-1_000_000i64..1_000_000, 1..300),
            per_mille in 0u32..1000,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 / 7.0).collect();
            let trr = per_mille as f64 / 1000.0;
            let t = calibrate_threshold(&scores, trr).unwrap();
            let rejected = scores.iter().filter(|&&s| t.rejects(s)).count();
            prop_assert_eq!(rejected, per_mille as usize * scores.len() / 1000);
        }

        #[test]
        fn lowering_threshold_keeps_targets(s in -1e3f64..1e3, t in -1e3f64..1e3, drop in 0.0f64..1e3) {
            let high = Threshold::LogDensity(t);
            let low = Threshold::LogDensity(t - drop);
            if !high.rejects(s) {
                prop_assert!(!low.rejects(s));
            }
            prop_assert!(!Threshold::RejectNone.rejects(s));
        }
    }
}

//! End-to-end training and testing: configuration files, model files and
//! the run reports printed by the `occ` binary.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eigentraces::{fit_eigenmodel, EigenModel};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, FeatureSubset, ForestConfig, RbfnConfig};
use crate::eval::{compute_metrics, rank_auc, ConfusionMatrix, MetricsReport};
use crate::occ::{sweep_trr, train_occ, OccConfig, OccModel, SweepResult, Threshold, Verdict};
use crate::scalar::Scalar;
use crate::trace::{Dataset, Label};
use crate::window::{window_dataset, WindowConfig, WindowMatrix};

pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to train a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window: WindowConfig,
    /// Eigentraces kept; `None` keeps all `d`.
    pub components: Option<usize>,
    /// Center windows on the training mean before projecting.
    pub center: bool,
    pub occ: OccConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: WindowConfig::default(),
            components: None,
            center: false,
            occ: OccConfig::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum HPrime {
    Count(usize),
    Rule(String),
}

/// Flat key layout of the TOML configuration file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    num_repeats: Option<usize>,
    percentage_heldout: Option<f64>,
    proportion_generated: Option<f64>,
    target_rejection_rate: Option<f64>,
    estimator: Option<String>,
    m_clusters: Option<usize>,
    min_std: Option<f64>,
    ridge: Option<f64>,
    n_trees: Option<usize>,
    h_prime: Option<HPrime>,
    bootstrap: Option<bool>,
    max_depth: Option<usize>,
    min_leaf: Option<usize>,
    seed: Option<u64>,
    absolute_threshold: Option<f64>,
    cv_folds: Option<usize>,
    window_size: Option<usize>,
    shift: Option<usize>,
    pad: Option<f64>,
    drop_incomplete: Option<bool>,
    components: Option<usize>,
    center_before_project: Option<bool>,
}

fn parse_h_prime(h: HPrime) -> Result<FeatureSubset> {
    match h {
        HPrime::Count(n) if n >= 1 => Ok(FeatureSubset::Fixed(n)),
        HPrime::Count(_) => Err(Error::InvalidConfig("h_prime must be >= 1".into())),
        HPrime::Rule(r) => match r.as_str() {
            "log2" => Ok(FeatureSubset::Log2),
            "half_sqrt" => Ok(FeatureSubset::HalfSqrt),
            "sqrt" => Ok(FeatureSubset::Sqrt),
            "twice_sqrt" => Ok(FeatureSubset::TwiceSqrt),
            other => Err(Error::InvalidConfig(format!(
                "h_prime must be a count or one of log2, half_sqrt, sqrt, twice_sqrt; got {other:?}"
            ))),
        },
    }
}

impl FromStr for PipelineConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        let mut cfg = PipelineConfig::default();
        let occ = &mut cfg.occ;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(occ.num_repeats, f.num_repeats);
        set!(occ.percentage_heldout, f.percentage_heldout);
        set!(occ.proportion_generated, f.proportion_generated);
        set!(occ.target_rejection_rate, f.target_rejection_rate);
        set!(occ.seed, f.seed);
        set!(occ.cv_folds, f.cv_folds);
        occ.absolute_threshold = f.absolute_threshold;

        let rbfn_keys = f.m_clusters.is_some() || f.min_std.is_some() || f.ridge.is_some();
        let forest_keys =
            f.n_trees.is_some() || f.h_prime.is_some() || f.bootstrap.is_some() || f.max_depth.is_some() || f.min_leaf.is_some();
        occ.estimator = match f.estimator.as_deref().unwrap_or("rbfn") {
            "rbfn" => {
                if forest_keys {
                    return Err(Error::InvalidConfig("forest keys given for estimator \"rbfn\"".into()));
                }
                let mut r = RbfnConfig::default();
                set!(r.m_clusters, f.m_clusters);
                set!(r.min_std, f.min_std);
                set!(r.ridge, f.ridge);
                if r.m_clusters < 1 || !(r.min_std > 0.0) || !(r.ridge >= 0.0) {
                    return Err(Error::InvalidConfig("need m_clusters >= 1, min_std > 0, ridge >= 0".into()));
                }
                EstimatorConfig::Rbfn(r)
            }
            "forest" => {
                if rbfn_keys {
                    return Err(Error::InvalidConfig("rbfn keys given for estimator \"forest\"".into()));
                }
                let mut r = ForestConfig::default();
                set!(r.n_trees, f.n_trees);
                if let Some(h) = f.h_prime {
                    r.h_prime = parse_h_prime(h)?;
                }
                set!(r.bootstrap, f.bootstrap);
                r.max_depth = f.max_depth;
                set!(r.min_leaf, f.min_leaf);
                if r.n_trees < 1 || r.min_leaf < 1 {
                    return Err(Error::InvalidConfig("need n_trees >= 1 and min_leaf >= 1".into()));
                }
                EstimatorConfig::Forest(r)
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "estimator must be \"rbfn\" or \"forest\", got {other:?}"
                )))
            }
        };
        occ.validate()?;

        set!(cfg.window.size, f.window_size);
        set!(cfg.window.shift, f.shift);
        set!(cfg.window.pad, f.pad);
        set!(cfg.window.drop_incomplete, f.drop_incomplete);
        cfg.window.validate()?;
        cfg.components = f.components;
        set!(cfg.center, f.center_before_project);
        Ok(cfg)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path)?
            .parse()
            .map_err(|e| match e {
                Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
                e => e,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub tool: String,
    pub scalar: String,
    pub training_data: String,
    pub training_traces: usize,
    pub training_windows: usize,
}

/// A trained detector as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelFile<T> {
    pub format_version: u32,
    pub window: WindowConfig,
    pub eigen: EigenModel<T>,
    pub occ: OccModel<T>,
    pub metadata: ModelMetadata,
}

impl<T: Scalar> ModelFile<T> {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::ModelFormat(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if v.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                v.format_version
            )));
        }
        let m: ModelFile<T> = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if m.eigen.k != m.occ.dim() || m.eigen.d != m.window.size {
            return Err(Error::ModelFormat("inconsistent dimensions between model parts".into()));
        }
        Ok(m)
    }

    /// Write atomically: the file at `path` is either the old one or the
    /// complete new one.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Check a requested window configuration against the trained one. The
    /// shift may differ; size and padding may not.
    pub fn window_for(&self, requested: Option<WindowOverride>) -> Result<WindowConfig> {
        let mut w = self.window;
        let Some(r) = requested else {
            return Ok(w);
        };
        if let Some(size) = r.size {
            if size != w.size {
                return Err(Error::DimensionMismatch {
                    expected: w.size,
                    actual: size,
                });
            }
        }
        if let Some(pad) = r.pad {
            if pad != w.pad {
                return Err(Error::InvalidConfig(format!("model was trained with pad {}, got {pad}", w.pad)));
            }
        }
        if let Some(shift) = r.shift {
            w.shift = shift;
        }
        w.validate()?;
        Ok(w)
    }
}

/// Window flags given on the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowOverride {
    pub size: Option<usize>,
    pub shift: Option<usize>,
    pub pad: Option<f64>,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Window, fit the Eigenspace, project and train the classifier.
pub fn train_model<T: Scalar>(data: &Dataset, cfg: &PipelineConfig) -> Result<ModelFile<T>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training dataset has no traces"));
    }
    let windows: WindowMatrix<T> = window_dataset(data, &cfg.window)?;
    let k = cfg.components.unwrap_or(cfg.window.size);
    let mut eigen = fit_eigenmodel(&windows, k)?;
    eigen.center = cfg.center;
    let z = eigen.project_matrix(&windows)?;
    let occ = train_occ(&z, &cfg.occ)?;
    Ok(ModelFile {
        format_version: FORMAT_VERSION,
        window: cfg.window,
        eigen,
        occ,
        metadata: ModelMetadata {
            tool: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            scalar: std::any::type_name::<T>().to_string(),
            training_data: data.provenance.clone(),
            training_traces: data.len(),
            training_windows: windows.len(),
        },
    })
}

/// Verdict for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub trace: String,
    pub offset: usize,
    pub label: Label,
    pub log_p_x_given_t: f64,
    pub p_t_given_x: f64,
    pub verdict: Verdict,
}

/// Window, project and classify every trace, in dataset order.
pub fn score_dataset<T: Scalar>(model: &ModelFile<T>, data: &Dataset, window: &WindowConfig) -> Result<Vec<WindowRecord>> {
    if window.size != model.eigen.d {
        return Err(Error::DimensionMismatch {
            expected: model.eigen.d,
            actual: window.size,
        });
    }
    let windows: WindowMatrix<T> = window_dataset(data, window)?;
    let z = model.eigen.project_matrix(&windows)?;
    let scores = model.occ.classify_rows(&z)?;
    Ok(scores
        .into_iter()
        .enumerate()
        .map(|(j, s)| WindowRecord {
            trace: windows.trace_id(j).to_string(),
            offset: windows.origins[j].offset,
            label: windows.labels[j],
            log_p_x_given_t: s.log_p_x_given_t.as_f64(),
            p_t_given_x: s.p_t_given_x.as_f64(),
            verdict: s.verdict,
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub traces_normal: usize,
    pub traces_attack: usize,
    pub windows_normal: usize,
    pub windows_attack: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub target: usize,
    pub anomaly: usize,
}

/// Settings the run was made with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub window: WindowConfig,
    pub components: usize,
    pub center: bool,
    pub estimator: String,
    pub target_rejection_rate: f64,
    pub threshold: Threshold<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: DatasetSummary,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub verdicts: VerdictCounts,
    pub config: ConfigEcho,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

fn config_echo<T: Scalar>(model: &ModelFile<T>, window: &WindowConfig) -> ConfigEcho {
    ConfigEcho {
        window: *window,
        components: model.eigen.k,
        center: model.eigen.center,
        estimator: model.occ.config.estimator.name().to_string(),
        target_rejection_rate: model.occ.config.target_rejection_rate,
        threshold: match model.occ.threshold {
            Threshold::RejectNone => Threshold::RejectNone,
            Threshold::LogDensity(t) => Threshold::LogDensity(t.as_f64()),
        },
        seed: model.occ.config.seed,
    }
}

/// Per-window confusion matrix and metrics of a labeled dataset.
pub fn evaluate_model<T: Scalar>(
    model: &ModelFile<T>,
    data: &Dataset,
    window: &WindowConfig,
) -> Result<(RunReport, Vec<WindowRecord>)> {
    let records = score_dataset(model, data, window)?;
    let mut cm = ConfusionMatrix::default();
    let mut verdicts = VerdictCounts::default();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in &records {
        cm.record(r.label, r.verdict.as_label())?;
        match r.verdict {
            Verdict::Target => verdicts.target += 1,
            Verdict::Anomaly => verdicts.anomaly += 1,
        }
        match r.label {
            Label::Normal => pos.push(r.log_p_x_given_t),
            _ => neg.push(r.log_p_x_given_t),
        }
    }
    let auc = rank_auc(&pos, &neg).ok();
    let report = RunReport {
        dataset: DatasetSummary {
            source: data.provenance.clone(),
            traces_normal: data.count(Label::Normal),
            traces_attack: data.count(Label::Attack),
            windows_normal: pos.len(),
            windows_attack: neg.len(),
        },
        confusion: cm,
        metrics: compute_metrics(&cm, auc),
        verdicts,
        config: config_echo(model, window),
        wall_time_secs: None,
    };
    Ok((report, records))
}

/// Aggregated verdict for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceVerdict {
    pub trace: String,
    pub windows: usize,
    pub anomalous: usize,
    pub fraction: f64,
    pub flagged: bool,
}

/// A trace is flagged when its fraction of anomalous windows exceeds
/// `theta`; at `theta = 1` it is flagged when every window is anomalous.
pub fn aggregate_traces(records: &[WindowRecord], theta: f64) -> Result<Vec<TraceVerdict>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidConfig(format!("aggregation threshold must be in [0, 1], got {theta}")));
    }
    let mut out: Vec<TraceVerdict> = Vec::new();
    for r in records {
        if out.last().is_none_or(|t| t.trace != r.trace) {
            out.push(TraceVerdict {
                trace: r.trace.clone(),
                windows: 0,
                anomalous: 0,
                fraction: 0.0,
                flagged: false,
            });
        }
        let t = out.last_mut().expect("pushed above");
        t.windows += 1;
        if r.verdict == Verdict::Anomaly {
            t.anomalous += 1;
        }
    }
    for t in &mut out {
        t.fraction = t.anomalous as f64 / t.windows as f64;
        t.flagged = t.anomalous > 0 && (t.fraction > theta || t.anomalous == t.windows);
    }
    Ok(out)
}

/// Train on `train`, then calibrate over `grid` against labeled
/// validation data. Returns the trained model and the sweep.
pub fn sweep_model<T: Scalar>(
    train: &Dataset,
    validation: &Dataset,
    cfg: &PipelineConfig,
    grid: &[f64],
) -> Result<(ModelFile<T>, SweepResult)> {
    let model: ModelFile<T> = train_model(train, cfg)?;
    let windows: WindowMatrix<T> = window_dataset(validation, &cfg.window)?;
    let z = model.eigen.project_matrix(&windows)?;
    let result = sweep_trr(&model.occ, &z, &windows.labels, grid)?;
    Ok((model, result))
}

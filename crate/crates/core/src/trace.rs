//! System-call trace ingestion.
//!
//! Trace files hold one whitespace-separated sequence of non-negative
//! system-call numbers. Two on-disk layouts are understood:
//!
//! * ADFA-LD: `Training_Data_Master/*.txt`, `Validation_Data_Master/*.txt`
//!   and `Attack_Data_Master/<attack>_<k>/*.txt`.
//! * flat labeled: `normal/*.txt` and `attack/*.txt`.
//!
//! Files are always read in lexicographic path order so that a dataset is
//! assembled identically on every platform.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Attack,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallTrace {
    pub id: String,
    pub label: Label,
    calls: Vec<u32>,
}

impl SyscallTrace {
    /// Fails with `EmptyTrace` when `calls` is empty.
    pub fn new(id: impl Into<String>, label: Label, calls: Vec<u32>) -> Result<Self> {
        if calls.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok(SyscallTrace {
            id: id.into(),
            label,
            calls,
        })
    }

    pub fn calls(&self) -> &[u32] {
        &self.calls
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    /// Space-separated text form, as found in ADFA-LD files.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.calls.len() * 4);
        for (i, c) in self.calls.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&c.to_string());
        }
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Training,
    Testing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    AdfaLd,
    FlatLabeled,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adfa" | "adfa-ld" | "adfald" => Ok(Layout::AdfaLd),
            "flat" | "flat-labeled" => Ok(Layout::FlatLabeled),
            other => Err(Error::InvalidConfig(format!("unknown layout {other:?}"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::AdfaLd => "adfa",
            Layout::FlatLabeled => "flat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub traces: Vec<SyscallTrace>,
    pub role: Role,
    pub provenance: String,
}

impl Dataset {
    /// Fails if a training dataset would contain a non-Normal trace.
    pub fn new(traces: Vec<SyscallTrace>, role: Role, provenance: impl Into<String>) -> Result<Self> {
        if role == Role::Training {
            if let Some(t) = traces.iter().find(|t| t.label != Label::Normal) {
                return Err(Error::InvalidConfig(format!(
                    "training dataset holds non-normal trace {}",
                    t.id
                )));
            }
        }
        Ok(Dataset {
            traces,
            role,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.traces.iter().filter(|t| t.label == label).count()
    }

    /// Write the traces in the flat labeled layout under `root`.
    pub fn write_flat(&self, root: &Path) -> Result<()> {
        for sub in ["normal", "attack"] {
            fs::create_dir_all(root.join(sub))?;
        }
        for t in &self.traces {
            let sub = match t.label {
                Label::Attack => "attack",
                _ => "normal",
            };
            let name = t.id.rsplit('/').next().unwrap_or(&t.id);
            fs::write(root.join(sub).join(format!("{name}.txt")), t.to_text())?;
        }
        Ok(())
    }
}

/// Parse one trace file body. The returned trace is `Unlabeled`.
pub fn parse_trace_file(id: impl Into<String>, text: &str) -> Result<SyscallTrace> {
    let mut calls = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let token = &text[start..i];
        let value = if token.bytes().all(|b| b.is_ascii_digit()) {
            token.parse::<u32>().ok()
        } else {
            None
        };
        match value {
            Some(v) => calls.push(v),
            None => {
                return Err(Error::MalformedToken {
                    token: token.to_string(),
                    offset: start,
                })
            }
        }
    }
    SyscallTrace::new(id, Label::Unlabeled, calls)
}

fn list_trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if !hidden && entry.file_type()?.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn list_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn trace_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Read trace files in parallel; the output order equals the input order.
fn read_traces(root: &Path, files: &[(PathBuf, Label)]) -> Result<Vec<SyscallTrace>> {
    files
        .par_iter()
        .map(|(path, label)| {
            let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
            parse_trace_file(trace_id(root, path), &text)
                .map(|t| t.with_label(*label))
                .map_err(|e| e.in_file(path))
        })
        .collect()
}

/// Load a labeled dataset from `root` in the given layout.
///
/// Under `Role::Training` only normal traces are read. Under
/// `Role::Testing` the ADFA-LD layout combines validation and training
/// normals with every attack subdirectory.
pub fn load_dataset(root: &Path, layout: Layout, role: Role) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    let mut files: Vec<(PathBuf, Label)> = Vec::new();
    match layout {
        Layout::AdfaLd => {
            let training = root.join("Training_Data_Master");
            if !training.is_dir() {
                return Err(Error::MissingDirectory(training));
            }
            if role == Role::Testing {
                let validation = root.join("Validation_Data_Master");
                if validation.is_dir() {
                    files.extend(list_trace_files(&validation)?.into_iter().map(|p| (p, Label::Normal)));
                }
            }
            files.extend(list_trace_files(&training)?.into_iter().map(|p| (p, Label::Normal)));
            if role == Role::Testing {
                let attack = root.join("Attack_Data_Master");
                if attack.is_dir() {
                    for sub in list_subdirs(&attack)? {
                        files.extend(list_trace_files(&sub)?.into_iter().map(|p| (p, Label::Attack)));
                    }
                }
            }
        }
        Layout::FlatLabeled => {
            let normal = root.join("normal");
            let attack = root.join("attack");
            if !normal.is_dir() && !attack.is_dir() {
                return Err(Error::MissingDirectory(normal));
            }
            if normal.is_dir() {
                files.extend(list_trace_files(&normal)?.into_iter().map(|p| (p, Label::Normal)));
            }
            if role == Role::Testing && attack.is_dir() {
                files.extend(list_trace_files(&attack)?.into_iter().map(|p| (p, Label::Attack)));
            }
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let traces = read_traces(root, &files)?;
    Dataset::new(traces, role, format!("{} ({layout})", root.display()))
}

/// Load unlabeled traces from a single file or from every file below a
/// directory (recursively, in sorted path order).
pub fn load_unlabeled(path: &Path) -> Result<Vec<SyscallTrace>> {
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        return parse_trace_file(id, &text).map_err(|e| e.in_file(path)).map(|t| vec![t]);
    }
    if !path.is_dir() {
        return Err(Error::MissingDirectory(path.to_path_buf()));
    }
    let mut files = Vec::new();
    let mut pending = vec![path.to_path_buf()];
    while let Some(dir) = pending.pop() {
        files.extend(list_trace_files(&dir)?.into_iter().map(|p| (p, Label::Unlabeled)));
        let mut subs = list_subdirs(&dir)?;
        subs.reverse();
        pending.extend(subs);
    }
    if files.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    read_traces(path, &files)
}

/// Parameters for the two-Markov-chain synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub alphabet_size: u32,
    pub normal_transition_seed: u64,
    pub attack_transition_seed: u64,
    /// Normal traces in the training set.
    pub n_normal: usize,
    /// Normal traces in the testing set.
    pub n_test_normal: usize,
    /// Attack traces in the testing set.
    pub n_attack: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Successor states per chain state.
    pub branching: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alphabet_size: 50,
            normal_transition_seed: 7,
            attack_transition_seed: 8,
            n_normal: 200,
            n_test_normal: 100,
            n_attack: 100,
            min_len: 100,
            max_len: 400,
            branching: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2 {
            return Err(Error::InvalidConfig("alphabet_size must be >= 2".into()));
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return Err(Error::InvalidConfig("need 1 <= min_len <= max_len".into()));
        }
        if self.branching < 1 || self.branching > self.alphabet_size as usize {
            return Err(Error::InvalidConfig("need 1 <= branching <= alphabet_size".into()));
        }
        Ok(())
    }
}

/// First-order Markov chain over system-call numbers.
struct MarkovChain {
    /// Per state: successor states and cumulative probabilities.
    successors: Vec<Vec<(u32, f64)>>,
    rng: ChaCha8Rng,
}

impl MarkovChain {
    fn random(alphabet: u32, branching: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let successors = (0..alphabet)
            .map(|_| {
                let next = rand::seq::index::sample(&mut rng, alphabet as usize, branching);
                let weights: Vec<f64> = (0..branching).map(|_| rng.random_range(0.05..1.0f64).powi(2)).collect();
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                next.iter()
                    .zip(weights)
                    .map(|(s, w)| {
                        acc += w / total;
                        (s as u32, acc)
                    })
                    .collect()
            })
            .collect();
        MarkovChain { successors, rng }
    }

    fn walk(&mut self, len: usize) -> Vec<u32> {
        let mut state = self.rng.random_range(0..self.successors.len() as u32);
        let mut out = Vec::with_capacity(len);
        out.push(state);
        while out.len() < len {
            let u: f64 = self.rng.random();
            let succ = &self.successors[state as usize];
            state = succ
                .iter()
                .find(|(_, cum)| u < *cum)
                .unwrap_or_else(|| succ.last().expect("branching >= 1"))
                .0;
            out.push(state);
        }
        out
    }

    fn traces(&mut self, prefix: &str, label: Label, n: usize, min_len: usize, max_len: usize) -> Vec<SyscallTrace> {
        (0..n)
            .map(|i| {
                let len = self.rng.random_range(min_len..=max_len);
                SyscallTrace::new(format!("{prefix}_{i:05}"), label, self.walk(len)).expect("len >= 1")
            })
            .collect()
    }
}

/// Deterministic synthetic corpus: normal traces from one random Markov
/// chain, attack traces from a second, independently seeded chain.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut normal = MarkovChain::random(cfg.alphabet_size, cfg.branching, cfg.normal_transition_seed);
    let mut attack = MarkovChain::random(cfg.alphabet_size, cfg.branching, cfg.attack_transition_seed);
    let train = normal.traces("train", Label::Normal, cfg.n_normal, cfg.min_len, cfg.max_len);
    let mut test = normal.traces("normal", Label::Normal, cfg.n_test_normal, cfg.min_len, cfg.max_len);
    test.extend(attack.traces("attack", Label::Attack, cfg.n_attack, cfg.min_len, cfg.max_len));
    let provenance = format!(
        "synthetic (alphabet {}, seeds {}/{})",
        cfg.alphabet_size, cfg.normal_transition_seed, cfg.attack_transition_seed
    );
    Ok((
        Dataset::new(train, Role::Training, provenance.clone())?,
        Dataset::new(test, Role::Testing, provenance)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_plain_sequence() {
        let t = parse_trace_file("a", "6 6 63 6 42").unwrap();
        assert_eq!(t.calls(), &[6, 6, 63, 6, 42]);
        assert_eq!(t.label, Label::Unlabeled);
    }

    #[test]
    fn parses_single_token() {
        assert_eq!(parse_trace_file("a", "174").unwrap().calls(), &[174]);
    }

    #[test]
    fn any_whitespace_separates() {
        assert_eq!(parse_trace_file("a", "6  6\t63\n6").unwrap().calls(), &[6, 6, 63, 6]);
    }

    #[test]
    fn zero_is_a_valid_call() {
        assert_eq!(parse_trace_file("a", "0 1").unwrap().calls(), &[0, 1]);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(parse_trace_file("a", " \n\t"), Err(Error::EmptyTrace)));
    }

    #[test]
    fn malformed_tokens_report_offset() {
        match parse_trace_file("a", "1 2 x3 4") {
            Err(Error::MalformedToken { token, offset }) => {
                assert_eq!(token, "x3");
                assert_eq!(offset, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_trace_file("a", "5 -3"),
            Err(Error::MalformedToken { offset: 2, .. })
        ));
        assert!(matches!(parse_trace_file("a", "1.5"), Err(Error::MalformedToken { .. })));
    }

    #[test]
    fn layout_names() {
        assert_eq!("adfa".parse::<Layout>().unwrap(), Layout::AdfaLd);
        assert_eq!("flat".parse::<Layout>().unwrap(), Layout::FlatLabeled);
        assert!("zip".parse::<Layout>().is_err());
    }

    #[test]
    fn training_dataset_rejects_attacks() {
        let t = SyscallTrace::new("x", Label::Attack, vec![1]).unwrap();
        assert!(Dataset::new(vec![t], Role::Training, "").is_err());
    }

    #[test]
    fn synthetic_counts_and_lengths() {
        let cfg = SynthConfig {
            n_normal: 10,
            n_attack: 0,
            min_len: 20,
            max_len: 30,
            ..SynthConfig::default()
        };
        let (train, test) = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(train.len(), 10);
        assert!(train.traces.iter().all(|t| t.label == Label::Normal));
        assert!(train.traces.iter().all(|t| (20..=30).contains(&t.len())));
        assert_eq!(test.count(Label::Attack), 0);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic_dataset(&cfg).unwrap();
        let b = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let cfg = SynthConfig {
            min_len: 10,
            max_len: 5,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_dataset(&cfg).is_err());
    }

    #[test]
    fn normal_and_attack_histograms_differ() {
        let cfg = SynthConfig {
            alphabet_size: 50,
            n_normal: 200,
            n_attack: 50,
            ..SynthConfig::default()
        };
        let (train, test) = generate_synthetic_dataset(&cfg).unwrap();
        let hist = |traces: &[&SyscallTrace]| {
            let mut h = vec![0f64; 50];
            let mut n = 0f64;
            for t in traces {
                for &c in t.calls() {
                    h[c as usize] += 1.0;
                    n += 1.0;
                }
            }
            h.iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let normal: Vec<_> = train.traces.iter().collect();
        let attack: Vec<_> = test.traces.iter().filter(|t| t.label == Label::Attack).collect();
        let (p, q) = (hist(&normal), hist(&attack));
        let chi2: f64 = p
            .iter()
            .zip(&q)
            .filter(|(a, b)| *a + *b > 0.0)
            .map(|(a, b)| (a - b).powi(2) / (a + b))
            .sum::<f64>()
            * 0.5;
        assert!(chi2 > 0.0, "chi-square distance {chi2}");
    }

    proptest! {
        #[test]
        fn text_round_trip(calls in prop::collection::vec(0u32..100_000, 1..200)) {
            let t = SyscallTrace::new("r", Label::Normal, calls.clone()).unwrap();
            let back = parse_trace_file("r", &t.to_text()).unwrap();
            prop_assert_eq!(back.calls(), &calls[..]);
        }
    }
}

//! Fixed-length windowing of variable-length traces.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::{Dataset, Label, SyscallTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window length `d`.
    pub size: usize,
    /// Shift `s` between consecutive window starts, `1 <= s <= d`.
    pub shift: usize,
    /// Fill value for positions past the end of a trace. Should not be a
    /// valid system-call number.
    pub pad: f64,
    /// Discard the final window of a trace when it needs padding.
    #[serde(default)]
    pub drop_incomplete: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            size: 76,
            shift: 10,
            pad: 0.1,
            drop_incomplete: false,
        }
    }
}

impl WindowConfig {
    pub fn new(size: usize, shift: usize, pad: f64) -> Result<Self> {
        let cfg = WindowConfig {
            size,
            shift,
            pad,
            drop_incomplete: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 1 {
            return Err(Error::InvalidConfig("window size must be >= 1".into()));
        }
        if self.shift < 1 || self.shift > self.size {
            return Err(Error::InvalidConfig(format!(
                "shift must satisfy 1 <= shift <= window size ({}), got {}",
                self.size, self.shift
            )));
        }
        if !self.pad.is_finite() {
            return Err(Error::InvalidConfig("pad must be finite".into()));
        }
        Ok(())
    }

    /// Number of windows produced for a trace of length `len`:
    /// `1 + ceil(max(0, len - d) / s)`, minus the padded tail when dropping.
    pub fn window_count(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        let full = 1 + len.saturating_sub(self.size).div_ceil(self.shift);
        if self.drop_incomplete && last_window_padded(len, self.size, self.shift) {
            full - 1
        } else {
            full
        }
    }
}

fn last_window_padded(len: usize, d: usize, s: usize) -> bool {
    let k = len.saturating_sub(d).div_ceil(s);
    k * s + d > len
}

/// Slide a window over the trace. Window `k` covers positions
/// `k*s ..= k*s + d - 1`; positions past the end hold `cfg.pad`.
pub fn window_trace<T: Scalar>(trace: &SyscallTrace, cfg: &WindowConfig) -> Vec<Vec<T>> {
    let calls = trace.calls();
    let pad = T::of(cfg.pad);
    let n = cfg.window_count(calls.len());
    (0..n)
        .map(|k| {
            let start = k * cfg.shift;
            (start..start + cfg.size)
                .map(|p| calls.get(p).map_or(pad, |&c| T::of(c as f64)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    /// Index into `WindowMatrix::trace_ids`.
    pub trace: usize,
    /// Start position of the window inside its trace.
    pub offset: usize,
}

/// One window with the trace it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow<T> {
    pub values: Vec<T>,
    pub trace_id: String,
    pub offset: usize,
    pub label: Label,
}

/// `d x M` matrix of windows stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix<T> {
    d: usize,
    data: Vec<T>,
    pub origins: Vec<WindowOrigin>,
    pub labels: Vec<Label>,
    pub trace_ids: Vec<String>,
}

impl<T: Scalar> WindowMatrix<T> {
    /// Window length (rows).
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of windows (columns).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn trace_id(&self, j: usize) -> &str {
        &self.trace_ids[self.origins[j].trace]
    }

    /// Debug dump, one window per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (j, col) in self.columns().enumerate() {
            write!(w, "{},{}", self.trace_id(j), self.origins[j].offset)?;
            for v in col {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Stack windows as columns, in input order.
pub fn build_matrix<T: Scalar>(windows: Vec<LabeledWindow<T>>) -> Result<WindowMatrix<T>> {
    let d = windows.first().ok_or(Error::EmptyInput("no windows"))?.values.len();
    let mut data = Vec::with_capacity(d * windows.len());
    let mut origins = Vec::with_capacity(windows.len());
    let mut labels = Vec::with_capacity(windows.len());
    let mut trace_ids: Vec<String> = Vec::new();
    for w in windows {
        if w.values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: w.values.len(),
            });
        }
        if trace_ids.last() != Some(&w.trace_id) {
            trace_ids.push(w.trace_id);
        }
        data.extend_from_slice(&w.values);
        origins.push(WindowOrigin {
            trace: trace_ids.len() - 1,
            offset: w.offset,
        });
        labels.push(w.label);
    }
    Ok(WindowMatrix {
        d,
        data,
        origins,
        labels,
        trace_ids,
    })
}

/// Window every trace of a dataset (in parallel) and stack the result in
/// trace order.
pub fn window_dataset<T: Scalar>(dataset: &Dataset, cfg: &WindowConfig) -> Result<WindowMatrix<T>> {
    cfg.validate()?;
    let per_trace: Vec<Vec<LabeledWindow<T>>> = dataset
        .traces
        .par_iter()
        .map(|t| {
            window_trace::<T>(t, cfg)
                .into_iter()
                .enumerate()
                .map(|(k, values)| LabeledWindow {
                    values,
                    trace_id: t.id.clone(),
                    offset: k * cfg.shift,
                    label: t.label,
                })
                .collect()
        })
        .collect();
    build_matrix(per_trace.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(calls: Vec<u32>) -> SyscallTrace {
        SyscallTrace::new("t", Label::Normal, calls).unwrap()
    }

    #[test]
    fn worked_example_ten_calls() {
        let cfg = WindowConfig::new(6, 5, 0.1).unwrap();
        let w = window_trace::<f64>(&trace((1..=10).collect()), &cfg);
        assert_eq!(
            w,
            vec![
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                vec![6.0, 7.0, 8.0, 9.0, 10.0, 0.1]
            ]
        );
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let cfg = WindowConfig::new(6, 5, 0.1).unwrap();
        let w = window_trace::<f64>(&trace(vec![3; 6]), &cfg);
        assert_eq!(w, vec![vec![3.0; 6]]);
    }

    #[test]
    fn shortest_trace_gets_one_padded_window() {
        let cfg = WindowConfig::default();
        let w = window_trace::<f64>(&trace(vec![5; 75]), &cfg);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 76);
        assert_eq!(w[0][75], 0.1);
        assert!(w[0][..75].iter().all(|&x| x == 5.0));
    }

    #[test]
    fn drop_incomplete_discards_padded_tail() {
        let mut cfg = WindowConfig::new(6, 5, 0.1).unwrap();
        cfg.drop_incomplete = true;
        let w = window_trace::<f64>(&trace((1..=10).collect()), &cfg);
        assert_eq!(w, vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        assert_eq!(cfg.window_count(11), 2);
    }

    #[test]
    fn config_validation() {
        assert!(WindowConfig::new(0, 1, 0.1).is_err());
        assert!(WindowConfig::new(5, 6, 0.1).is_err());
        assert!(WindowConfig::new(5, 0, 0.1).is_err());
        assert!(WindowConfig::new(5, 5, 0.1).is_ok());
    }

    #[test]
    fn build_matrix_shapes() {
        let w = |v: Vec<f64>, id: &str, label| LabeledWindow {
            values: v,
            trace_id: id.into(),
            offset: 0,
            label,
        };
        let m = build_matrix(vec![w(vec![1.0; 6], "a", Label::Normal), w(vec![2.0; 6], "b", Label::Attack)]).unwrap();
        assert_eq!((m.dim(), m.len()), (6, 2));
        assert_eq!(m.column(1), &[2.0; 6]);
        assert_eq!(m.labels, vec![Label::Normal, Label::Attack]);
        assert_eq!(m.trace_id(1), "b");

        assert!(matches!(build_matrix::<f64>(vec![]), Err(Error::EmptyInput(_))));
        let bad = build_matrix(vec![w(vec![1.0; 6], "a", Label::Normal), w(vec![1.0; 5], "a", Label::Normal)]);
        assert!(matches!(bad, Err(Error::DimensionMismatch { expected: 6, actual: 5 })));
    }

    #[test]
    fn csv_dump_has_one_line_per_window() {
        let ds = Dataset::new(vec![trace((1..=10).collect())], crate::trace::Role::Training, "").unwrap();
        let m = window_dataset::<f64>(&ds, &WindowConfig::new(6, 5, 0.1).unwrap()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("t,0,1,2,3"));
    }

    proptest! {
        #[test]
        fn windows_reconstruct_the_trace(
            calls in prop::collection::vec(0u32..400, 1..300),
            d in 1usize..40,
            s_frac in 0.0f64..1.0,
        ) {
            let s = 1 + ((d - 1) as f64 * s_frac) as usize;
            let cfg = WindowConfig::new(d, s, 0.5).unwrap();
            let w = window_trace::<f64>(&trace(calls.clone()), &cfg);
            prop_assert_eq!(w.len(), cfg.window_count(calls.len()));
            let strip = |v: &[f64]| v.iter().take_while(|&&x| x != 0.5).map(|&x| x as u32).collect::<Vec<_>>();
            let mut rebuilt = strip(&w[0]);
            for win in &w[1..] {
                let tail = &win[d - s..];
                rebuilt.extend(strip(tail));
            }
            prop_assert_eq!(rebuilt, calls);
            for win in &w {
                if let Some(p) = win.iter().position(|&x| x == 0.5) {
                    prop_assert!(win[p..].iter().all(|&x| x == 0.5));
                }
            }
        }
    }
}

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use syscall_occ::occ::{Verdict, DEFAULT_TRR_GRID};
use syscall_occ::pipeline::{
    aggregate_traces, evaluate_model, score_dataset, sweep_model, train_model, write_atomic, PipelineConfig,
    WindowOverride,
};
use syscall_occ::trace::{generate_synthetic_dataset, load_dataset, load_unlabeled, Dataset, Label, Layout, Role, SynthConfig};
use syscall_occ::{Error, ModelFile64, Result};

#[derive(Parser)]
#[command(name = "occ", version, about = "One-class anomaly detection on system-call traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct WindowFlags {
    /// Window length d
    #[arg(long)]
    window_size: Option<usize>,
    /// Shift between window starts
    #[arg(long)]
    shift: Option<usize>,
    /// Fill value past the end of a trace
    #[arg(long)]
    pad: Option<f64>,
}

impl WindowFlags {
    fn as_override(self) -> Option<WindowOverride> {
        let o = WindowOverride {
            size: self.window_size,
            shift: self.shift,
            pad: self.pad,
        };
        (o != WindowOverride::default()).then_some(o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on normal traces
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_layout)]
        layout: Layout,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Project windows after subtracting the training mean
        #[arg(long)]
        center_before_project: bool,
        /// Replace the calibrated threshold by a raw density cutoff
        #[arg(long)]
        absolute_threshold: Option<f64>,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Train, then pick the target rejection rate on labeled validation data
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long, value_parser = parse_layout, default_value = "adfa")]
        layout: Layout,
        /// Comma-separated rejection rates
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also save the model recalibrated at the best rate
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a labeled dataset and report detection metrics
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_layout)]
        layout: Layout,
        /// Emit one CSV row per window instead of the report
        #[arg(long)]
        csv: bool,
        /// Include wall-clock time in the report
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Classify unlabeled traces
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Trace file or directory
        #[arg(long)]
        input: PathBuf,
        /// Flag a trace when its anomalous-window fraction exceeds this
        #[arg(long)]
        aggregate: Option<f64>,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Write a synthetic two-chain corpus in the flat layout
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Normal chain seed; the attack chain uses seed + 1
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        alphabet_size: Option<u32>,
        #[arg(long)]
        n_normal: Option<usize>,
        #[arg(long)]
        n_test_normal: Option<usize>,
        #[arg(long)]
        n_attack: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        branching: Option<usize>,
    },
}

fn parse_layout(s: &str) -> std::result::Result<Layout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::ModelFormat(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            layout,
            out,
            seed,
            center_before_project,
            absolute_threshold,
            window,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.occ.seed = s;
            }
            if center_before_project {
                cfg.center = true;
            }
            if absolute_threshold.is_some() {
                cfg.occ.absolute_threshold = absolute_threshold;
            }
            cfg.window.size = window.window_size.unwrap_or(cfg.window.size);
            cfg.window.shift = window.shift.unwrap_or(cfg.window.shift);
            cfg.window.pad = window.pad.unwrap_or(cfg.window.pad);
            cfg.window.validate()?;
            cfg.occ.validate()?;
            let dataset = load_dataset(&data, layout, Role::Training)?;
            let model = train_model::<f64>(&dataset, &cfg)?;
            model.save(&out)?;
            print_json(&model.occ.report)
        }
        Command::Sweep {
            config,
            data,
            validation,
            layout,
            grid,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.occ.seed = s;
            }
            let grid = grid.unwrap_or_else(|| DEFAULT_TRR_GRID.to_vec());
            let train = load_dataset(&data, layout, Role::Training)?;
            let val = load_dataset(&validation, layout, Role::Testing)?;
            let (model, result) = sweep_model::<f64>(&train, &val, &cfg, &grid)?;
            if let Some(out) = out {
                let mut best = model.clone();
                best.occ = model.occ.with_trr(result.best_trr)?;
                best.save(&out)?;
            }
            print_json(&result)
        }
        Command::Evaluate {
            model,
            data,
            layout,
            csv,
            timing,
            window,
        } => {
            let start = Instant::now();
            let model = ModelFile64::load(&model)?;
            let wcfg = model.window_for(window.as_override())?;
            let dataset = load_dataset(&data, layout, Role::Testing)?;
            let (mut report, records) = evaluate_model(&model, &dataset, &wcfg)?;
            if csv {
                let mut out = BufWriter::new(io::stdout().lock());
                writeln!(out, "trace,offset,label,log_p_x_given_t,p_t_given_x,verdict")?;
                for r in &records {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        r.trace,
                        r.offset,
                        label_name(r.label),
                        r.log_p_x_given_t,
                        r.p_t_given_x,
                        verdict_name(r.verdict)
                    )?;
                }
                out.flush()?;
                return Ok(());
            }
            if timing {
                report.wall_time_secs = Some(start.elapsed().as_secs_f64());
            }
            print_json(&report)
        }
        Command::Detect {
            model,
            input,
            aggregate,
            window,
        } => {
            let model = ModelFile64::load(&model)?;
            let wcfg = model.window_for(window.as_override())?;
            let traces = load_unlabeled(&input)?;
            let dataset = Dataset::new(traces, Role::Testing, input.display().to_string())?;
            let records = score_dataset(&model, &dataset, &wcfg)?;
            let traces = aggregate.map(|theta| aggregate_traces(&records, theta)).transpose()?;
            let mut out = BufWriter::new(io::stdout().lock());
            for r in &records {
                writeln!(
                    out,
                    "{{\"trace\":{},\"offset\":{},\"log_p_x_given_t\":{},\"verdict\":\"{}\"}}",
                    serde_json::Value::from(r.trace.as_str()),
                    r.offset,
                    serde_json::Value::from(r.log_p_x_given_t),
                    verdict_name(r.verdict)
                )?;
            }
            for t in traces.iter().flatten() {
                writeln!(
                    out,
                    "{{\"trace\":{},\"windows\":{},\"anomalous\":{},\"fraction\":{},\"trace_verdict\":\"{}\"}}",
                    serde_json::Value::from(t.trace.as_str()),
                    t.windows,
                    t.anomalous,
                    t.fraction,
                    if t.flagged { "anomalous" } else { "normal" }
                )?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Synth {
            out,
            seed,
            alphabet_size,
            n_normal,
            n_test_normal,
            n_attack,
            min_len,
            max_len,
            branching,
        } => {
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                alphabet_size: alphabet_size.unwrap_or(d.alphabet_size),
                normal_transition_seed: seed,
                attack_transition_seed: seed.wrapping_add(1),
                n_normal: n_normal.unwrap_or(d.n_normal),
                n_test_normal: n_test_normal.unwrap_or(d.n_test_normal),
                n_attack: n_attack.unwrap_or(d.n_attack),
                min_len: min_len.unwrap_or(d.min_len),
                max_len: max_len.unwrap_or(d.max_len),
                branching: branching.unwrap_or(d.branching),
            };
            let (train, test) = generate_synthetic_dataset(&cfg)?;
            train.write_flat(&out.join("train"))?;
            test.write_flat(&out.join("test"))?;
            let summary = serde_json::json!({
                "train": { "normal": train.len() },
                "test": { "normal": test.count(Label::Normal), "attack": test.count(Label::Attack) },
                "config": cfg,
            });
            write_atomic(&out.join("synth.json"), format!("{summary:#}\n").as_bytes())?;
            print_json(&summary)
        }
    }
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Normal => "normal",
        Label::Attack => "attack",
        Label::Unlabeled => "unlabeled",
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Target => "target",
        Verdict::Anomaly => "anomaly",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}

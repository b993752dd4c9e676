//! The `tinyspeech` command line: featurize, train, eval, analyze, quantize,
//! export.
//!
//! Exit codes: 0 success, 1 validation error, 2 i/o error. Machine-readable
//! results go to `--out` as JSON; human-readable diagnostics go to stderr.
//! Every subcommand is a pure function of its arguments and input files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::complexity::{analyze_with, check_constraints, format_table, ConstraintSpec};
use crate::dataset::{parse_wav, synth_dataset, Split};
use crate::dsp::{mfcc_stack, FrontendConfig, MfccStack};
use crate::error::{Error, Result};
use crate::model::{build_model, load_model, save_model, ModelConfig, FORMAT_VERSION};
use crate::pipeline::{featureset_from_clips, featureset_from_dir};
use crate::quant::quantize_model;
use crate::trainer::{evaluate_split, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "tinyspeech",
    version,
    about = "Keyword-spotting engine built around attention condensers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert WAV audio into MFCC feature stacks
    Featurize(FeaturizeArgs),
    /// Train a model from a config on a dataset or synthetic tones
    Train(TrainArgs),
    /// Evaluate a saved model on one dataset split
    Eval(EvalArgs),
    /// Report per-layer params, mult-adds, model size, and constraints
    Analyze(AnalyzeArgs),
    /// Quantize a saved model's weights
    Quantize(QuantizeArgs),
    /// Re-save a model file and print the format version
    Export(ExportArgs),
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Single input WAV file
    #[arg(long, conflicts_with = "dir")]
    wav: Option<PathBuf>,
    /// Directory tree of WAV files (output mirrors the tree)
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Output file (--wav) or directory (--dir)
    #[arg(long)]
    out: PathBuf,
    /// Write CSV instead of the binary format
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Model config JSON
    #[arg(long)]
    config: PathBuf,
    /// Dataset root (label subdirectories of WAVs)
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic dataset KxN: K tone classes, N clips per class
    #[arg(long)]
    synthetic: Option<String>,
    /// Comma-separated label subset (--data only; default: all)
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save a checkpoint every epoch (plus best.tspn and final.tspn)
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Metrics JSON output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved model file
    #[arg(long)]
    model: PathBuf,
    /// Dataset root
    #[arg(long)]
    data: PathBuf,
    /// Which split to evaluate: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Results JSON output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Model config JSON
    #[arg(long)]
    config: PathBuf,
    /// Override input shape, e.g. 1,1,98,40
    #[arg(long)]
    input_shape: Option<String>,
    /// Override weight width for the size metric
    #[arg(long)]
    bits: Option<u32>,
    /// Evaluate the deployment-constraint indicator
    #[arg(long, requires = "val_acc")]
    check_constraints: bool,
    /// Validation accuracy fed to the constraint check
    #[arg(long)]
    val_acc: Option<f64>,
    /// Report JSON output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses argv and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Quantize(a) => run_quantize(a),
        Command::Export(a) => run_export(a),
    }
}

fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelConfig::from_json(&text)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// featurize

/// Binary stack layout: u32 frame count, u32 coefficient count, then
/// frame-major f32 data, all little-endian.
fn stack_to_binary(stack: &MfccStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * stack.data.len());
    out.extend_from_slice(&(stack.frames as u32).to_le_bytes());
    out.extend_from_slice(&(stack.coeffs as u32).to_le_bytes());
    for &v in &stack.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn stack_to_csv(stack: &MfccStack) -> String {
    let mut out = String::new();
    for f in 0..stack.frames {
        let row: Vec<String> = stack.row(f).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn featurize_one(wav: &Path, out: &Path, csv: bool, cfg: &FrontendConfig) -> Result<()> {
    let bytes = std::fs::read(wav).map_err(|e| Error::io(wav, e))?;
    let clip = parse_wav(&bytes)?;
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Dataset(format!(
            "{}: sample rate {} Hz unsupported, expected {}",
            wav.display(),
            clip.sample_rate,
            cfg.sample_rate
        )));
    }
    let stack = mfcc_stack(&clip.samples, cfg)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    if csv {
        std::fs::write(out, stack_to_csv(&stack)).map_err(|e| Error::io(out, e))?;
    } else {
        std::fs::write(out, stack_to_binary(&stack)).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn walk_wavs(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk_wavs(&path, acc)?;
        } else if path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("wav"))
            .unwrap_or(false)
        {
            acc.push(path);
        }
    }
    Ok(())
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let cfg = FrontendConfig::default();
    match (&a.wav, &a.dir) {
        (Some(wav), None) => featurize_one(wav, &a.out, a.csv, &cfg),
        (None, Some(dir)) => {
            let mut wavs = Vec::new();
            walk_wavs(dir, &mut wavs)?;
            if wavs.is_empty() {
                return Err(Error::Dataset(format!(
                    "no wav files under {}",
                    dir.display()
                )));
            }
            let ext = if a.csv { "csv" } else { "bin" };
            for wav in &wavs {
                let rel = wav.strip_prefix(dir).expect("walked under dir");
                let out = a.out.join(rel).with_extension(ext);
                featurize_one(wav, &out, a.csv, &cfg)?;
            }
            eprintln!("featurized {} files into {}", wavs.len(), a.out.display());
            Ok(())
        }
        _ => Err(Error::Config(
            "featurize needs exactly one of --wav or --dir".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// train

fn parse_synthetic(spec: &str) -> Result<(usize, usize)> {
    let (k, n) = spec
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("bad --synthetic {spec}, expected KxN")))?;
    let k: usize = k
        .parse()
        .map_err(|_| Error::Config(format!("bad class count in --synthetic {spec}")))?;
    let n: usize = n
        .parse()
        .map_err(|_| Error::Config(format!("bad clip count in --synthetic {spec}")))?;
    Ok((k, n))
}

fn run_train(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let frontend = FrontendConfig::default();
    let features = match (&a.data, &a.synthetic) {
        (Some(root), None) => {
            featureset_from_dir(root, &a.labels, false, 10.0, 10.0, &frontend)?
        }
        (None, Some(spec)) => {
            let (classes, per_class) = parse_synthetic(spec)?;
            featureset_from_clips(&synth_dataset(per_class, classes, a.seed)?, &frontend)?
        }
        _ => {
            return Err(Error::Config(
                "train needs exactly one of --data or --synthetic".into(),
            ))
        }
    };
    if features.label_names.len() != config.n_classes {
        return Err(Error::Config(format!(
            "config expects {} classes but the dataset has {} labels",
            config.n_classes,
            features.label_names.len()
        )));
    }

    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch.unwrap_or(defaults.batch_size),
        lr: a.lr.unwrap_or(defaults.lr),
        momentum: a.momentum.unwrap_or(defaults.momentum),
        seed: a.seed,
        checkpoint_dir: a.checkpoint_dir.clone(),
    };
    let mut model = build_model(&config, a.seed)?;
    let report = train(&mut model, &features, &train_cfg)?;
    for row in &report.epochs {
        eprintln!(
            "epoch {:>3}: loss {:.4} train acc {:.3} val acc {}",
            row.epoch,
            row.train_loss,
            row.train_accuracy,
            row.val_accuracy
                .map(|a| format!("{a:.3}"))
                .unwrap_or_else(|| "-".into())
        );
    }
    eprintln!("wall time: {:.1}s", report.wall_time_secs);
    if let Some(dir) = &a.checkpoint_dir {
        save_model(&model, &dir.join("final.tspn"))?;
    }
    if let Some(out) = &a.out {
        let value = serde_json::json!({
            "labels": features.label_names,
            "seed": a.seed,
            "report": report,
        });
        write_json(out, &value)?;
    }
    println!(
        "trained {} epochs; best val acc {}",
        report.epochs.len(),
        report
            .best_val_accuracy
            .map(|a| format!("{a:.3}"))
            .unwrap_or_else(|| "-".into())
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn run_eval(a: EvalArgs) -> Result<()> {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other}, expected train|val|test"
            )))
        }
    };
    let model = load_model(&a.model)?;
    let features = featureset_from_dir(&a.data, &[], false, 10.0, 10.0, &FrontendConfig::default())?;
    if features.label_names.len() != model.config.n_classes {
        return Err(Error::Config(format!(
            "model expects {} classes but the dataset has {} labels",
            model.config.n_classes,
            features.label_names.len()
        )));
    }
    let idxs = features.split_indices(split);
    let accuracy = evaluate_split(&model, &features, idxs)?;
    println!("{} accuracy: {:.4} ({} samples)", a.split, accuracy, idxs.len());
    if let Some(out) = &a.out {
        write_json(
            out,
            &serde_json::json!({
                "model": a.model.display().to_string(),
                "split": a.split,
                "n_samples": idxs.len(),
                "accuracy": accuracy,
                "weight_bits": model.config.weight_bits,
            }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

fn parse_shape(text: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad --input-shape {text}")))?;
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "--input-shape needs 4 dims, got {}",
            parts.len()
        )));
    }
    Ok([parts[0], parts[1], parts[2], parts[3]])
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let input_shape = match &a.input_shape {
        Some(text) => parse_shape(text)?,
        None => config.input_shape,
    };
    let bits = a.bits.unwrap_or(config.weight_bits);
    let report = analyze_with(&config, input_shape, bits)?;
    print!("{}", format_table(&report));

    let verdict = if a.check_constraints {
        let spec = ConstraintSpec {
            micro_ops_only: config.micro_ops_only,
            ..ConstraintSpec::default()
        };
        let v = check_constraints(&report, a.val_acc.unwrap_or(0.0), &spec, &config);
        for check in &v.checks {
            println!(
                "constraint {:<14} {}  ({})",
                check.name,
                if check.pass { "pass" } else { "FAIL" },
                check.detail
            );
        }
        println!("indicator: {}", if v.pass { 1 } else { 0 });
        Some(v)
    } else {
        None
    };

    if let Some(out) = &a.out {
        let mut value = serde_json::json!({
            "layers": report.layers,
            "totals": {
                "params": report.total_params,
                "mult_adds": report.total_mult_adds,
            },
            "model_size_kbits": report.model_size_kbits,
            "weight_bits": report.weight_bits,
            "input_shape": report.input_shape,
        });
        if let Some(v) = verdict {
            value["constraints"] = serde_json::to_value(&v).expect("verdict serializes");
        }
        write_json(out, &value)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// quantize / export

fn run_quantize(a: QuantizeArgs) -> Result<()> {
    let mut model = load_model(&a.model)?;
    let report = quantize_model(&mut model, a.bits)?;
    save_model(&model, &a.out)?;
    println!(
        "quantized {} tensors to {} bits: {} params, {:.3} kbits -> {}",
        report.quantized_tensors,
        report.weight_bits,
        report.total_params,
        report.model_size_kbits,
        a.out.display()
    );
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    save_model(&model, &a.out)?;
    println!("format version {FORMAT_VERSION}");
    Ok(())
}

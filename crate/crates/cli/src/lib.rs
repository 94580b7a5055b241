//! The `twinfdd` command line: dataset generation and ingestion, training,
//! evaluation, gradient checks and report rendering.
//!
//! Exit codes: 0 on success, 1 on usage, validation or contract errors,
//! 2 on I/O errors.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use twinfdd::data::{
    load_dataset, load_tep_corpus, prepare, save_dataset, synthesize_runs, train_val_split, write_tep_standin,
    SyntheticSpec, MANIFEST_FILE, META_FILE,
};
use twinfdd::gradcheck::check_model;
use twinfdd::metrics::ClassificationReport;
use twinfdd::reference;
use twinfdd::train::{evaluate, train, ClassWeights, TrainConfig};
use twinfdd::{Error, ParameterSet, Result, SimilarityKind, TwinModelConfig};

pub const PARAMS_FILE: &str = "model.params";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const HISTORY_FILE: &str = "history.json";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";

#[derive(Parser, Debug)]
#[command(
    name = "twinfdd",
    version,
    about = "Twin gated-attention transformer for process fault classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Synth(SynthArgs),
    /// Window a directory of dNN.dat / dNN_te.dat run files into a dataset.
    Ingest(IngestArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Compare model gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Render a report JSON as a table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Layout {
    /// Windowed dataset directory ready for `train`.
    Cache,
    /// Raw run files named like the public Tennessee Eastman corpus.
    Tep,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthetic spec (JSON). Required for the cache layout.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "cache")]
    layout: Layout,
    /// Classes to drop, e.g. `3,9,15`.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    tep_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Fault onset sample in test runs.
    #[arg(long, default_value_t = twinfdd::data::DEFAULT_TEST_ONSET)]
    onset: usize,
    /// Original fault classes to drop, e.g. `3,9,15`.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    /// Features per sample, when not the usual 52.
    #[arg(long)]
    features: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory for the checkpoint, config and history.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` overrides on top of the desk-scale model.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Training config (JSON).
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    class_weights: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Share of training windows used for fitting; the rest validates.
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the `model.cfg` beside the checkpoint.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// `key = value` overrides on top of the tiny check model.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    similarity: Option<SimilarityKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Published scores to compare against: `all_faults` or
    /// `without_incipient` (trained without faults 3, 9 and 15).
    #[arg(long)]
    reference: Option<String>,
}

/// Context stored with every report so two reports can be compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Display name per label.
    pub class_names: Vec<String>,
    /// SHA-256 of the dataset manifest and metadata files.
    pub dataset_id: String,
    /// SHA-256 of the model config text.
    pub model_config_hash: String,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub metadata: ReportMetadata,
    #[serde(flatten)]
    pub report: ClassificationReport,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// SHA-256 over a dataset directory's manifest and metadata.
pub fn dataset_id(dir: &Path) -> Result<String> {
    let manifest = fs::read(dir.join(MANIFEST_FILE)).map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
    let meta = fs::read(dir.join(META_FILE)).map_err(|e| Error::io(dir.join(META_FILE), e))?;
    Ok(sha256_hex(&[&manifest, &meta]))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn cmd_synth(args: SynthArgs, out: &mut dyn Write) -> Result<()> {
    match args.layout {
        Layout::Tep => {
            write_tep_standin(&args.out, args.seed.unwrap_or(0))?;
            writeln!(out, "wrote run files to {}", args.out.display()).ok();
        }
        Layout::Cache => {
            let path = args
                .spec
                .ok_or_else(|| Error::config("--spec is required for the cache layout"))?;
            let mut spec = SyntheticSpec::load(&path)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let runs = synthesize_runs(&spec)?;
            let exclude: BTreeSet<usize> = args.exclude.into_iter().collect();
            let prepared = prepare(&runs, spec.window, spec.stride, &exclude)?;
            save_dataset(&args.out, &runs, &prepared, spec.window, spec.stride)?;
            writeln!(
                out,
                "wrote {} train and {} test windows over {} classes to {}",
                prepared.train.len(),
                prepared.test.len(),
                prepared.train.n_classes(),
                args.out.display()
            )
            .ok();
        }
    }
    Ok(())
}

fn cmd_ingest(args: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let runs = load_tep_corpus(&args.tep_dir, args.onset, args.features)?;
    let exclude: BTreeSet<usize> = args.exclude.into_iter().collect();
    let prepared = prepare(&runs, args.window, args.stride, &exclude)?;
    save_dataset(&args.out, &runs, &prepared, args.window, args.stride)?;
    writeln!(
        out,
        "ingested {} runs: {} train and {} test windows over {} classes",
        runs.len(),
        prepared.train.len(),
        prepared.test.len(),
        prepared.train.n_classes()
    )
    .ok();
    Ok(())
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (meta, prepared) = load_dataset(&args.data)?;
    let base = TwinModelConfig::desk(meta.n_features, meta.window, meta.class_names.len());
    let config = match &args.model_config {
        Some(p) => base.with_overrides(&read_text(p)?)?,
        None => base,
    };
    let expected = (meta.n_features, meta.window, meta.class_names.len());
    if (config.n_features, config.window_len, config.n_classes) != expected {
        return Err(Error::contract(format!(
            "model expects (features, window, classes) = ({}, {}, {}) but the dataset has {expected:?}",
            config.n_features, config.window_len, config.n_classes
        )));
    }
    let mut cfg = match &args.train_config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(f) = args.val_fraction {
        cfg.val_fraction = f;
    }
    if let Some(w) = &args.class_weights {
        cfg.class_weights = w.parse::<ClassWeights>()?;
    }
    cfg.validate()?;

    let (fit, val) = train_val_split(&prepared.train, cfg.val_fraction, cfg.seed)?;
    let initial = config.init_params(cfg.seed)?;
    let (params, history) = train(&initial, &config, &fit, &val, &cfg)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    params.save(&args.out.join(PARAMS_FILE))?;
    config.save(&args.out.join(MODEL_CONFIG_FILE))?;
    write_file(&args.out.join(HISTORY_FILE), to_json(&history))?;
    write_file(&args.out.join(TRAIN_CONFIG_FILE), cfg.to_json() + "\n")?;
    writeln!(
        out,
        "trained {} epochs, best validation macro F1 {:.4} at epoch {}",
        history.epochs.len(),
        history.best_val_macro_f1,
        history.best_epoch
    )
    .ok();
    Ok(())
}

fn report_csv(doc: &ReportDocument) -> String {
    let mut s = String::from("class,precision,recall,f1,far,mar\n");
    for m in &doc.report.per_class {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            doc.metadata.class_names[m.class], m.precision, m.recall, m.f1, m.far, m.mar
        )
        .unwrap();
    }
    let a = &doc.report.macro_avg;
    writeln!(s, "macro,{},{},{},{},{}", a.precision, a.recall, a.f1, a.far, a.mar).unwrap();
    s
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let params = ParameterSet::load(&args.checkpoint)?;
    let cfg_path = args
        .model_config
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_file_name(MODEL_CONFIG_FILE));
    let cfg_text = read_text(&cfg_path)?;
    let config = TwinModelConfig::from_kv_str(&cfg_text)?;
    config.check_params(&params)?;
    let (_, prepared) = load_dataset(&args.data)?;
    let ds = match args.split.as_str() {
        "test" => &prepared.test,
        "train" => &prepared.train,
        other => return Err(Error::config(format!("unknown split `{other}`"))),
    };
    let eval = evaluate(&params, &config, ds)?;
    let doc = ReportDocument {
        metadata: ReportMetadata {
            class_names: ds.class_names.values().cloned().collect(),
            dataset_id: dataset_id(&args.data)?,
            model_config_hash: sha256_hex(&[cfg_text.as_bytes()]),
            split: args.split.clone(),
        },
        report: eval.report,
    };
    let mut preds = String::from("run_id,start,label,prediction\n");
    for ((o, l), p) in ds.origins.iter().zip(&ds.labels).zip(&eval.predictions) {
        writeln!(preds, "{},{},{},{}", o.run_id, o.start, l, p).unwrap();
    }
    write_file(&args.out.join(REPORT_JSON), to_json(&doc))?;
    write_file(&args.out.join(REPORT_CSV), report_csv(&doc))?;
    write_file(&args.out.join(PREDICTIONS_CSV), preds)?;
    writeln!(
        out,
        "{} windows: accuracy {:.4}, macro F1 {:.4}",
        ds.len(),
        doc.report.accuracy,
        doc.report.macro_avg.f1
    )
    .ok();
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let mut config = TwinModelConfig::tiny();
    if let Some(p) = &args.model_config {
        config = config.with_overrides(&read_text(p)?)?;
    }
    if let Some(s) = args.similarity {
        config.similarity = s;
    }
    let report = check_model(&config, args.seed, args.step, args.tolerance)?;
    if let Some(p) = &args.out {
        write_file(p, to_json(&report))?;
    }
    let worst = report
        .worst
        .as_ref()
        .map(|(n, i)| format!("{n}[{i}]"))
        .unwrap_or_else(|| "-".into());
    writeln!(
        out,
        "{}: {} coordinates over {} parameters, max relative error {:.3e} (tolerance {:.0e}, worst {worst})",
        if report.pass { "PASS" } else { "FAIL" },
        report.coordinates,
        report.per_parameter.len(),
        report.max_relative_error,
        report.tolerance,
    )
    .ok();
    Ok(report.pass)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |cells: Vec<&str>, s: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        s.push_str(parts.join("  ").trim_end());
        s.push('\n');
    };
    line(header.to_vec(), &mut s);
    line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
        &mut s,
    );
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut s);
    }
    s
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Renders a report as an aligned percentage table, optionally beside a
/// published reference table.
pub fn render_report(doc: &ReportDocument, reference_name: Option<&str>) -> Result<String> {
    let reference = match reference_name {
        Some(n) => Some(reference::table(n).ok_or_else(|| Error::config(format!("unknown reference table `{n}`")))?),
        None => None,
    };
    let mut header = vec!["Class", "Precision (%)", "Recall (%)", "F1 (%)", "FAR (%)", "MAR (%)"];
    if reference.is_some() {
        header.extend(["Ref F1 (%)", "Ref FAR (%)", "Ref MAR (%)"]);
    }
    let lookup = |label: &str| reference.and_then(|t| t.iter().find(|r| r.label == label));
    let mut rows = Vec::new();
    let push = |label: &str, v: [f64; 5], rows: &mut Vec<Vec<String>>| {
        let mut row = vec![label.to_string()];
        row.extend(v.iter().map(|x| pct(*x)));
        if reference.is_some() {
            match lookup(label) {
                Some(r) => row.extend([r.f1, r.far, r.mar].iter().map(|x| format!("{x}"))),
                None => row.extend(["-", "-", "-"].map(String::from)),
            }
        }
        rows.push(row);
    };
    for m in &doc.report.per_class {
        push(
            &doc.metadata.class_names[m.class],
            [m.precision, m.recall, m.f1, m.far, m.mar],
            &mut rows,
        );
    }
    let a = &doc.report.macro_avg;
    push("Average", [a.precision, a.recall, a.f1, a.far, a.mar], &mut rows);
    let mut s = table(&header, &rows);
    writeln!(
        s,
        "\naccuracy {}%, F1 variance {:.2} (%², population)",
        pct(doc.report.accuracy),
        doc.report.f1_variance * 1e4
    )
    .unwrap();
    Ok(s)
}

fn cmd_report(args: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let text = read_text(&args.input)?;
    let doc: ReportDocument =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", args.input.display())))?;
    write!(out, "{}", render_report(&doc, args.reference.as_deref())?).ok();
    Ok(())
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Runs the command line with explicit output streams and returns the
/// process exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    write!(out, "{e}").ok();
                    0
                }
                _ => {
                    write!(err, "{}", e.render()).ok();
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Gradcheck(a) => match cmd_gradcheck(a, out) {
            Ok(true) => Ok(()),
            Ok(false) => return 1,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            exit_code(&e)
        }
    }
}

/// Runs the command line on the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

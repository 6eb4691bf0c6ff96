//! Command implementations behind the `gtf` binary. Each command reads a corpus,
//! writes its artifacts under the output directory and returns a short report.

use crate::checkpoint;
use crate::chunks::{chunk_analysis, chunks_csv};
use crate::config::{Ablation, TrainConfig};
use crate::corpus::{load_jsonl, Document, LabelSet};
use crate::cv::{cross_validate, stratified_split};
use crate::error::{Error, Result};
use crate::metrics::Summary;
use crate::model::{decide, GraphTreeModel};
use crate::train::{evaluate, history_csv, train_with_split};
use crate::tune::tune_tau;
use crate::Real;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MODEL_FILE: &str = "model.gtfm";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHUNKS_FILE: &str = "chunks.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TAU_FILE: &str = "tau.json";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Share of the corpus held out for testing by `ablate`.
pub const ABLATION_TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Options {
    pub config: TrainConfig,
    pub corpus: PathBuf,
    pub out: PathBuf,
    /// Checkpoint to read for `eval`, `predict` and `chunks`.
    pub model: Option<PathBuf>,
}

/// Reads the config file (defaults when absent) and applies command-line overrides.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, tau: Option<f64>, ablate: Option<&str>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = tau {
        cfg.tau = t;
    }
    if let Some(a) = ablate {
        cfg.ablation = Ablation::parse(a)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn corpus(opts: &Options) -> Result<(Vec<Document>, LabelSet)> {
    let docs = load_jsonl(&opts.corpus)?;
    if docs.is_empty() {
        return Err(Error::Data(format!("{} holds no documents", opts.corpus.display())));
    }
    let labels = LabelSet::from_documents(&docs)?;
    Ok((docs, labels))
}

fn output(opts: &Options, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&opts.out)?;
    Ok(opts.out.join(name))
}

fn write(opts: &Options, name: &str, contents: &str) -> Result<PathBuf> {
    let path = output(opts, name)?;
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn write_json<T: Serialize>(opts: &Options, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(opts, name, &text)
}

fn load_model(opts: &Options) -> Result<GraphTreeModel<Real>> {
    let path = opts
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --model <checkpoint>".into()))?;
    checkpoint::load(path)
}

/// Trains on the corpus with a stratified validation split; writes the checkpoint,
/// the history CSV and the validation metric.
pub fn train(opts: &Options) -> Result<String> {
    let (docs, labels) = corpus(opts)?;
    let out = train_with_split::<Real>(&docs, &labels, &opts.config)?;
    let model_path = output(opts, MODEL_FILE)?;
    checkpoint::save(&out.model, &model_path)?;
    write(opts, HISTORY_FILE, &history_csv(&out.history))?;
    let best = &out.history[out.best_epoch - 1];
    let summary = Summary::new(opts.config.task.metric_name(), vec![best.val_metric]);
    write_json(opts, METRICS_FILE, &summary)?;
    Ok(format!(
        "trained {} epochs, best epoch {} with validation {} {:.4}; model saved to {}",
        out.history.len(),
        out.best_epoch,
        summary.metric,
        best.val_metric,
        model_path.display()
    ))
}

pub fn eval(opts: &Options) -> Result<String> {
    let model = load_model(opts)?;
    let docs = load_jsonl(&opts.corpus)?;
    let e = evaluate(&model, &docs)?;
    let summary = Summary::new(model.task().metric_name(), vec![e.metric]);
    write_json(opts, METRICS_FILE, &summary)?;
    Ok(format!("{} {:.4} (loss {:.4}) on {} documents", summary.metric, e.metric, e.loss, docs.len()))
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    labels: Vec<&'a str>,
    probabilities: Vec<(&'a str, f64)>,
}

pub fn predict(opts: &Options) -> Result<String> {
    let model = load_model(opts)?;
    let docs = load_jsonl(&opts.corpus)?;
    let names = model.labels.names();
    let mut lines = String::new();
    for d in &docs {
        let probs = model.predict_proba(d)?;
        let p = Prediction {
            id: &d.id,
            labels: decide(&probs, model.task()).into_iter().map(|i| names[i].as_str()).collect(),
            probabilities: names.iter().map(String::as_str).zip(probs).collect(),
        };
        lines.push_str(&serde_json::to_string(&p)?);
        lines.push('\n');
    }
    let path = write(opts, PREDICTIONS_FILE, &lines)?;
    Ok(format!("{} predictions written to {}", docs.len(), path.display()))
}

pub fn tune(opts: &Options) -> Result<String> {
    let (docs, labels) = corpus(opts)?;
    let report = tune_tau::<Real>(&docs, &labels, &opts.config)?;
    write_json(opts, TAU_FILE, &report)?;
    Ok(format!("best tau {:.2} with validation metric {:.4}", report.best, report.best_metric))
}

/// Stratified k-fold cross-validation with `config.folds` folds.
pub fn cv(opts: &Options) -> Result<String> {
    let (docs, labels) = corpus(opts)?;
    let report = cross_validate::<Real>(&docs, &labels, &opts.config, opts.config.folds)?;
    write_json(opts, METRICS_FILE, &report.summary)?;
    for f in &report.folds {
        write(opts, &format!("history_fold{}.csv", f.fold), &history_csv(&f.history))?;
    }
    Ok(format!(
        "{}-fold {}: {}",
        opts.config.folds,
        report.summary.metric,
        report.summary.report()
    ))
}

/// Selection fractions per document third, from `--model` or from a fresh training run.
pub fn chunks(opts: &Options) -> Result<String> {
    let docs = load_jsonl(&opts.corpus)?;
    let model = match &opts.model {
        Some(_) => load_model(opts)?,
        None => {
            let labels = LabelSet::from_documents(&docs)?;
            train_with_split::<Real>(&docs, &labels, &opts.config)?.model
        }
    };
    let fractions = chunk_analysis(&model, &docs)?;
    write(opts, CHUNKS_FILE, &chunks_csv(&fractions))?;
    Ok(format!(
        "selected fractions by chunk: {:.3} / {:.3} / {:.3}",
        fractions[0], fractions[1], fractions[2]
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric: f64,
}

/// Trains the full model and every ablation variant on the same split and scores
/// each on the held-out part.
pub fn ablation_rows(docs: &[Document], labels: &LabelSet, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    let (rest, test) = stratified_split(docs, ABLATION_TEST_FRACTION, cfg.seed)?;
    std::iter::once(Ablation::default())
        .chain(Ablation::variants())
        .map(|ablation| {
            let c = TrainConfig { ablation, ..cfg.clone() };
            let out = train_with_split::<Real>(&rest, labels, &c)?;
            let metric = evaluate(&out.model, &test)?.metric;
            log::info!("{}: {metric:.4}", ablation.label());
            Ok(AblationRow {
                variant: ablation.label(),
                metric,
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow], metric: &str) -> String {
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max("variant".len());
    let mut out = format!("{:width$}  {metric}\n", "variant");
    for r in rows {
        let _ = writeln!(out, "{:width$}  {:.4}", r.variant, r.metric);
    }
    out
}

pub fn ablate(opts: &Options) -> Result<String> {
    let (docs, labels) = corpus(opts)?;
    let rows = ablation_rows(&docs, &labels, &opts.config)?;
    let mut csv = String::from("variant,metric\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{}", r.variant, r.metric);
    }
    write(opts, ABLATION_FILE, &csv)?;
    Ok(ablation_table(&rows, opts.config.task.metric_name()))
}

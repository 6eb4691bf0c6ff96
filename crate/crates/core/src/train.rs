//! Mini-batch Adagrad training with validation-driven learning-rate decay.

use crate::config::{Task, TrainConfig};
use crate::corpus::{Document, LabelSet, Vocab};
use crate::cv::stratified_split;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1};
use crate::model::{decide, GraphTreeModel};
use crate::optim::Adagrad;
use crate::params::GradBuffer;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_metric: f64,
    pub val_loss: f64,
}

/// Multiplies the learning rate by `factor` whenever the validation metric drops
/// below the previous epoch's.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub factor: f64,
    prev: Option<f64>,
}

impl LrSchedule {
    pub fn new(lr: f64, factor: f64) -> Self {
        Self { lr, factor, prev: None }
    }

    /// Records an epoch's validation metric and returns the rate for the next epoch.
    pub fn observe(&mut self, val_metric: f64) -> f64 {
        if self.prev.is_some_and(|p| val_metric < p) {
            self.lr *= self.factor;
        }
        self.prev = Some(val_metric);
        self.lr
    }
}

pub struct TrainOutcome<S: Scalar> {
    /// Parameters from the best validation epoch.
    pub model: GraphTreeModel<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Task metric and mean task loss of `model` on `docs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub metric: f64,
    pub loss: f64,
}

pub fn metric_of(predicted: &[Vec<usize>], gold: &[Vec<usize>], task: Task, labels: usize) -> f64 {
    match task {
        Task::Multilabel => macro_f1(predicted, gold, labels),
        Task::Binary | Task::Multiclass => accuracy(predicted, gold),
    }
}

pub fn evaluate<S: Scalar>(model: &GraphTreeModel<S>, docs: &[Document]) -> Result<Evaluation> {
    if docs.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty corpus".into()));
    }
    let task = model.task();
    let rows = docs
        .par_iter()
        .map(|doc| {
            let gold = model.labels.indices(doc)?;
            let tape = crate::tape::Tape::new();
            let fwd = model.forward(&tape, doc)?;
            let loss = crate::model::loss(fwd.probs, &gold, task)?.item().as_f64();
            let probs = fwd.probs.value().into_data();
            Ok((decide(&probs, task), gold, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<Vec<usize>> = rows.iter().map(|r| r.0.clone()).collect();
    let gold: Vec<Vec<usize>> = rows.iter().map(|r| r.1.clone()).collect();
    let loss = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    Ok(Evaluation {
        metric: metric_of(&predicted, &gold, task, model.labels.len()),
        loss,
    })
}

/// Trains on `train`, selecting parameters and decaying the learning rate on `val`.
pub fn train<S: Scalar>(
    train: &[Document],
    val: &[Document],
    labels: &LabelSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training needs non-empty train and validation sets".into()));
    }
    let vocab = Vocab::build(train, cfg.min_count)?;
    let mut model = GraphTreeModel::<S>::new(cfg.clone(), vocab, labels.clone())?;
    let mut optim = Adagrad::new(&model.store, S::lit(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, usize, crate::params::ParamStore<S>)> = None;
    let mut schedule = LrSchedule::new(cfg.lr, cfg.lr_decay_factor);
    let mut grads = GradBuffer::for_store(&model.store);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr;
        optim.lr = S::lit(lr);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| model.gradients(&train[i]))
                .collect::<Result<Vec<_>>>()?;
            grads.zero();
            let scale = S::one() / S::lit(batch.len() as f64);
            for (loss, g) in &results {
                loss_sum += loss.as_f64();
                grads.accumulate(g, scale)?;
            }
            let report = optim.step(&mut model.store, &grads);
            if !report.rejected.is_empty() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}: non-finite gradients for {}",
                    report.rejected.join(", ")
                )));
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: training loss is {train_loss}")));
        }
        let on_train = evaluate(&model, train)?;
        let on_val = evaluate(&model, val)?;
        log::info!(
            "epoch {epoch}: lr {lr:.5} loss {train_loss:.4} train {:.4} val {:.4} (loss {:.4})",
            on_train.metric,
            on_val.metric,
            on_val.loss
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            train_metric: on_train.metric,
            val_metric: on_val.metric,
            val_loss: on_val.loss,
        });
        schedule.observe(on_val.metric);
        let improved = best
            .as_ref()
            .is_none_or(|(m, l, _, _)| on_val.metric > *m || (on_val.metric == *m && on_val.loss < *l));
        if improved {
            best = Some((on_val.metric, on_val.loss, epoch, model.store.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.2);
        if epoch - best_epoch >= cfg.patience {
            log::info!("early stop after epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    let (_, _, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Splits off a stratified validation fraction and trains on the rest.
pub fn train_with_split<S: Scalar>(corpus: &[Document], labels: &LabelSet, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    let (tr, va) = stratified_split(corpus, cfg.val_fraction, cfg.seed)?;
    train(&tr, &va, labels, cfg)
}

/// `epoch,lr,train_loss,val_metric` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_metric\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_metric);
    }
    out
}

use crate::corpus::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::graph::{check_tau, HeadCombine, ScoreAxis};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    #[default]
    Multiclass,
    Multilabel,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Multilabel => "macro_f1",
            _ => "accuracy",
        }
    }
}

/// Sentence representation channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Dependency-tree encoder.
    Dep,
    /// Constituency-tree encoder.
    Const,
    /// Mean of word vectors, used when both tree encoders are removed.
    Pooled,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Dep => "dep",
            Channel::Const => "const",
            Channel::Pooled => "pooled",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_ctt: bool,
    pub no_dtt: bool,
    pub no_gat: bool,
    pub no_bidir: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 4] = ["no_ctt", "no_dtt", "no_gat", "no_bidir"];

    /// Parses a comma-separated flag list such as `no_ctt,no_gat`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Self::default();
        for flag in list.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            a.set(flag)?;
        }
        Ok(a)
    }

    pub fn set(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no_ctt" => self.no_ctt = true,
            "no_dtt" => self.no_dtt = true,
            "no_gat" => self.no_gat = true,
            "no_bidir" => self.no_bidir = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation flag {other:?} (expected one of {})",
                    Self::FLAGS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<Channel> {
        match (self.no_dtt, self.no_ctt) {
            (false, false) => vec![Channel::Dep, Channel::Const],
            (false, true) => vec![Channel::Dep],
            (true, false) => vec![Channel::Const],
            (true, true) => vec![Channel::Pooled],
        }
    }

    /// Short name such as `full` or `no_ctt+no_gat`.
    pub fn label(&self) -> String {
        let on: Vec<&str> = Self::FLAGS
            .iter()
            .zip([self.no_ctt, self.no_dtt, self.no_gat, self.no_bidir])
            .filter(|(_, v)| *v)
            .map(|(f, _)| *f)
            .collect();
        if on.is_empty() {
            "full".into()
        } else {
            on.join("+")
        }
    }

    /// The five single-component removals compared against the full model.
    pub fn variants() -> Vec<Ablation> {
        let one = |f: &str| Ablation::parse(f).expect("known flag");
        vec![
            one("no_ctt"),
            one("no_dtt"),
            one("no_ctt,no_dtt"),
            one("no_gat"),
            one("no_bidir"),
        ]
    }
}

/// Model and training configuration, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    /// Hidden width shared by every component.
    pub d: usize,
    pub branches: usize,
    pub gat_heads: usize,
    pub gat_combine: HeadCombine,
    /// FFN inner width as a multiple of `d`.
    pub ffn_mult: usize,
    pub tau: f64,
    pub score_axis: ScoreAxis,
    /// Downward/upward rounds after the first pass.
    pub iterations: usize,
    /// Weight of the auxiliary loss tying label-wise scores to the gold labels.
    pub label_align_weight: f64,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub folds: usize,
    pub min_count: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub embedding: EmbeddingBackend,
    /// Standard deviation of the trainable table's initialisation.
    pub embedding_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Multiclass,
            d: 64,
            branches: 4,
            gat_heads: 6,
            gat_combine: HeadCombine::Mean,
            ffn_mult: 4,
            tau: 0.25,
            score_axis: ScoreAxis::PerSentence,
            iterations: 1,
            label_align_weight: 0.5,
            lr: 0.1,
            lr_decay_factor: 0.2,
            batch_size: 10,
            max_epochs: 50,
            patience: 10,
            val_fraction: 0.1,
            folds: 10,
            min_count: 1,
            seed: 0,
            ablation: Ablation::default(),
            embedding: EmbeddingBackend::Trainable,
            embedding_std: crate::corpus::INIT_STD,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        let positive = [
            ("d", self.d),
            ("branches", self.branches),
            ("gat_heads", self.gat_heads),
            ("ffn_mult", self.ffn_mult),
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("min_count", self.min_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.embedding_std > 0.0 && self.embedding_std.is_finite()) {
            return Err(Error::Config(format!("embedding_std must be positive, got {}", self.embedding_std)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.label_align_weight >= 0.0 && self.label_align_weight.is_finite()) {
            return Err(Error::Config("label_align_weight must be non-negative".into()));
        }
        if self.gat_combine == HeadCombine::Concat && !self.d.is_multiple_of(self.gat_heads) {
            return Err(Error::Config(format!(
                "concat heads: {} heads do not divide d = {}",
                self.gat_heads, self.d
            )));
        }
        Ok(())
    }
}

//! Stratified k-fold cross-validation.

use crate::config::TrainConfig;
use crate::corpus::{Document, LabelSet};
use crate::error::{Error, Result};
use crate::metrics::Summary;
use crate::scalar::Scalar;
use crate::train::{evaluate, train, EpochRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Stratification key: the single gold label, or for several gold labels the one
/// most frequent across the corpus (ties to the lexically smaller name).
pub fn strata(docs: &[Document]) -> Vec<String> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for g in docs.iter().flat_map(|d| d.gold.iter()) {
        *freq.entry(g.as_str()).or_default() += 1;
    }
    docs.iter()
        .map(|d| {
            d.gold
                .iter()
                .max_by(|a, b| freq[a.as_str()].cmp(&freq[b.as_str()]).then_with(|| b.cmp(a)))
                .cloned()
                .unwrap_or_default()
        })
        .collect()
}

/// Fold index of every document. Members of each stratum are shuffled and dealt
/// round-robin, continuing from where the previous stratum stopped so fold sizes
/// differ by at most one. Strata smaller than `k` are pooled and dealt together.
pub fn stratified_folds(docs: &[Document], k: usize, seed: u64) -> Result<Vec<usize>> {
    assign_folds(docs, k, seed, true)
}

fn assign_folds(docs: &[Document], k: usize, seed: u64, warn: bool) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if docs.len() < k {
        return Err(Error::Data(format!("{} documents cannot fill {k} folds", docs.len())));
    }
    let keys = strata(docs);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        groups.entry(key.as_str()).or_default().push(i);
    }
    let mut pooled = Vec::new();
    let mut ordered = Vec::new();
    for (key, members) in groups {
        if members.len() < k {
            if warn {
                log::warn!("class {key:?} has {} members for {k} folds; not stratified", members.len());
            }
            pooled.extend(members);
        } else {
            ordered.push(members);
        }
    }
    if !pooled.is_empty() {
        ordered.push(pooled);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; docs.len()];
    let mut next = 0;
    for mut members in ordered {
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

/// Stratified train/validation split with roughly `val_fraction` held out.
pub fn stratified_split(docs: &[Document], val_fraction: f64, seed: u64) -> Result<(Vec<Document>, Vec<Document>)> {
    if docs.len() < 2 {
        return Err(Error::Data("need at least 2 documents to split off a validation set".into()));
    }
    let k = ((1.0 / val_fraction).round() as usize).clamp(2, docs.len());
    let folds = assign_folds(docs, k, seed ^ 0x5eed, false)?;
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (d, f) in docs.iter().zip(folds) {
        if f == 0 {
            va.push(d.clone());
        } else {
            tr.push(d.clone());
        }
    }
    Ok((tr, va))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metric: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub summary: Summary,
    pub folds: Vec<FoldResult>,
}

/// Trains and scores one model per fold; each training set is split again for validation.
pub fn cross_validate<S: Scalar>(docs: &[Document], labels: &LabelSet, cfg: &TrainConfig, k: usize) -> Result<CvReport> {
    let assignment = stratified_folds(docs, k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let test: Vec<Document> = docs.iter().zip(&assignment).filter(|(_, &f)| f == fold).map(|(d, _)| d.clone()).collect();
        let rest: Vec<Document> = docs.iter().zip(&assignment).filter(|(_, &f)| f != fold).map(|(d, _)| d.clone()).collect();
        let (tr, va) = stratified_split(&rest, cfg.val_fraction, cfg.seed.wrapping_add(fold as u64))?;
        let outcome = train::<S>(&tr, &va, labels, cfg)?;
        let metric = evaluate(&outcome.model, &test)?.metric;
        log::info!("fold {fold}: {} = {metric:.4}", cfg.task.metric_name());
        folds.push(FoldResult {
            fold,
            metric,
            best_epoch: outcome.best_epoch,
            history: outcome.history,
        });
    }
    let summary = Summary::new(cfg.task.metric_name(), folds.iter().map(|f| f.metric).collect());
    Ok(CvReport { summary, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sentence_from_tokens;

    fn docs(golds: &[&[&str]]) -> Vec<Document> {
        golds
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let s = sentence_from_tokens(&["t".to_string()]);
                Document::new(format!("d{i}"), vec![s], g.iter().map(|x| x.to_string()).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_folds_keep_class_balance() {
        let d = docs(&[&["a"], &["a"], &["a"], &["a"], &["a"], &["b"], &["b"], &["b"], &["b"], &["b"]]);
        let f = stratified_folds(&d, 2, 1).unwrap();
        for fold in 0..2 {
            let members: Vec<usize> = (0..10).filter(|&i| f[i] == fold).collect();
            assert_eq!(members.len(), 5);
            let a = members.iter().filter(|&&i| i < 5).count();
            assert!(a == 2 || a == 3);
        }
    }

    #[test]
    fn folds_partition_the_corpus() {
        let d = docs(&[&["a"][..]; 23]);
        let f = stratified_folds(&d, 10, 4).unwrap();
        let mut sizes = [0; 10];
        for &x in &f {
            sizes[x] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().all(|&s| s == 2 || s == 3));
        assert!(stratified_folds(&d[..5], 10, 0).is_err());
    }

    #[test]
    fn multilabel_strata_use_most_frequent_label() {
        let d = docs(&[&["x", "y"], &["y"], &["y", "z"], &[]]);
        assert_eq!(strata(&d), vec!["y", "y", "y", ""]);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let d = docs(&[&["a"], &["b"], &["a"], &["b"], &["a"], &["b"], &["a"], &["b"], &["a"], &["b"], &["a"], &["b"]]);
        let (tr, va) = stratified_split(&d, 0.25, 3).unwrap();
        assert_eq!(tr.len() + va.len(), 12);
        assert_eq!(va.len(), 3);
        for v in &va {
            assert!(!tr.iter().any(|t| t.id == v.id));
        }
    }
}

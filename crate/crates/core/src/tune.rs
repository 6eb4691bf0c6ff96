//! Two-stage grid search for the selection threshold.

use crate::config::TrainConfig;
use crate::corpus::{Document, LabelSet};
use crate::cv::stratified_split;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::train::{evaluate, train};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

// Thresholds are handled in integer hundredths so grid points compare exactly.

/// `0.05, 0.10, …, 0.50`.
pub fn coarse_grid() -> Vec<u32> {
    (1..=10).map(|k| 5 * k).collect()
}

/// `center ± 0.05` in steps of 0.01, clipped to `(0, 1)`.
pub fn fine_grid(center: u32) -> Vec<u32> {
    (center.saturating_sub(5)..=center + 5).filter(|&t| t > 0 && t < 100).collect()
}

pub fn hundredths(t: u32) -> f64 {
    t as f64 / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub best: f64,
    pub best_metric: f64,
    /// `(tau, validation metric)` for every evaluated threshold, ascending.
    pub table: Vec<(f64, f64)>,
}

/// Runs the coarse then the fine grid, scoring each threshold with `score`.
/// Each threshold is scored once; ties go to the smaller threshold.
pub fn search(mut score: impl FnMut(f64) -> Result<f64>) -> Result<TauReport> {
    let mut cache: BTreeMap<u32, f64> = BTreeMap::new();
    let mut run = |grid: Vec<u32>, cache: &mut BTreeMap<u32, f64>| -> Result<u32> {
        for &t in &grid {
            if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(t) {
                let m = score(hundredths(t))?;
                log::info!("tau {:.2}: {m:.4}", hundredths(t));
                e.insert(m);
            }
        }
        Ok(best_of(&grid, cache))
    };
    let coarse = run(coarse_grid(), &mut cache)?;
    run(fine_grid(coarse), &mut cache)?;
    let all: Vec<u32> = cache.keys().copied().collect();
    let best = best_of(&all, &cache);
    Ok(TauReport {
        best: hundredths(best),
        best_metric: cache[&best],
        table: cache.iter().map(|(&t, &m)| (hundredths(t), m)).collect(),
    })
}

fn best_of(grid: &[u32], cache: &BTreeMap<u32, f64>) -> u32 {
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    let mut best = sorted[0];
    for &t in &sorted[1..] {
        if cache[&t] > cache[&best] {
            best = t;
        }
    }
    best
}

/// Grid search on a stratified validation split, retraining for every threshold.
pub fn tune_tau<S: Scalar>(corpus: &[Document], labels: &LabelSet, cfg: &TrainConfig) -> Result<TauReport> {
    let (tr, va) = stratified_split(corpus, cfg.val_fraction, cfg.seed)?;
    search(|tau| {
        let c = TrainConfig { tau, ..cfg.clone() };
        let out = train::<S>(&tr, &va, labels, &c)?;
        Ok(evaluate(&out.model, &va)?.metric)
    })
}

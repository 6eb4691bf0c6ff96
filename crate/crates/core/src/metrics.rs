//! Accuracy, macro-F1 and fold summaries.

use serde::{Deserialize, Serialize};

/// Fraction of documents whose single predicted label equals the single gold label.
pub fn accuracy(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let correct = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| !p.is_empty() && p.first() == g.first())
        .count();
    correct as f64 / gold.len() as f64
}

/// Unweighted mean of per-label F1 over `labels` labels. A label with neither gold
/// nor predicted positives scores 0.
pub fn macro_f1(predicted: &[Vec<usize>], gold: &[Vec<usize>], labels: usize) -> f64 {
    if labels == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; labels];
    let mut fp = vec![0usize; labels];
    let mut fn_ = vec![0usize; labels];
    for (p, g) in predicted.iter().zip(gold) {
        for l in 0..labels {
            match (p.contains(&l), g.contains(&l)) {
                (true, true) => tp[l] += 1,
                (true, false) => fp[l] += 1,
                (false, true) => fn_[l] += 1,
                (false, false) => {}
            }
        }
    }
    let total: f64 = (0..labels)
        .map(|l| {
            let denom = 2 * tp[l] + fp[l] + fn_[l];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[l] as f64 / denom as f64
            }
        })
        .sum();
    total / labels as f64
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Cross-validation summary, serialised as the metrics JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_fold: Vec<f64>,
}

impl Summary {
    pub fn new(metric: impl Into<String>, per_fold: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_fold);
        Self {
            metric: metric.into(),
            mean,
            std,
            per_fold,
        }
    }

    /// Percentages in the `95.4 ±0.92` style.
    pub fn report(&self) -> String {
        format!("{:.1} ±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_cases() {
        let gold = vec![vec![0], vec![1], vec![1]];
        assert_eq!(accuracy(&gold, &gold), 1.0);
        let flipped: Vec<Vec<usize>> = gold.iter().map(|g| vec![1 - g[0]]).collect();
        assert_eq!(accuracy(&flipped, &gold), 0.0);
    }

    #[test]
    fn f1_cases() {
        let gold = vec![vec![0, 2], vec![1], vec![]];
        assert_eq!(macro_f1(&gold, &gold, 3), 1.0);
        // label 3 never occurs and is never predicted
        assert_eq!(macro_f1(&gold, &gold, 4), 0.75);
        let pred = vec![vec![0], vec![1, 2], vec![]];
        // label 0: 1.0; label 1: 1.0; label 2: tp 0, fp 1, fn 1 → 0
        assert!((macro_f1(&pred, &gold, 3) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn summary_format() {
        let s = Summary::new("accuracy", vec![0.954 - 0.0092, 0.954 + 0.0092]);
        assert_eq!(s.report(), "95.4 ±0.92");
        assert_eq!(Summary::new("accuracy", vec![0.5; 4]).std, 0.0);
    }

    fn naive_f1(pred: &[Vec<usize>], gold: &[Vec<usize>], labels: usize) -> f64 {
        let mut sum = 0.0;
        for l in 0..labels {
            let mut tp = 0.0;
            let mut predicted = 0.0;
            let mut actual = 0.0;
            for i in 0..gold.len() {
                let p = pred[i].contains(&l);
                let g = gold[i].contains(&l);
                if p {
                    predicted += 1.0;
                }
                if g {
                    actual += 1.0;
                }
                if p && g {
                    tp += 1.0;
                }
            }
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            if precision + recall > 0.0 {
                sum += 2.0 * precision * recall / (precision + recall);
            }
        }
        sum / labels as f64
    }

    fn subsets(labels: usize) -> Vec<Vec<usize>> {
        (0..1usize << labels)
            .map(|m| (0..labels).filter(|l| m >> l & 1 == 1).collect())
            .collect()
    }

    // Both metrics ignore document order, so every multiset of (prediction, gold)
    // pairs covers all orderings of it.
    fn for_each_multiset(pairs: usize, len: usize, from: usize, acc: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if acc.len() == len {
            f(acc);
            return;
        }
        for i in from..pairs {
            acc.push(i);
            for_each_multiset(pairs, len, i, acc, f);
            acc.pop();
        }
    }

    #[test]
    fn exhaustive_against_naive_on_small_cases() {
        for labels in 1..=3 {
            let sets = subsets(labels);
            let pairs: Vec<(Vec<usize>, Vec<usize>)> = sets
                .iter()
                .flat_map(|p| sets.iter().map(move |g| (p.clone(), g.clone())))
                .collect();
            for docs in 1..=4 {
                for_each_multiset(pairs.len(), docs, 0, &mut Vec::new(), &mut |idx| {
                    let pred: Vec<Vec<usize>> = idx.iter().map(|&i| pairs[i].0.clone()).collect();
                    let gold: Vec<Vec<usize>> = idx.iter().map(|&i| pairs[i].1.clone()).collect();
                    assert!((macro_f1(&pred, &gold, labels) - naive_f1(&pred, &gold, labels)).abs() < 1e-12);
                    let sp: Vec<Vec<usize>> = pred.iter().map(|p| vec![p.len() % labels]).collect();
                    let sg: Vec<Vec<usize>> = gold.iter().map(|g| vec![g.len() % labels]).collect();
                    let naive = sp.iter().zip(&sg).filter(|(a, b)| a == b).count() as f64 / docs as f64;
                    assert_eq!(accuracy(&sp, &sg), naive);
                });
            }
        }
    }

    proptest! {
        #[test]
        fn metrics_match_naive(
            labels in 1usize..=3,
            raw in proptest::collection::vec((0u8..8, 0u8..8, 0usize..3, 0usize..3), 1..=4),
        ) {
            let mask = |m: u8| (0..labels).filter(|l| m >> l & 1 == 1).collect::<Vec<_>>();
            let pred: Vec<Vec<usize>> = raw.iter().map(|r| mask(r.0)).collect();
            let gold: Vec<Vec<usize>> = raw.iter().map(|r| mask(r.1)).collect();
            let f1 = macro_f1(&pred, &gold, labels);
            prop_assert!((f1 - naive_f1(&pred, &gold, labels)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f1));

            let sp: Vec<Vec<usize>> = raw.iter().map(|r| vec![r.2 % labels]).collect();
            let sg: Vec<Vec<usize>> = raw.iter().map(|r| vec![r.3 % labels]).collect();
            let naive = sp.iter().zip(&sg).filter(|(a, b)| a == b).count() as f64 / sg.len() as f64;
            prop_assert_eq!(accuracy(&sp, &sg), naive);
        }
    }
}

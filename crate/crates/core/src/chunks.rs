//! Where in a document the selected sentences come from.

use crate::corpus::Document;
use crate::error::Result;
use crate::model::GraphTreeModel;
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::ops::Range;

pub const CHUNKS: usize = 3;

/// Three contiguous near-equal ranges over `n` sentences; earlier chunks take the remainder.
pub fn chunk_ranges(n: usize) -> [Range<usize>; CHUNKS] {
    let base = n / CHUNKS;
    let rem = n % CHUNKS;
    let mut start = 0;
    std::array::from_fn(|i| {
        let len = base + usize::from(i < rem);
        let r = start..start + len;
        start += len;
        r
    })
}

/// Per-chunk selected fractions for one document; `None` for empty chunks.
pub fn document_fractions(n: usize, selected: &[usize]) -> [Option<f64>; CHUNKS] {
    chunk_ranges(n).map(|r| {
        let len = r.len();
        (len > 0).then(|| selected.iter().filter(|s| r.contains(s)).count() as f64 / len as f64)
    })
}

/// Averages per-document fractions over the documents that populate each chunk.
pub fn average_fractions(per_doc: &[[Option<f64>; CHUNKS]]) -> [f64; CHUNKS] {
    std::array::from_fn(|c| {
        let vals: Vec<f64> = per_doc.iter().filter_map(|d| d[c]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    })
}

pub fn chunk_analysis<S: Scalar>(model: &GraphTreeModel<S>, docs: &[Document]) -> Result<[f64; CHUNKS]> {
    let per_doc = docs
        .par_iter()
        .map(|d| Ok(document_fractions(d.sentences.len(), &model.selected_sentences(d)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_fractions(&per_doc))
}

/// `chunk,fraction` rows numbered from 1.
pub fn chunks_csv(fractions: &[f64; CHUNKS]) -> String {
    let mut out = String::from("chunk,fraction\n");
    for (i, f) in fractions.iter().enumerate() {
        let _ = writeln!(out, "{},{f}", i + 1);
    }
    out
}

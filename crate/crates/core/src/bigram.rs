//! Dense add-k smoothed wordpiece bigram table.
//!
//! Rows are indexed by the previous id (`<bos>` included), columns by the
//! next id. Only ordinary pieces and `<eos>` receive mass; `<bos>` and
//! `<ool>` columns are always zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{Corpus, PieceId, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigramTable {
    size: usize,
    probs: Vec<f64>,
}

impl BigramTable {
    /// Estimate from the tokenized corpus with add-`k` smoothing.
    pub fn estimate(vocab: &Vocab, corpus: &Corpus, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Config(format!("smoothing constant must be positive, got {k}")));
        }
        let n = vocab.len();
        let mut counts = vec![0.0f64; n * n];
        for u in &corpus.utterances {
            let mut prev = vocab.bos();
            for w in &u.words {
                for p in vocab.tokenize(w)? {
                    counts[prev.index() * n + p.index()] += 1.0;
                    prev = p;
                }
            }
            counts[prev.index() * n + vocab.eos().index()] += 1.0;
        }
        let outputs: Vec<usize> = vocab.outputs().map(PieceId::index).collect();
        let mut probs = vec![0.0f64; n * n];
        for row in 0..n {
            let base = row * n;
            let total: f64 = outputs.iter().map(|&j| counts[base + j] + k).sum();
            for &j in &outputs {
                probs[base + j] = (counts[base + j] + k) / total;
            }
        }
        Ok(BigramTable { size: n, probs })
    }

    /// Build from explicit rows; each row is checked to be a distribution.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        let mut probs = Vec::with_capacity(size * size);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(Error::Shape(format!("bigram row {i} has {} entries, expected {size}", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("bigram row {i} is not a distribution")));
            }
            probs.extend(row);
        }
        Ok(BigramTable { size, probs })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, prev: PieceId) -> &[f64] {
        let start = prev.index() * self.size;
        &self.probs[start..start + self.size]
    }

    pub fn prob(&self, prev: PieceId, next: PieceId) -> f64 {
        self.probs[prev.index() * self.size + next.index()]
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.size != vocab.len() || self.probs.len() != self.size * self.size {
            return Err(Error::Shape(format!(
                "bigram table covers {} ids, vocabulary has {}",
                self.size,
                vocab.len()
            )));
        }
        Ok(())
    }
}

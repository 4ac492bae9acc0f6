//! N-best rescoring with an external LM and internal-LM subtraction:
//! `total = logp - lambda_ilm * ilm + lambda_ext * ext`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::basemodel::FrozenBase;
use crate::bigram::BigramTable;
use crate::decoder::{HypRecord, NBestRecord};
use crate::error::{Error, Result};
use crate::score::align;
use crate::textproc::{Corpus, PieceId, Vocab};

/// Add-k wordpiece bigram model standing in for a large external LM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    pub k: f64,
    pub table: BigramTable,
}

impl ToyLm {
    pub fn estimate(vocab: &Vocab, text: &Corpus, k: f64) -> Result<Self> {
        Ok(ToyLm {
            k,
            table: BigramTable::estimate(vocab, text, k)?,
        })
    }

    /// Natural-log probability of `pieces` (which should end with `<eos>`)
    /// starting from `<bos>`.
    pub fn lm_score(&self, vocab: &Vocab, pieces: &[PieceId]) -> f64 {
        let mut prev = vocab.bos();
        let mut total = 0.0;
        for &p in pieces {
            total += self.table.prob(prev, p).ln();
            prev = p;
        }
        total
    }
}

/// Sum of internal-LM log-probabilities along `pieces`.
pub fn ilm_score<B: FrozenBase>(base: &B, pieces: &[PieceId]) -> Result<f64> {
    let mut state = base.init_state();
    let mut prev = base.vocab().bos();
    let mut total = 0.0;
    for &p in pieces {
        let r = base.ilm_step(&state, prev)?;
        total += r.p_mdl[p.index()].ln();
        state = r.next;
        prev = p;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPair {
    pub lambda_ilm: f64,
    pub lambda_ext: f64,
}

impl LambdaPair {
    pub fn new(lambda_ilm: f64, lambda_ext: f64) -> Result<Self> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if !ok(lambda_ilm) || !ok(lambda_ext) {
            return Err(Error::Config(format!(
                "lambdas must lie in [0, 1], got ({lambda_ilm}, {lambda_ext})"
            )));
        }
        Ok(LambdaPair { lambda_ilm, lambda_ext })
    }

    pub fn total(&self, logp: f64, ilm: f64, ext: f64) -> f64 {
        logp - self.lambda_ilm * ilm + self.lambda_ext * ext
    }
}

/// Fill in the `ilm` and `ext` scores of every hypothesis.
pub fn annotate<B: FrozenBase>(base: &B, lm: &ToyLm, lists: &mut [NBestRecord]) -> Result<()> {
    let vocab = base.vocab();
    for list in lists {
        for h in &mut list.hyps {
            let pieces: Vec<PieceId> = h.pieces.iter().map(|&p| PieceId(p)).collect();
            if let Some(bad) = pieces.iter().find(|p| p.index() >= vocab.len()) {
                return Err(Error::Shape(format!("piece {bad} outside vocabulary in {:?}", list.id)));
            }
            h.ilm = Some(ilm_score(base, &pieces)?);
            h.ext = Some(lm.lm_score(vocab, &pieces));
        }
    }
    Ok(())
}

fn scores(h: &HypRecord) -> (f64, f64) {
    (h.ilm.unwrap_or(0.0), h.ext.unwrap_or(0.0))
}

/// Set each hypothesis's total and stably re-sort by it, best first.
pub fn rerank(list: &NBestRecord, lambdas: LambdaPair) -> NBestRecord {
    let mut out = list.clone();
    for h in &mut out.hyps {
        let (ilm, ext) = scores(h);
        h.total = Some(lambdas.total(h.logp, ilm, ext));
    }
    out.hyps.sort_by(|a, b| b.total.unwrap().total_cmp(&a.total.unwrap()));
    out
}

fn top1_errors(lists: &[NBestRecord], refs: &HashMap<String, Vec<String>>, lambdas: LambdaPair) -> Result<(usize, usize)> {
    let (mut errors, mut n_ref) = (0usize, 0usize);
    for list in lists {
        let reference = refs
            .get(&list.id)
            .ok_or_else(|| Error::InvalidCorpus(format!("no reference for {:?}", list.id)))?;
        let best = list
            .hyps
            .iter()
            .map(|h| {
                let (ilm, ext) = scores(h);
                (lambdas.total(h.logp, ilm, ext), h)
            })
            // first maximum in list order, as a stable sort would give
            .fold(None::<(f64, &HypRecord)>, |acc, (t, h)| match acc {
                Some((bt, _)) if bt >= t => acc,
                _ => Some((t, h)),
            });
        let hyp: Vec<&str> = best.map(|(_, h)| h.text.split_whitespace().collect()).unwrap_or_default();
        let a = align(reference, &hyp);
        errors += a.errors();
        n_ref += a.n_ref;
    }
    Ok((errors, n_ref))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambdas: LambdaPair,
    pub errors: usize,
    pub wer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: LambdaPair,
    pub wer: f64,
    pub grid: Vec<GridPoint>,
}

/// Exhaustive grid search over `[0, 1]^2` minimizing corpus WER of the
/// reranked top-1. Ties go to the smaller `lambda_ilm`, then the smaller
/// `lambda_ext`.
pub fn tune(lists: &[NBestRecord], refs: &HashMap<String, Vec<String>>, step: f64) -> Result<TuneResult> {
    if lists.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round() as usize;
    let mut grid = Vec::with_capacity((n + 1) * (n + 1));
    let mut best: Option<(usize, LambdaPair)> = None;
    let mut total_ref = 0;
    for i in 0..=n {
        for j in 0..=n {
            let lambdas = LambdaPair::new(i as f64 / n as f64, j as f64 / n as f64)?;
            let (errors, n_ref) = top1_errors(lists, refs, lambdas)?;
            if n_ref == 0 {
                return Err(Error::NoReferenceTokens);
            }
            total_ref = n_ref;
            if best.is_none_or(|(e, _)| errors < e) {
                best = Some((errors, lambdas));
            }
            grid.push(GridPoint {
                lambdas,
                errors,
                wer: errors as f64 / n_ref as f64,
            });
        }
    }
    let (errors, best) = best.expect("grid is nonempty");
    Ok(TuneResult {
        best,
        wer: errors as f64 / total_ref as f64,
        grid,
    })
}

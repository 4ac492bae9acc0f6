//! Beam search over the base distribution, optionally biased per step.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemodel::{BaseState, FrozenBase};
use crate::error::{Error, Result};
use crate::tcpgen::{tcpgen_step, StepOptions, TcpgenParams};
use crate::textproc::{PieceId, Utterance, Vocab};
use crate::trie::{PrefixTree, TrieCursor};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub pieces: Vec<PieceId>,
    pub logp: f64,
    pub cursor: TrieCursor,
    pub state: BaseState,
    pub finished: bool,
    /// Effective generation probability at each step, when tracing.
    pub gen_trace: Option<Vec<f64>>,
}

impl Hypothesis {
    fn initial(base: &impl FrozenBase, trace: bool) -> Self {
        Hypothesis {
            pieces: Vec::new(),
            logp: 0.0,
            cursor: TrieCursor::Root,
            state: base.init_state(),
            finished: false,
            gen_trace: trace.then(Vec::new),
        }
    }

    pub fn words(&self, vocab: &Vocab) -> Vec<String> {
        vocab.detokenize(&self.pieces)
    }
}

/// The biasing head plus the tree for one utterance.
#[derive(Clone, Copy, Debug)]
pub struct Biasing<'a> {
    pub params: &'a TcpgenParams,
    pub trie: &'a PrefixTree,
    /// Key/value table; usually the base model's.
    pub embeddings: &'a Array2<f64>,
    pub ool: bool,
    pub step: StepOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub beam: usize,
    pub nbest: usize,
    pub max_len: usize,
    pub trace: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            beam: 10,
            nbest: 10,
            max_len: 64,
            trace: false,
        }
    }
}

impl SearchOptions {
    fn check(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidSearch("beam must be positive".into()));
        }
        if self.nbest == 0 || self.nbest > self.beam {
            return Err(Error::InvalidSearch(format!(
                "nbest must lie in 1..={}, got {}",
                self.beam, self.nbest
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidSearch("max_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    pub id: String,
    /// Best first.
    pub hypotheses: Vec<Hypothesis>,
    pub beam: usize,
    pub nbest: usize,
}

impl NBestList {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

/// Score descending, then piece sequence ascending.
fn rank(a_score: f64, a: &[PieceId], b_score: f64, b: &[PieceId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

/// Distribution over the next piece for `hyp`, with the step's effective
/// generation probability when biasing.
pub fn next_distribution<B: FrozenBase>(
    base: &B,
    biasing: Option<&Biasing>,
    input: &B::Input,
    hyp: &Hypothesis,
) -> Result<(Vec<f64>, BaseState, Option<f64>)> {
    let prev = hyp.pieces.last().copied().unwrap_or(base.vocab().bos());
    let r = base.step(input, &hyp.state, prev)?;
    match biasing {
        None => Ok((r.p_mdl, r.next, None)),
        Some(b) => {
            let valid = b.trie.valid_set(hyp.cursor, b.ool);
            let out = tcpgen_step(b.params, r.h_dec.view(), &valid, b.embeddings, &r.p_mdl, b.step)?;
            Ok((out.p_final, r.next, Some(out.p_gen)))
        }
    }
}

struct Candidate {
    parent: usize,
    piece: PieceId,
    score: f64,
    p_gen: Option<f64>,
    state: BaseState,
}

/// Beam search without length normalization.
///
/// Each step expands every live hypothesis over all outputs with nonzero
/// probability and keeps the best `beam - finished` candidates; candidates
/// ending in `<eos>` are set aside as finished. At the last step only
/// `<eos>` is allowed. Ties are broken by the piece sequence.
pub fn beam_search<B: FrozenBase>(
    base: &B,
    biasing: Option<&Biasing>,
    input: &B::Input,
    id: &str,
    opts: &SearchOptions,
) -> Result<NBestList> {
    opts.check()?;
    let vocab = base.vocab();
    if vocab.n_pieces() == 0 {
        return Err(Error::InvalidSearch("empty vocabulary".into()));
    }
    let eos = vocab.eos();
    let outputs: Vec<PieceId> = vocab.outputs().collect();
    let mut live = vec![Hypothesis::initial(base, opts.trace)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for t in 0..opts.max_len {
        let last = t + 1 == opts.max_len;
        let mut cands: Vec<Candidate> = Vec::new();
        for (k, hyp) in live.iter().enumerate() {
            let (p, state, p_gen) = next_distribution(base, biasing, input, hyp)?;
            let allowed: &[PieceId] = if last { std::slice::from_ref(&eos) } else { &outputs };
            for &y in allowed {
                let py = p[y.index()];
                if py > 0.0 {
                    cands.push(Candidate {
                        parent: k,
                        piece: y,
                        score: hyp.logp + py.ln(),
                        p_gen,
                        state,
                    });
                }
            }
        }
        let width = opts.beam - finished.len();
        // Candidates share a parent prefix, so ordering by (parent prefix,
        // piece) is ordering by full sequence.
        let seq_cmp = |a: &Candidate, b: &Candidate| {
            live[a.parent]
                .pieces
                .cmp(&live[b.parent].pieces)
                .then(a.piece.cmp(&b.piece))
        };
        cands.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| seq_cmp(a, b)));
        cands.truncate(width);

        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let mut pieces = Vec::with_capacity(parent.pieces.len() + 1);
            pieces.extend_from_slice(&parent.pieces);
            pieces.push(c.piece);
            let cursor = match biasing {
                Some(b) => b.trie.advance(parent.cursor, c.piece),
                None => parent.cursor,
            };
            let gen_trace = parent.gen_trace.as_ref().map(|g| {
                let mut g = g.clone();
                g.push(c.p_gen.unwrap_or(0.0));
                g
            });
            let hyp = Hypothesis {
                pieces,
                logp: c.score,
                cursor,
                state: c.state,
                finished: c.piece == eos,
                gen_trace,
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= opts.beam {
            break;
        }
    }
    if finished.is_empty() {
        return Err(Error::InvalidSearch(format!("no hypothesis reached <eos> for {id:?}")));
    }
    finished.sort_by(|a, b| rank(a.logp, &a.pieces, b.logp, &b.pieces));
    finished.truncate(opts.nbest);
    Ok(NBestList {
        id: id.to_string(),
        hypotheses: finished,
        beam: opts.beam,
        nbest: opts.nbest,
    })
}

/// Decode a set of utterances in parallel; output order follows `utts`.
/// `bias_for` supplies the tree for each utterance (None for an unbiased
/// decode).
pub fn decode_corpus<B, F>(
    base: &B,
    utts: &[Utterance],
    head: Option<(&TcpgenParams, &Array2<f64>, bool)>,
    trees: F,
    opts: &SearchOptions,
    workers: usize,
) -> Result<Vec<NBestList>>
where
    B: FrozenBase,
    F: Fn(&Utterance) -> Result<Option<PrefixTree>> + Sync,
{
    let run = |u: &Utterance| -> Result<NBestList> {
        let input = base.prepare(u)?;
        let tree = trees(u)?;
        let biasing = match (head, tree.as_ref()) {
            (Some((params, embeddings, ool)), Some(trie)) => Some(Biasing {
                params,
                trie,
                embeddings,
                ool,
                step: StepOptions::default(),
            }),
            _ => None,
        };
        beam_search(base, biasing.as_ref(), &input, &u.id, opts)
    };
    if workers <= 1 {
        return utts.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| utts.par_iter().map(run).collect())
}

/// One hypothesis in the N-best file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypRecord {
    pub text: String,
    pub pieces: Vec<u32>,
    pub logp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ilm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ext: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub id: String,
    pub hyps: Vec<HypRecord>,
}

impl NBestRecord {
    pub fn from_list(list: &NBestList, vocab: &Vocab) -> Self {
        NBestRecord {
            id: list.id.clone(),
            hyps: list
                .hypotheses
                .iter()
                .map(|h| HypRecord {
                    text: h.words(vocab).join(" "),
                    pieces: h.pieces.iter().map(|p| p.0).collect(),
                    logp: h.logp,
                    gen_trace: h.gen_trace.clone(),
                    ilm: None,
                    ext: None,
                    total: None,
                })
                .collect(),
        }
    }

    pub fn best_words(&self) -> Vec<String> {
        self.hyps
            .first()
            .map(|h| h.text.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default()
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<H> {
    header: H,
}

/// JSON Lines with a leading `{"header": ...}` line.
pub fn write_jsonl<H: Serialize, T: Serialize>(path: &Path, header: &H, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &HeaderLine { header })?;
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Records of a JSON Lines file, skipping a header line if present.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.starts_with("{\"header\"") {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

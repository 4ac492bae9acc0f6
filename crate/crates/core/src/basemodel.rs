//! Frozen base recognizer.
//!
//! [`FrozenBase`] is the seam a real encoder-decoder would plug into: it
//! exposes the final decoder hidden state and the output distribution for
//! one step, plus the same step with the acoustic input zeroed (the internal
//! LM path). [`SyntheticBase`] implements it with a seeded recipe whose
//! rare-word accuracy is a configuration knob.
//!
//! # Synthetic recipe
//!
//! The acoustics of an utterance are its reference pieces followed by
//! `<eos>`. Decoding position `i` has true piece `t = targets[i]` (`<eos>`
//! past the end). For every `(seed, utterance, position)` a ChaCha stream
//! draws, in order:
//!
//! 1. `u < acc(t)` deciding whether the truth is ranked first, where `acc` is
//!    `acc_rare` inside designated rare words and `acc_common` elsewhere;
//! 2. a competitor from the same class as `t` (word-initial pieces compete
//!    with word-initial pieces, `<eos>` competes with word-initial pieces);
//! 3. the top mass `m1 ~ U[0.5, 0.75]` and runner-up mass
//!    `m2 = (1 - m1) * U[0.4, 0.8]`;
//! 4. three confusion pieces;
//! 5. `d_dec` standard normal noise values.
//!
//! `p_mdl` puts `m1` on the winner and `m2` on the loser of (truth,
//! competitor). The remaining mass is split 98% as an even mix of the
//! confusion pieces and the internal-LM row of the previous piece, and 2%
//! uniformly over every output, so no output has zero probability. The
//! winner's mass is at least 0.5 and strictly above any other entry, so
//! greedy decoding recovers the truth with probability `acc(t)`.
//!
//! The hidden state is
//! `h = fit(snr * E[t] + 0.25 * E[prev]) + (1 - snr) * noise + offset`
//! where `E` is the seeded embedding table, `fit` zero-pads or truncates to
//! `d_dec`, and `offset` is a fixed seeded vector. The internal-LM path uses
//! the bigram row of `prev` as `p_mdl` and the same hidden-state formula
//! with the truth term removed and noise keyed by `(position, prev)` only,
//! so it never sees the utterance.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bigram::BigramTable;
use crate::error::{Error, Result};
use crate::seed;
use crate::textproc::{PieceId, Utterance, Vocab};

const STREAM_EMBED: u64 = 1;
const STREAM_OFFSET: u64 = 2;
const STREAM_STEP: u64 = 3;
const STREAM_ILM: u64 = 4;

const PREV_WEIGHT: f64 = 0.25;
const OFFSET_SCALE: f64 = 0.5;
const FLOOR_SHARE: f64 = 0.02;
const N_CONFUSIONS: usize = 3;

/// Decoding position of one hypothesis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BaseState {
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseStepResult {
    pub h_dec: Array1<f64>,
    pub p_mdl: Vec<f64>,
    pub next: BaseState,
}

pub trait FrozenBase: Sync {
    /// Per-utterance acoustic input.
    type Input: Sync;

    fn vocab(&self) -> &Vocab;

    fn d_dec(&self) -> usize;

    /// Wordpiece embedding table, `vocab.len() x d_emb`.
    fn embeddings(&self) -> &Array2<f64>;

    fn prepare(&self, utt: &Utterance) -> Result<Self::Input>;

    fn init_state(&self) -> BaseState {
        BaseState::default()
    }

    fn step(&self, input: &Self::Input, state: &BaseState, prev: PieceId) -> Result<BaseStepResult>;

    /// The step with the acoustic input zeroed.
    fn ilm_step(&self, state: &BaseState, prev: PieceId) -> Result<BaseStepResult>;
}

#[derive(Clone, Debug)]
pub struct SyntheticBaseConfig {
    pub d_dec: usize,
    pub acc_common: f64,
    pub acc_rare: f64,
    pub snr: f64,
    pub seed: u64,
    /// Words whose pieces are recognized with `acc_rare`.
    pub rare_words: HashSet<String>,
    pub ilm: BigramTable,
}

impl SyntheticBaseConfig {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if self.d_dec == 0 {
            return Err(Error::Config("d_dec must be positive".into()));
        }
        if !unit(self.acc_common) || !unit(self.acc_rare) {
            return Err(Error::Config("acc_common and acc_rare must lie in (0, 1)".into()));
        }
        if self.acc_rare > self.acc_common {
            return Err(Error::Config("acc_rare must not exceed acc_common".into()));
        }
        if !(0.0..=1.0).contains(&self.snr) {
            return Err(Error::Config("snr must lie in [0, 1]".into()));
        }
        self.ilm.check_vocab(vocab)
    }
}

/// The `[base]` section of a run config; file references are resolved
/// relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBaseSection {
    pub d_dec: usize,
    pub acc_common: f64,
    pub acc_rare: f64,
    pub snr: f64,
    pub seed: u64,
    pub rare_words: String,
    pub ilm: String,
}

impl SyntheticBaseSection {
    pub fn resolve(&self, dir: &Path) -> Result<SyntheticBaseConfig> {
        let rare = crate::textproc::load_word_list(&dir.join(&self.rare_words))?;
        let ilm_path = dir.join(&self.ilm);
        let text = std::fs::read_to_string(&ilm_path).map_err(|e| Error::io(&ilm_path, e))?;
        let ilm: BigramTable = serde_json::from_str(&text)?;
        Ok(SyntheticBaseConfig {
            d_dec: self.d_dec,
            acc_common: self.acc_common,
            acc_rare: self.acc_rare,
            snr: self.snr,
            seed: self.seed,
            rare_words: rare.into_iter().collect(),
            ilm,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SynthInput {
    key: u64,
    targets: Vec<PieceId>,
    rare: Vec<bool>,
}

impl SynthInput {
    /// Reference pieces followed by `<eos>`.
    pub fn targets(&self) -> &[PieceId] {
        &self.targets
    }

    pub fn is_rare(&self, position: usize) -> bool {
        self.rare.get(position).copied().unwrap_or(false)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticBase {
    vocab: Vocab,
    config: SyntheticBaseConfig,
    embeddings: Array2<f64>,
    offset: Array1<f64>,
    initial_pool: Vec<PieceId>,
    continuation_pool: Vec<PieceId>,
    outputs: Vec<PieceId>,
}

impl SyntheticBase {
    pub fn new(vocab: Vocab, config: SyntheticBaseConfig) -> Result<Self> {
        config.validate(&vocab)?;
        let d_emb = vocab.d_emb();
        let mut rng = seed::rng(config.seed, &[STREAM_EMBED]);
        let mut embeddings = Array2::<f64>::zeros((vocab.len(), d_emb));
        for id in vocab.outputs().chain(std::iter::once(vocab.bos())) {
            for j in 0..d_emb {
                embeddings[[id.index(), j]] = rng.sample(StandardNormal);
            }
        }
        let mut rng = seed::rng(config.seed, &[STREAM_OFFSET]);
        let offset = Array1::from_iter((0..config.d_dec).map(|_| OFFSET_SCALE * rng.sample::<f64, _>(StandardNormal)));
        let (initial_pool, continuation_pool) = vocab.real_pieces().partition(|&p| vocab.is_word_initial(p));
        let outputs = vocab.outputs().collect();
        Ok(SyntheticBase {
            vocab,
            config,
            embeddings,
            offset,
            initial_pool,
            continuation_pool,
            outputs,
        })
    }

    pub fn config(&self) -> &SyntheticBaseConfig {
        &self.config
    }

    fn hidden(&self, truth: Option<PieceId>, prev: PieceId, noise: impl Iterator<Item = f64>) -> Array1<f64> {
        let d_dec = self.config.d_dec;
        let d_emb = self.vocab.d_emb();
        let prev_row = self.embeddings.row(prev.index());
        let mut h = self.offset.clone();
        for (j, n) in noise.take(d_dec).enumerate() {
            h[j] += (1.0 - self.config.snr) * n;
            if j < d_emb {
                h[j] += PREV_WEIGHT * prev_row[j];
                if let Some(t) = truth {
                    h[j] += self.config.snr * self.embeddings[[t.index(), j]];
                }
            }
        }
        h
    }

    fn check_prev(&self, prev: PieceId) -> Result<()> {
        if prev == self.vocab.eos() {
            return Err(Error::PastEos);
        }
        if prev.index() >= self.vocab.len() || prev == self.vocab.ool() {
            return Err(Error::Shape(format!("invalid previous piece {prev}")));
        }
        Ok(())
    }
}

impl FrozenBase for SyntheticBase {
    type Input = SynthInput;

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn d_dec(&self) -> usize {
        self.config.d_dec
    }

    fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    fn prepare(&self, utt: &Utterance) -> Result<SynthInput> {
        let mut targets = Vec::new();
        let mut rare = Vec::new();
        for w in &utt.words {
            let pieces = self.vocab.tokenize(w)?;
            let is_rare = self.config.rare_words.contains(w);
            rare.extend(std::iter::repeat_n(is_rare, pieces.len()));
            targets.extend(pieces);
        }
        targets.push(self.vocab.eos());
        rare.push(false);
        Ok(SynthInput {
            key: seed::key_of(&utt.id),
            targets,
            rare,
        })
    }

    fn step(&self, input: &SynthInput, state: &BaseState, prev: PieceId) -> Result<BaseStepResult> {
        self.check_prev(prev)?;
        let pos = state.position;
        let eos = self.vocab.eos();
        let truth = input.targets.get(pos).copied().unwrap_or(eos);
        let acc = if input.is_rare(pos) {
            self.config.acc_rare
        } else {
            self.config.acc_common
        };
        let mut rng = seed::rng(self.config.seed, &[STREAM_STEP, input.key, pos as u64]);

        let truth_first = rng.random::<f64>() < acc;
        let pool = if truth == eos || self.vocab.is_word_initial(truth) {
            &self.initial_pool
        } else {
            &self.continuation_pool
        };
        let rivals = pool.len() - usize::from(pool.contains(&truth));
        let competitor = if rivals == 0 {
            None
        } else {
            let pick = rng.random_range(0..rivals);
            pool.iter().copied().filter(|&p| p != truth).nth(pick)
        };
        let m1 = 0.5 + 0.25 * rng.random::<f64>();
        let m2 = (1.0 - m1) * (0.4 + 0.4 * rng.random::<f64>());
        let confusions: Vec<PieceId> = (0..N_CONFUSIONS)
            .map(|_| self.outputs[rng.random_range(0..self.outputs.len())])
            .collect();

        let n = self.vocab.len();
        let mut p = vec![0.0f64; n];
        match competitor {
            Some(c) if truth_first => {
                p[truth.index()] += m1;
                p[c.index()] += m2;
            }
            Some(c) => {
                p[c.index()] += m1;
                p[truth.index()] += m2;
            }
            None => p[truth.index()] += m1 + m2,
        }
        let rest = 1.0 - m1 - m2;
        let spread = rest * (1.0 - FLOOR_SHARE);
        for &c in &confusions {
            p[c.index()] += 0.5 * spread / N_CONFUSIONS as f64;
        }
        let ilm_row = self.config.ilm.row(prev);
        let floor = rest * FLOOR_SHARE / self.outputs.len() as f64;
        for &o in &self.outputs {
            p[o.index()] += 0.5 * spread * ilm_row[o.index()] + floor;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);

        let noise = (0..).map(|_| rng.sample::<f64, _>(StandardNormal));
        let h_dec = self.hidden(Some(truth), prev, noise);
        Ok(BaseStepResult {
            h_dec,
            p_mdl: p,
            next: BaseState { position: pos + 1 },
        })
    }

    fn ilm_step(&self, state: &BaseState, prev: PieceId) -> Result<BaseStepResult> {
        self.check_prev(prev)?;
        let pos = state.position;
        let mut rng = seed::rng(self.config.seed, &[STREAM_ILM, pos as u64, prev.0 as u64]);
        let noise = (0..).map(|_| rng.sample::<f64, _>(StandardNormal));
        let h_dec = self.hidden(None, prev, noise);
        Ok(BaseStepResult {
            h_dec,
            p_mdl: self.config.ilm.row(prev).to_vec(),
            next: BaseState { position: pos + 1 },
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::textproc::Corpus;

    pub(crate) fn small_base(acc_common: f64, acc_rare: f64) -> (SyntheticBase, Corpus) {
        let corpus = Corpus::from_texts(&["the cat sat", "a zorblat ran", "the dog sat on a mat", "zorblat"]).unwrap();
        let vocab = crate::textproc::build_vocab(&corpus, 30, 8).unwrap();
        let ilm = BigramTable::estimate(&vocab, &corpus, 0.5).unwrap();
        let cfg = SyntheticBaseConfig {
            d_dec: 6,
            acc_common,
            acc_rare,
            snr: 0.8,
            seed: 5,
            rare_words: ["zorblat".to_string()].into_iter().collect(),
            ilm,
        };
        (SyntheticBase::new(vocab, cfg).unwrap(), corpus)
    }

    #[test]
    fn step_is_deterministic_and_normalized() {
        let (base, corpus) = small_base(0.9, 0.5);
        let input = base.prepare(&corpus.utterances[1]).unwrap();
        let mut state = base.init_state();
        let mut prev = base.vocab().bos();
        for &t in input.targets() {
            let a = base.step(&input, &state, prev).unwrap();
            let b = base.step(&input, &state, prev).unwrap();
            assert_eq!(a, b);
            assert!((a.p_mdl.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.p_mdl[t.index()] > 0.0);
            assert_eq!(a.p_mdl[base.vocab().bos().index()], 0.0);
            assert_eq!(a.p_mdl[base.vocab().ool().index()], 0.0);
            assert_eq!(a.h_dec.len(), 6);
            assert!(a.h_dec.iter().all(|x| x.is_finite()));
            state = a.next;
            prev = t;
        }
        assert!(matches!(base.step(&input, &state, prev), Err(Error::PastEos)));
    }

    #[test]
    fn ilm_ignores_acoustics() {
        let (base, corpus) = small_base(0.9, 0.5);
        let prev = base.vocab().tokenize("the").unwrap()[0];
        let state = BaseState { position: 2 };
        let a = base.ilm_step(&state, prev).unwrap();
        let b = base.ilm_step(&state, prev).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.p_mdl.as_slice(), base.config().ilm.row(prev));
        assert!((a.p_mdl.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // the acoustic path does depend on the utterance
        let i0 = base.prepare(&corpus.utterances[0]).unwrap();
        let i2 = base.prepare(&corpus.utterances[2]).unwrap();
        assert_ne!(base.step(&i0, &state, prev).unwrap(), base.step(&i2, &state, prev).unwrap());
    }

    #[test]
    fn config_validation() {
        let (base, _) = small_base(0.9, 0.5);
        let mut cfg = base.config().clone();
        cfg.acc_rare = 0.95;
        assert!(SyntheticBase::new(base.vocab().clone(), cfg.clone()).is_err());
        cfg.acc_rare = 0.5;
        cfg.acc_common = 1.0;
        assert!(SyntheticBase::new(base.vocab().clone(), cfg).is_err());
    }
}

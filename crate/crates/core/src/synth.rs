//! Synthetic benchmark: a consonant-vowel lexicon with Zipfian word
//! frequencies, an LM text corpus that defines which words are rare, and
//! train/dev/test splits, plus the vocabulary and internal-LM table the
//! synthetic base needs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::biaslists::full_rare_list;
use crate::bigram::BigramTable;
use crate::error::{Error, Result};
use crate::seed;
use crate::textproc::{build_vocab, word_freq, Corpus, Split, Utterance, Vocab};

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

const STREAM_LEXICON: u64 = 21;
const STREAM_TEXT: u64 = 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_words: usize,
    pub zipf_exponent: f64,
    pub n_lm_text: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub max_syllables: usize,
    /// Words outside the `top_k` most frequent LM-text words are rare.
    pub top_k: usize,
    pub vocab_size: usize,
    pub ilm_k: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_words: 5000,
            zipf_exponent: 1.0,
            n_lm_text: 30000,
            n_train: 2000,
            n_dev: 300,
            n_test: 500,
            min_words: 5,
            max_words: 10,
            max_syllables: 4,
            top_k: 500,
            vocab_size: 280,
            ilm_k: 0.5,
            seed: 17,
        }
    }
}

pub struct SynthData {
    /// Most frequent first.
    pub lexicon: Vec<String>,
    pub lm_text: Corpus,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub vocab: Vocab,
    /// Lexicographic.
    pub rare_words: Vec<String>,
    pub ilm: BigramTable,
}

/// Distinct CV words, shorter words more frequent.
fn lexicon(cfg: &SynthConfig) -> Result<Vec<String>> {
    let capacity: usize = (1..=cfg.max_syllables)
        .map(|s| (CONSONANTS.len() * VOWELS.len()).pow(s as u32))
        .sum();
    if cfg.n_words == 0 || cfg.n_words > capacity / 2 {
        return Err(Error::Config(format!(
            "n_words must lie in 1..={} for {} syllables",
            capacity / 2,
            cfg.max_syllables
        )));
    }
    let mut rng = seed::rng(cfg.seed, &[STREAM_LEXICON]);
    let mut seen = HashSet::new();
    let mut words: Vec<(usize, String)> = Vec::with_capacity(cfg.n_words);
    while words.len() < cfg.n_words {
        let n = rng.random_range(1..=cfg.max_syllables);
        let w: String = (0..n)
            .flat_map(|_| {
                [
                    CONSONANTS[rng.random_range(0..CONSONANTS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())],
                ]
            })
            .collect();
        if seen.insert(w.clone()) {
            words.push((n, w));
        }
    }
    // stable: draw order breaks ties within a length
    words.sort_by_key(|(n, _)| *n);
    Ok(words.into_iter().map(|(_, w)| w).collect())
}

fn sample_corpus(
    cfg: &SynthConfig,
    lexicon: &[String],
    prefix: &str,
    n: usize,
    split: Option<Split>,
    stream: u64,
) -> Result<Corpus> {
    let zipf = Zipf::new(lexicon.len() as f64, cfg.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = seed::rng(cfg.seed, &[STREAM_TEXT, stream]);
    let width = n.to_string().len();
    let utts = (0..n)
        .map(|i| {
            let len = rng.random_range(cfg.min_words..=cfg.max_words);
            let words: Vec<String> = (0..len)
                .map(|_| lexicon[zipf.sample(&mut rng) as usize - 1].clone())
                .collect();
            Utterance {
                id: format!("{prefix}-{i:0width$}"),
                words,
                split,
            }
        })
        .collect();
    Corpus::new(utts)
}

pub fn generate(cfg: &SynthConfig, d_emb: usize) -> Result<SynthData> {
    if cfg.min_words == 0 || cfg.min_words > cfg.max_words {
        return Err(Error::Config("need 1 <= min_words <= max_words".into()));
    }
    let lexicon = lexicon(cfg)?;
    let lm_text = sample_corpus(cfg, &lexicon, "lm", cfg.n_lm_text, None, 0)?;
    let train = sample_corpus(cfg, &lexicon, "train", cfg.n_train, Some(Split::Train), 1)?;
    let dev = sample_corpus(cfg, &lexicon, "dev", cfg.n_dev, Some(Split::Dev), 2)?;
    let test = sample_corpus(cfg, &lexicon, "test", cfg.n_test, Some(Split::Test), 3)?;

    // The lexicon is a single corpus line so every word is covered even if
    // the text never sampled it.
    let mut vocab_text = lm_text.clone();
    let mut shuffled = lexicon.clone();
    shuffled.shuffle(&mut seed::rng(cfg.seed, &[STREAM_LEXICON, 1]));
    vocab_text.utterances.push(Utterance {
        id: "lexicon".into(),
        words: shuffled,
        split: None,
    });
    let vocab = build_vocab(&vocab_text, cfg.vocab_size, d_emb)?;
    let rare_words = full_rare_list(&word_freq(&lm_text), cfg.top_k);
    let ilm = BigramTable::estimate(&vocab, &train, cfg.ilm_k)?;
    Ok(SynthData {
        lexicon,
        lm_text,
        train,
        dev,
        test,
        vocab,
        rare_words,
        ilm,
    })
}

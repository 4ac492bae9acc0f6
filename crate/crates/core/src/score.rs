//! Levenshtein alignment and corpus error rates.
//!
//! Class-restricted rates (biasing-list words, out-of-vocabulary words)
//! count substitutions and deletions whose reference word is in the class,
//! plus insertions whose hypothesis word is in the class, over the number of
//! reference tokens in the class.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::Corpus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EditOp {
    Match,
    Sub,
    Del,
    Ins,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub op: EditOp,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    pub ref_word: Option<String>,
    #[serde(rename = "hyp", skip_serializing_if = "Option::is_none")]
    pub hyp_word: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<AlignedPair>,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub n_ref: usize,
}

impl Alignment {
    pub fn errors(&self) -> usize {
        self.subs + self.ins + self.dels
    }

    pub fn reference(&self) -> Vec<&str> {
        self.ops.iter().filter_map(|p| p.ref_word.as_deref()).collect()
    }

    pub fn hypothesis(&self) -> Vec<&str> {
        self.ops.iter().filter_map(|p| p.hyp_word.as_deref()).collect()
    }
}

/// Minimum edit distance alignment with unit costs. Among equal-cost
/// backtraces, prefers match, then substitution, then deletion, then
/// insertion.
pub fn align<R: AsRef<str>, H: AsRef<str>>(reference: &[R], hyp: &[H]) -> Alignment {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, cell) in d[..w].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            let diag = d[(i - 1) * w + j - 1] + usize::from(!same);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    let mut a = Alignment {
        n_ref: n,
        ..Default::default()
    };
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            let diag = d[(i - 1) * w + j - 1];
            if same && here == diag {
                ops.push(pair(EditOp::Match, Some(&reference[i - 1]), Some(&hyp[j - 1])));
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + 1 {
                ops.push(pair(EditOp::Sub, Some(&reference[i - 1]), Some(&hyp[j - 1])));
                a.subs += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(pair::<_, &str>(EditOp::Del, Some(&reference[i - 1]), None));
            a.dels += 1;
            i -= 1;
        } else {
            ops.push(pair::<&str, _>(EditOp::Ins, None, Some(&hyp[j - 1])));
            a.ins += 1;
            j -= 1;
        }
    }
    ops.reverse();
    a.ops = ops;
    a
}

fn pair<R: AsRef<str>, H: AsRef<str>>(op: EditOp, r: Option<&R>, h: Option<&H>) -> AlignedPair {
    AlignedPair {
        op,
        ref_word: r.map(|s| s.as_ref().to_string()),
        hyp_word: h.map(|s| s.as_ref().to_string()),
    }
}

/// Corpus word error rate.
pub fn wer<'a, I: IntoIterator<Item = &'a Alignment>>(alignments: I) -> Result<f64> {
    let (mut errors, mut n) = (0usize, 0usize);
    let mut any = false;
    for a in alignments {
        any = true;
        errors += a.errors();
        n += a.n_ref;
    }
    if !any || n == 0 {
        return Err(Error::NoReferenceTokens);
    }
    Ok(errors as f64 / n as f64)
}

/// Errors over reference tokens for one word class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassRate {
    pub numerator: usize,
    pub denominator: usize,
    /// Absent when the denominator is zero.
    pub rate: Option<f64>,
    /// Errors were counted but the class has no reference tokens.
    pub infinite: bool,
}

impl ClassRate {
    fn new(numerator: usize, denominator: usize) -> Self {
        ClassRate {
            numerator,
            denominator,
            rate: (denominator > 0).then(|| numerator as f64 / denominator as f64),
            infinite: denominator == 0 && numerator > 0,
        }
    }

    fn add(&mut self, other: (usize, usize)) {
        *self = ClassRate::new(self.numerator + other.0, self.denominator + other.1);
    }
}

/// `(errors, reference tokens)` restricted to words accepted by `member`.
pub fn class_counts(a: &Alignment, member: impl Fn(&str) -> bool) -> (usize, usize) {
    let (mut num, mut den) = (0, 0);
    for p in &a.ops {
        let ref_in = p.ref_word.as_deref().is_some_and(&member);
        if ref_in {
            den += 1;
        }
        match p.op {
            EditOp::Sub | EditOp::Del if ref_in => num += 1,
            EditOp::Ins if p.hyp_word.as_deref().is_some_and(&member) => num += 1,
            _ => {}
        }
    }
    (num, den)
}

/// Rare-word error rate against per-utterance biasing lists keyed by
/// utterance id.
pub fn r_wer<S: AsRef<str>>(
    alignments: &[(S, &Alignment)],
    lists: &HashMap<String, HashSet<String>>,
) -> Result<ClassRate> {
    let mut rate = ClassRate::default();
    for (id, a) in alignments {
        let list = lists
            .get(id.as_ref())
            .ok_or_else(|| Error::MissingList(id.as_ref().to_string()))?;
        rate.add(class_counts(a, |w| list.contains(w)));
    }
    Ok(rate)
}

/// Same rule as [`r_wer`] with one global word set.
pub fn oov_wer<'a, I: IntoIterator<Item = &'a Alignment>>(alignments: I, oov_words: &HashSet<String>) -> ClassRate {
    let mut rate = ClassRate::default();
    for a in alignments {
        rate.add(class_counts(a, |w| oov_words.contains(w)));
    }
    rate
}

/// Words seen in `refs` or `hyps` that never occur in `train`.
pub fn oov_words<'a>(train: &Corpus, words: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    let known: HashSet<&str> = train
        .utterances
        .iter()
        .flat_map(|u| u.words.iter().map(String::as_str))
        .collect();
    words
        .into_iter()
        .filter(|w| !known.contains(w))
        .map(str::to_string)
        .collect()
}

/// Lowercase and drop non-alphanumeric characters other than apostrophes.
pub fn normalize_words<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            w.as_ref()
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub hyp: String,
    pub n_ref: usize,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list_errors: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ops: Option<Vec<AlignedPair>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n_utterances: usize,
    pub n_ref: usize,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub wer: f64,
    pub r_wer: Option<ClassRate>,
    pub oov_wer: Option<ClassRate>,
    pub utterances: Vec<UtteranceScore>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ScoreOptions {
    pub normalize: bool,
    /// Keep per-utterance edit operations in the report.
    pub verbose: bool,
}

/// Score hypotheses (keyed by utterance id) against a reference corpus.
pub fn score_corpus(
    refs: &Corpus,
    hyps: &HashMap<String, Vec<String>>,
    lists: Option<&HashMap<String, HashSet<String>>>,
    oov: Option<&HashSet<String>>,
    opts: ScoreOptions,
) -> Result<ScoreReport> {
    let mut alignments = Vec::with_capacity(refs.len());
    for u in &refs.utterances {
        let hyp = hyps
            .get(&u.id)
            .ok_or_else(|| Error::InvalidCorpus(format!("no hypothesis for utterance {:?}", u.id)))?;
        let a = if opts.normalize {
            align(&normalize_words(&u.words), &normalize_words(hyp))
        } else {
            align(&u.words, hyp)
        };
        alignments.push(a);
    }
    let wer_value = wer(&alignments)?;
    let pairs: Vec<(&str, &Alignment)> = refs.utterances.iter().map(|u| u.id.as_str()).zip(&alignments).collect();
    let r = lists.map(|l| r_wer(&pairs, l)).transpose()?;
    let o = oov.map(|set| oov_wer(&alignments, set));

    let utterances = pairs
        .iter()
        .map(|&(id, a)| {
            let list_counts = lists.map(|l| class_counts(a, |w| l[id].contains(w)));
            UtteranceScore {
                id: id.to_string(),
                hyp: a.hypothesis().join(" "),
                n_ref: a.n_ref,
                subs: a.subs,
                ins: a.ins,
                dels: a.dels,
                list_errors: list_counts.map(|c| c.0),
                list_tokens: list_counts.map(|c| c.1),
                ops: opts.verbose.then(|| a.ops.clone()),
            }
        })
        .collect();
    Ok(ScoreReport {
        n_utterances: refs.len(),
        n_ref: alignments.iter().map(|a| a.n_ref).sum(),
        subs: alignments.iter().map(|a| a.subs).sum(),
        ins: alignments.iter().map(|a| a.ins).sum(),
        dels: alignments.iter().map(|a| a.dels).sum(),
        wer: wer_value,
        r_wer: r,
        oov_wer: o,
        utterances,
    })
}

//! Biasing-list construction: the full rare-word list, per-utterance test
//! lists with distractors, and the error-based training list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{Alignment, EditOp};
use crate::seed;
use crate::textproc::WordFreq;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RareSim,
    ErrorBased,
    Ontology,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiasingList {
    /// Utterance id, or `"global"` for a list shared by every utterance.
    pub utterance: String,
    /// Reference hits first, then distractors in sampled order.
    pub words: Vec<String>,
    pub provenance: Provenance,
}

impl BiasingList {
    /// A whole-file list used for every utterance without looking at
    /// references.
    pub fn ontology(words: Vec<String>) -> Self {
        let mut seen = HashSet::new();
        BiasingList {
            utterance: "global".into(),
            words: words.into_iter().filter(|w| seen.insert(w.clone())).collect(),
            provenance: Provenance::Ontology,
        }
    }
}

/// An ordered, duplicate-free word list with constant-time membership.
#[derive(Clone, Debug, Default)]
pub struct WordPool {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordPool {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut pool = WordPool::default();
        for w in words {
            let w = w.as_ref();
            if !pool.index.contains_key(w) {
                pool.index.insert(w.to_string(), pool.words.len());
                pool.words.push(w.to_string());
            }
        }
        pool
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Every word except the `top_k` most frequent (count ties at the boundary
/// resolved lexicographically). Returned in lexicographic order.
pub fn full_rare_list(freqs: &WordFreq, top_k: usize) -> Vec<String> {
    let mut rare: Vec<String> = freqs.ranked().into_iter().skip(top_k).map(|(w, _)| w.to_string()).collect();
    rare.sort();
    rare
}

/// Words in `freqs` with count below `threshold`, lexicographic order.
pub fn frequency_based_list(freqs: &WordFreq, threshold: u64) -> Vec<String> {
    let mut out: Vec<String> = freqs
        .ranked()
        .into_iter()
        .filter(|&(_, c)| c < threshold)
        .map(|(w, _)| w.to_string())
        .collect();
    out.sort();
    out
}

/// Reference words found in `pool`, in reference order without repeats.
pub fn reference_hits<S: AsRef<str>>(ref_words: &[S], pool: &WordPool) -> Vec<String> {
    let mut seen = HashSet::new();
    ref_words
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| pool.contains(w) && seen.insert(*w))
        .map(str::to_string)
        .collect()
}

/// Reference hits plus `n_distractors` words drawn uniformly without
/// replacement from the rest of the pool.
pub fn utterance_list<S: AsRef<str>>(
    utterance: &str,
    ref_words: &[S],
    pool: &WordPool,
    n_distractors: usize,
    seed: u64,
) -> Result<BiasingList> {
    let mut words = reference_hits(ref_words, pool);
    let available = pool.len() - words.len();
    if n_distractors > available {
        return Err(Error::InsufficientDistractors {
            requested: n_distractors,
            available,
        });
    }
    if n_distractors > 0 {
        let hits: HashSet<usize> = words.iter().map(|w| pool.index[w]).collect();
        let mut rng = seed::rng(seed, &[]);
        // A uniform random ordering of distinct pool entries stays uniform
        // after dropping the hits.
        let drawn = index::sample(&mut rng, pool.len(), n_distractors + hits.len());
        words.extend(
            drawn
                .into_iter()
                .filter(|i| !hits.contains(i))
                .take(n_distractors)
                .map(|i| pool.words[i].clone()),
        );
    }
    Ok(BiasingList {
        utterance: utterance.to_string(),
        words,
        provenance: Provenance::RareSim,
    })
}

/// Distinct reference words whose own error rate (substitutions plus
/// deletions over occurrences) is strictly above the corpus word error
/// rate. Lexicographic order.
pub fn error_based_list<'a, I: IntoIterator<Item = &'a Alignment>>(alignments: I) -> Result<Vec<String>> {
    let mut per_word: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let (mut total_errors, mut total_ref) = (0u64, 0u64);
    let mut any = false;
    for a in alignments {
        any = true;
        total_errors += a.errors() as u64;
        total_ref += a.n_ref as u64;
        for p in &a.ops {
            if let Some(w) = p.ref_word.as_deref() {
                let e = per_word.entry(w).or_default();
                e.1 += 1;
                if matches!(p.op, EditOp::Sub | EditOp::Del) {
                    e.0 += 1;
                }
            }
        }
    }
    if !any {
        return Err(Error::EmptyDecodeSet);
    }
    if total_ref == 0 {
        return Err(Error::NoReferenceTokens);
    }
    // err_w / n_w > E / N  <=>  err_w * N > E * n_w
    Ok(per_word
        .into_iter()
        .filter(|&(_, (err, n))| err * total_ref > total_errors * n)
        .map(|(w, _)| w.to_string())
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ListRecord {
    id: String,
    words: Vec<String>,
}

/// Per-utterance lists as JSON Lines `{id, words}`.
pub fn save_lists(path: &Path, lists: &[BiasingList]) -> Result<()> {
    let mut out = Vec::new();
    for l in lists {
        serde_json::to_writer(
            &mut out,
            &ListRecord {
                id: l.utterance.clone(),
                words: l.words.clone(),
            },
        )?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_lists(path: &Path) -> Result<Vec<BiasingList>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || (i == 0 && line.starts_with("{\"header\"")) {
            continue;
        }
        let rec: ListRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(BiasingList {
            utterance: rec.id,
            words: rec.words,
            provenance: Provenance::RareSim,
        });
    }
    Ok(out)
}

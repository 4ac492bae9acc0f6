//! Wordpiece vocabulary, tokenization, corpora and word statistics.
//!
//! Word-initial pieces carry a leading `_` marker; continuation pieces never
//! contain it. The marker convention is what lets the prefix tree tell a new
//! word apart from the continuation of the current one.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MARKER: char = '_';
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const OOL: &str = "<ool>";

/// Dense wordpiece id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PieceId(pub u32);

impl PieceId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PieceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, PieceId>,
    n_real: usize,
    max_piece_chars: usize,
    d_emb: usize,
}

impl Vocab {
    /// Build from the ordinary pieces; `<bos>`, `<eos>` and `<ool>` are appended.
    pub fn from_pieces<S: AsRef<str>>(pieces: &[S], d_emb: usize) -> Result<Self> {
        if d_emb == 0 {
            return Err(Error::InvalidVocab("embedding dimension must be positive".into()));
        }
        let mut all: Vec<String> = Vec::with_capacity(pieces.len() + 3);
        let mut index = HashMap::with_capacity(pieces.len() + 3);
        let mut max_piece_chars = 0;
        for p in pieces {
            let p = p.as_ref();
            validate_piece(p)?;
            if index.insert(p.to_string(), PieceId(all.len() as u32)).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate piece {p:?}")));
            }
            max_piece_chars = max_piece_chars.max(p.chars().count());
            all.push(p.to_string());
        }
        let n_real = all.len();
        for s in [BOS, EOS, OOL] {
            index.insert(s.to_string(), PieceId(all.len() as u32));
            all.push(s.to_string());
        }
        Ok(Vocab {
            pieces: all,
            index,
            n_real,
            max_piece_chars,
            d_emb,
        })
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Number of ordinary (non-special) pieces.
    pub fn n_pieces(&self) -> usize {
        self.n_real
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn bos(&self) -> PieceId {
        PieceId(self.n_real as u32)
    }

    pub fn eos(&self) -> PieceId {
        PieceId(self.n_real as u32 + 1)
    }

    pub fn ool(&self) -> PieceId {
        PieceId(self.n_real as u32 + 2)
    }

    pub fn is_special(&self, id: PieceId) -> bool {
        id.index() >= self.n_real
    }

    pub fn is_word_initial(&self, id: PieceId) -> bool {
        !self.is_special(id) && self.pieces[id.index()].starts_with(MARKER)
    }

    pub fn piece(&self, id: PieceId) -> &str {
        &self.pieces[id.index()]
    }

    pub fn id(&self, piece: &str) -> Option<PieceId> {
        self.index.get(piece).copied()
    }

    /// Ordinary pieces in id order.
    pub fn real_pieces(&self) -> impl Iterator<Item = PieceId> + '_ {
        (0..self.n_real as u32).map(PieceId)
    }

    /// Ids that a decoder may emit: every ordinary piece plus `<eos>`.
    pub fn outputs(&self) -> impl Iterator<Item = PieceId> + '_ {
        self.real_pieces().chain(std::iter::once(self.eos()))
    }

    /// Greedy longest-match segmentation of a single word.
    pub fn tokenize(&self, word: &str) -> Result<Vec<PieceId>> {
        let unencodable = |reason: &str| Error::Unencodable {
            word: word.to_string(),
            reason: reason.to_string(),
        };
        if word.is_empty() {
            return Err(unencodable("empty word"));
        }
        if word.contains(MARKER) || word.chars().any(char::is_whitespace) {
            return Err(unencodable("word contains the marker or whitespace"));
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < chars.len() {
            let longest = self.max_piece_chars.min(chars.len() - pos);
            let mut found = None;
            for len in (1..=longest).rev() {
                let start = chars[pos].0;
                let end = chars.get(pos + len).map_or(word.len(), |c| c.0);
                buf.clear();
                if pos == 0 {
                    buf.push(MARKER);
                }
                buf.push_str(&word[start..end]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if !self.is_special(id) {
                        found = Some((id, len));
                        break;
                    }
                }
            }
            match found {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    return Err(unencodable(&format!(
                        "no piece covers {:?} at character {pos}",
                        chars[pos].1
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Join pieces back into words. Specials are skipped.
    pub fn detokenize(&self, pieces: &[PieceId]) -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for &id in pieces {
            if self.is_special(id) {
                continue;
            }
            let p = self.piece(id);
            match p.strip_prefix(MARKER) {
                Some(rest) => words.push(rest.to_string()),
                None => match words.last_mut() {
                    Some(w) => w.push_str(p),
                    None => words.push(p.to_string()),
                },
            }
        }
        words
    }

    /// Write one piece per line, specials last.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, d_emb: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = body_lines(&text).collect();
        let n = lines.len();
        if n < 3 || lines[n - 3..] != [BOS, EOS, OOL] {
            return Err(Error::Parse {
                path: path.into(),
                line: n,
                message: "vocabulary must end with <bos>, <eos>, <ool>".into(),
            });
        }
        Self::from_pieces(&lines[..n - 3], d_emb)
    }
}

fn validate_piece(p: &str) -> Result<()> {
    let bad = |why: &str| Err(Error::InvalidVocab(format!("piece {p:?}: {why}")));
    if p.is_empty() || p == MARKER.to_string() {
        return bad("empty");
    }
    if p == BOS || p == EOS || p == OOL {
        return bad("reserved spelling");
    }
    if p.chars().skip(1).any(|c| c == MARKER) {
        return bad("marker inside piece");
    }
    if p.chars().any(char::is_whitespace) {
        return bad("whitespace");
    }
    Ok(())
}

/// Learn a deterministic BPE inventory from word counts.
///
/// Seeds with every single character (marked when it opens a word), then
/// repeatedly merges the most frequent adjacent pair, breaking count ties by
/// the lexicographically smallest merged string. Stops at `target_size`
/// ordinary pieces or when no pair is left to merge.
pub fn build_vocab(corpus: &Corpus, target_size: usize, d_emb: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut type_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for u in &corpus.utterances {
        for w in &u.words {
            *type_counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = Vec::with_capacity(type_counts.len());
    let mut seeds: BTreeSet<String> = BTreeSet::new();
    for (w, &c) in &type_counts {
        if w.contains(MARKER) {
            return Err(Error::Unencodable {
                word: w.to_string(),
                reason: "word contains the marker".into(),
            });
        }
        let symbols: Vec<String> = w
            .chars()
            .enumerate()
            .map(|(i, ch)| if i == 0 { format!("{MARKER}{ch}") } else { ch.to_string() })
            .collect();
        seeds.extend(symbols.iter().cloned());
        words.push((symbols, c));
    }
    if target_size < seeds.len() {
        return Err(Error::VocabTooSmall {
            target: target_size,
            inventory: seeds.len(),
        });
    }
    let mut pieces: Vec<String> = seeds.iter().cloned().collect();
    let mut known: HashSet<String> = seeds.into_iter().collect();

    while pieces.len() < target_size {
        let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, c) in &words {
            for pair in symbols.windows(2) {
                *pair_counts.entry((&pair[0], &pair[1])).or_default() += c;
            }
        }
        let best = pair_counts
            .into_iter()
            .map(|((a, b), c)| (c, format!("{a}{b}"), a.to_string(), b.to_string()))
            .max_by(|x, y| x.0.cmp(&y.0).then_with(|| y.1.cmp(&x.1)).then_with(|| y.2.cmp(&x.2)));
        let Some((_, merged, left, right)) = best else {
            break;
        };
        for (symbols, _) in words.iter_mut() {
            let mut i = 0;
            let mut next = Vec::with_capacity(symbols.len());
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    next.push(merged.clone());
                    i += 2;
                } else {
                    next.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = next;
        }
        if known.insert(merged.clone()) {
            pieces.push(merged);
        }
    }
    Vocab::from_pieces(&pieces, d_emb)
}

/// Add a first-character-capitalised copy of every word. Set semantics,
/// first-seen order.
pub fn augment_case<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(words.len() * 2);
    for w in words {
        let w = w.as_ref();
        for candidate in [w.to_string(), capitalize(w)] {
            if seen.insert(candidate.clone()) {
                out.push(candidate);
            }
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut chars = w.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub split: Option<Split>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, text: &str) -> Self {
        Utterance {
            id: id.into(),
            words: text.split_whitespace().map(str::to_string).collect(),
            split: None,
        }
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    #[serde(rename = "ref")]
    reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    /// Validates unique ids and non-empty references.
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut ids = HashSet::new();
        for u in &utterances {
            if u.words.is_empty() {
                return Err(Error::InvalidCorpus(format!("utterance {:?} has an empty reference", u.id)));
            }
            if !ids.insert(u.id.as_str()) {
                return Err(Error::InvalidCorpus(format!("duplicate utterance id {:?}", u.id)));
            }
        }
        Ok(Corpus { utterances })
    }

    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        Self::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance::new(format!("u{i}"), t.as_ref()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct words in first-seen order.
    pub fn word_types(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for u in &self.utterances {
            for w in &u.words {
                if seen.insert(w.as_str()) {
                    out.push(w.clone());
                }
            }
        }
        out
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut utterances = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || (i == 0 && line.starts_with("{\"header\"")) {
                continue;
            }
            let rec: UtteranceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let mut u = Utterance::new(rec.id, &rec.reference);
            u.split = rec.split;
            utterances.push(u);
        }
        Self::new(utterances)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for u in &self.utterances {
            let rec = UtteranceRecord {
                id: u.id.clone(),
                reference: u.text(),
                split: u.split,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Exact word token counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordFreq {
    counts: HashMap<String, u64>,
}

impl WordFreq {
    pub fn from_counts<I: IntoIterator<Item = (String, u64)>>(counts: I) -> Self {
        WordFreq {
            counts: counts.into_iter().collect(),
        }
    }

    pub fn get(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Descending count, then lexicographic.
    pub fn ranked(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self.counts.iter().map(|(w, &c)| (w.as_str(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

pub fn word_freq(corpus: &Corpus) -> WordFreq {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for u in &corpus.utterances {
        for w in &u.words {
            *counts.entry(w.clone()).or_default() += 1;
        }
    }
    WordFreq { counts }
}

/// One word per line; blank lines skipped.
/// Prefix of the provenance header line that artifacts may start with.
pub const HEADER_PREFIX: &str = "#ctxbias ";

/// Lines of a text artifact, header line excluded.
pub fn body_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with(HEADER_PREFIX))
}

pub fn load_word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(body_lines(&text)
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn save_word_list<S: AsRef<str>>(path: &Path, words: &[S]) -> Result<()> {
    let mut out = String::new();
    for w in words {
        out.push_str(w.as_ref());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

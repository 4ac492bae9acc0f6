//! Wordpiece prefix tree over a biasing list, and the per-hypothesis cursor
//! that tracks where a partial transcript sits in it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::error::Result;
use crate::textproc::{PieceId, Vocab};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrieNode {
    pub children: BTreeMap<PieceId, usize>,
    pub is_word_end: bool,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub struct PrefixTree {
    nodes: Vec<TrieNode>,
    source_words: Vec<String>,
    ool: PieceId,
}

/// Position of a hypothesis in the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum TrieCursor {
    #[default]
    Root,
    Node(usize),
    Detached,
}

impl PrefixTree {
    pub const ROOT: usize = 0;

    /// Compile `words` into a tree. Duplicates collapse; nodes are numbered
    /// breadth-first with children visited in piece-id order.
    pub fn build<S: AsRef<str>>(vocab: &Vocab, words: &[S]) -> Result<Self> {
        let mut source_words: Vec<String> = Vec::with_capacity(words.len());
        let mut seen = BTreeSet::new();
        let mut paths = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            if seen.insert(w.to_string()) {
                paths.push(vocab.tokenize(w)?);
                source_words.push(w.to_string());
            }
        }
        Ok(Self::from_paths(vocab.ool(), &paths, source_words))
    }

    /// [`PrefixTree::build`] with segmentations looked up in `cache` first.
    pub fn build_cached<S: AsRef<str>>(
        vocab: &Vocab,
        words: &[S],
        cache: &HashMap<String, Vec<PieceId>>,
    ) -> Result<Self> {
        let mut source_words: Vec<String> = Vec::with_capacity(words.len());
        let mut seen = HashSet::new();
        let mut paths = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            if seen.insert(w) {
                paths.push(match cache.get(w) {
                    Some(p) => p.clone(),
                    None => vocab.tokenize(w)?,
                });
                source_words.push(w.to_string());
            }
        }
        Ok(Self::from_paths(vocab.ool(), &paths, source_words))
    }

    fn from_paths(ool: PieceId, paths: &[Vec<PieceId>], source_words: Vec<String>) -> Self {
        // Insertion-ordered scratch tree, renumbered breadth-first below.
        let mut scratch: Vec<(BTreeMap<PieceId, usize>, bool)> = vec![(BTreeMap::new(), false)];
        for path in paths {
            let mut at = 0;
            for &p in path {
                let next = scratch.len();
                at = *scratch[at].0.entry(p).or_insert(next);
                if at == next {
                    scratch.push((BTreeMap::new(), false));
                }
            }
            scratch[at].1 = true;
        }

        let mut order = Vec::with_capacity(scratch.len());
        let mut new_index = vec![0usize; scratch.len()];
        let mut depth = vec![0usize; scratch.len()];
        let mut queue = VecDeque::from([0usize]);
        while let Some(old) = queue.pop_front() {
            new_index[old] = order.len();
            order.push(old);
            for &child in scratch[old].0.values() {
                depth[child] = depth[old] + 1;
                queue.push_back(child);
            }
        }
        let nodes = order
            .iter()
            .map(|&old| TrieNode {
                children: scratch[old].0.iter().map(|(&p, &c)| (p, new_index[c])).collect(),
                is_word_end: scratch[old].1,
                depth: depth[old],
            })
            .collect();
        PrefixTree {
            nodes,
            source_words,
            ool,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn node(&self, index: usize) -> &TrieNode {
        &self.nodes[index]
    }

    pub fn source_words(&self) -> &[String] {
        &self.source_words
    }

    fn root_reachable(&self, cursor: TrieCursor) -> bool {
        match cursor {
            TrieCursor::Root | TrieCursor::Detached => true,
            TrieCursor::Node(i) => self.nodes[i].is_word_end,
        }
    }

    fn current(&self, cursor: TrieCursor) -> Option<&TrieNode> {
        match cursor {
            TrieCursor::Root => Some(&self.nodes[Self::ROOT]),
            TrieCursor::Node(i) => Some(&self.nodes[i]),
            TrieCursor::Detached => None,
        }
    }

    /// Move the cursor over one emitted piece.
    pub fn advance(&self, cursor: TrieCursor, piece: PieceId) -> TrieCursor {
        if let Some(&child) = self.current(cursor).and_then(|n| n.children.get(&piece)) {
            return TrieCursor::Node(child);
        }
        if self.root_reachable(cursor) {
            if let Some(&child) = self.nodes[Self::ROOT].children.get(&piece) {
                return TrieCursor::Node(child);
            }
        }
        TrieCursor::Detached
    }

    /// Pieces the tree allows next, ascending, with `<ool>` last when enabled.
    pub fn valid_set(&self, cursor: TrieCursor, ool_enabled: bool) -> Vec<PieceId> {
        let mut out: Vec<PieceId> = self
            .current(cursor)
            .map(|n| n.children.keys().copied().collect())
            .unwrap_or_default();
        if self.root_reachable(cursor) && cursor != TrieCursor::Root {
            out.extend(self.nodes[Self::ROOT].children.keys().copied());
            out.sort_unstable();
            out.dedup();
        }
        if ool_enabled {
            out.push(self.ool);
        }
        out
    }

    /// Pre-order rendering, one node per line, indented by depth.
    pub fn dump(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        let mut stack = vec![(Self::ROOT, None::<PieceId>)];
        while let Some((i, via)) = stack.pop() {
            let node = &self.nodes[i];
            let label = via.map_or("<root>", |p| vocab.piece(p));
            let _ = writeln!(
                out,
                "{}{}{}",
                "  ".repeat(node.depth),
                label,
                if node.is_word_end { " *" } else { "" }
            );
            for (&p, &c) in node.children.iter().rev() {
                stack.push((c, Some(p)));
            }
        }
        out
    }
}

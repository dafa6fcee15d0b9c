//! Prefix tree over tokenized entity names, used as the constraint automaton
//! during decoding.
//!
//! Nodes live in a flat arena numbered in preorder, with each node's children
//! stored as a sorted `(token, node)` slice of one shared array. Preorder
//! numbering makes the terminals under any node a contiguous range of terminal
//! ordinals, which is what lets `no_repeat` pruning skip subtrees whose every
//! entity has already been emitted without walking them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::catalog::{EntityCatalog, EntityId};
use crate::error::{Error, Result};
use crate::tokenizer::{is_reserved, tokenize, Mode, TokenId, Tokenizer, Vocabulary, EOS, SEP};

const NONE: u32 = u32::MAX;
pub const ROOT: u32 = 0;
const CACHE_MAGIC: &[u8; 6] = b"ETRIE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Node {
    child_start: u32,
    child_len: u32,
    terminal: u32,
    /// Terminal ordinals under this node (inclusive of itself): `term_lo..term_hi`.
    term_lo: u32,
    term_hi: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTrie {
    nodes: Vec<Node>,
    children: Vec<(TokenId, u32)>,
    /// Terminal ordinal of each entity id, and its inverse.
    ordinal: Vec<u32>,
    by_ordinal: Vec<u32>,
    entity_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrieCursor {
    node: u32,
}

impl TrieCursor {
    pub const ROOT: TrieCursor = TrieCursor { node: ROOT };
    pub const FINISHED: TrieCursor = TrieCursor { node: NONE };

    pub fn node(self) -> u32 {
        self.node
    }

    pub fn at_boundary(self) -> bool {
        self.node == ROOT
    }

    pub fn is_finished(self) -> bool {
        self.node == NONE
    }
}

/// Decoding constraints that affect which tokens are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constraints {
    pub no_repeat: bool,
    pub allow_empty: bool,
    pub max_entities: usize,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints { no_repeat: true, allow_empty: false, max_entities: 64 }
    }
}

/// Entities emitted so far by one hypothesis.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Emitted {
    /// Sorted, distinct terminal ordinals.
    ords: Vec<u32>,
    /// Names emitted including repeats.
    count: usize,
}

impl Emitted {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn distinct(&self) -> usize {
        self.ords.len()
    }

    fn contains(&self, ord: u32) -> bool {
        self.ords.binary_search(&ord).is_ok()
    }

    fn insert(&mut self, ord: u32) {
        if let Err(pos) = self.ords.binary_search(&ord) {
            self.ords.insert(pos, ord);
        }
        self.count += 1;
    }

    fn count_in(&self, lo: u32, hi: u32) -> usize {
        let a = self.ords.partition_point(|&o| o < lo);
        let b = self.ords.partition_point(|&o| o < hi);
        b - a
    }

    pub fn entities(&self, trie: &TokenTrie) -> Vec<EntityId> {
        let mut v: Vec<EntityId> = self.ords.iter().map(|&o| trie.entity_at_ordinal(o)).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TrieStats {
    pub node_count: usize,
    pub max_depth: usize,
    pub entity_count: usize,
    pub heap_bytes: usize,
}

impl TokenTrie {
    pub fn build<T: Tokenizer + ?Sized>(catalog: &EntityCatalog, vocab: &Vocabulary, tokenizer: &T) -> Result<Self> {
        let seqs = catalog
            .names()
            .iter()
            .map(|n| tokenize(tokenizer, n.as_str(), vocab, Mode::Output))
            .collect::<Result<Vec<_>>>()?;
        Self::from_sequences(&seqs)
    }

    /// Build from pre-tokenized names; `seqs[i]` spells entity `i`.
    pub fn from_sequences(seqs: &[Vec<TokenId>]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        // Staging trie: edge map, then per-node child vectors.
        let mut terminal: Vec<u32> = vec![NONE];
        let mut edges: HashMap<(u32, TokenId), u32> = HashMap::new();
        for (eid, seq) in seqs.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Config(format!("entity {eid} tokenizes to an empty sequence")));
            }
            let mut cur = 0u32;
            for &tok in seq {
                if is_reserved(tok) {
                    return Err(Error::OutputOov { token: format!("<reserved {tok}>") });
                }
                let fresh = terminal.len() as u32;
                cur = *edges.entry((cur, tok)).or_insert_with(|| {
                    terminal.push(NONE);
                    fresh
                });
            }
            let slot = &mut terminal[cur as usize];
            if *slot != NONE {
                return Err(Error::DuplicateName(vec![format!("entities {} and {eid} share a token sequence", *slot)]));
            }
            *slot = eid as u32;
        }
        let mut kids: Vec<Vec<(TokenId, u32)>> = vec![Vec::new(); terminal.len()];
        for ((parent, tok), child) in edges {
            kids[parent as usize].push((tok, child));
        }
        for k in &mut kids {
            k.sort_unstable_by_key(|&(t, _)| t);
        }
        let pre = flatten_order(&kids);
        Ok(Self::assemble(&pre, &terminal, &kids, seqs.len()))
    }

    /// `pre` lists staging node ids in preorder.
    fn assemble(pre: &[u32], terminal: &[u32], kids: &[Vec<(TokenId, u32)>], entity_count: usize) -> Self {
        let mut new_id = vec![0u32; pre.len()];
        for (i, &old) in pre.iter().enumerate() {
            new_id[old as usize] = i as u32;
        }
        let mut nodes = Vec::with_capacity(pre.len());
        let mut children = Vec::with_capacity(pre.len().saturating_sub(1));
        for &old in pre {
            let k = &kids[old as usize];
            nodes.push(Node {
                child_start: children.len() as u32,
                child_len: k.len() as u32,
                terminal: terminal[old as usize],
                term_lo: 0,
                term_hi: 0,
            });
            children.extend(k.iter().map(|&(t, c)| (t, new_id[c as usize])));
        }
        let mut trie = TokenTrie {
            nodes,
            children,
            ordinal: vec![NONE; entity_count],
            by_ordinal: vec![NONE; entity_count],
            entity_count,
        };
        trie.index_terminals();
        trie
    }

    /// Assign terminal ordinals in preorder and compute subtree ranges.
    /// Requires nodes to already be numbered in preorder.
    fn index_terminals(&mut self) {
        let mut next = 0u32;
        for n in &mut self.nodes {
            n.term_lo = next;
            if n.terminal != NONE {
                self.ordinal[n.terminal as usize] = next;
                self.by_ordinal[next as usize] = n.terminal;
                next += 1;
            }
        }
        // In preorder a subtree ends where the next sibling (or an ancestor's
        // sibling) begins; walk backwards so children are final before parents.
        for i in (0..self.nodes.len()).rev() {
            let n = self.nodes[i];
            let hi = if n.child_len == 0 {
                n.term_lo + u32::from(n.terminal != NONE)
            } else {
                let (_, last) = self.children[(n.child_start + n.child_len - 1) as usize];
                self.nodes[last as usize].term_hi
            };
            self.nodes[i].term_hi = hi;
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn kids(&self, node: u32) -> &[(TokenId, u32)] {
        let n = &self.nodes[node as usize];
        &self.children[n.child_start as usize..(n.child_start + n.child_len) as usize]
    }

    pub fn children(&self, cursor: TrieCursor) -> impl Iterator<Item = TokenId> + '_ {
        self.kids(cursor.node).iter().map(|&(t, _)| t)
    }

    pub fn terminal(&self, cursor: TrieCursor) -> Option<EntityId> {
        if cursor.is_finished() {
            return None;
        }
        let t = self.nodes[cursor.node as usize].terminal;
        (t != NONE).then_some(EntityId(t))
    }

    fn entity_at_ordinal(&self, ord: u32) -> EntityId {
        EntityId(self.by_ordinal[ord as usize])
    }

    pub fn ordinal_of(&self, e: EntityId) -> u32 {
        self.ordinal[e.index()]
    }

    /// Follow a content-token path from the root.
    pub fn lookup(&self, tokens: &[TokenId]) -> Option<EntityId> {
        let mut c = TrieCursor::ROOT;
        for &t in tokens {
            c = self.child(c, t)?;
        }
        self.terminal(c)
    }

    fn child(&self, cursor: TrieCursor, tok: TokenId) -> Option<TrieCursor> {
        if cursor.is_finished() {
            return None;
        }
        let k = self.kids(cursor.node);
        k.binary_search_by_key(&tok, |&(t, _)| t).ok().map(|i| TrieCursor { node: k[i].1 })
    }

    fn subtree_exhausted(&self, node: u32, emitted: &Emitted) -> bool {
        let n = &self.nodes[node as usize];
        emitted.count_in(n.term_lo, n.term_hi) == (n.term_hi - n.term_lo) as usize
    }

    /// Legal next tokens, ascending, written into `out` (cleared first).
    pub fn allowed_tokens_into(&self, cursor: TrieCursor, emitted: &Emitted, cfg: &Constraints, out: &mut Vec<TokenId>) {
        out.clear();
        if cursor.is_finished() {
            return;
        }
        let prune = cfg.no_repeat && emitted.distinct() > 0;
        if cursor.at_boundary() {
            if emitted.count == 0 && cfg.allow_empty {
                out.push(EOS);
            }
            if emitted.count < cfg.max_entities {
                for &(t, c) in self.kids(ROOT) {
                    if !(prune && self.subtree_exhausted(c, emitted)) {
                        out.push(t);
                    }
                }
            }
            return;
        }
        let node = &self.nodes[cursor.node as usize];
        if node.terminal != NONE {
            let ord = self.ordinal[node.terminal as usize];
            if !(cfg.no_repeat && emitted.contains(ord)) {
                out.push(EOS);
                let more_names = emitted.count + 1 < cfg.max_entities;
                let more_entities = !cfg.no_repeat || emitted.distinct() + 1 < self.entity_count;
                if more_names && more_entities {
                    out.push(SEP);
                }
            }
        }
        for &(t, c) in self.kids(cursor.node) {
            if !(prune && self.subtree_exhausted(c, emitted)) {
                out.push(t);
            }
        }
    }

    pub fn allowed_tokens(&self, cursor: TrieCursor, emitted: &Emitted, cfg: &Constraints) -> Vec<TokenId> {
        let mut v = Vec::new();
        self.allowed_tokens_into(cursor, emitted, cfg, &mut v);
        v
    }

    /// Structural transition: content token to child, SEP from a terminal to the
    /// root, EOS from a terminal (or the root) to the finished sentinel.
    pub fn advance(&self, cursor: TrieCursor, token: TokenId) -> Result<TrieCursor> {
        let bad = Err(Error::DisallowedToken { token });
        if cursor.is_finished() {
            return bad;
        }
        match token {
            SEP if self.terminal(cursor).is_some() && !cursor.at_boundary() => Ok(TrieCursor::ROOT),
            EOS if self.terminal(cursor).is_some() || cursor.at_boundary() => Ok(TrieCursor::FINISHED),
            t if is_reserved(t) => bad,
            t => self.child(cursor, t).map_or(bad, Ok),
        }
    }

    pub fn stats(&self) -> TrieStats {
        let mut depth = vec![0u32; self.nodes.len()];
        let mut max_depth = 0;
        for i in 0..self.nodes.len() {
            let d = depth[i];
            max_depth = max_depth.max(d);
            for &(_, c) in self.kids(i as u32) {
                depth[c as usize] = d + 1;
            }
        }
        TrieStats {
            node_count: self.nodes.len(),
            max_depth: max_depth as usize,
            entity_count: self.entity_count,
            heap_bytes: self.nodes.capacity() * std::mem::size_of::<Node>()
                + self.children.capacity() * std::mem::size_of::<(TokenId, u32)>()
                + (self.ordinal.capacity() + self.by_ordinal.capacity()) * 4,
        }
    }

    /// Write the binary cache: `ETRIE1`, 32-byte content hash, node count, then
    /// per node `terminal|-1, child_count, (token, node)*`; little-endian i32.
    pub fn write_cache(&self, path: &Path, content_hash: &[u8; 32]) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let put = |w: &mut BufWriter<File>, v: i32| w.write_all(&v.to_le_bytes());
        let res: std::io::Result<()> = (|| {
            w.write_all(CACHE_MAGIC)?;
            w.write_all(content_hash)?;
            put(&mut w, self.nodes.len() as i32)?;
            for (i, n) in self.nodes.iter().enumerate() {
                put(&mut w, if n.terminal == NONE { -1 } else { n.terminal as i32 })?;
                put(&mut w, n.child_len as i32)?;
                for &(t, c) in self.kids(i as u32) {
                    put(&mut w, t as i32)?;
                    put(&mut w, c as i32)?;
                }
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    /// Load a cache written by [`write_cache`](Self::write_cache). Returns
    /// `Ok(None)` if the stored hash differs from `content_hash`.
    pub fn read_cache(path: &Path, content_hash: &[u8; 32], entity_count: usize) -> Result<Option<Self>> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(f).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::BadFormat { kind: "trie cache", reason: reason.to_owned() };
        if bytes.len() < 42 || &bytes[..6] != CACHE_MAGIC {
            return Err(bad("missing ETRIE1 header"));
        }
        if &bytes[6..38] != content_hash {
            return Ok(None);
        }
        let mut words = bytes[38..].chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        if bytes[38..].len() % 4 != 0 {
            return Err(bad("truncated"));
        }
        let mut next = || words.next().ok_or_else(|| bad("truncated"));
        let n = usize::try_from(next()?).map_err(|_| bad("negative node count"))?;
        let mut terminal = Vec::with_capacity(n);
        let mut kids = Vec::with_capacity(n);
        for _ in 0..n {
            let t = next()?;
            terminal.push(if t < 0 { NONE } else { t as u32 });
            let len = usize::try_from(next()?).map_err(|_| bad("negative child count"))?;
            let mut k = Vec::with_capacity(len);
            for _ in 0..len {
                let tok = next()?;
                let c = next()?;
                if tok < 0 || c <= 0 || c as usize >= n {
                    return Err(bad("child out of range"));
                }
                k.push((tok as TokenId, c as u32));
            }
            if !k.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(bad("children not sorted"));
            }
            kids.push(k);
        }
        if next().is_ok() {
            return Err(bad("trailing data"));
        }
        let pre = flatten_order(&kids);
        if pre.len() != n || pre.iter().enumerate().any(|(i, &p)| i as u32 != p) {
            return Err(bad("nodes are not a preorder tree"));
        }
        let mut seen = vec![false; entity_count];
        for &t in terminal.iter().filter(|&&t| t != NONE) {
            match seen.get_mut(t as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(bad("terminal entity out of range or repeated")),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("entity count mismatch"));
        }
        Ok(Some(Self::assemble(&pre, &terminal, &kids, entity_count)))
    }
}

/// Preorder over a staging tree rooted at 0, visiting children in stored order.
fn flatten_order(kids: &[Vec<(TokenId, u32)>]) -> Vec<u32> {
    let mut out = Vec::with_capacity(kids.len());
    let mut seen = vec![false; kids.len()];
    let mut stack = vec![0u32];
    while let Some(n) = stack.pop() {
        if std::mem::replace(&mut seen[n as usize], true) {
            // revisit means the structure is not a tree; the caller's length check catches it
            continue;
        }
        out.push(n);
        stack.extend(kids[n as usize].iter().rev().map(|&(_, c)| c));
    }
    out
}

/// Hash identifying a (catalog, output vocabulary) pair for cache invalidation.
pub fn content_hash(catalog: &EntityCatalog, vocab: &Vocabulary) -> [u8; 32] {
    let mut h = Sha256::new();
    for n in catalog.names() {
        h.update(n.as_str().as_bytes());
        h.update([0u8]);
    }
    h.update(vocab.content_hash());
    h.finalize().into()
}

/// Decoder-side automaton state: cursor plus emitted entities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ConstraintState {
    pub cursor: TrieCursor,
    pub emitted: Emitted,
}

impl Default for TrieCursor {
    fn default() -> Self {
        TrieCursor::ROOT
    }
}

impl ConstraintState {
    pub fn allowed(&self, trie: &TokenTrie, cfg: &Constraints, out: &mut Vec<TokenId>) {
        trie.allowed_tokens_into(self.cursor, &self.emitted, cfg, out);
    }

    /// Apply a token already known to be allowed.
    pub fn push_unchecked(&mut self, trie: &TokenTrie, token: TokenId) {
        if token == SEP || token == EOS {
            if let Some(e) = trie.terminal(self.cursor) {
                self.emitted.insert(trie.ordinal_of(e));
            }
        }
        self.cursor = trie.advance(self.cursor, token).expect("token was allowed");
    }

    /// Apply a token, rejecting anything outside the allowed set.
    pub fn push(&mut self, trie: &TokenTrie, cfg: &Constraints, token: TokenId) -> Result<()> {
        let mut allowed = Vec::new();
        self.allowed(trie, cfg, &mut allowed);
        if allowed.binary_search(&token).is_err() {
            return Err(Error::DisallowedToken { token });
        }
        self.push_unchecked(trie, token);
        Ok(())
    }
}

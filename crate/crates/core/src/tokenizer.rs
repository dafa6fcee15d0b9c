//! Word/punctuation tokenizer and the input/output vocabularies.
//!
//! Text is split on Unicode whitespace; each word then sheds its leading and
//! trailing punctuation runs as separate pieces. A split-off piece carries a
//! U+2060 marker on the side where it was glued to the word, so detokenizing
//! restores the original spacing exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::catalog::EntityCatalog;
use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const UNK: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<s>", "</s>", "<sep>", "<unk>"];
pub const NUM_RESERVED: usize = RESERVED.len();

/// Marks the side of a piece that was glued to its neighbour.
pub const GLUE: char = '\u{2060}';

#[inline]
pub fn is_reserved(t: TokenId) -> bool {
    (t as usize) < NUM_RESERVED
}

/// Pluggable segmentation contract. Everything downstream sees only token ids.
pub trait Tokenizer: Send + Sync {
    fn pieces(&self, text: &str) -> Vec<String>;
    fn join(&self, pieces: &[&str]) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

fn is_split_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace() && !is_combining_mark(c) && c != GLUE
}

impl Tokenizer for WordPunctTokenizer {
    fn pieces(&self, text: &str) -> Vec<String> {
        let text: String = text.nfc().filter(|&c| c != GLUE).collect();
        let mut out = Vec::new();
        for word in text.split(char::is_whitespace).filter(|w| !w.is_empty()) {
            if word.chars().all(is_split_punct) {
                out.push(word.to_owned());
                continue;
            }
            let lead_end = word.find(|c| !is_split_punct(c)).unwrap_or(0);
            let trail_start = word
                .char_indices()
                .rev()
                .find(|&(_, c)| !is_split_punct(c))
                .map(|(i, c)| i + c.len_utf8())
                .unwrap_or(word.len());
            if lead_end > 0 {
                out.push(format!("{}{GLUE}", &word[..lead_end]));
            }
            out.push(word[lead_end..trail_start].to_owned());
            if trail_start < word.len() {
                out.push(format!("{GLUE}{}", &word[trail_start..]));
            }
        }
        out
    }

    fn join(&self, pieces: &[&str]) -> String {
        let mut s = String::new();
        let mut glue_next = true;
        for p in pieces {
            let left = p.starts_with(GLUE);
            let right = p.ends_with(GLUE);
            if !glue_next && !left {
                s.push(' ');
            }
            s.push_str(p.trim_matches(GLUE));
            glue_next = right;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Unknown pieces map to UNK.
    Input,
    /// Unknown pieces are an error.
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Reserved tokens only.
    pub fn new() -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for r in RESERVED {
            v.insert(r);
        }
        v
    }

    fn insert(&mut self, tok: &str) -> TokenId {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(tok.to_owned());
        self.index.insert(tok.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, tok: &str) -> Option<TokenId> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }

    /// `token_id<TAB>token`, reserved tokens first.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{i}\t{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let bad = |reason: String| Error::MalformedLine { path: path.to_owned(), line: i + 1, reason };
            let (id, tok) = line.split_once('\t').ok_or_else(|| bad("expected id<TAB>token".into()))?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(bad(format!("expected id {i}, found {id:?}")));
            }
            if i < NUM_RESERVED && tok != RESERVED[i] {
                return Err(bad(format!("reserved token {i} must be {:?}", RESERVED[i])));
            }
            if v.index.contains_key(tok) {
                return Err(bad(format!("duplicate token {tok:?}")));
            }
            v.insert(tok);
        }
        if v.len() < NUM_RESERVED {
            return Err(Error::BadFormat { kind: "vocabulary", reason: "missing reserved tokens".into() });
        }
        Ok(v)
    }
}

/// Tokenizer bound to its two vocabularies.
pub struct TextCodec<T: Tokenizer = WordPunctTokenizer> {
    pub tokenizer: T,
    pub input: Vocabulary,
    pub output: Vocabulary,
}

pub fn tokenize<T: Tokenizer + ?Sized>(tokenizer: &T, text: &str, vocab: &Vocabulary, mode: Mode) -> Result<TokenSeq> {
    tokenizer
        .pieces(text)
        .into_iter()
        .map(|p| match (vocab.get(&p), mode) {
            (Some(id), _) => Ok(id),
            (None, Mode::Input) => Ok(UNK),
            (None, Mode::Output) => Err(Error::OutputOov { token: p }),
        })
        .collect()
}

/// Inverse of output-mode [`tokenize`]. Reserved ids are skipped.
pub fn detokenize<T: Tokenizer + ?Sized>(tokenizer: &T, ids: &[TokenId], vocab: &Vocabulary) -> String {
    let pieces: Vec<&str> = ids
        .iter()
        .filter(|&&t| !is_reserved(t))
        .filter_map(|&t| vocab.token(t))
        .collect();
    tokenizer.join(&pieces)
}

/// Output vocabulary = reserved ∪ all catalog-name pieces; input vocabulary =
/// reserved ∪ corpus pieces seen at least `min_count` times. Both in order of
/// first appearance.
pub fn build_vocabularies<'a, T, I>(
    tokenizer: &T,
    catalog: &EntityCatalog,
    corpus: I,
    min_count: usize,
) -> Result<(Vocabulary, Vocabulary)>
where
    T: Tokenizer + ?Sized,
    I: IntoIterator<Item = &'a str>,
{
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let mut output = Vocabulary::new();
    for name in catalog.names() {
        for p in tokenizer.pieces(name.as_str()) {
            output.insert(&p);
        }
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order = Vec::new();
    for text in corpus {
        for p in tokenizer.pieces(text) {
            let c = counts.entry(p).or_insert_with_key(|k| {
                order.push(k.clone());
                0
            });
            *c += 1;
        }
    }
    let mut input = Vocabulary::new();
    for p in order {
        if counts[&p] >= min_count.max(1) {
            input.insert(&p);
        }
    }
    Ok((input, output))
}

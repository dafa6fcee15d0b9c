//! Reader for the AIDA CoNLL-YAGO column format.
//!
//! ```text
//! -DOCSTART- (1163testb SOCCER)
//! SOCCER
//! -
//! JAPAN	B	JAPAN	Japan	http://en.wikipedia.org/wiki/Japan	15573	/m/03_3d
//! GET
//! ...
//! ```
//!
//! One token per line; blank lines end sentences. Tagged tokens carry
//! `B`/`I`, the full mention, and either a YAGO entity (optionally followed by
//! Wikipedia URL and ids) or `--NME--` for NIL.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use percent_encoding::percent_decode_str;

use super::{ElDocument, Mention};
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";
const NIL: &str = "--NME--";
const WIKI_PREFIX: &str = "http://en.wikipedia.org/wiki/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AidaSplit {
    Train,
    TestA,
    TestB,
}

impl AidaSplit {
    /// Split encoded in a document id such as `947testa CRICKET`.
    pub fn of(doc_id: &str) -> Self {
        if doc_id.contains("testb") {
            AidaSplit::TestB
        } else if doc_id.contains("testa") {
            AidaSplit::TestA
        } else {
            AidaSplit::Train
        }
    }
}

impl std::str::FromStr for AidaSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(AidaSplit::Train),
            "testa" | "dev" | "validation" => Ok(AidaSplit::TestA),
            "testb" | "test" => Ok(AidaSplit::TestB),
            other => Err(Error::Config(format!("unknown AIDA split {other:?}"))),
        }
    }
}

/// Entity name from a Wikipedia URL, else from the YAGO identifier.
fn entity_name(yago: &str, url: Option<&str>) -> String {
    if let Some(title) = url.and_then(|u| u.strip_prefix(WIKI_PREFIX)) {
        return percent_decode_str(title).decode_utf8_lossy().replace('_', " ");
    }
    unescape_yago(yago).replace('_', " ")
}

/// YAGO2 identifiers escape non-ASCII as `\uXXXX`.
fn unescape_yago(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find("\\u") {
        out.push_str(&rest[..i]);
        let hex = rest.get(i + 2..i + 6);
        match hex.and_then(|h| u32::from_str_radix(h, 16).ok()).and_then(char::from_u32) {
            Some(c) => {
                out.push(c);
                rest = &rest[i + 6..];
            }
            None => {
                out.push_str("\\u");
                rest = &rest[i + 2..];
            }
        }
    }
    out.push_str(rest);
    out
}

struct DocBuilder {
    doc_id: String,
    text: String,
    chars: usize,
    sentence_open: bool,
    mentions: Vec<Mention>,
    open: Option<(String, Mention)>,
}

impl DocBuilder {
    fn new(doc_id: String) -> Self {
        DocBuilder { doc_id, text: String::new(), chars: 0, sentence_open: false, mentions: Vec::new(), open: None }
    }

    fn push_token(&mut self, tok: &str) -> (usize, usize) {
        if self.sentence_open {
            self.text.push(' ');
            self.chars += 1;
        } else if !self.text.is_empty() {
            self.text.push('\n');
            self.chars += 1;
        }
        self.sentence_open = true;
        let start = self.chars;
        self.text.push_str(tok);
        self.chars += tok.chars().count();
        (start, self.chars)
    }

    fn close_mention(&mut self) {
        if let Some((_, m)) = self.open.take() {
            self.mentions.push(m);
        }
    }

    fn end_sentence(&mut self) {
        self.close_mention();
        self.sentence_open = false;
    }

    fn finish(mut self) -> ElDocument {
        self.close_mention();
        ElDocument { doc_id: self.doc_id, text: self.text, mentions: self.mentions }
    }
}

pub fn parse_aida_conll(path: &Path) -> Result<Vec<ElDocument>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_aida_reader(BufReader::new(f), path)
}

pub fn parse_aida_reader<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ElDocument>> {
    let mut docs = Vec::new();
    let mut cur: Option<DocBuilder> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        let malformed = |reason: &str| Error::MalformedLine { path: path.to_owned(), line: line_no, reason: reason.to_owned() };

        if let Some(rest) = line.strip_prefix(DOCSTART) {
            if let Some(d) = cur.take() {
                docs.push(d.finish());
            }
            let id = rest.trim().trim_start_matches('(').trim_end_matches(')').trim();
            let id = if id.is_empty() { format!("doc{}", docs.len()) } else { id.to_owned() };
            cur = Some(DocBuilder::new(id));
            continue;
        }
        if line.trim().is_empty() {
            if let Some(d) = cur.as_mut() {
                d.end_sentence();
            }
            continue;
        }
        let doc = cur.as_mut().ok_or_else(|| malformed("token before the first -DOCSTART-"))?;
        let cols: Vec<&str> = line.split('\t').collect();
        match cols.len() {
            1 => {
                doc.close_mention();
                doc.push_token(cols[0]);
            }
            2 | 3 => return Err(malformed("tagged token needs at least 4 columns")),
            _ => {
                let (tok, tag, full, yago) = (cols[0], cols[1], cols[2], cols[3]);
                let entity = (yago != NIL).then(|| entity_name(yago, cols.get(4).copied()));
                match tag {
                    "B" => {
                        doc.close_mention();
                        let (start, end) = doc.push_token(tok);
                        doc.open = Some((full.to_owned(), Mention { start, end, entity }));
                    }
                    "I" => {
                        let continues = matches!(&doc.open, Some((f, m)) if f == full && m.entity == entity);
                        if !continues {
                            return Err(Error::DanglingIMention { path: path.to_owned(), line: line_no });
                        }
                        let (_, end) = doc.push_token(tok);
                        if let Some((_, m)) = doc.open.as_mut() {
                            m.end = end;
                        }
                    }
                    _ => return Err(malformed("tag must be B or I")),
                }
            }
        }
    }
    if let Some(d) = cur.take() {
        docs.push(d.finish());
    }
    Ok(docs)
}

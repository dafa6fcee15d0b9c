//! Entity-linking corpora and their conversion to entity-tagging examples.
//!
//! Conversion drops mention boundaries, collapses repeated entities, discards
//! NIL mentions and drops entities outside the catalog. Every lossy step is
//! counted in [`ConversionStats`].

mod aida;
mod convert;

pub use aida::{parse_aida_conll, parse_aida_reader, AidaSplit};
pub use convert::{convert, ConvertOptions, DatasetStats, InputFormat};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::catalog::{canonicalize, EntityCatalog, EntityId};
use crate::error::{Error, Result};

/// A mention span in Unicode scalar offsets; `entity: None` is NIL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub entity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElDocument {
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<Mention>,
}

impl ElDocument {
    /// Check offsets are in range and mentions do not overlap.
    pub fn validate(&self) -> Result<()> {
        let len = self.text.chars().count();
        let err = |reason: String| Error::SchemaError { doc_id: self.doc_id.clone(), field: "mentions".into(), reason };
        let mut spans: Vec<(usize, usize)> = Vec::with_capacity(self.mentions.len());
        for m in &self.mentions {
            if m.start >= m.end || m.end > len {
                return Err(err(format!("span [{}:{}] outside text of length {len}", m.start, m.end)));
            }
            spans.push((m.start, m.end));
        }
        spans.sort_unstable();
        if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
            return Err(err(format!("overlapping spans [{}:{}] and [{}:{}]", w[0].0, w[0].1, w[1].0, w[1].1)));
        }
        Ok(())
    }

    /// Surface text of a mention.
    pub fn surface(&self, m: &Mention) -> String {
        self.text.chars().skip(m.start).take(m.end - m.start).collect()
    }

    /// Same document keeping only mentions that resolve into `catalog`.
    pub fn retain_resolved(&self, catalog: &EntityCatalog) -> ElDocument {
        let mentions = self
            .mentions
            .iter()
            .filter(|m| m.entity.as_deref().and_then(|e| catalog.id(e)).is_some())
            .cloned()
            .collect();
        ElDocument { doc_id: self.doc_id.clone(), text: self.text.clone(), mentions }
    }
}

/// Entity-tagging example: text plus the set of gold entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtExample {
    pub doc_id: String,
    pub text: String,
    pub gold: BTreeSet<EntityId>,
    /// Gold entities by first mention, when spans were available.
    pub gold_order: Option<Vec<EntityId>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionStats {
    pub mentions: usize,
    pub nil_mentions: usize,
    /// Distinct mention keys: entity names, with each distinct NIL surface counted once.
    pub distinct_keys: usize,
    /// Distinct NIL surfaces.
    pub dropped_nil: usize,
    /// Distinct non-NIL entities missing from the catalog.
    pub dropped_oov: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub example: EtExample,
    pub stats: ConversionStats,
}

#[derive(PartialEq, Eq, Hash)]
enum Key {
    Entity(String),
    Nil(String),
}

pub fn el_to_et(doc: &ElDocument, catalog: &EntityCatalog) -> Conversion {
    let mut stats = ConversionStats { mentions: doc.mentions.len(), ..Default::default() };
    let mut keys = HashSet::new();
    let mut first_seen: BTreeMap<EntityId, (usize, usize)> = BTreeMap::new();
    let mut oov = HashSet::new();
    for m in &doc.mentions {
        match &m.entity {
            None => {
                stats.nil_mentions += 1;
                if keys.insert(Key::Nil(doc.surface(m))) {
                    stats.dropped_nil += 1;
                }
            }
            Some(raw) => {
                let canon = canonicalize(raw).map(|c| c.into_string()).unwrap_or_else(|_| raw.clone());
                keys.insert(Key::Entity(canon.clone()));
                match catalog.id(&canon) {
                    Some(id) => {
                        let pos = (m.start, m.end);
                        first_seen.entry(id).and_modify(|p| *p = (*p).min(pos)).or_insert(pos);
                    }
                    None => {
                        oov.insert(canon);
                    }
                }
            }
        }
    }
    stats.distinct_keys = keys.len();
    stats.dropped_oov = oov.len();
    stats.gold = first_seen.len();
    let mut order: Vec<(EntityId, (usize, usize))> = first_seen.into_iter().collect();
    order.sort_by_key(|&(id, pos)| (pos, id));
    Conversion {
        example: EtExample {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            gold: order.iter().map(|&(id, _)| id).collect(),
            gold_order: Some(order.into_iter().map(|(id, _)| id).collect()),
        },
        stats,
    }
}

/// A Wikipedia abstract with hyperlink anchors; the page title is a gold
/// entity with no span of its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WikiAbstract {
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub anchors: Vec<Mention>,
}

/// Gold = anchors ∪ {title}, filtered to the catalog; order is anchors by first
/// occurrence, then the title.
pub fn wiki_abstract_to_et(page: &WikiAbstract, catalog: &EntityCatalog) -> Result<Conversion> {
    let title = catalog.id(&page.title).ok_or_else(|| Error::TitleNotInCatalog(page.title.clone()))?;
    let doc = ElDocument { doc_id: page.title.clone(), text: page.text.clone(), mentions: page.anchors.clone() };
    let mut conv = el_to_et(&doc, catalog);
    let ex = &mut conv.example;
    if ex.gold.insert(title) {
        ex.gold_order.get_or_insert_with(Vec::new).push(title);
        conv.stats.gold += 1;
    }
    Ok(conv)
}

/// Serialized entity-tagging record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtRecord {
    pub doc_id: String,
    pub text: String,
    pub gold: Vec<String>,
    pub gold_order: Option<Vec<String>>,
}

impl EtRecord {
    /// Gold names are written sorted.
    pub fn from_example(ex: &EtExample, catalog: &EntityCatalog) -> Self {
        let name = |id: &EntityId| catalog.name(*id).expect("catalog id").as_str().to_owned();
        let mut gold: Vec<String> = ex.gold.iter().map(name).collect();
        gold.sort();
        EtRecord {
            doc_id: ex.doc_id.clone(),
            text: ex.text.clone(),
            gold,
            gold_order: ex.gold_order.as_ref().map(|o| o.iter().map(name).collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: &str| Error::SchemaError {
            doc_id: self.doc_id.clone(),
            field: field.into(),
            reason: reason.into(),
        };
        let gold: BTreeSet<&str> = self.gold.iter().map(String::as_str).collect();
        if gold.len() != self.gold.len() {
            return Err(err("gold", "duplicate entity"));
        }
        if let Some(order) = &self.gold_order {
            let o: BTreeSet<&str> = order.iter().map(String::as_str).collect();
            if o.len() != order.len() || o != gold {
                return Err(err("gold_order", "not a permutation of gold"));
            }
        }
        Ok(())
    }

    /// Resolve names against the catalog.
    pub fn to_example(&self, catalog: &EntityCatalog) -> Result<EtExample> {
        let resolve = |n: &String| catalog.id(n).ok_or_else(|| Error::UnknownEntity(n.clone()));
        Ok(EtExample {
            doc_id: self.doc_id.clone(),
            text: self.text.clone(),
            gold: self.gold.iter().map(resolve).collect::<Result<_>>()?,
            gold_order: self.gold_order.as_ref().map(|o| o.iter().map(resolve).collect()).transpose()?,
        })
    }
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::SchemaError {
            doc_id: format!("{}:{}", path.display(), i + 1),
            field: "record".into(),
            reason: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_et_jsonl(records: &[EtRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

pub fn read_et_jsonl(path: &Path) -> Result<Vec<EtRecord>> {
    let recs: Vec<EtRecord> = read_jsonl(path)?;
    recs.iter().try_for_each(EtRecord::validate)?;
    Ok(recs)
}

pub fn parse_normalized_jsonl(path: &Path) -> Result<Vec<ElDocument>> {
    let docs: Vec<ElDocument> = read_jsonl(path)?;
    docs.iter().try_for_each(ElDocument::validate)?;
    Ok(docs)
}

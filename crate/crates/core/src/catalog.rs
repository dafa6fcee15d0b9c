//! Entity catalog: the closed set of knowledge-base entities, each identified by
//! a dense id and a unique canonical name.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::tokenizer::GLUE;

/// Literal that renders the separator token; forbidden inside entity names.
pub const SEP_GLYPH: &str = "<sep>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A canonical entity name. Constructed only through [`canonicalize`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct EntityName(String);

impl EntityName {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for EntityName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for EntityName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// NFC-normalize, trim, and collapse every run of Unicode whitespace into one
/// ASCII space.
pub fn canonicalize(raw: &str) -> Result<EntityName> {
    let nfc: String = raw.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    for word in nfc.split(char::is_whitespace).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    if out.is_empty() {
        return Err(Error::InvalidName { raw: raw.to_owned(), reason: "empty after normalization" });
    }
    if out.contains(SEP_GLYPH) {
        return Err(Error::InvalidName { raw: raw.to_owned(), reason: "contains the separator glyph" });
    }
    if out.contains(GLUE) {
        return Err(Error::InvalidName { raw: raw.to_owned(), reason: "contains U+2060 WORD JOINER" });
    }
    Ok(EntityName(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogFormat {
    /// One name per line.
    PlainLines,
    /// `id<TAB>name`; ids are still assigned in file order.
    Tsv,
}

impl CatalogFormat {
    /// Guess from the file extension: `.tsv` is TSV, anything else plain lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => CatalogFormat::Tsv,
            _ => CatalogFormat::PlainLines,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EntityCatalog {
    names: Vec<EntityName>,
    index: HashMap<EntityName, EntityId>,
}

impl EntityCatalog {
    /// Build from raw names; ids follow iteration order.
    pub fn from_names<I, S>(raw: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        let mut dups = Vec::new();
        for r in raw {
            let name = canonicalize(r.as_ref())?;
            let id = EntityId(names.len() as u32);
            if index.contains_key(&name) {
                dups.push(name.0);
                continue;
            }
            index.insert(name.clone(), id);
            names.push(name);
        }
        if !dups.is_empty() {
            dups.sort();
            dups.dedup();
            return Err(Error::DuplicateName(dups));
        }
        Ok(EntityCatalog { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: EntityId) -> Option<&EntityName> {
        self.names.get(id.index())
    }

    /// Look up a name after canonicalizing it.
    pub fn id(&self, name: &str) -> Option<EntityId> {
        let canon = canonicalize(name).ok()?;
        self.index.get(&canon).copied()
    }

    pub fn id_of(&self, name: &EntityName) -> Option<EntityId> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[EntityName] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &EntityName)> {
        self.names.iter().enumerate().map(|(i, n)| (EntityId(i as u32), n))
    }

    /// Write as `id<TAB>name`, loadable with [`CatalogFormat::Tsv`].
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (id, name) in self.iter() {
            writeln!(w, "{id}\t{name}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_catalog(path: &Path, format: CatalogFormat) -> Result<EntityCatalog> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let name = match format {
            CatalogFormat::PlainLines => line.to_owned(),
            CatalogFormat::Tsv => {
                let (id, name) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
                    path: path.to_owned(),
                    line: i + 1,
                    reason: "expected id<TAB>name".into(),
                })?;
                id.trim().parse::<u64>().map_err(|_| Error::MalformedLine {
                    path: path.to_owned(),
                    line: i + 1,
                    reason: format!("bad id {id:?}"),
                })?;
                name.to_owned()
            }
        };
        raw.push(name);
    }
    EntityCatalog::from_names(raw)
}

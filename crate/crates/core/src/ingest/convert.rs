use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    el_to_et, parse_aida_conll, read_jsonl, wiki_abstract_to_et, AidaSplit, Conversion, ElDocument, EtRecord,
    WikiAbstract,
};
use crate::catalog::EntityCatalog;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    AidaConll,
    ElJsonl,
    WikiAbstracts,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aida-conll" => Ok(InputFormat::AidaConll),
            "el-jsonl" => Ok(InputFormat::ElJsonl),
            "wiki-abstracts" => Ok(InputFormat::WikiAbstracts),
            other => Err(Error::Config(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConvertOptions {
    pub keep_empty: bool,
    /// Skip documents with invalid mention annotations instead of failing.
    pub drop_invalid: bool,
    /// AIDA only: keep documents of this split.
    pub split: Option<AidaSplit>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub documents_read: usize,
    pub documents_written: usize,
    pub skipped_split: usize,
    pub skipped_empty: usize,
    pub skipped_invalid: usize,
    pub skipped_title_not_in_catalog: usize,
    pub mentions: usize,
    pub nil_mentions: usize,
    pub dropped_nil: usize,
    pub dropped_oov: usize,
    pub gold_entities: usize,
}

enum Source {
    El(ElDocument),
    Wiki(WikiAbstract),
}

fn read_file(format: InputFormat, path: &Path) -> Result<Vec<Source>> {
    Ok(match format {
        InputFormat::AidaConll => parse_aida_conll(path)?.into_iter().map(Source::El).collect(),
        InputFormat::ElJsonl => read_jsonl::<ElDocument>(path)?.into_iter().map(Source::El).collect(),
        InputFormat::WikiAbstracts => read_jsonl::<WikiAbstract>(path)?.into_iter().map(Source::Wiki).collect(),
    })
}

/// Convert one or more input files; files are parsed in parallel and records
/// keep file order.
pub fn convert(
    format: InputFormat,
    inputs: &[PathBuf],
    catalog: &EntityCatalog,
    opts: &ConvertOptions,
) -> Result<(Vec<EtRecord>, DatasetStats)> {
    let parsed = par::map(Execution::Parallel, inputs, |p| read_file(format, p));
    let mut stats = DatasetStats::default();
    let mut out = Vec::new();
    for src in parsed.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten() {
        stats.documents_read += 1;
        let conv: Conversion = match src {
            Source::El(doc) => {
                if let Some(split) = opts.split {
                    if AidaSplit::of(&doc.doc_id) != split {
                        stats.skipped_split += 1;
                        continue;
                    }
                }
                match doc.validate() {
                    Err(_) if opts.drop_invalid => {
                        stats.skipped_invalid += 1;
                        continue;
                    }
                    r => r?,
                }
                el_to_et(&doc, catalog)
            }
            Source::Wiki(page) => {
                let probe = ElDocument { doc_id: page.title.clone(), text: page.text.clone(), mentions: page.anchors.clone() };
                match probe.validate() {
                    Err(_) if opts.drop_invalid => {
                        stats.skipped_invalid += 1;
                        continue;
                    }
                    r => r?,
                }
                match wiki_abstract_to_et(&page, catalog) {
                    Err(Error::TitleNotInCatalog(_)) => {
                        stats.skipped_title_not_in_catalog += 1;
                        continue;
                    }
                    r => r?,
                }
            }
        };
        let s = conv.stats;
        stats.mentions += s.mentions;
        stats.nil_mentions += s.nil_mentions;
        stats.dropped_nil += s.dropped_nil;
        stats.dropped_oov += s.dropped_oov;
        if conv.example.gold.is_empty() && !opts.keep_empty {
            stats.skipped_empty += 1;
            continue;
        }
        stats.gold_entities += s.gold;
        stats.documents_written += 1;
        out.push(EtRecord::from_example(&conv.example, catalog));
    }
    Ok((out, stats))
}

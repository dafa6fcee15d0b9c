//! End-to-end glue: knowledge-base caches, model directories, tagging,
//! evaluation and the beam and ordering ablations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{canonicalize, load_catalog, CatalogFormat, EntityCatalog};
use crate::decoding::{predict, DecodeConfig};
use crate::error::{Error, Result};
use crate::ingest::EtRecord;
use crate::metrics::{aggregate, prf1, DatasetReport};
use crate::model::{self, read_checkpoint, write_checkpoint, Example, NameTable, OrderStrategy, ToyModelParams, TrainConfig};
use crate::par::{self, Execution};
use crate::tokenizer::{build_vocabularies, tokenize, Mode, Vocabulary, WordPunctTokenizer};
use crate::trie::{content_hash, TokenTrie};

pub const CATALOG_FILE: &str = "catalog.tsv";
pub const OUTPUT_VOCAB_FILE: &str = "output_vocab.tsv";
pub const INPUT_VOCAB_FILE: &str = "input_vocab.tsv";
pub const TRIE_FILE: &str = "trie.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";

/// Catalog, output vocabulary and the trie over it.
#[derive(Debug, Clone)]
pub struct Kb {
    pub catalog: EntityCatalog,
    pub vocab: Vocabulary,
    pub trie: TokenTrie,
}

impl Kb {
    pub fn build(catalog: EntityCatalog) -> Result<Self> {
        let (_, vocab) = build_vocabularies(&WordPunctTokenizer, &catalog, [], 1)?;
        let trie = TokenTrie::build(&catalog, &vocab, &WordPunctTokenizer)?;
        Ok(Kb { catalog, vocab, trie })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::build(load_catalog(path, CatalogFormat::from_path(path))?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.catalog.write_tsv(&dir.join(CATALOG_FILE))?;
        self.vocab.write_tsv(&dir.join(OUTPUT_VOCAB_FILE))?;
        self.trie.write_cache(&dir.join(TRIE_FILE), &content_hash(&self.catalog, &self.vocab))
    }

    /// Load a cache directory, rebuilding the trie if its hash is stale.
    pub fn load(dir: &Path) -> Result<Self> {
        let catalog = load_catalog(&dir.join(CATALOG_FILE), CatalogFormat::Tsv)?;
        let vocab = Vocabulary::read_tsv(&dir.join(OUTPUT_VOCAB_FILE))?;
        let hash = content_hash(&catalog, &vocab);
        let trie = match TokenTrie::read_cache(&dir.join(TRIE_FILE), &hash, catalog.len())? {
            Some(t) => t,
            None => TokenTrie::build(&catalog, &vocab, &WordPunctTokenizer)?,
        };
        Ok(Kb { catalog, vocab, trie })
    }
}

/// Trained parameters with both vocabularies.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ToyModelParams,
    pub input_vocab: Vocabulary,
    pub output_vocab: Vocabulary,
}

fn vocab_pair_hash(input: &Vocabulary, output: &Vocabulary) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(input.content_hash());
    h.update(output.content_hash());
    h.finalize().into()
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.input_vocab.write_tsv(&dir.join(INPUT_VOCAB_FILE))?;
        self.output_vocab.write_tsv(&dir.join(OUTPUT_VOCAB_FILE))?;
        write_checkpoint(&self.params, &vocab_pair_hash(&self.input_vocab, &self.output_vocab), &dir.join(MODEL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let input_vocab = Vocabulary::read_tsv(&dir.join(INPUT_VOCAB_FILE))?;
        let output_vocab = Vocabulary::read_tsv(&dir.join(OUTPUT_VOCAB_FILE))?;
        let (params, hash) = read_checkpoint(&dir.join(MODEL_FILE))?;
        if hash != vocab_pair_hash(&input_vocab, &output_vocab) {
            return Err(Error::BadFormat { kind: "checkpoint", reason: "vocabulary hash mismatch".into() });
        }
        if params.v_in != input_vocab.len() || params.v_out != output_vocab.len() {
            return Err(Error::BadFormat { kind: "checkpoint", reason: "vocabulary size mismatch".into() });
        }
        Ok(TrainedModel { params, input_vocab, output_vocab })
    }

    /// The model must share the KB's output vocabulary.
    pub fn check_kb(&self, kb: &Kb) -> Result<()> {
        if self.output_vocab.content_hash() != kb.vocab.content_hash() {
            return Err(Error::Config("model and knowledge base use different output vocabularies".into()));
        }
        Ok(())
    }
}

pub fn examples(records: &[EtRecord], catalog: &EntityCatalog, input_vocab: &Vocabulary) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let ex = r.to_example(catalog)?;
            Ok(Example {
                doc_id: ex.doc_id,
                input: tokenize(&WordPunctTokenizer, &ex.text, input_vocab, Mode::Input)?,
                gold: ex.gold.into_iter().collect(),
                gold_order: ex.gold_order,
            })
        })
        .collect()
}

/// Build vocabularies from the training texts and fit the toy model.
pub fn fit(records: &[EtRecord], kb: &Kb, cfg: &TrainConfig) -> Result<(TrainedModel, Vec<f64>)> {
    let (input_vocab, _) = build_vocabularies(&WordPunctTokenizer, &kb.catalog, records.iter().map(|r| r.text.as_str()), 1)?;
    let train_ex = examples(records, &kb.catalog, &input_vocab)?;
    let names = NameTable::new(&kb.catalog, &kb.vocab, &WordPunctTokenizer)?;
    let out = model::train(&train_ex, cfg, &names, input_vocab.len(), kb.vocab.len())?;
    Ok((TrainedModel { params: out.params, input_vocab, output_vocab: kb.vocab.clone() }, out.loss_curve))
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

/// Input to `tag`: any JSONL with `doc_id` and `text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub doc_id: String,
    pub text: String,
}

impl From<&EtRecord> for TextRecord {
    fn from(r: &EtRecord) -> Self {
        TextRecord { doc_id: r.doc_id.clone(), text: r.text.clone() }
    }
}

/// One line of `tag` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggedDoc {
    pub doc_id: String,
    /// Sorted entity names.
    pub entities: Vec<String>,
    pub score: f64,
    pub dropped: usize,
}

/// Decode every document; output is sorted by `doc_id`.
pub fn tag_documents(
    exec: Execution,
    model: &TrainedModel,
    kb: &Kb,
    docs: &[TextRecord],
    cfg: &DecodeConfig,
) -> Result<Vec<TaggedDoc>> {
    cfg.validate()?;
    model.check_kb(kb)?;
    let mut out = par::map(exec, docs, |d| {
        let input = tokenize(&WordPunctTokenizer, &d.text, &model.input_vocab, Mode::Input)?;
        let p = predict(&model.params, &kb.trie, &input, cfg)?;
        let mut entities: Vec<String> =
            p.entities.iter().map(|&e| kb.catalog.name(e).expect("trie ids are catalog ids").as_str().to_owned()).collect();
        entities.sort();
        Ok(TaggedDoc { doc_id: d.doc_id.clone(), entities, score: p.score, dropped: p.dropped })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(out)
}

fn name_set<'a>(doc_id: &str, names: impl IntoIterator<Item = &'a String>) -> Result<BTreeSet<String>> {
    names
        .into_iter()
        .map(|n| {
            canonicalize(n).map(|c| c.into_string()).map_err(|e| Error::SchemaError {
                doc_id: doc_id.to_owned(),
                field: "entities".into(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Score predictions against gold records, matched by `doc_id`. Every gold
/// document needs exactly one prediction.
pub fn evaluate(preds: &[TaggedDoc], gold: &[EtRecord]) -> Result<DatasetReport> {
    let mut by_id: BTreeMap<&str, &TaggedDoc> = BTreeMap::new();
    for p in preds {
        if by_id.insert(&p.doc_id, p).is_some() {
            return Err(Error::SchemaError { doc_id: p.doc_id.clone(), field: "doc_id".into(), reason: "duplicate prediction".into() });
        }
    }
    let mut scores = Vec::with_capacity(gold.len());
    for g in gold {
        let p = by_id.remove(g.doc_id.as_str()).ok_or_else(|| Error::SchemaError {
            doc_id: g.doc_id.clone(),
            field: "doc_id".into(),
            reason: "no prediction for gold document".into(),
        })?;
        scores.push(prf1(&name_set(&p.doc_id, &p.entities)?, &name_set(&g.doc_id, &g.gold)?));
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::SchemaError { doc_id: (*extra).to_owned(), field: "doc_id".into(), reason: "prediction without gold document".into() });
    }
    aggregate(&scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamRow {
    pub beam_size: usize,
    pub report: DatasetReport,
}

pub fn beam_sweep(
    exec: Execution,
    model: &TrainedModel,
    kb: &Kb,
    eval: &[EtRecord],
    base: &DecodeConfig,
    beams: &[usize],
) -> Result<Vec<BeamRow>> {
    let docs: Vec<TextRecord> = eval.iter().map(TextRecord::from).collect();
    beams
        .iter()
        .map(|&beam_size| {
            let cfg = DecodeConfig { beam_size, ..*base };
            let preds = tag_documents(exec, model, kb, &docs, &cfg)?;
            Ok(BeamRow { beam_size, report: evaluate(&preds, eval)? })
        })
        .collect()
}

pub fn beam_csv(rows: &[BeamRow]) -> String {
    let mut s = String::from("beam_size,micro_precision,micro_recall,micro_f1,macro_f1\n");
    for r in rows {
        let m = &r.report.micro;
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{:.6}", r.beam_size, m.precision, m.recall, m.f1, r.report.macro_.f1);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub strategy: OrderStrategy,
    pub seed: u64,
    pub report: DatasetReport,
}

/// Train one model per (strategy, seed) and score each on `eval`. Runs are
/// independent and execute in parallel.
pub fn order_ablation(
    exec: Execution,
    kb: &Kb,
    train: &[EtRecord],
    eval: &[EtRecord],
    strategies: &[OrderStrategy],
    seeds: &[u64],
    train_cfg: &TrainConfig,
    decode_cfg: &DecodeConfig,
) -> Result<Vec<OrderRow>> {
    let runs: Vec<(OrderStrategy, u64)> = strategies.iter().flat_map(|&s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let docs: Vec<TextRecord> = eval.iter().map(TextRecord::from).collect();
    par::map(exec, &runs, |&(strategy, seed)| {
        let cfg = TrainConfig { order_strategy: strategy, seed, ..train_cfg.clone() };
        let (model, _) = fit(train, kb, &cfg)?;
        let preds = tag_documents(Execution::Sequential, &model, kb, &docs, decode_cfg)?;
        Ok(OrderRow { strategy, seed, report: evaluate(&preds, eval)? })
    })
    .into_iter()
    .collect()
}

/// Mean micro F1 per strategy, in first-appearance order.
pub fn mean_f1_by_strategy(rows: &[OrderRow]) -> Vec<(OrderStrategy, f64)> {
    let mut out: Vec<(OrderStrategy, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(s, _, _)| *s == r.strategy) {
            Some(e) => {
                e.1 += r.report.micro.f1;
                e.2 += 1;
            }
            None => out.push((r.strategy, r.report.micro.f1, 1)),
        }
    }
    out.into_iter().map(|(s, sum, n)| (s, sum / n as f64)).collect()
}

pub fn order_csv(rows: &[OrderRow]) -> String {
    let mut s = String::from("strategy,seed,micro_precision,micro_recall,micro_f1,macro_f1\n");
    for r in rows {
        let m = &r.report.micro;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.strategy.as_str(),
            r.seed,
            m.precision,
            m.recall,
            m.f1,
            r.report.macro_.f1
        );
    }
    for (strategy, f1) in mean_f1_by_strategy(rows) {
        let _ = writeln!(s, "{},mean,,,{f1:.6},", strategy.as_str());
    }
    s
}

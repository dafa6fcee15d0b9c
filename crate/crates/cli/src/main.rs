//! `ettag`: build entity tries, convert corpora, train the toy tagger, decode,
//! evaluate and run the ablations.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use ettag_core::catalog::EntityCatalog;
use ettag_core::ingest::{self, AidaSplit, ConvertOptions, EtRecord, InputFormat};
use ettag_core::metrics::{format_report, json_report, ReportStyle};
use ettag_core::model::OrderStrategy;
use ettag_core::par::{self, Execution};
use ettag_core::pipeline::{self, Kb, TaggedDoc, TextRecord, TrainedModel};
use ettag_core::{bench, synthetic};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ettag", version, about = "Generative entity tagging with trie-constrained decoding")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, env = "ETTAG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the entity trie and vocabulary cache for a catalog.
    BuildKb(BuildKbArgs),
    /// Convert an entity-linking corpus into entity-tagging JSONL.
    Convert(ConvertArgs),
    /// Train the toy tagger.
    Train(TrainArgs),
    /// Decode entity sets for documents.
    Tag(TagArgs),
    /// Score predictions against gold sets.
    Eval(EvalArgs),
    /// F1 as a function of beam size.
    AblateBeam(AblateBeamArgs),
    /// Compare target-ordering strategies for training.
    AblateOrder(AblateOrderArgs),
    /// Trie build time, allowed-token latency and memory.
    Bench(BenchArgs),
    /// Write a seeded synthetic catalog and train/eval corpora.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BuildKbArgs {
    /// Catalog: one name per line, or `id<TAB>name` for `.tsv`.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    cache_out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_parser = parse_core::<InputFormat>)]
    format: InputFormat,
    /// Input files; repeat for several.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Catalog file or KB cache directory.
    #[arg(long)]
    kb: PathBuf,
    /// Keep documents whose gold set is empty.
    #[arg(long)]
    keep_empty: bool,
    /// Skip documents with invalid mention spans instead of failing.
    #[arg(long)]
    drop_invalid: bool,
    /// AIDA split to keep: train, testa or testb.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// ET JSONL training data.
    #[arg(long)]
    train: PathBuf,
    /// Catalog file or KB cache directory.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_core::<OrderStrategy>)]
    order_strategy: Option<OrderStrategy>,
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, action = ArgAction::Set)]
    no_repeat: Option<bool>,
    #[arg(long)]
    max_entities: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kb_cache: PathBuf,
    /// JSONL with `doc_id` and `text` per line.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSONL; repeat once per dataset.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Gold ET JSONL, paired with `--pred` by position.
    #[arg(long, required = true)]
    gold: Vec<PathBuf>,
    /// Dataset names; default to the gold file stems.
    #[arg(long)]
    name: Vec<String>,
    #[arg(long, default_value = "f1", value_parser = parse_core::<ReportStyle>)]
    style: ReportStyle,
    #[arg(long, default_value = "ettag")]
    system: String,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateBeamArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kb_cache: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    /// Comma-separated beam sizes.
    #[arg(long, value_delimiter = ',')]
    beams: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateOrderArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    /// Catalog file or KB cache directory.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_core::<OrderStrategy>)]
    strategies: Option<Vec<OrderStrategy>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Catalog file; omit to use `--synthetic`.
    #[arg(long, required_unless_present = "synthetic")]
    kb: Option<PathBuf>,
    /// Generate this many synthetic names instead of reading a catalog.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Number of `allowed_tokens` calls to time.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Documents assigned to the training file.
    #[arg(long, default_value_t = 160)]
    train_docs: usize,
}

fn parse_core<T: std::str::FromStr<Err = ettag_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: ettag_core::Error| e.to_string())
}

fn load_kb(path: &Path) -> Result<Kb> {
    let kb = if path.is_dir() { Kb::load(path)? } else { Kb::from_file(path)? };
    Ok(kb)
}

fn write_lines<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    ingest::write_jsonl(items, path)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn build_kb(args: BuildKbArgs, cfg: &RunConfig) -> Result<()> {
    let kb = Kb::from_file(&args.kb)?;
    kb.save(&args.cache_out)?;
    cfg.write_into(&args.cache_out)?;
    print_json(&kb.trie.stats())
}

fn convert(args: ConvertArgs, cfg: &mut RunConfig) -> Result<()> {
    cfg.convert.keep_empty |= args.keep_empty;
    cfg.convert.drop_invalid |= args.drop_invalid;
    if args.split.is_some() {
        cfg.convert.split = args.split;
    }
    let split = cfg.convert.split.as_deref().map(str::parse::<AidaSplit>).transpose()?;
    let kb = load_kb(&args.kb)?;
    let opts = ConvertOptions { keep_empty: cfg.convert.keep_empty, drop_invalid: cfg.convert.drop_invalid, split };
    let (records, stats) = ingest::convert(args.format, &args.inputs, &kb.catalog, &opts)?;
    ingest::write_et_jsonl(&records, &args.out)?;
    cfg.write_beside(&args.out)?;
    if let Some(p) = &args.stats_out {
        write_text(p, &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    }
    print_json(&stats)
}

fn train(args: TrainArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.order_strategy {
        cfg.train.order_strategy = v;
    }
    cfg.train.seed = cfg.seed;
    let kb = load_kb(&args.kb)?;
    let records = ingest::read_et_jsonl(&args.train)?;
    let t0 = Instant::now();
    let (model, curve) = pipeline::fit(&records, &kb, &cfg.train)?;
    model.save(&args.model_out)?;
    write_text(&args.model_out.join(pipeline::LOSS_CURVE_FILE), &pipeline::loss_curve_csv(&curve))?;
    cfg.write_into(&args.model_out)?;
    #[derive(Serialize)]
    struct Summary {
        examples: usize,
        epochs: usize,
        final_loss: Option<f64>,
        seconds: f64,
    }
    print_json(&Summary {
        examples: records.len(),
        epochs: curve.len(),
        final_loss: curve.last().copied(),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn apply_decode_flags(flags: &DecodeFlags, cfg: &mut RunConfig) {
    if let Some(v) = flags.beam {
        cfg.decode.beam_size = v;
    }
    if let Some(v) = flags.no_repeat {
        cfg.decode.no_repeat = v;
    }
    if let Some(v) = flags.max_entities {
        cfg.decode.max_entities = v;
    }
    if let Some(v) = flags.max_tokens {
        cfg.decode.max_tokens = v;
    }
}

fn tag(args: TagArgs, cfg: &mut RunConfig) -> Result<()> {
    apply_decode_flags(&args.decode, cfg);
    let kb = Kb::load(&args.kb_cache)?;
    let model = TrainedModel::load(&args.model)?;
    let docs: Vec<TextRecord> = ingest::read_jsonl(&args.input)?;
    let preds = pipeline::tag_documents(Execution::Parallel, &model, &kb, &docs, &cfg.decode)?;
    write_lines(&preds, &args.out)?;
    cfg.write_beside(&args.out)
}

fn eval(args: EvalArgs, cfg: &RunConfig) -> Result<()> {
    if args.pred.len() != args.gold.len() {
        bail!(ettag_core::Error::Config("--pred and --gold must be given the same number of times".into()));
    }
    if !args.name.is_empty() && args.name.len() != args.gold.len() {
        bail!(ettag_core::Error::Config("--name must be given once per dataset or not at all".into()));
    }
    let mut reports = Vec::new();
    for (i, (pred, gold)) in args.pred.iter().zip(&args.gold).enumerate() {
        let preds: Vec<TaggedDoc> = ingest::read_jsonl(pred)?;
        let golds: Vec<EtRecord> = ingest::read_et_jsonl(gold)?;
        let name = match args.name.get(i) {
            Some(n) => n.clone(),
            None => gold.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("d{i}")),
        };
        reports.push((name, pipeline::evaluate(&preds, &golds)?));
    }
    print!("{}", format_report(&args.system, &reports, args.style)?);
    if let Some(p) = &args.json_out {
        write_text(p, &(serde_json::to_string_pretty(&json_report(&reports))? + "\n"))?;
        cfg.write_beside(p)?;
    }
    Ok(())
}

fn ablate_beam(args: AblateBeamArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(b) = args.beams {
        cfg.ablation.beams = b;
    }
    let kb = Kb::load(&args.kb_cache)?;
    let model = TrainedModel::load(&args.model)?;
    let eval = ingest::read_et_jsonl(&args.eval)?;
    let rows = pipeline::beam_sweep(Execution::Parallel, &model, &kb, &eval, &cfg.decode, &cfg.ablation.beams)?;
    let csv = pipeline::beam_csv(&rows);
    write_text(&args.out, &csv)?;
    cfg.write_beside(&args.out)?;
    print!("{csv}");
    Ok(())
}

fn ablate_order(args: AblateOrderArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(s) = args.strategies {
        cfg.ablation.strategies = s;
    }
    if let Some(s) = args.seeds {
        cfg.ablation.seeds = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let kb = load_kb(&args.kb)?;
    let train = ingest::read_et_jsonl(&args.train)?;
    let eval = ingest::read_et_jsonl(&args.eval)?;
    let rows = pipeline::order_ablation(
        Execution::Parallel,
        &kb,
        &train,
        &eval,
        &cfg.ablation.strategies,
        &cfg.ablation.seeds,
        &cfg.train,
        &cfg.decode,
    )?;
    let csv = pipeline::order_csv(&rows);
    write_text(&args.out, &csv)?;
    cfg.write_beside(&args.out)?;
    print!("{csv}");
    Ok(())
}

fn run_bench(args: BenchArgs, cfg: &RunConfig) -> Result<()> {
    let catalog = match (&args.kb, args.synthetic) {
        (Some(p), _) => ettag_core::catalog::load_catalog(p, ettag_core::catalog::CatalogFormat::from_path(p))?,
        (None, Some(n)) => EntityCatalog::from_names(synthetic::synthetic_names(n, cfg.seed))?,
        (None, None) => bail!(ettag_core::Error::Config("need --kb or --synthetic".into())),
    };
    let (_, report) = bench::run(catalog, args.samples, cfg.seed)?;
    if let Some(p) = &args.out {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        cfg.write_beside(p)?;
    }
    print_json(&report)
}

fn synth(args: SynthArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(s) = args.seed {
        cfg.synthetic.seed = s;
    }
    let corpus = synthetic::synthetic_corpus(&cfg.synthetic);
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let names: String = corpus.catalog.names().iter().map(|n| format!("{}\n", n.as_str())).collect();
    write_text(&args.out_dir.join("catalog.txt"), &names)?;
    let (train, eval) = corpus.split(args.train_docs);
    ingest::write_et_jsonl(train, &args.out_dir.join("train.jsonl"))?;
    ingest::write_et_jsonl(eval, &args.out_dir.join("eval.jsonl"))?;
    cfg.write_into(&args.out_dir)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.invocation = std::env::args().collect();
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let threads = cfg.threads;
    par::with_threads(threads, move || match cli.command {
        Command::BuildKb(a) => build_kb(a, &cfg),
        Command::Convert(a) => convert(a, &mut cfg),
        Command::Train(a) => train(a, &mut cfg),
        Command::Tag(a) => tag(a, &mut cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::AblateBeam(a) => ablate_beam(a, &mut cfg),
        Command::AblateOrder(a) => ablate_order(a, &mut cfg),
        Command::Bench(a) => run_bench(a, &cfg),
        Command::Synth(a) => synth(a, &mut cfg),
    })
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = ErrorReport { error: "usage", message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let core = e.downcast_ref::<ettag_core::Error>();
            let message = match core {
                Some(c) if e.to_string() == c.to_string() => c.to_string(),
                Some(c) => format!("{e}: {c}"),
                _ => format!("{e:#}"),
            };
            let report = ErrorReport { error: core.map_or("error", |c| c.kind()), message };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            ExitCode::from(if core.is_some_and(|c| c.is_contract_violation()) { 2 } else { 1 })
        }
    }
}

//! Pipeline driver: every stage as a subcommand over one work directory,
//! with a manifest that caches stages by configuration and input hashes.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use litforge_core::aligner::{align_book, BookAlignError, PairAlignment};
use litforge_core::corpus::{
    parse_corpus, serialize_corpus, to_canonical_json, Book, Corpus, Extras, IngestedBook, LanguageSet, Manifest,
    SourceDocument, Split, TranslationDocument, TranslationKind,
};
use litforge_core::filter::{assign_splits, audit_to_jsonl, process_book};
use litforge_core::metrics::{
    bleu, report_from_scores, score_corpus, score_corpus_adapter, scores_from_tsv, scores_to_tsv, AdapterConfig,
    Bleu, ScoredRecord,
};
use litforge_core::postedit::{
    finetune_to_jsonl, postedit_batch, prepare_finetune, CostMeter, FinetuneJob, HttpCompletionClient, PosteditError,
};
use litforge_core::segmentation::{
    extract_paragraphs, ArtifactStripper, RuleSegmenter, Segmenter, SegmenterConfig, SubprocessSegmenter,
};
use litforge_core::similarity::{
    EmbeddingScorer, HttpEmbeddingTransport, LexicalScorer, SimilarityError, SimilarityScorer,
};
use litforge_core::stats::{
    binomial_test, krippendorff_alpha, paired_bootstrap, read_pairs_tsv, wilcoxon_pratt_with, RatingsMatrix,
    StatResult, WilcoxonMode,
};
use litforge_core::tokens::ApproxTokenCounter;

pub use config::PipelineConfig;
pub use manifest::{RunManifest, StageRecord};

use manifest::{conserves, hash_json, sha256_hex};

pub const INGEST_INDEX: &str = "ingest/index.json";
pub const ALIGN_INDEX: &str = "align/index.json";
pub const CORPUS_FILE: &str = "corpus.json";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const SCORES_FILE: &str = "scores.tsv";
pub const REPORT_FILE: &str = "report.tsv";
pub const FINETUNE_FILE: &str = "finetune/train.jsonl";
pub const JOB_FILE: &str = "finetune/job.json";
pub const PROVENANCE_FILE: &str = "finetune/provenance.tsv";
pub const POSTEDIT_FILE: &str = "postedit/output.jsonl";
pub const COST_FILE: &str = "postedit/cost.jsonl";

/// Stages in execution order.
pub const STAGES: [&str; 8] = ["ingest", "align", "build", "score", "stats", "prep-finetune", "postedit", "report"];

// ---------------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Input(anyhow::Error),
    /// An upstream artifact is missing.
    Upstream { stage: String, run_first: String, missing: PathBuf },
    /// A remote service or external process failed.
    Service(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Upstream { .. } => 2,
            CliError::Service(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "{e:#}"),
            CliError::Upstream { stage, run_first, missing } => write!(
                f,
                "{stage}: missing {}; run `{run_first}` first",
                missing.display()
            ),
            CliError::Service(e) => write!(f, "external service failure: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Input(e.into())
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "litforge", version, about = "Build and evaluate paragraph-aligned literary parallel corpora")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Work directory; overrides `paths.work`.
    #[arg(long, global = true)]
    pub work: Option<PathBuf>,
    /// Rebuild stages whose cached artifacts came from another configuration.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read book directories into validated documents.
    Ingest {
        /// Book directory with meta.json, source.txt, machine.txt and human/*.txt.
        #[arg(long = "book")]
        books: Vec<PathBuf>,
    },
    /// Align every human translation against the machine translation.
    Align,
    /// Filter, merge, sample and split into the corpus.
    Build,
    /// Aggregate metric scores per record.
    Score {
        /// `bleu` or `adapter:<program>`.
        #[arg(long, default_value = "bleu")]
        metric: String,
    },
    /// Hypothesis tests.
    Stats {
        #[command(subcommand)]
        test: StatsCommand,
    },
    /// Write fine-tuning examples and the job configuration.
    PrepFinetune,
    /// Post-edit the test split through a completion endpoint.
    Postedit {
        #[arg(long)]
        endpoint: String,
    },
    /// Per-language win-rate table from the scores.
    Report,
    /// Several stages in order.
    Run {
        /// Comma-separated subset of the stage names; all but postedit by default.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        /// Needed when `postedit` is requested.
        #[arg(long)]
        endpoint: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum StatsCommand {
    /// Signed-rank test of s_hum against s_cand.
    Wilcoxon(PairsInput),
    /// Exact binomial test with a Clopper–Pearson interval.
    Binomial {
        #[arg(long)]
        successes: u64,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0.5)]
        p0: f64,
    },
    /// Nominal Krippendorff's alpha; TSV with one line per item, one column per rater.
    Alpha {
        #[arg(long)]
        ratings: PathBuf,
    },
    /// Percentile bootstrap of the mean difference s_hum - s_cand.
    Bootstrap {
        #[command(flatten)]
        pairs: PairsInput,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PairsInput {
    /// Two-column score file; defaults to the score stage output.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
}

impl StatsCommand {
    fn name(&self) -> &'static str {
        match self {
            StatsCommand::Wilcoxon(_) => "wilcoxon",
            StatsCommand::Binomial { .. } => "binomial",
            StatsCommand::Alpha { .. } => "alpha",
            StatsCommand::Bootstrap { .. } => "bootstrap",
        }
    }
}

// ---------------------------------------------------------------------------
// Context and stage caching

pub struct Context {
    pub cfg: PipelineConfig,
    pub work: PathBuf,
    pub force: bool,
    pub manifest: RunManifest,
    /// Progress lines, one per stage.
    pub log: Vec<String>,
}

/// What a stage produced.
#[derive(Default)]
struct Outcome {
    outputs: Vec<String>,
    counts: BTreeMap<String, u64>,
    notes: BTreeMap<String, String>,
}

impl Context {
    pub fn new(cfg: PipelineConfig, work: Option<PathBuf>, force: bool) -> Result<Self, CliError> {
        let work = work.unwrap_or_else(|| cfg.paths.work.clone());
        let manifest = RunManifest::load(&work)?.unwrap_or_default();
        let mut ctx = Context {
            cfg,
            work,
            force,
            manifest,
            log: Vec::new(),
        };
        ctx.manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        ctx.manifest.config_hash = hash_json(&ctx.cfg);
        ctx.manifest.seed = ctx.cfg.seed;
        ctx.manifest.seeds = STAGES.iter().map(|s| (s.to_string(), ctx.cfg.stage_seed(s))).collect();
        Ok(ctx)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.work.join(rel)
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>, CliError> {
        std::fs::read(self.path(rel)).map_err(|e| input(anyhow::anyhow!("cannot read {rel}: {e}")))
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(input)?;
        }
        std::fs::write(&p, bytes).map_err(|e| input(anyhow::anyhow!("cannot write {}: {e}", p.display())))
    }

    fn require(&self, stage: &str, rel: &str, run_first: &str) -> Result<(), CliError> {
        if self.path(rel).exists() {
            Ok(())
        } else {
            Err(CliError::Upstream {
                stage: stage.to_string(),
                run_first: run_first.to_string(),
                missing: self.path(rel),
            })
        }
    }

    /// Runs `body` unless the manifest shows the same configuration and
    /// inputs produced outputs that are still intact on disk.
    fn cached(
        &mut self,
        stage: &str,
        config_hash: String,
        inputs: Vec<PathBuf>,
        body: impl FnOnce(&mut Context) -> Result<Outcome, CliError>,
    ) -> Result<StageRecord, CliError> {
        let mut input_hashes = BTreeMap::new();
        for p in &inputs {
            let bytes = std::fs::read(p).map_err(|e| input(anyhow::anyhow!("cannot read {}: {e}", p.display())))?;
            let key = p.strip_prefix(&self.work).unwrap_or(p).to_string_lossy().replace('\\', "/");
            input_hashes.insert(key, sha256_hex(&bytes));
        }
        if let Some(prev) = self.manifest.stages.get(stage) {
            let intact = prev.outputs.iter().all(|(rel, h)| {
                std::fs::read(self.path(rel)).map(|b| sha256_hex(&b) == *h).unwrap_or(false)
            });
            if intact && prev.config_hash != config_hash && !self.force {
                return Err(input(anyhow::anyhow!(
                    "{stage}: cached artifacts were built with a different configuration (stale cache); rerun with --force"
                )));
            }
            if intact && prev.config_hash == config_hash && prev.inputs == input_hashes && !self.force {
                let mut rec = prev.clone();
                rec.cache_hit = true;
                self.manifest.stages.insert(stage.to_string(), rec.clone());
                self.manifest.save(&self.work)?;
                self.log.push(format!("{stage}: cache hit"));
                return Ok(rec);
            }
        }
        let start = Instant::now();
        let out = body(self)?;
        let mut outputs = BTreeMap::new();
        for rel in &out.outputs {
            outputs.insert(rel.clone(), sha256_hex(&self.read(rel)?));
        }
        let rec = StageRecord {
            config_hash,
            inputs: input_hashes,
            outputs,
            counts: out.counts,
            notes: out.notes,
            seed: self.cfg.stage_seed(stage),
            wall_ms: start.elapsed().as_millis() as u64,
            cache_hit: false,
        };
        self.manifest.stages.insert(stage.to_string(), rec.clone());
        self.manifest.save(&self.work)?;
        self.log.push(format!("{stage}: done in {} ms", rec.wall_ms));
        Ok(rec)
    }
}

fn stage_hash<T: Serialize>(stage: &str, section: &T, seed: u64) -> String {
    hash_json(&serde_json::json!({ "stage": stage, "config": section, "seed": seed }))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serializable") + "\n")
        .collect()
}

fn read_index(ctx: &Context, rel: &str) -> Result<Vec<String>, CliError> {
    serde_json::from_slice(&ctx.read(rel)?).map_err(|e| input(anyhow::anyhow!("corrupt {rel}: {e}")))
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BookMeta {
    doc_id: String,
    language: String,
    title: String,
    author: String,
    pub_year: i32,
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))
}

fn book_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = vec![dir.join("meta.json"), dir.join("source.txt"), dir.join("machine.txt")];
    let mut humans: Vec<PathBuf> = std::fs::read_dir(dir.join("human"))
        .map_err(|e| anyhow::anyhow!("{}: cannot list human/: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    humans.sort();
    files.extend(humans);
    Ok(files)
}

/// Reads one book directory.
pub fn load_book_dir(dir: &Path) -> anyhow::Result<IngestedBook> {
    let meta: BookMeta = serde_json::from_str(&read_text(&dir.join("meta.json"))?)
        .map_err(|e| anyhow::anyhow!("{}/meta.json: {e}", dir.display()))?;
    let stripper = ArtifactStripper::new(&SegmenterConfig::for_language(&meta.language))?;
    let source: Vec<String> = extract_paragraphs(&read_text(&dir.join("source.txt"))?)
        .iter()
        .map(|p| stripper.strip(p))
        .collect();
    let machine = extract_paragraphs(&read_text(&dir.join("machine.txt"))?);
    let mut humans = Vec::new();
    for p in book_files(dir)?.into_iter().skip(3) {
        let id = p.file_stem().expect("file name").to_string_lossy().to_string();
        humans.push(TranslationDocument {
            doc_id: meta.doc_id.clone(),
            translator_id: id,
            kind: TranslationKind::Human,
            paragraphs: extract_paragraphs(&read_text(&p)?),
        });
    }
    let book = IngestedBook {
        source: SourceDocument {
            doc_id: meta.doc_id.clone(),
            language: meta.language,
            title: meta.title,
            author: meta.author,
            pub_year: meta.pub_year,
            paragraphs: source,
        },
        machine: TranslationDocument {
            doc_id: meta.doc_id,
            translator_id: "gtr".into(),
            kind: TranslationKind::Machine,
            paragraphs: machine,
        },
        humans,
    };
    book.validate(&LanguageSet::default())?;
    Ok(book)
}

pub fn ingest(ctx: &mut Context, books: &[PathBuf]) -> Result<StageRecord, CliError> {
    let books: Vec<PathBuf> = if books.is_empty() { ctx.cfg.paths.books.clone() } else { books.to_vec() };
    if books.is_empty() {
        if let (true, Some(rec)) = (ctx.path(INGEST_INDEX).exists(), ctx.manifest.stages.get("ingest")) {
            let mut rec = rec.clone();
            rec.cache_hit = true;
            ctx.manifest.stages.insert("ingest".into(), rec.clone());
            ctx.manifest.save(&ctx.work)?;
            ctx.log.push("ingest: cache hit (no books given, reusing ingested documents)".into());
            return Ok(rec);
        }
        return Err(input(anyhow::anyhow!("no books given: pass --book <dir> or set paths.books")));
    }
    let mut inputs = Vec::new();
    for b in &books {
        inputs.extend(book_files(b)?);
    }
    let hash = stage_hash("ingest", &books.len(), 0);
    ctx.cached("ingest", hash, inputs, |ctx| {
        let mut out = Outcome::default();
        let mut ids = Vec::new();
        let (mut src, mut hum) = (0u64, 0u64);
        for dir in &books {
            let book = load_book_dir(dir)?;
            let id = book.source.doc_id.clone();
            if ids.contains(&id) {
                return Err(input(anyhow::anyhow!("duplicate doc_id `{id}`")));
            }
            src += book.source.paragraphs.len() as u64;
            hum += book.humans.iter().map(|h| h.paragraphs.len() as u64).sum::<u64>();
            let rel = format!("ingest/{id}.json");
            ctx.write(&rel, &to_canonical_json(&book))?;
            out.outputs.push(rel);
            ids.push(id);
        }
        ids.sort();
        ctx.write(INGEST_INDEX, &to_canonical_json(&ids))?;
        out.outputs.push(INGEST_INDEX.into());
        out.counts.insert("books".into(), ids.len() as u64);
        out.counts.insert("source_paragraphs".into(), src);
        out.counts.insert("human_paragraphs".into(), hum);
        Ok(out)
    })
}

fn load_ingested(ctx: &Context) -> Result<Vec<IngestedBook>, CliError> {
    read_index(ctx, INGEST_INDEX)?
        .iter()
        .map(|id| {
            serde_json::from_slice(&ctx.read(&format!("ingest/{id}.json"))?)
                .map_err(|e| input(anyhow::anyhow!("corrupt ingest/{id}.json: {e}")))
        })
        .collect()
}

fn ingest_inputs(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut v = vec![ctx.path(INGEST_INDEX)];
    v.extend(read_index(ctx, INGEST_INDEX)?.iter().map(|id| ctx.path(&format!("ingest/{id}.json"))));
    Ok(v)
}

// ---------------------------------------------------------------------------
// align

pub fn make_segmenter(cfg: &PipelineConfig) -> Result<Box<dyn Segmenter>, CliError> {
    match &cfg.segmenter.program {
        Some(program) => Ok(Box::new(SubprocessSegmenter {
            program: program.clone(),
            args: cfg.segmenter.args.clone(),
        })),
        None => {
            let mut sc = SegmenterConfig::for_language("en");
            sc.abbreviation_guards.extend(cfg.segmenter.abbreviations.iter().cloned());
            Ok(Box::new(RuleSegmenter::new(sc).map_err(input)?))
        }
    }
}

pub fn make_scorer(cfg: &PipelineConfig) -> Box<dyn SimilarityScorer> {
    match (&cfg.similarity.kind, &cfg.similarity.endpoint) {
        (config::SimilarityKind::Embedding, Some(url)) => Box::new(EmbeddingScorer::new(
            HttpEmbeddingTransport::from_env(url.clone()),
            cfg.similarity.embedding.clone(),
        )),
        _ => Box::new(LexicalScorer),
    }
}

fn align_error(e: BookAlignError) -> CliError {
    match e {
        BookAlignError::Similarity(SimilarityError::Service { .. }) => CliError::Service(e.into()),
        other => input(other),
    }
}

pub fn align(ctx: &mut Context) -> Result<StageRecord, CliError> {
    ctx.require("align", INGEST_INDEX, "ingest")?;
    let inputs = ingest_inputs(ctx)?;
    let hash = stage_hash(
        "align",
        &(&ctx.cfg.segmenter, &ctx.cfg.similarity, &ctx.cfg.aligner),
        0,
    );
    ctx.cached("align", hash, inputs, |ctx| {
        let segmenter = make_segmenter(&ctx.cfg)?;
        let scorer = make_scorer(&ctx.cfg);
        let mut out = Outcome::default();
        let mut ids = Vec::new();
        let (mut pairs_total, mut empty) = (0u64, 0u64);
        for book in load_ingested(ctx)? {
            let pairs = align_book(&book, segmenter.as_ref(), scorer.as_ref(), ctx.cfg.aligner.gap_penalty)
                .map_err(align_error)?;
            pairs_total += pairs.len() as u64;
            empty += pairs.iter().filter(|p| p.empty).count() as u64;
            let rel = format!("align/{}.jsonl", book.source.doc_id);
            ctx.write(&rel, jsonl(&pairs).as_bytes())?;
            out.outputs.push(rel);
            ids.push(book.source.doc_id);
        }
        ctx.write(ALIGN_INDEX, &to_canonical_json(&ids))?;
        out.outputs.push(ALIGN_INDEX.into());
        out.counts.insert("pairs".into(), pairs_total);
        out.counts.insert("empty_projections".into(), empty);
        Ok(out)
    })
}

fn load_pairs(ctx: &Context, doc_id: &str) -> Result<Vec<PairAlignment>, CliError> {
    let rel = format!("align/{doc_id}.jsonl");
    String::from_utf8_lossy(&ctx.read(&rel)?)
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| input(anyhow::anyhow!("corrupt {rel}: {e}"))))
        .collect()
}

// ---------------------------------------------------------------------------
// build

pub fn build(ctx: &mut Context) -> Result<StageRecord, CliError> {
    ctx.require("build", INGEST_INDEX, "ingest")?;
    ctx.require("build", ALIGN_INDEX, "align")?;
    let mut inputs = ingest_inputs(ctx)?;
    inputs.push(ctx.path(ALIGN_INDEX));
    for id in read_index(ctx, ALIGN_INDEX)? {
        inputs.push(ctx.path(&format!("align/{id}.jsonl")));
    }
    let filter = ctx.cfg.filter_config();
    let hash = stage_hash("build", &(&filter, &ctx.cfg.metrics), filter.seed);
    ctx.cached("build", hash.clone(), inputs, move |ctx| {
        let bleu_cfg = ctx.cfg.metrics.clone();
        let bleu_fn = |h: &str, r: &[&str]| bleu(h, r, &bleu_cfg).unwrap_or(0.0);
        let mut books = Vec::new();
        let mut audit = Vec::new();
        let (mut pairs_in, mut dropped_records) = (0u64, 0u64);
        for b in load_ingested(ctx)? {
            let id = b.source.doc_id.clone();
            let pairs = load_pairs(ctx, &id)?;
            pairs_in += pairs.len() as u64;
            let done = process_book(&id, &b.source.paragraphs, pairs, &filter, bleu_fn).map_err(input)?;
            audit.extend(done.audit);
            dropped_records += done.dropped_records as u64;
            books.push(Book {
                doc_id: id,
                language: b.source.language,
                title: b.source.title,
                author: b.source.author,
                pub_year: b.source.pub_year,
                source_paras: b.source.paragraphs,
                gt_paras: b.machine.paragraphs,
                translators: b.humans.into_iter().map(|h| (h.translator_id, h.paragraphs)).collect(),
                records: done.records,
                extras: Extras::new(),
            });
        }
        let corpus = Corpus {
            books,
            splits: BTreeMap::new(),
            manifest: Manifest {
                config_hash: hash,
                seeds: BTreeMap::from([("build".to_string(), filter.seed)]),
                extras: Extras::new(),
            },
            extras: Extras::new(),
        };
        let corpus = assign_splits(corpus, &filter).map_err(input)?;

        let mut out = Outcome::default();
        out.counts.insert("pairs".into(), pairs_in);
        let kept: u64 = corpus.records().map(|r| r.n() as u64).sum();
        out.counts.insert("refs_kept".into(), kept);
        for e in &audit {
            *out.counts.entry(format!("discarded_{}", e.reason)).or_insert(0) += 1;
        }
        out.counts.insert("records".into(), corpus.records().count() as u64);
        out.counts.insert("records_dropped".into(), dropped_records);
        for s in Split::ALL {
            out.counts.insert(format!("records_{s}"), corpus.records_in(s).len() as u64);
        }
        if !conserves(&out.counts, "pairs", "refs_kept", "discarded_") {
            return Err(input(anyhow::anyhow!("internal error: build counts do not conserve")));
        }
        ctx.write(CORPUS_FILE, &serialize_corpus(&corpus))?;
        ctx.write(AUDIT_FILE, audit_to_jsonl(&audit).as_bytes())?;
        out.outputs = vec![CORPUS_FILE.into(), AUDIT_FILE.into()];
        Ok(out)
    })
}

pub fn load_corpus(ctx: &Context) -> Result<Corpus, CliError> {
    parse_corpus(&ctx.read(CORPUS_FILE)?).map_err(input)
}

// ---------------------------------------------------------------------------
// score and report

pub fn score(ctx: &mut Context, metric: &str) -> Result<StageRecord, CliError> {
    ctx.require("score", CORPUS_FILE, "build")?;
    let adapter = match metric {
        "bleu" => None,
        m => match m.strip_prefix("adapter:") {
            Some(p) if !p.is_empty() => Some(AdapterConfig {
                program: p.to_string(),
                args: Vec::new(),
                max_input_tokens: 512,
            }),
            _ => return Err(input(anyhow::anyhow!("unknown metric `{m}`; use bleu or adapter:<path>"))),
        },
    };
    let inputs = vec![ctx.path(CORPUS_FILE)];
    let hash = stage_hash("score", &(metric, &ctx.cfg.metrics), 0);
    let metric = metric.to_string();
    ctx.cached("score", hash, inputs, move |ctx| {
        let corpus = load_corpus(ctx)?;
        let mut out = Outcome::default();
        let scores = match adapter {
            None => score_corpus(&corpus, &Bleu::new(ctx.cfg.metrics.clone())).map_err(input)?,
            Some(a) => {
                let r = score_corpus_adapter(&corpus, &a, &ApproxTokenCounter)
                    .map_err(|e| CliError::Service(e.into()))?;
                out.counts.insert("dropped_over_cap".into(), r.skipped_records as u64);
                r.scores
            }
        };
        out.counts.insert("records".into(), corpus.records().count() as u64);
        out.counts.insert("scored".into(), scores.len() as u64);
        out.notes.insert("metric".into(), metric);
        ctx.write(SCORES_FILE, scores_to_tsv(&scores).as_bytes())?;
        out.outputs.push(SCORES_FILE.into());
        Ok(out)
    })
}

pub fn load_scores(ctx: &Context) -> Result<Vec<ScoredRecord>, CliError> {
    scores_from_tsv(&String::from_utf8_lossy(&ctx.read(SCORES_FILE)?)).map_err(input)
}

pub fn report(ctx: &mut Context) -> Result<StageRecord, CliError> {
    ctx.require("report", SCORES_FILE, "score")?;
    let metric = ctx
        .manifest
        .stages
        .get("score")
        .and_then(|s| s.notes.get("metric").cloned())
        .unwrap_or_else(|| "bleu".into());
    let inputs = vec![ctx.path(SCORES_FILE)];
    let hash = stage_hash("report", &metric, 0);
    ctx.cached("report", hash, inputs, move |ctx| {
        let scores = load_scores(ctx)?;
        let rep = report_from_scores(&metric, &scores);
        ctx.write(REPORT_FILE, rep.to_tsv().as_bytes())?;
        let mut out = Outcome {
            outputs: vec![REPORT_FILE.into()],
            ..Outcome::default()
        };
        out.counts.insert("records".into(), scores.len() as u64);
        Ok(out)
    })
}

// ---------------------------------------------------------------------------
// stats

fn read_ratings(path: &Path) -> anyhow::Result<RatingsMatrix<String>> {
    let text = read_text(path)?;
    let items: Vec<Vec<Option<String>>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split('\t')
                .map(|v| {
                    let v = v.trim();
                    (!v.is_empty() && v != "NA" && v != ".").then(|| v.to_string())
                })
                .collect()
        })
        .collect();
    let raters = items.iter().map(Vec::len).max().unwrap_or(0);
    let rows = (0..raters)
        .map(|r| items.iter().map(|it| it.get(r).cloned().flatten()).collect())
        .collect();
    Ok(RatingsMatrix::new(rows)?)
}

pub fn stats(ctx: &mut Context, test: &StatsCommand) -> Result<StatResult, CliError> {
    let name = test.name();
    let seed = ctx.cfg.stage_seed("stats");
    let mut inputs = Vec::new();
    let pairs_path = |p: &PairsInput, ctx: &Context| -> Result<PathBuf, CliError> {
        match &p.input {
            Some(path) => Ok(path.clone()),
            None => {
                ctx.require("stats", SCORES_FILE, "score")?;
                Ok(ctx.path(SCORES_FILE))
            }
        }
    };
    match test {
        StatsCommand::Wilcoxon(p) | StatsCommand::Bootstrap { pairs: p, .. } => inputs.push(pairs_path(p, ctx)?),
        StatsCommand::Alpha { ratings } => inputs.push(ratings.clone()),
        StatsCommand::Binomial { .. } => {}
    }
    let rel = format!("stats/{name}.json");
    let hash = stage_hash("stats", test, seed);
    let stage = format!("stats-{name}");
    let t = test.clone();
    let ins = inputs.clone();
    ctx.cached(&stage, hash, inputs, move |ctx| {
        let result = match &t {
            StatsCommand::Wilcoxon(p) => {
                let pairs = read_pairs_tsv(&read_text(&ins[0])?).map_err(input)?;
                let mode = match p.mode {
                    ModeArg::Auto => WilcoxonMode::Auto,
                    ModeArg::Exact => WilcoxonMode::Exact,
                    ModeArg::Normal => WilcoxonMode::Normal,
                };
                wilcoxon_pratt_with(&pairs, mode).map_err(input)?
            }
            StatsCommand::Bootstrap { resamples, .. } => {
                let pairs = read_pairs_tsv(&read_text(&ins[0])?).map_err(input)?;
                paired_bootstrap(&pairs, *resamples, seed).map_err(input)?
            }
            StatsCommand::Binomial { successes, trials, p0 } => binomial_test(*successes, *trials, *p0).map_err(input)?,
            StatsCommand::Alpha { .. } => krippendorff_alpha(&read_ratings(&ins[0])?).map_err(input)?,
        };
        ctx.write(&rel, &to_canonical_json(&result))?;
        let mut out = Outcome {
            outputs: vec![rel.clone()],
            ..Outcome::default()
        };
        out.counts.insert("n".into(), result.n as u64);
        Ok(out)
    })?;
    serde_json::from_slice(&ctx.read(&format!("stats/{name}.json"))?).map_err(|e| input(anyhow::anyhow!("{e}")))
}

// ---------------------------------------------------------------------------
// prep-finetune and postedit

pub fn prep_finetune(ctx: &mut Context) -> Result<StageRecord, CliError> {
    ctx.require("prep-finetune", CORPUS_FILE, "build")?;
    let pcfg = ctx.cfg.postedit_config();
    let inputs = vec![ctx.path(CORPUS_FILE)];
    let hash = stage_hash("prep-finetune", &(&pcfg, &ctx.cfg.metrics), pcfg.seed);
    ctx.cached("prep-finetune", hash, inputs, move |ctx| {
        let corpus = load_corpus(ctx)?;
        let train: Vec<_> = corpus.records_in(Split::Train).into_iter().cloned().collect();
        let bleu_cfg = ctx.cfg.metrics.clone();
        let bleu_fn = |h: &str, r: &[&str]| bleu(h, r, &bleu_cfg).unwrap_or(0.0);
        let prep = prepare_finetune(&train, &pcfg, &Bleu::new(bleu_cfg.clone()), bleu_fn, &ApproxTokenCounter)
            .map_err(input)?;
        ctx.write(FINETUNE_FILE, finetune_to_jsonl(&prep.examples).as_bytes())?;
        let job = FinetuneJob::new(&pcfg.model, "train.jsonl");
        ctx.write(JOB_FILE, &to_canonical_json(&job))?;
        let mut prov = String::from("line\tdoc_id\tsource_index\ttranslator_id\tprompt_tokens\tcompletion_tokens\n");
        for (k, e) in prep.examples.iter().enumerate() {
            prov.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                k + 1,
                e.provenance.doc_id,
                e.provenance.source_index,
                e.provenance.translator_id,
                e.token_counts.0,
                e.token_counts.1
            ));
        }
        ctx.write(PROVENANCE_FILE, prov.as_bytes())?;
        let c = prep.counts;
        let mut out = Outcome {
            outputs: vec![FINETUNE_FILE.into(), JOB_FILE.into(), PROVENANCE_FILE.into()],
            ..Outcome::default()
        };
        for (k, v) in [
            ("input", c.input),
            ("dropped_percentile", c.percentile),
            ("dropped_over_budget", c.over_budget),
            ("dropped_unformattable", c.unformattable),
            ("dropped_not_sampled", c.not_sampled),
            ("output", c.output),
        ] {
            out.counts.insert(k.into(), v as u64);
        }
        out.notes.insert("percentile_low".into(), format!("{}", prep.bounds.0));
        out.notes.insert("percentile_high".into(), format!("{}", prep.bounds.1));
        Ok(out)
    })
}

#[derive(Serialize)]
struct PosteditLine<'a> {
    doc_id: &'a str,
    source_index: usize,
    text: &'a str,
    retries: u32,
}

pub fn postedit(ctx: &mut Context, endpoint: &str) -> Result<StageRecord, CliError> {
    ctx.require("postedit", CORPUS_FILE, "build")?;
    let pcfg = ctx.cfg.postedit_config();
    let inputs = vec![ctx.path(CORPUS_FILE)];
    let hash = stage_hash("postedit", &(&pcfg, endpoint), pcfg.seed);
    let client = HttpCompletionClient::from_env(endpoint);
    ctx.cached("postedit", hash, inputs, move |ctx| {
        let corpus = load_corpus(ctx)?;
        let test = corpus.records_in(Split::Test);
        let items: Vec<(String, String)> = test.iter().map(|r| (r.src.clone(), r.gtr.clone())).collect();
        let meter = CostMeter::new();
        let results = postedit_batch(&client, &items, &pcfg, &ApproxTokenCounter, &meter);
        let mut lines = String::new();
        let mut out = Outcome::default();
        let mut failure = None;
        let mut count = |k: &str| *out.counts.entry(k.to_string()).or_insert(0) += 1;
        for (r, res) in test.iter().zip(&results) {
            match res {
                Ok(o) => {
                    count("output");
                    lines.push_str(
                        &(serde_json::to_string(&PosteditLine {
                            doc_id: &r.doc_id,
                            source_index: r.source_index,
                            text: &o.text,
                            retries: o.retries,
                        })
                        .expect("serializable")
                            + "\n"),
                    );
                }
                Err(PosteditError::OverBudget { .. }) => count("dropped_over_budget"),
                Err(e @ PosteditError::Service { .. }) => {
                    count("dropped_service");
                    failure.get_or_insert_with(|| e.to_string());
                }
                Err(_) => count("dropped_invalid"),
            }
        }
        out.counts.insert("input".into(), items.len() as u64);
        out.counts.entry("output".into()).or_insert(0);
        ctx.write(POSTEDIT_FILE, lines.as_bytes())?;
        ctx.write(COST_FILE, meter.to_jsonl().as_bytes())?;
        if let Some(f) = failure {
            return Err(CliError::Service(anyhow::anyhow!(f)));
        }
        out.outputs = vec![POSTEDIT_FILE.into(), COST_FILE.into()];
        Ok(out)
    })
}

// ---------------------------------------------------------------------------
// dispatch

/// Stages requested for `run`, checked and put in execution order.
pub fn plan(stages: &[String], endpoint: Option<&str>) -> Result<Vec<&'static str>, CliError> {
    let wanted: Vec<&str> = if stages.is_empty() {
        STAGES.iter().copied().filter(|s| *s != "postedit").collect()
    } else {
        stages.iter().map(|s| s.trim()).collect()
    };
    for s in &wanted {
        if !STAGES.contains(s) {
            return Err(input(anyhow::anyhow!("unknown stage `{s}`; expected one of {}", STAGES.join(", "))));
        }
    }
    if wanted.contains(&"postedit") && endpoint.is_none() {
        return Err(input(anyhow::anyhow!("stage postedit needs --endpoint")));
    }
    Ok(STAGES.iter().copied().filter(|s| wanted.contains(s)).collect())
}

/// Runs the requested stages in their fixed order.
pub fn run_pipeline(ctx: &mut Context, stages: &[&str], endpoint: Option<&str>) -> Result<(), CliError> {
    for stage in stages {
        match *stage {
            "ingest" => ingest(ctx, &[]).map(drop)?,
            "align" => align(ctx).map(drop)?,
            "build" => build(ctx).map(drop)?,
            "score" => score(ctx, "bleu").map(drop)?,
            "stats" => stats(
                ctx,
                &StatsCommand::Wilcoxon(PairsInput {
                    input: None,
                    mode: ModeArg::Auto,
                }),
            )
            .map(drop)?,
            "prep-finetune" => prep_finetune(ctx).map(drop)?,
            "postedit" => postedit(ctx, endpoint.expect("checked by plan")).map(drop)?,
            "report" => report(ctx).map(drop)?,
            other => unreachable!("unplanned stage {other}"),
        }
    }
    Ok(())
}

/// Executes one parsed command line; returns text for stdout.
pub fn execute(cli: Cli) -> Result<(String, Vec<String>), CliError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut ctx = Context::new(cfg, cli.work.clone(), cli.force)?;
    let stdout = match &cli.command {
        Command::Ingest { books } => {
            ingest(&mut ctx, books)?;
            String::new()
        }
        Command::Align => {
            align(&mut ctx)?;
            String::new()
        }
        Command::Build => {
            build(&mut ctx)?;
            String::new()
        }
        Command::Score { metric } => {
            score(&mut ctx, metric)?;
            String::new()
        }
        Command::Stats { test } => {
            let r = stats(&mut ctx, test)?;
            String::from_utf8(to_canonical_json(&r)).expect("utf-8 json")
        }
        Command::PrepFinetune => {
            prep_finetune(&mut ctx)?;
            String::new()
        }
        Command::Postedit { endpoint } => {
            postedit(&mut ctx, endpoint)?;
            String::new()
        }
        Command::Report => {
            report(&mut ctx)?;
            String::from_utf8_lossy(&ctx.read(REPORT_FILE)?).to_string()
        }
        Command::Run { stages, endpoint } => {
            let planned = plan(stages, endpoint.as_deref())?;
            run_pipeline(&mut ctx, &planned, endpoint.as_deref())?;
            String::new()
        }
    };
    Ok((stdout, ctx.log))
}

//! Data model for books, translations, alignment records and splits, with a
//! byte-stable JSON encoding.
//!
//! On disk a corpus is one UTF-8 JSON document:
//!
//! ```text
//! {"books": [{"doc_id", "language", "title", "author", "pub_year",
//!             "source_paras": [...], "gt_paras": [...],
//!             "translators": {"<id>": [...]},
//!             "records": [{"source_index", "src", "gtr",
//!                          "hums": [{"translator_id", "text"}]}]}],
//!  "splits": {"train": [...], "valid": [...], "test": [...]},
//!  "manifest": {...}}
//! ```
//!
//! Fields this module does not know about are kept in `extras` bags and
//! written back unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Unknown JSON members carried through parse/serialize.
pub type Extras = BTreeMap<String, Value>;

/// Source-language codes of the reference corpus.
pub const DEFAULT_LANGUAGES: [&str; 19] = [
    "bn", "cs", "da", "de", "es", "fa", "fr", "hu", "it", "ja", "nl", "no", "pl", "pt", "ru", "st",
    "sv", "ta", "zh",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed corpus JSON at byte {offset} (line {line}, column {column}): {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid corpus: document `{doc_id}`, field `{field}`: {message}")]
    Validation {
        doc_id: String,
        field: String,
        message: String,
    },
}

impl CorpusError {
    fn invalid(doc_id: &str, field: &str, message: impl Into<String>) -> Self {
        CorpusError::Validation {
            doc_id: doc_id.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Set of accepted ISO-639-1 source language codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageSet(BTreeSet<String>);

impl LanguageSet {
    pub fn new<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LanguageSet(codes.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, code: &str) -> bool {
        self.0.contains(code)
    }
}

impl Default for LanguageSet {
    fn default() -> Self {
        LanguageSet::new(DEFAULT_LANGUAGES)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub language: String,
    pub title: String,
    pub author: String,
    pub pub_year: i32,
    pub paragraphs: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationKind {
    Human,
    Machine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationDocument {
    pub doc_id: String,
    pub translator_id: String,
    pub kind: TranslationKind,
    pub paragraphs: Vec<String>,
}

/// One source document with its machine translation and every human
/// translation, as produced by ingestion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestedBook {
    pub source: SourceDocument,
    pub machine: TranslationDocument,
    pub humans: Vec<TranslationDocument>,
}

impl IngestedBook {
    /// Checks the cross-document invariants of a single book.
    pub fn validate(&self, languages: &LanguageSet) -> Result<(), CorpusError> {
        let id = &self.source.doc_id;
        if self.source.paragraphs.is_empty() {
            return Err(CorpusError::invalid(id, "paragraphs", "source document has no paragraphs"));
        }
        if !languages.contains(&self.source.language) {
            return Err(CorpusError::invalid(
                id,
                "language",
                format!("unsupported language code `{}`", self.source.language),
            ));
        }
        if self.machine.kind != TranslationKind::Machine {
            return Err(CorpusError::invalid(id, "machine.kind", "expected a machine translation"));
        }
        if self.machine.paragraphs.len() != self.source.paragraphs.len() {
            return Err(CorpusError::invalid(
                id,
                "machine.paragraphs",
                format!(
                    "machine translation has {} paragraphs, source has {}",
                    self.machine.paragraphs.len(),
                    self.source.paragraphs.len()
                ),
            ));
        }
        let mut seen = BTreeSet::new();
        for h in &self.humans {
            if h.kind != TranslationKind::Human {
                return Err(CorpusError::invalid(id, "humans.kind", "expected a human translation"));
            }
            if h.doc_id != *id || self.machine.doc_id != *id {
                return Err(CorpusError::invalid(id, "doc_id", "translation belongs to another document"));
            }
            if !seen.insert(h.translator_id.as_str()) {
                return Err(CorpusError::invalid(
                    id,
                    "humans.translator_id",
                    format!("duplicate translator `{}`", h.translator_id),
                ));
            }
        }
        Ok(())
    }
}

/// A human reference paragraph and who wrote it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reference {
    pub translator_id: String,
    pub text: String,
}

/// One source paragraph with its machine translation and the human
/// paragraphs aligned to it.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRecord {
    pub doc_id: String,
    pub source_index: usize,
    pub src: String,
    pub gtr: String,
    pub hums: Vec<Reference>,
    /// Sentence counts of the English paragraphs, machine first, then `hums` in order.
    pub sentence_counts: Vec<usize>,
    pub extras: Extras,
}

impl AlignmentRecord {
    pub fn n(&self) -> usize {
        self.hums.len()
    }

    pub fn hum_texts(&self) -> Vec<&str> {
        self.hums.iter().map(|h| h.text.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Seeds and configuration fingerprint recorded with every corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(flatten)]
    pub extras: Extras,
}

/// Per-book block of the corpus file.
#[derive(Clone, Debug, PartialEq)]
pub struct Book {
    pub doc_id: String,
    pub language: String,
    pub title: String,
    pub author: String,
    pub pub_year: i32,
    pub source_paras: Vec<String>,
    pub gt_paras: Vec<String>,
    pub translators: BTreeMap<String, Vec<String>>,
    pub records: Vec<AlignmentRecord>,
    pub extras: Extras,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub books: Vec<Book>,
    pub splits: BTreeMap<String, Split>,
    pub manifest: Manifest,
    pub extras: Extras,
}

impl Corpus {
    pub fn records(&self) -> impl Iterator<Item = &AlignmentRecord> {
        self.books.iter().flat_map(|b| b.records.iter())
    }

    pub fn book(&self, doc_id: &str) -> Option<&Book> {
        self.books.iter().find(|b| b.doc_id == doc_id)
    }

    pub fn split_of(&self, doc_id: &str) -> Option<Split> {
        self.splits.get(doc_id).copied()
    }

    /// Records of every book assigned to `split`, in file order.
    pub fn records_in(&self, split: Split) -> Vec<&AlignmentRecord> {
        self.books
            .iter()
            .filter(|b| self.split_of(&b.doc_id) == Some(split))
            .flat_map(|b| b.records.iter())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Serialize, Deserialize)]
struct CorpusWire {
    books: Vec<BookWire>,
    #[serde(default)]
    splits: BTreeMap<String, Vec<String>>,
    manifest: Manifest,
    #[serde(flatten)]
    extras: Extras,
}

#[derive(Serialize, Deserialize)]
struct BookWire {
    doc_id: String,
    language: String,
    title: String,
    author: String,
    pub_year: i32,
    source_paras: Vec<String>,
    gt_paras: Vec<String>,
    translators: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    records: Vec<RecordWire>,
    #[serde(flatten)]
    extras: Extras,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    source_index: usize,
    src: String,
    gtr: String,
    hums: Vec<Reference>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sentence_counts: Vec<usize>,
    #[serde(flatten)]
    extras: Extras,
}

/// Pipeline stage a record is validated against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordStage {
    /// A single human paragraph per record is acceptable.
    Pair,
    /// After merging references: at least two humans per record.
    Merged,
}

/// A violated record invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    EmptySource,
    EmptyMachine,
    EmptyHuman { translator_id: String },
    NoReferences,
    FewerThanTwoReferences { n: usize },
    DuplicateProvenance { translator_id: String },
    SourceIndexOutOfBounds { index: usize, len: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::EmptySource => write!(f, "empty source paragraph"),
            Diagnostic::EmptyMachine => write!(f, "empty machine paragraph"),
            Diagnostic::EmptyHuman { translator_id } => {
                write!(f, "empty human paragraph from `{translator_id}`")
            }
            Diagnostic::NoReferences => write!(f, "no human references"),
            Diagnostic::FewerThanTwoReferences { n } => {
                write!(f, "fewer than two human references (n={n})")
            }
            Diagnostic::DuplicateProvenance { translator_id } => {
                write!(f, "duplicate reference provenance `{translator_id}`")
            }
            Diagnostic::SourceIndexOutOfBounds { index, len } => {
                write!(f, "source_index {index} outside document of {len} paragraphs")
            }
        }
    }
}

/// Lists every invariant `record` violates; empty when well-formed.
pub fn validate_record(record: &AlignmentRecord, stage: RecordStage) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if record.src.trim().is_empty() {
        out.push(Diagnostic::EmptySource);
    }
    if record.gtr.trim().is_empty() {
        out.push(Diagnostic::EmptyMachine);
    }
    match (record.hums.len(), stage) {
        (0, _) => out.push(Diagnostic::NoReferences),
        (1, RecordStage::Merged) => out.push(Diagnostic::FewerThanTwoReferences { n: 1 }),
        _ => {}
    }
    let mut seen = BTreeSet::new();
    for h in &record.hums {
        if h.text.trim().is_empty() {
            out.push(Diagnostic::EmptyHuman {
                translator_id: h.translator_id.clone(),
            });
        }
        if !seen.insert(h.translator_id.as_str()) {
            out.push(Diagnostic::DuplicateProvenance {
                translator_id: h.translator_id.clone(),
            });
        }
    }
    out
}

fn syntax_error(bytes: &[u8], err: serde_json::Error) -> CorpusError {
    let (line, column) = (err.line(), err.column());
    let mut offset = 0;
    if line > 0 {
        let mut current = 1;
        for (i, b) in bytes.iter().enumerate() {
            if current == line {
                offset = i;
                break;
            }
            if *b == b'\n' {
                current += 1;
            }
        }
        offset = (offset + column.saturating_sub(1)).min(bytes.len());
    }
    CorpusError::Syntax {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}

/// Parses and validates a corpus with the default language set.
pub fn parse_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    parse_corpus_with(bytes, &LanguageSet::default())
}

pub fn parse_corpus_with(bytes: &[u8], languages: &LanguageSet) -> Result<Corpus, CorpusError> {
    let wire: CorpusWire = serde_json::from_slice(bytes).map_err(|e| syntax_error(bytes, e))?;
    let mut splits = BTreeMap::new();
    for (name, docs) in &wire.splits {
        let split = match name.as_str() {
            "train" => Split::Train,
            "valid" => Split::Valid,
            "test" => Split::Test,
            other => {
                return Err(CorpusError::invalid(
                    "",
                    "splits",
                    format!("unknown split `{other}`"),
                ))
            }
        };
        for doc in docs {
            if let Some(prev) = splits.insert(doc.clone(), split) {
                return Err(CorpusError::invalid(
                    doc,
                    "splits",
                    format!("document assigned to both `{prev}` and `{split}`; each text belongs to exactly one split"),
                ));
            }
        }
    }
    let books = wire
        .books
        .into_iter()
        .map(|b| {
            let doc_id = b.doc_id;
            let records = b
                .records
                .into_iter()
                .map(|r| AlignmentRecord {
                    doc_id: doc_id.clone(),
                    source_index: r.source_index,
                    src: r.src,
                    gtr: r.gtr,
                    hums: r.hums,
                    sentence_counts: r.sentence_counts,
                    extras: r.extras,
                })
                .collect();
            Book {
                doc_id,
                language: b.language,
                title: b.title,
                author: b.author,
                pub_year: b.pub_year,
                source_paras: b.source_paras,
                gt_paras: b.gt_paras,
                translators: b.translators,
                records,
                extras: b.extras,
            }
        })
        .collect();
    let corpus = Corpus {
        books,
        splits,
        manifest: wire.manifest,
        extras: wire.extras,
    };
    validate_corpus(&corpus, languages)?;
    Ok(corpus)
}

/// Checks every corpus-level invariant; records are checked at the merged stage.
pub fn validate_corpus(corpus: &Corpus, languages: &LanguageSet) -> Result<(), CorpusError> {
    let mut ids = BTreeSet::new();
    for book in &corpus.books {
        let id = book.doc_id.as_str();
        if !ids.insert(id) {
            return Err(CorpusError::invalid(id, "doc_id", "duplicate document id"));
        }
        if !languages.contains(&book.language) {
            return Err(CorpusError::invalid(
                id,
                "language",
                format!("unsupported language code `{}`", book.language),
            ));
        }
        if book.source_paras.is_empty() {
            return Err(CorpusError::invalid(id, "source_paras", "no source paragraphs"));
        }
        if book.gt_paras.len() != book.source_paras.len() {
            return Err(CorpusError::invalid(
                id,
                "gt_paras",
                format!(
                    "{} machine paragraphs for {} source paragraphs",
                    book.gt_paras.len(),
                    book.source_paras.len()
                ),
            ));
        }
        for rec in &book.records {
            let field = format!("records[{}]", rec.source_index);
            if rec.doc_id != book.doc_id {
                return Err(CorpusError::invalid(id, &field, "record belongs to another document"));
            }
            if rec.source_index >= book.source_paras.len() {
                let d = Diagnostic::SourceIndexOutOfBounds {
                    index: rec.source_index,
                    len: book.source_paras.len(),
                };
                return Err(CorpusError::invalid(id, &field, d.to_string()));
            }
            if let Some(d) = validate_record(rec, RecordStage::Merged).first() {
                return Err(CorpusError::invalid(id, &field, d.to_string()));
            }
        }
        if !corpus.splits.is_empty() && !corpus.splits.contains_key(id) {
            return Err(CorpusError::invalid(id, "splits", "document has no split"));
        }
    }
    for doc in corpus.splits.keys() {
        if !ids.contains(doc.as_str()) {
            return Err(CorpusError::invalid(doc, "splits", "split names an unknown document"));
        }
    }
    Ok(())
}

/// Byte-stable JSON encoding: sorted keys, two-space indentation, trailing newline.
pub fn serialize_corpus(corpus: &Corpus) -> Vec<u8> {
    let mut splits: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (doc, split) in &corpus.splits {
        splits.entry(split.as_str().to_string()).or_default().push(doc.clone());
    }
    let wire = CorpusWire {
        books: corpus
            .books
            .iter()
            .map(|b| BookWire {
                doc_id: b.doc_id.clone(),
                language: b.language.clone(),
                title: b.title.clone(),
                author: b.author.clone(),
                pub_year: b.pub_year,
                source_paras: b.source_paras.clone(),
                gt_paras: b.gt_paras.clone(),
                translators: b.translators.clone(),
                records: b
                    .records
                    .iter()
                    .map(|r| RecordWire {
                        source_index: r.source_index,
                        src: r.src.clone(),
                        gtr: r.gtr.clone(),
                        hums: r.hums.clone(),
                        sentence_counts: r.sentence_counts.clone(),
                        extras: r.extras.clone(),
                    })
                    .collect(),
                extras: b.extras.clone(),
            })
            .collect(),
        splits,
        manifest: corpus.manifest.clone(),
        extras: corpus.extras.clone(),
    };
    to_canonical_json(&wire)
}

/// Serializes through [`Value`] so object keys come out sorted.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("serializable value");
    let mut out = serde_json::to_vec_pretty(&value).expect("value serializes");
    out.push(b'\n');
    out
}

//! Discard rules for aligned pairs, reference merging, the per-translator
//! sampling cap, shuffling and document-level split assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use rand::seq::{index, SliceRandom};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::PairAlignment;
use crate::corpus::{AlignmentRecord, Corpus, Extras, Reference, Split};
use crate::metrics::{bleu, BleuConfig};
use crate::seed::derive_rng;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("need at least 3 documents to fill train/valid/test, got {0}")]
    TooFewDocuments(usize),
    #[error("{doc_id}: source_index {index} outside document of {len} paragraphs")]
    SourceIndex { doc_id: String, index: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub short_token_min: usize,
    pub short_char_min: usize,
    pub length_ratio_max: f64,
    pub bleu_floor: f64,
    pub sample_cap: f64,
    pub seed: u64,
    /// Train, valid, test.
    pub split_ratios: (f64, f64, f64),
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            short_token_min: 4,
            short_char_min: 20,
            length_ratio_max: 3.0,
            bleu_floor: 5.0,
            sample_cap: 0.5,
            seed: 0,
            split_ratios: (0.8, 0.1, 0.1),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let (a, b, c) = self.split_ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(FilterError::Config(format!(
                "split ratios must be positive and sum to 1, got {a}/{b}/{c}"
            )));
        }
        if !(self.sample_cap > 0.0 && self.sample_cap <= 1.0) {
            return Err(FilterError::Config(format!(
                "sample_cap must lie in (0, 1], got {}",
                self.sample_cap
            )));
        }
        if self.length_ratio_max.is_nan() || self.length_ratio_max < 1.0 || !self.bleu_floor.is_finite() {
            return Err(FilterError::Config("length_ratio_max >= 1 and a finite bleu_floor required".into()));
        }
        Ok(())
    }

    fn ratio(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.split_ratios.0,
            Split::Valid => self.split_ratios.1,
            Split::Test => self.split_ratios.2,
        }
    }
}

pub fn is_short_paragraph(text: &str, cfg: &FilterConfig) -> bool {
    let text = text.trim();
    text.split_whitespace().count() < cfg.short_token_min || text.chars().count() < cfg.short_char_min
}

fn roman() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new("^M{0,4}(CM|CD|D?C{0,3})(XC|XL|L?X{0,3})(IX|IV|V?I{0,3})$").expect("roman numeral grammar")
    })
}

fn trim_punct(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// The word "chapter" in any case, or an uppercase Roman numeral of at
/// least two letters standing alone. A paragraph that is nothing but
/// "I", "V" or "X" also counts.
pub fn is_heading(text: &str) -> bool {
    let whole = trim_punct(text.trim());
    if matches!(whole, "I" | "V" | "X") {
        return true;
    }
    text.split_whitespace().map(trim_punct).any(|t| {
        t.eq_ignore_ascii_case("chapter") || (t.len() >= 2 && roman().is_match(t))
    })
}

/// Why a pair, reference or record was left out.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscardReason {
    EmptyProjection,
    ShortHeading,
    LengthRatio { ratio: f64, max: f64 },
    BleuFloor { bleu: f64, floor: f64 },
    SamplingCap,
    InsufficientReferences { n: usize },
}

impl DiscardReason {
    pub fn code(&self) -> &'static str {
        match self {
            DiscardReason::EmptyProjection => "empty_projection",
            DiscardReason::ShortHeading => "short_heading",
            DiscardReason::LengthRatio { .. } => "length_ratio",
            DiscardReason::BleuFloor { .. } => "bleu_floor",
            DiscardReason::SamplingCap => "sampling_cap",
            DiscardReason::InsufficientReferences { .. } => "insufficient_references",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::EmptyProjection => write!(f, "empty projection"),
            DiscardReason::ShortHeading => write!(f, "short heading"),
            DiscardReason::LengthRatio { ratio, max } => write!(f, "length ratio {ratio:.2} > {max:.1}"),
            DiscardReason::BleuFloor { bleu, floor } => write!(f, "BLEU floor ({bleu:.2} < {floor})"),
            DiscardReason::SamplingCap => write!(f, "translator sampling cap"),
            DiscardReason::InsufficientReferences { n } => write!(f, "fewer than two references (n={n})"),
        }
    }
}

/// Sentence-level BLEU with the default configuration, 0 when undefined.
pub fn default_bleu(hyp: &str, refs: &[&str]) -> f64 {
    bleu(hyp, refs, &BleuConfig::default()).unwrap_or(0.0)
}

/// Applies the discard rules in order: empty projection, short heading,
/// length ratio, BLEU floor.
pub fn passes_pair_filters<F>(pair: &PairAlignment, cfg: &FilterConfig, bleu_fn: F) -> Result<(), DiscardReason>
where
    F: Fn(&str, &[&str]) -> f64,
{
    let (gtr, hum) = (pair.gtr_text.as_str(), pair.hum_text.as_str());
    if pair.empty || hum.trim().is_empty() {
        return Err(DiscardReason::EmptyProjection);
    }
    let short = is_short_paragraph(gtr, cfg) || is_short_paragraph(hum, cfg);
    if short && (is_heading(gtr) || is_heading(hum)) {
        return Err(DiscardReason::ShortHeading);
    }
    let (wg, wh) = (gtr.split_whitespace().count(), hum.split_whitespace().count());
    let ratio = if wg.min(wh) == 0 {
        f64::INFINITY
    } else {
        wg.max(wh) as f64 / wg.min(wh) as f64
    };
    if ratio > cfg.length_ratio_max {
        return Err(DiscardReason::LengthRatio {
            ratio,
            max: cfg.length_ratio_max,
        });
    }
    let score = bleu_fn(hum, &[gtr]);
    if score < cfg.bleu_floor {
        return Err(DiscardReason::BleuFloor {
            bleu: score,
            floor: cfg.bleu_floor,
        });
    }
    Ok(())
}

/// One line of the filter audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub doc_id: String,
    pub source_index: usize,
    pub translator_id: String,
    pub reason: String,
    pub detail: String,
}

impl AuditEntry {
    fn new(doc_id: &str, source_index: usize, translator_id: &str, reason: &DiscardReason) -> Self {
        AuditEntry {
            doc_id: doc_id.to_string(),
            source_index,
            translator_id: translator_id.to_string(),
            reason: reason.code().to_string(),
            detail: reason.to_string(),
        }
    }
}

pub fn audit_to_jsonl(entries: &[AuditEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("audit entry serializes") + "\n")
        .collect()
}

/// Splits pairs into survivors and audit entries for the rejected ones.
pub fn filter_pairs<F>(pairs: Vec<PairAlignment>, cfg: &FilterConfig, bleu_fn: F) -> (Vec<PairAlignment>, Vec<AuditEntry>)
where
    F: Fn(&str, &[&str]) -> f64,
{
    let mut kept = Vec::new();
    let mut audit = Vec::new();
    for p in pairs {
        match passes_pair_filters(&p, cfg, &bleu_fn) {
            Ok(()) => kept.push(p),
            Err(r) => audit.push(AuditEntry::new(&p.doc_id, p.source_index, &p.translator_id, &r)),
        }
    }
    (kept, audit)
}

/// Records built from one book plus everything left out on the way.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeOutcome {
    pub records: Vec<AlignmentRecord>,
    pub audit: Vec<AuditEntry>,
    /// Source paragraphs that had surviving pairs but fewer than two.
    pub dropped_records: usize,
}

fn insufficient(doc_id: &str, record: &AlignmentRecord, audit: &mut Vec<AuditEntry>) {
    let reason = DiscardReason::InsufficientReferences { n: record.n() };
    for h in &record.hums {
        audit.push(AuditEntry::new(doc_id, record.source_index, &h.translator_id, &reason));
    }
}

/// Groups surviving pairs of one book by source paragraph.
///
/// References are ordered by translator id and records by source index.
/// Paragraphs left with a single reference are dropped and audited.
pub fn merge_pairs(doc_id: &str, source_paras: &[String], pairs: Vec<PairAlignment>) -> Result<MergeOutcome, FilterError> {
    let mut groups: BTreeMap<usize, BTreeMap<String, PairAlignment>> = BTreeMap::new();
    for p in pairs {
        if p.source_index >= source_paras.len() {
            return Err(FilterError::SourceIndex {
                doc_id: doc_id.to_string(),
                index: p.source_index,
                len: source_paras.len(),
            });
        }
        groups.entry(p.source_index).or_default().insert(p.translator_id.clone(), p);
    }
    let mut out = MergeOutcome::default();
    for (idx, group) in groups {
        let gtr = group.values().next().map(|p| p.gtr_text.clone()).unwrap_or_default();
        let record = AlignmentRecord {
            doc_id: doc_id.to_string(),
            source_index: idx,
            src: source_paras[idx].clone(),
            gtr,
            sentence_counts: group.values().map(|p| p.hum_sentences).collect(),
            hums: group
                .into_values()
                .map(|p| Reference {
                    translator_id: p.translator_id,
                    text: p.hum_text,
                })
                .collect(),
            extras: Extras::new(),
        };
        if record.n() < 2 {
            out.dropped_records += 1;
            insufficient(doc_id, &record, &mut out.audit);
        } else {
            out.records.push(record);
        }
    }
    Ok(out)
}

fn remove_reference(record: &mut AlignmentRecord, translator_id: &str) {
    if let Some(k) = record.hums.iter().position(|h| h.translator_id == translator_id) {
        record.hums.remove(k);
        if k < record.sentence_counts.len() {
            record.sentence_counts.remove(k);
        }
    }
}

/// Enforces the per-translator cap, then shuffles the records of one book.
///
/// A translator present in `c` input records keeps at most
/// `floor(sample_cap * c)` of them; the excess references are dropped at
/// random, translators taken in id order. Records that fall below two
/// references are removed. The RNG stream depends only on the seed and
/// `doc_id`.
pub fn sample_and_shuffle(doc_id: &str, records: Vec<AlignmentRecord>, cfg: &FilterConfig) -> MergeOutcome {
    let mut rng = derive_rng(cfg.seed, doc_id);
    let mut records = records;
    let mut out = MergeOutcome::default();

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        for h in &r.hums {
            *counts.entry(h.translator_id.clone()).or_insert(0) += 1;
        }
    }
    for (tid, count) in &counts {
        let allowed = (cfg.sample_cap * *count as f64 + 1e-9).floor() as usize;
        let holders: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.hums.iter().any(|h| &h.translator_id == tid))
            .map(|(k, _)| k)
            .collect();
        if holders.len() <= allowed {
            continue;
        }
        let mut drop: Vec<usize> = index::sample(&mut rng, holders.len(), holders.len() - allowed)
            .into_iter()
            .map(|k| holders[k])
            .collect();
        drop.sort_unstable();
        for k in drop {
            remove_reference(&mut records[k], tid);
            out.audit.push(AuditEntry::new(doc_id, records[k].source_index, tid, &DiscardReason::SamplingCap));
        }
    }
    for r in records {
        if r.n() < 2 {
            out.dropped_records += 1;
            insufficient(doc_id, &r, &mut out.audit);
        } else {
            out.records.push(r);
        }
    }
    out.records.shuffle(&mut rng);
    out
}

/// Filters, merges and samples the pairs of one book.
pub fn process_book<F>(
    doc_id: &str,
    source_paras: &[String],
    pairs: Vec<PairAlignment>,
    cfg: &FilterConfig,
    bleu_fn: F,
) -> Result<MergeOutcome, FilterError>
where
    F: Fn(&str, &[&str]) -> f64,
{
    let (kept, mut audit) = filter_pairs(pairs, cfg, bleu_fn);
    let merged = merge_pairs(doc_id, source_paras, kept)?;
    audit.extend(merged.audit);
    let sampled = sample_and_shuffle(doc_id, merged.records, cfg);
    audit.extend(sampled.audit);
    Ok(MergeOutcome {
        records: sampled.records,
        audit,
        dropped_records: merged.dropped_records + sampled.dropped_records,
    })
}

/// Greedy whole-document split assignment.
///
/// Documents go in descending size order (ties by id) to the split with the
/// largest shortfall `target * total - assigned`, ties resolved toward
/// train, then valid, then test. A split left empty takes the smallest
/// document of the split holding the most documents.
pub fn split_assignment(sizes: &[(String, usize)], cfg: &FilterConfig) -> Result<BTreeMap<String, Split>, FilterError> {
    cfg.validate()?;
    let distinct: BTreeSet<&str> = sizes.iter().map(|(d, _)| d.as_str()).collect();
    if distinct.len() < 3 || distinct.len() != sizes.len() {
        return Err(FilterError::TooFewDocuments(distinct.len()));
    }
    let mut order: Vec<&(String, usize)> = sizes.iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    let mut assigned: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
    let mut out = BTreeMap::new();
    for (doc, n) in order {
        let mut best = Split::Train;
        let mut best_deficit = f64::NEG_INFINITY;
        for s in Split::ALL {
            let deficit = cfg.ratio(s) * total as f64 - assigned[&s] as f64;
            if deficit > best_deficit + 1e-9 {
                best = s;
                best_deficit = deficit;
            }
        }
        *assigned.get_mut(&best).expect("split") += n;
        out.insert(doc.clone(), best);
    }
    let size_of: BTreeMap<&str, usize> = sizes.iter().map(|(d, n)| (d.as_str(), *n)).collect();
    for empty in Split::ALL {
        if out.values().any(|s| *s == empty) {
            continue;
        }
        let mut members: BTreeMap<Split, Vec<&String>> = BTreeMap::new();
        for (d, s) in &out {
            members.entry(*s).or_default().push(d);
        }
        let donor = Split::ALL
            .into_iter()
            .filter(|s| members.get(s).is_some_and(|m| m.len() > 1))
            .max_by_key(|s| (members[s].len(), std::cmp::Reverse(*s)))
            .expect("three or more documents leave a donor");
        let moved = members[&donor]
            .iter()
            .min_by_key(|d| (size_of[d.as_str()], std::cmp::Reverse(d.as_str())))
            .map(|d| (*d).clone())
            .expect("donor has documents");
        out.insert(moved, empty);
    }
    Ok(out)
}

/// Returns `corpus` with every book assigned to exactly one split.
pub fn assign_splits(mut corpus: Corpus, cfg: &FilterConfig) -> Result<Corpus, FilterError> {
    let sizes: Vec<(String, usize)> = corpus.books.iter().map(|b| (b.doc_id.clone(), b.records.len())).collect();
    corpus.splits = split_assignment(&sizes, cfg)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FilterConfig {
        FilterConfig::default()
    }

    fn pair(tid: &str, idx: usize, gtr: &str, hum: &str) -> PairAlignment {
        PairAlignment {
            doc_id: "d".into(),
            translator_id: tid.into(),
            source_index: idx,
            gtr_text: gtr.into(),
            hum_text: hum.into(),
            hum_sentences: 1,
            gap_attached: 0,
            empty: hum.is_empty(),
        }
    }

    fn record(idx: usize, tids: &[&str]) -> AlignmentRecord {
        AlignmentRecord {
            doc_id: "d".into(),
            source_index: idx,
            src: format!("src {idx}"),
            gtr: format!("gtr {idx}"),
            hums: tids
                .iter()
                .map(|t| Reference {
                    translator_id: t.to_string(),
                    text: format!("{t} {idx}"),
                })
                .collect(),
            sentence_counts: vec![1; tids.len()],
            extras: Extras::new(),
        }
    }

    #[test]
    fn short_paragraphs() {
        assert!(is_short_paragraph("CHAPTER II", &cfg()));
        assert!(!is_short_paragraph("This paragraph clearly has enough words here.", &cfg()));
        assert!(is_short_paragraph("one two three four", &cfg()));
        assert!(is_short_paragraph("Supercalifragilistic expialidocious", &cfg()));
    }

    #[test]
    fn heading_examples() {
        assert!(is_heading("Chapter the First"));
        assert!(is_heading("XIV"));
        assert!(!is_heading("I saw him."));
    }

    #[test]
    fn heading_rule_on_labeled_lines() {
        let labeled: [(&str, bool); 30] = [
            ("CHAPTER I", true),
            ("Chapter the First", true),
            ("XIV", true),
            ("II.", true),
            ("BOOK III", true),
            ("I", true),
            ("V.", true),
            ("chapter 12", true),
            ("CHAPTER XXIII. THE BALL", true),
            ("PART II", true),
            ("Chapter One: Arrival", true),
            ("XL", true),
            ("III", true),
            ("LXXIV.", true),
            ("The end of chapter four.", true),
            ("I saw him.", false),
            ("I, too, was there.", false),
            ("Liv went to the mix.", false),
            ("It was a civil affair.", false),
            ("I did not know what to say to her.", false),
            ("The mill stood idle all winter.", false),
            ("Vivid colors filled the room.", false),
            ("He gave a dim smile.", false),
            ("\"Yes,\" said I.", false),
            ("A", false),
            ("OK", false),
            ("Mix well and serve.", false),
            ("They spoke of Louis and of Xavier.", false),
            ("IT WAS THE BEST OF TIMES.", false),
            ("Ivan Ilyich is dead.", false),
        ];
        let wrong: Vec<&str> = labeled.iter().filter(|(t, l)| is_heading(t) != *l).map(|(t, _)| *t).collect();
        assert!(wrong.is_empty(), "{wrong:?}");
    }

    #[test]
    fn length_ratio_rule() {
        let hum = vec!["word"; 30].join(" ");
        let gtr = vec!["word"; 100].join(" ");
        let err = passes_pair_filters(&pair("a", 0, &gtr, &hum), &cfg(), |_: &str, _: &[&str]| 100.0).unwrap_err();
        assert_eq!(err.to_string(), "length ratio 3.33 > 3.0");
    }

    #[test]
    fn identity_passes() {
        let t = "The old man looked at the sea for a long while.";
        assert_eq!(passes_pair_filters(&pair("a", 0, t, t), &cfg(), default_bleu), Ok(()));
    }

    #[test]
    fn bleu_floor_rule() {
        // No shared n-grams of any order: 4-gram precisions all eps-smoothed.
        let gtr = "alpha beta gamma delta epsilon zeta eta theta";
        let hum = "one two three four five six seven eight";
        assert!(default_bleu(hum, &[gtr]) < 5.0);
        let err = passes_pair_filters(&pair("a", 0, gtr, hum), &cfg(), default_bleu).unwrap_err();
        assert_eq!(err.code(), "bleu_floor");
    }

    #[test]
    fn empty_projection_first() {
        let err = passes_pair_filters(&pair("a", 0, "CHAPTER II", ""), &cfg(), default_bleu).unwrap_err();
        assert_eq!(err, DiscardReason::EmptyProjection);
        let err = passes_pair_filters(&pair("a", 0, "CHAPTER II", "Chapter Two"), &cfg(), default_bleu).unwrap_err();
        assert_eq!(err, DiscardReason::ShortHeading);
    }

    #[test]
    fn short_without_heading_is_kept_by_that_rule() {
        let p = pair("a", 0, "He laughed.", "He laughed.");
        assert_eq!(passes_pair_filters(&p, &cfg(), default_bleu), Ok(()));
    }

    #[test]
    fn merging() {
        let src: Vec<String> = (0..10).map(|k| format!("s{k}")).collect();
        let t = "some text";
        let pairs = vec![
            pair("c", 7, t, "c7"),
            pair("a", 7, t, "a7"),
            pair("b", 7, t, "b7"),
            pair("a", 3, t, "a3"),
        ];
        let out = merge_pairs("d", &src, pairs).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].n(), 3);
        assert_eq!(out.records[0].hum_texts(), vec!["a7", "b7", "c7"]);
        assert_eq!(out.records[0].src, "s7");
        assert_eq!(out.dropped_records, 1);
        assert_eq!(out.audit[0].reason, "insufficient_references");
        assert!(merge_pairs("d", &src, vec![]).unwrap().records.is_empty());
        assert!(merge_pairs("d", &src, vec![pair("a", 10, t, "x")]).is_err());
    }

    #[test]
    fn cap_limits_each_translator() {
        let recs: Vec<AlignmentRecord> = (0..10).map(|k| record(k, &["a", "b", "c", "d"])).collect();
        let out = sample_and_shuffle("d", recs, &cfg());
        for t in ["a", "b", "c", "d"] {
            let seen = out.records.iter().filter(|r| r.hums.iter().any(|h| h.translator_id == t)).count();
            assert!(seen <= 5, "{t}: {seen}");
        }
        assert!(out.records.iter().all(|r| r.n() >= 2));
        assert!(out.records.iter().all(|r| r.sentence_counts.len() == r.n()));
    }

    #[test]
    fn cap_one_is_a_permutation() {
        let recs: Vec<AlignmentRecord> = (0..100).map(|k| record(k, &["a", "b"])).collect();
        let c = FilterConfig { sample_cap: 1.0, seed: 3, ..cfg() };
        let out = sample_and_shuffle("d", recs.clone(), &c);
        assert!(out.audit.is_empty());
        let mut sorted = out.records.clone();
        sorted.sort_by_key(|r| r.source_index);
        assert_eq!(sorted, recs);
        assert_ne!(out.records, recs);

        let again = sample_and_shuffle("d", recs.clone(), &c);
        assert_eq!(again.records, out.records);
        let other = sample_and_shuffle("d", recs, &FilterConfig { seed: 4, ..c });
        assert_ne!(other.records, out.records);
    }

    fn sizes(v: &[usize]) -> Vec<(String, usize)> {
        v.iter().enumerate().map(|(k, n)| (format!("doc{k:02}"), *n)).collect()
    }

    fn tally(a: &BTreeMap<String, Split>) -> (usize, usize, usize) {
        let c = |s| a.values().filter(|x| **x == s).count();
        (c(Split::Train), c(Split::Valid), c(Split::Test))
    }

    #[test]
    fn split_examples() {
        let a = split_assignment(&sizes(&[10; 10]), &cfg()).unwrap();
        assert_eq!(tally(&a), (8, 1, 1));

        let a = split_assignment(&sizes(&[50, 30, 10, 10]), &cfg()).unwrap();
        assert_eq!(a["doc00"], Split::Train);
        assert_eq!(a["doc01"], Split::Train);
        assert_eq!(a["doc02"], Split::Valid);
        assert_eq!(a["doc03"], Split::Test);

        assert_eq!(split_assignment(&sizes(&[5, 5]), &cfg()), Err(FilterError::TooFewDocuments(2)));
    }

    #[test]
    fn splits_never_empty() {
        // Greedy alone would put everything after the giant in valid/test.
        let a = split_assignment(&sizes(&[100, 1, 1]), &cfg()).unwrap();
        assert_eq!(tally(&a), (1, 1, 1));
        let a = split_assignment(&sizes(&[0, 0, 0]), &cfg()).unwrap();
        assert_eq!(tally(&a), (1, 1, 1));
    }

    #[test]
    fn split_fractions_near_targets() {
        let v: Vec<usize> = (0..20).map(|k| 20 + (k * 37) % 23).collect();
        let a = split_assignment(&sizes(&v), &cfg()).unwrap();
        let total: usize = v.iter().sum();
        for (s, target) in [(Split::Train, 0.8), (Split::Valid, 0.1), (Split::Test, 0.1)] {
            let got: usize = sizes(&v).iter().filter(|(d, _)| a[d] == s).map(|(_, n)| n).sum();
            let frac = got as f64 / total as f64;
            assert!((frac - target).abs() <= 0.05, "{s}: {frac}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(FilterConfig { sample_cap: 0.0, ..cfg() }.validate().is_err());
        assert!(FilterConfig { split_ratios: (0.8, 0.1, 0.2), ..cfg() }.validate().is_err());
    }

    #[test]
    fn audit_lines() {
        let e = AuditEntry::new("d", 4, "a", &DiscardReason::EmptyProjection);
        assert_eq!(
            audit_to_jsonl(&[e]),
            "{\"doc_id\":\"d\",\"source_index\":4,\"translator_id\":\"a\",\"reason\":\"empty_projection\",\"detail\":\"empty projection\"}\n"
        );
    }
}

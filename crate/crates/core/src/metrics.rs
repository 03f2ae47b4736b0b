//! Paragraph-level BLEU, leave-one-out multi-reference aggregation, win
//! rates, and a subprocess adapter for external learned metrics.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AlignmentRecord, Corpus};
use crate::scalar::{order_independent_mean, Scalar};
use crate::tokens::TokenCounter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("hypothesis is empty")]
    EmptyHypothesis,
    #[error("reference set is empty")]
    NoReferences,
    #[error("aggregation undefined: record has {n} reference(s), at least two are needed")]
    AggregationUndefined { n: usize },
    #[error("metric `{metric}` returned a non-finite score")]
    NonFinite { metric: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Smoothing {
    None,
    /// Zero match counts become `epsilon / total`.
    Epsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// Whitespace split, then leading and trailing punctuation split off one
    /// character at a time.
    WhitespacePunct,
    Whitespace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuConfig {
    pub max_ngram_order: usize,
    pub case_sensitive: bool,
    pub smoothing: Smoothing,
    pub tokenization: Tokenization,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_ngram_order: 4,
            case_sensitive: true,
            smoothing: Smoothing::Epsilon(0.1),
            tokenization: Tokenization::WhitespacePunct,
        }
    }
}

pub fn tokenize(text: &str, cfg: &BleuConfig) -> Vec<String> {
    let text = if cfg.case_sensitive {
        text.to_string()
    } else {
        text.to_lowercase()
    };
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if cfg.tokenization == Tokenization::Whitespace {
            out.push(word.to_string());
            continue;
        }
        let chars: Vec<char> = word.chars().collect();
        let lead = chars.iter().take_while(|c| !c.is_alphanumeric()).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| !c.is_alphanumeric()).count();
        out.extend(chars[..lead].iter().map(|c| c.to_string()));
        out.push(chars[lead..chars.len() - trail].iter().collect());
        out.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    out
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence-level BLEU of `hypothesis` against `references`, scaled to [0, 100].
///
/// Modified n-gram precisions clip each hypothesis n-gram count at its
/// maximum count in any single reference. The brevity penalty uses the
/// reference length closest to the hypothesis length, shorter on ties. With
/// epsilon smoothing a zero match count becomes `epsilon / total`; an order
/// for which the hypothesis has no n-grams at all contributes `epsilon`.
pub fn bleu(hypothesis: &str, references: &[&str], cfg: &BleuConfig) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let hyp = tokenize(hypothesis, cfg);
    if hyp.is_empty() {
        return Err(MetricError::EmptyHypothesis);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r, cfg)).collect();
    let max_order = cfg.max_ngram_order.max(1);

    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let hyp_counts = ngram_counts(&hyp, n);
        let total: usize = hyp_counts.values().sum();
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = match (matched, cfg.smoothing) {
            (0, Smoothing::None) => return Ok(0.0),
            (0, Smoothing::Epsilon(eps)) if total == 0 => eps,
            (0, Smoothing::Epsilon(eps)) => eps / total as f64,
            (m, _) => m as f64 / total as f64,
        };
        log_sum += precision.ln();
    }
    let geo = (log_sum / max_order as f64).exp();

    let c = hyp.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok((100.0 * bp * geo).clamp(0.0, 100.0))
}

/// Scores a hypothesis against a set of references.
pub trait MultiRefMetric<T: Scalar = f64>: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, hypothesis: &str, references: &[&str]) -> Result<T, MetricError>;
}

/// Scores a hypothesis against one reference.
pub trait PairMetric<T: Scalar = f64>: Send + Sync {
    fn name(&self) -> &str;
    fn score_pair(&self, hypothesis: &str, reference: &str) -> Result<T, MetricError>;
}

#[derive(Clone, Debug, Default)]
pub struct Bleu {
    pub cfg: BleuConfig,
}

impl Bleu {
    pub fn new(cfg: BleuConfig) -> Self {
        Bleu { cfg }
    }
}

impl MultiRefMetric<f64> for Bleu {
    fn name(&self) -> &str {
        "bleu"
    }

    fn score(&self, hypothesis: &str, references: &[&str]) -> Result<f64, MetricError> {
        bleu(hypothesis, references, &self.cfg)
    }
}

/// Adapts a closure into a metric.
pub struct FnMetric<F> {
    pub name: String,
    pub f: F,
}

impl<T, F> MultiRefMetric<T> for FnMetric<F>
where
    T: Scalar,
    F: Fn(&str, &[&str]) -> Result<T, MetricError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, hypothesis: &str, references: &[&str]) -> Result<T, MetricError> {
        (self.f)(hypothesis, references)
    }
}

impl<T, F> PairMetric<T> for FnMetric<F>
where
    T: Scalar,
    F: Fn(&str, &[&str]) -> Result<T, MetricError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn score_pair(&self, hypothesis: &str, reference: &str) -> Result<T, MetricError> {
        (self.f)(hypothesis, &[reference])
    }
}

/// Lifts a single-reference metric to reference sets by averaging over the set.
pub struct PairwiseAverage<M>(pub M);

impl<T: Scalar, M: PairMetric<T>> MultiRefMetric<T> for PairwiseAverage<M> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn score(&self, hypothesis: &str, references: &[&str]) -> Result<T, MetricError> {
        let scores = references
            .iter()
            .map(|r| self.0.score_pair(hypothesis, r))
            .collect::<Result<Vec<_>, _>>()?;
        order_independent_mean(&scores).ok_or(MetricError::NoReferences)
    }
}

/// Human and candidate scores of one record over the same reference sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore<T = f64> {
    pub s_hum: T,
    pub s_cand: T,
    pub n: usize,
    pub metric_name: String,
}

/// Leave-one-out aggregation.
///
/// For each reference i, the set R_i is every other reference. Then
/// `s_hum = mean_i M(HUM_i, R_i)` and `s_cand = mean_i M(candidate, R_i)`.
/// Both means are order independent, so permuting `hums` leaves the result
/// unchanged bit for bit.
pub fn aggregate<T: Scalar, M: MultiRefMetric<T> + ?Sized>(
    hums: &[&str],
    candidate: &str,
    metric: &M,
) -> Result<AggregateScore<T>, MetricError> {
    let n = hums.len();
    if n < 2 {
        return Err(MetricError::AggregationUndefined { n });
    }
    let mut hum_terms = Vec::with_capacity(n);
    let mut cand_terms = Vec::with_capacity(n);
    for i in 0..n {
        let rest: Vec<&str> = hums
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, h)| *h)
            .collect();
        let h = metric.score(hums[i], &rest)?;
        let c = metric.score(candidate, &rest)?;
        if !h.is_finite_value() || !c.is_finite_value() {
            return Err(MetricError::NonFinite {
                metric: metric.name().to_string(),
            });
        }
        hum_terms.push(h);
        cand_terms.push(c);
    }
    Ok(AggregateScore {
        s_hum: order_independent_mean(&hum_terms).expect("n >= 2"),
        s_cand: order_independent_mean(&cand_terms).expect("n >= 2"),
        n,
        metric_name: metric.name().to_string(),
    })
}

/// [`aggregate`] with the record's machine translation as the candidate.
pub fn aggregate_scores<T: Scalar, M: MultiRefMetric<T> + ?Sized>(
    record: &AlignmentRecord,
    metric: &M,
) -> Result<AggregateScore<T>, MetricError> {
    aggregate(&record.hum_texts(), &record.gtr, metric)
}

/// [`aggregate_scores`] for a single-reference metric, averaging pairwise
/// scores inside each leave-one-out set.
pub fn pairwise_average<T: Scalar, M: PairMetric<T>>(
    record: &AlignmentRecord,
    metric: M,
) -> Result<AggregateScore<T>, MetricError> {
    aggregate_scores(record, &PairwiseAverage(metric))
}

/// Aggregate scores of one record, keyed for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub doc_id: String,
    pub source_index: usize,
    pub language: String,
    pub s_hum: f64,
    pub s_cand: f64,
}

/// Scores every record of `corpus` in parallel; output follows corpus order.
pub fn score_corpus<M: MultiRefMetric<f64> + ?Sized>(
    corpus: &Corpus,
    metric: &M,
) -> Result<Vec<ScoredRecord>, MetricError> {
    let items: Vec<(&str, &AlignmentRecord)> = corpus
        .books
        .iter()
        .flat_map(|b| b.records.iter().map(move |r| (b.language.as_str(), r)))
        .collect();
    items
        .par_iter()
        .map(|(lang, rec)| {
            let s = aggregate_scores(rec, metric)?;
            Ok(ScoredRecord {
                doc_id: rec.doc_id.clone(),
                source_index: rec.source_index,
                language: lang.to_string(),
                s_hum: s.s_hum,
                s_cand: s.s_cand,
            })
        })
        .collect()
}

/// One row of the win-rate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub language: String,
    pub records: usize,
    pub s_hum: f64,
    pub s_cand: f64,
    pub win_hum: usize,
    pub win_cand: usize,
    pub ties: usize,
    /// Percentage of non-tied records won by the human side; `None` when all tie.
    pub win_hum_pct: Option<f64>,
    pub win_cand_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub metric: String,
    /// Per-language rows sorted by code, then the overall row `All`.
    pub rows: Vec<ReportRow>,
}

pub const OVERALL_LABEL: &str = "All";

fn summarize(language: &str, rows: &[&ScoredRecord]) -> ReportRow {
    let n = rows.len();
    let (mut sum_h, mut sum_c) = (0.0, 0.0);
    let (mut wh, mut wc, mut ties) = (0, 0, 0);
    for r in rows {
        sum_h += r.s_hum;
        sum_c += r.s_cand;
        if r.s_hum > r.s_cand {
            wh += 1;
        } else if r.s_cand > r.s_hum {
            wc += 1;
        } else {
            ties += 1;
        }
    }
    let decided = wh + wc;
    let pct = |w: usize| (decided > 0).then(|| 100.0 * w as f64 / decided as f64);
    ReportRow {
        language: language.to_string(),
        records: n,
        s_hum: if n > 0 { sum_h / n as f64 } else { f64::NAN },
        s_cand: if n > 0 { sum_c / n as f64 } else { f64::NAN },
        win_hum: wh,
        win_cand: wc,
        ties,
        win_hum_pct: pct(wh),
        win_cand_pct: pct(wc),
    }
}

/// Per-language and overall means and win counts; ties are excluded from
/// the win percentages.
pub fn report_from_scores(metric: &str, scores: &[ScoredRecord]) -> CorpusReport {
    let mut by_lang: BTreeMap<&str, Vec<&ScoredRecord>> = BTreeMap::new();
    for s in scores {
        by_lang.entry(s.language.as_str()).or_default().push(s);
    }
    let mut rows: Vec<ReportRow> = by_lang.iter().map(|(l, rs)| summarize(l, rs)).collect();
    let all: Vec<&ScoredRecord> = scores.iter().collect();
    rows.push(summarize(OVERALL_LABEL, &all));
    CorpusReport {
        metric: metric.to_string(),
        rows,
    }
}

pub fn corpus_report<M: MultiRefMetric<f64> + ?Sized>(
    corpus: &Corpus,
    metric: &M,
) -> Result<CorpusReport, MetricError> {
    let scores = score_corpus(corpus, metric)?;
    Ok(report_from_scores(metric.name(), &scores))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"))
}

impl CorpusReport {
    pub const TSV_HEADER: &'static str =
        "language\tmetric\trecords\ts_hum\ts_cand\twin_hum\twin_cand\tties\twin_hum_pct\twin_cand_pct";

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::TSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\n",
                r.language,
                self.metric,
                r.records,
                r.s_hum,
                r.s_cand,
                r.win_hum,
                r.win_cand,
                r.ties,
                fmt_opt(r.win_hum_pct),
                fmt_opt(r.win_cand_pct)
            ));
        }
        out
    }

    pub fn row(&self, language: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.language == language)
    }
}

pub const SCORES_TSV_HEADER: &str = "doc_id\tsource_index\tlanguage\ts_hum\ts_cand";

/// Per-record scores, floats printed in shortest round-trip form.
pub fn scores_to_tsv(scores: &[ScoredRecord]) -> String {
    let mut out = format!("{SCORES_TSV_HEADER}\n");
    for s in scores {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.doc_id, s.source_index, s.language, s.s_hum, s.s_cand
        ));
    }
    out
}

pub fn scores_from_tsv(text: &str) -> Result<Vec<ScoredRecord>, MetricError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if k == 0 && line == SCORES_TSV_HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || MetricError::Other(format!("malformed scores line {}: `{line}`", k + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(ScoredRecord {
            doc_id: f[0].to_string(),
            source_index: f[1].parse().map_err(|_| bad())?,
            language: f[2].to_string(),
            s_hum: f[3].parse().map_err(|_| bad())?,
            s_cand: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// External metric adapter

/// Command speaking the adapter protocol: JSON lines `{"id","hyp","ref"}`
/// on stdin, JSON lines `{"id","score"}` on stdout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Pairs whose hypothesis plus reference exceed this many tokens are skipped.
    #[serde(default = "default_max_input_tokens")]
    pub max_input_tokens: usize,
}

fn default_max_input_tokens() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterScore {
    Score(f64),
    /// Over the input-length cap; excluded rather than truncated.
    Skipped { tokens: usize },
}

impl AdapterScore {
    pub fn value(&self) -> Option<f64> {
        match self {
            AdapterScore::Score(v) => Some(*v),
            AdapterScore::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
#[error("metric adapter failed: {message}")]
pub struct AdapterError {
    pub message: String,
    /// Results received before the failure, in input order; `None` where missing.
    pub partial: Vec<Option<AdapterScore>>,
}

impl AdapterError {
    pub fn is_partial(&self) -> bool {
        self.partial.iter().any(Option::is_some)
    }
}

#[derive(Serialize)]
struct AdapterRequest<'a> {
    id: usize,
    hyp: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
}

#[derive(Deserialize)]
struct AdapterResponse {
    id: usize,
    score: f64,
}

/// Scores `(hypothesis, reference)` pairs through the adapter subprocess.
/// Results come back in input order regardless of the adapter's output order.
pub fn external_metric(
    pairs: &[(String, String)],
    cfg: &AdapterConfig,
    counter: &dyn TokenCounter,
) -> Result<Vec<AdapterScore>, AdapterError> {
    let mut results: Vec<Option<AdapterScore>> = vec![None; pairs.len()];
    let mut pending = Vec::new();
    for (k, (hyp, r)) in pairs.iter().enumerate() {
        let tokens = counter.count(hyp) + counter.count(r);
        if tokens > cfg.max_input_tokens {
            results[k] = Some(AdapterScore::Skipped { tokens });
        } else {
            pending.push(k);
        }
    }
    if pending.is_empty() {
        return Ok(results.into_iter().map(|r| r.expect("all skipped")).collect());
    }

    let fail = |message: String, results: Vec<Option<AdapterScore>>| AdapterError {
        message,
        partial: results,
    };
    let mut child = match Command::new(&cfg.program)
        .args(&cfg.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return Err(fail(format!("cannot start `{}`: {e}", cfg.program), results)),
    };
    let mut payload = Vec::new();
    for &k in &pending {
        let req = AdapterRequest {
            id: k,
            hyp: &pairs[k].0,
            reference: &pairs[k].1,
        };
        serde_json::to_writer(&mut payload, &req).expect("request serializes");
        payload.push(b'\n');
    }
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || stdin.write_all(&payload));
    let stdout = child.stdout.take().expect("piped stdout");
    let mut problem = None;
    for line in BufReader::new(stdout).lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                problem = Some(e.to_string());
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AdapterResponse>(&line) {
            Ok(r) if r.id < results.len() && pending.binary_search(&r.id).is_ok() => {
                if !r.score.is_finite() {
                    problem = Some(format!("non-finite score for id {}", r.id));
                    break;
                }
                results[r.id] = Some(AdapterScore::Score(r.score));
            }
            Ok(r) => {
                problem = Some(format!("response for unknown id {}", r.id));
                break;
            }
            Err(e) => {
                problem = Some(format!("malformed response line `{line}`: {e}"));
                break;
            }
        }
    }
    let _ = writer.join();
    let status = child.wait();
    if let Some(p) = problem {
        let _ = child.kill();
        return Err(fail(p, results));
    }
    match status {
        Ok(s) if s.success() => {}
        Ok(s) => return Err(fail(format!("adapter exited with {s}"), results)),
        Err(e) => return Err(fail(e.to_string(), results)),
    }
    if let Some(k) = results.iter().position(Option::is_none) {
        return Err(fail(format!("no score returned for id {k}"), results));
    }
    Ok(results.into_iter().map(|r| r.expect("checked")).collect())
}

/// Records scored through an adapter, and how many were left out because
/// some pair exceeded the input cap.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterScoring {
    pub scores: Vec<ScoredRecord>,
    pub skipped_records: usize,
}

/// Leave-one-out aggregation with an external single-reference metric,
/// averaging pairwise scores inside each reference set. Every needed pair
/// goes to the adapter in one batch. A record with any over-cap pair is
/// skipped whole.
pub fn score_corpus_adapter(
    corpus: &Corpus,
    cfg: &AdapterConfig,
    counter: &dyn TokenCounter,
) -> Result<AdapterScoring, AdapterError> {
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut need = |h: &str, r: &str| {
        let key = (h.to_string(), r.to_string());
        if !index.contains_key(&key) {
            index.insert(key.clone(), pairs.len());
            pairs.push(key);
        }
    };
    for rec in corpus.records() {
        let hums = rec.hum_texts();
        for (i, hi) in hums.iter().enumerate() {
            for (k, hk) in hums.iter().enumerate() {
                if k != i {
                    need(hi, hk);
                    need(&rec.gtr, hk);
                }
            }
        }
    }
    let results = external_metric(&pairs, cfg, counter)?;
    let lookup = |h: &str, r: &str| -> Result<f64, MetricError> {
        let k = index[&(h.to_string(), r.to_string())];
        results[k]
            .value()
            .ok_or_else(|| MetricError::Other("pair over the adapter input cap".into()))
    };
    let metric = FnMetric {
        name: format!("adapter:{}", cfg.program),
        f: |h: &str, refs: &[&str]| -> Result<f64, MetricError> {
            let scores = refs.iter().map(|r| lookup(h, r)).collect::<Result<Vec<_>, _>>()?;
            order_independent_mean(&scores).ok_or(MetricError::NoReferences)
        },
    };
    let mut out = AdapterScoring {
        scores: Vec::new(),
        skipped_records: 0,
    };
    for book in &corpus.books {
        for rec in &book.records {
            match aggregate_scores(rec, &metric) {
                Ok(s) => out.scores.push(ScoredRecord {
                    doc_id: rec.doc_id.clone(),
                    source_index: rec.source_index,
                    language: book.language.clone(),
                    s_hum: s.s_hum,
                    s_cand: s.s_cand,
                }),
                Err(MetricError::Other(_)) => out.skipped_records += 1,
                Err(e) => {
                    return Err(AdapterError {
                        message: e.to_string(),
                        partial: Vec::new(),
                    })
                }
            }
        }
    }
    Ok(out)
}

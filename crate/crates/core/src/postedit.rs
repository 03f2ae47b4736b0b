//! Fine-tuning data in the prompt/completion format and post-editing
//! through a completion service.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::AlignmentRecord;
use crate::metrics::{aggregate_scores, MetricError, MultiRefMetric};
use crate::retry::{retry, Attempt, RetryPolicy};
use crate::seed::derive_rng;
use crate::tokens::TokenCounter;

/// Environment variable holding the completion service bearer token.
pub const API_TOKEN_ENV: &str = "LITFORGE_API_TOKEN";

#[derive(Debug, Error, PartialEq)]
pub enum PosteditError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{field} text {problem}")]
    InvalidText { field: &'static str, problem: String },
    #[error("prompt needs {tokens} tokens, budget is {budget}")]
    OverBudget { tokens: usize, budget: usize },
    #[error("service failed after {attempts} attempt(s): {message}")]
    Service { attempts: u32, message: String },
    #[error("no training examples survive filtering")]
    NoSurvivors,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteditConfig {
    pub sep1: String,
    pub sep2: String,
    pub eos: String,
    pub completion_prefix: String,
    pub token_budget: usize,
    pub percentile_low: f64,
    pub percentile_high: f64,
    pub sample_size: usize,
    pub top_p: f64,
    pub seed: u64,
    pub model: String,
    /// USD per 1k tokens, written to the cost log.
    pub unit_price: f64,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for PosteditConfig {
    fn default() -> Self {
        PosteditConfig {
            sep1: "##".into(),
            sep2: "\n\n###\n\n".into(),
            eos: "DNE".into(),
            completion_prefix: " ".into(),
            token_budget: 2000,
            percentile_low: 10.0,
            percentile_high: 90.0,
            sample_size: 30_000,
            top_p: 0.2,
            seed: 0,
            model: "davinci".into(),
            unit_price: 0.12,
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl PosteditConfig {
    pub fn validate(&self) -> Result<(), PosteditError> {
        let bad = |m: String| Err(PosteditError::Config(m));
        if !(0.0 <= self.percentile_low && self.percentile_low < self.percentile_high && self.percentile_high <= 100.0) {
            return bad(format!(
                "need 0 <= percentile_low < percentile_high <= 100, got {} and {}",
                self.percentile_low, self.percentile_high
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.sep1.is_empty() || self.sep2.is_empty() || self.eos.is_empty() {
            return bad("separators and eos must be non-empty".into());
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub source_index: usize,
    pub translator_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneExample {
    pub prompt: String,
    pub completion: String,
    /// Prompt and completion token counts.
    pub token_counts: (usize, usize),
    pub provenance: Provenance,
}

impl FinetuneExample {
    pub fn total_tokens(&self) -> usize {
        self.token_counts.0 + self.token_counts.1
    }
}

fn check_text(field: &'static str, text: &str, cfg: &PosteditConfig) -> Result<(), PosteditError> {
    let problem = if text.trim().is_empty() {
        Some("is empty".to_string())
    } else if text.contains(&cfg.eos) {
        Some(format!("contains the stop sequence {:?}", cfg.eos))
    } else if text.contains(&cfg.sep1) || text.contains(&cfg.sep2) {
        Some("contains a separator".to_string())
    } else {
        None
    };
    match problem {
        Some(problem) => Err(PosteditError::InvalidText { field, problem }),
        None => Ok(()),
    }
}

/// `src + sep1 + gtr + sep2`.
pub fn format_prompt(src: &str, gtr: &str, cfg: &PosteditConfig) -> Result<String, PosteditError> {
    check_text("source", src, cfg)?;
    check_text("machine", gtr, cfg)?;
    let prompt = format!("{src}{}{gtr}{}", cfg.sep1, cfg.sep2);
    // A text ending or starting with part of a separator can still make
    // the join ambiguous.
    if parse_prompt(&prompt, cfg).as_ref().map(|(s, g)| (s.as_str(), g.as_str())) != Some((src, gtr)) {
        return Err(PosteditError::InvalidText {
            field: "source",
            problem: "makes the separator ambiguous".into(),
        });
    }
    Ok(prompt)
}

/// Prompt `src + sep1 + gtr + sep2` and completion `prefix + hum + eos`.
pub fn format_example(
    src: &str,
    gtr: &str,
    hum: &str,
    cfg: &PosteditConfig,
    counter: &dyn TokenCounter,
) -> Result<FinetuneExample, PosteditError> {
    let prompt = format_prompt(src, gtr, cfg)?;
    check_text("human", hum, cfg)?;
    let completion = format!("{}{hum}{}", cfg.completion_prefix, cfg.eos);
    if parse_completion(&completion, cfg).as_deref() != Some(hum) {
        return Err(PosteditError::InvalidText {
            field: "human",
            problem: "makes the stop sequence ambiguous".into(),
        });
    }
    Ok(FinetuneExample {
        token_counts: (counter.count(&prompt), counter.count(&completion)),
        prompt,
        completion,
        provenance: Provenance::default(),
    })
}

/// Inverse of [`format_prompt`]: `(src, gtr)`.
pub fn parse_prompt(prompt: &str, cfg: &PosteditConfig) -> Option<(String, String)> {
    let body = prompt.strip_suffix(&cfg.sep2)?;
    if body.matches(&cfg.sep1).count() != 1 {
        return None;
    }
    let (src, gtr) = body.split_once(&cfg.sep1)?;
    Some((src.to_string(), gtr.to_string()))
}

/// Inverse of the completion format: the human text.
pub fn parse_completion(completion: &str, cfg: &PosteditConfig) -> Option<String> {
    let body = completion.strip_prefix(&cfg.completion_prefix)?.strip_suffix(&cfg.eos)?;
    if body.contains(&cfg.eos) {
        return None;
    }
    Some(body.to_string())
}

/// Reference with the highest `bleu_fn(hum, [gtr])`; ties go to the
/// smallest translator id.
pub fn select_reference<F>(record: &AlignmentRecord, bleu_fn: F) -> Option<(&str, &str)>
where
    F: Fn(&str, &[&str]) -> f64,
{
    let mut hums: Vec<_> = record.hums.iter().collect();
    hums.sort_by(|a, b| a.translator_id.cmp(&b.translator_id));
    let mut pick: Option<(&str, &str)> = None;
    let mut top = f64::NEG_INFINITY;
    for h in hums {
        let s = bleu_fn(&h.text, &[record.gtr.as_str()]);
        if pick.is_none() || s > top {
            top = s;
            pick = Some((h.translator_id.as_str(), h.text.as_str()));
        }
    }
    pick
}

/// Nearest-rank cut points `(low, high)`: the values at ranks
/// `ceil(p_low/100 * N)` and `N + 1 - ceil((100 - p_high)/100 * N)` of
/// the ascending scores. A rank outside `1..=N` means no cut on that side.
pub fn percentile_bounds(scores: &[f64], p_low: f64, p_high: f64) -> (f64, f64) {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = |p: f64| ((p * n as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize;
    let lo_rank = rank(p_low);
    let hi_tail = rank(100.0 - p_high);
    let low = if lo_rank == 0 { f64::NEG_INFINITY } else { sorted[lo_rank - 1] };
    let high = if hi_tail == 0 { f64::INFINITY } else { sorted[n - hi_tail] };
    (low, high)
}

/// Where the training records went.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepCounts {
    pub input: usize,
    pub percentile: usize,
    pub over_budget: usize,
    pub unformattable: usize,
    pub not_sampled: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepOutcome {
    pub examples: Vec<FinetuneExample>,
    pub counts: PrepCounts,
    pub bounds: (f64, f64),
}

/// Builds fine-tuning examples from training records.
///
/// Records whose aggregated machine score lies at or beyond either
/// percentile cut are dropped, then those whose formatted example exceeds
/// the token budget, then a seeded uniform sample of at most `sample_size`
/// is kept in input order.
pub fn prepare_finetune<M, F>(
    records: &[AlignmentRecord],
    cfg: &PosteditConfig,
    metric: &M,
    bleu_fn: F,
    counter: &dyn TokenCounter,
) -> Result<PrepOutcome, PosteditError>
where
    M: MultiRefMetric<f64> + ?Sized,
    F: Fn(&str, &[&str]) -> f64,
{
    cfg.validate()?;
    let mut counts = PrepCounts {
        input: records.len(),
        ..PrepCounts::default()
    };
    let s_cand: Vec<f64> = records
        .iter()
        .map(|r| aggregate_scores(r, metric).map(|a| a.s_cand))
        .collect::<Result<_, _>>()?;
    let bounds = percentile_bounds(&s_cand, cfg.percentile_low, cfg.percentile_high);

    let mut pool = Vec::new();
    for (r, s) in records.iter().zip(&s_cand) {
        if *s <= bounds.0 || *s >= bounds.1 {
            counts.percentile += 1;
            continue;
        }
        let Some((tid, hum)) = select_reference(r, &bleu_fn) else {
            counts.unformattable += 1;
            continue;
        };
        let mut ex = match format_example(&r.src, &r.gtr, hum, cfg, counter) {
            Ok(ex) => ex,
            Err(_) => {
                counts.unformattable += 1;
                continue;
            }
        };
        if ex.total_tokens() > cfg.token_budget {
            counts.over_budget += 1;
            continue;
        }
        ex.provenance = Provenance {
            doc_id: r.doc_id.clone(),
            source_index: r.source_index,
            translator_id: tid.to_string(),
        };
        pool.push(ex);
    }
    if pool.is_empty() {
        return Err(PosteditError::NoSurvivors);
    }
    let take = cfg.sample_size.min(pool.len());
    let mut keep: Vec<usize> = index::sample(&mut derive_rng(cfg.seed, "finetune-sample"), pool.len(), take).into_vec();
    keep.sort_unstable();
    counts.not_sampled = pool.len() - take;
    let mut slots: Vec<Option<FinetuneExample>> = pool.into_iter().map(Some).collect();
    let examples: Vec<FinetuneExample> = keep.into_iter().map(|k| slots[k].take().expect("unique index")).collect();
    counts.output = examples.len();
    Ok(PrepOutcome { examples, counts, bounds })
}

#[derive(Serialize, Deserialize)]
struct FinetuneLine {
    prompt: String,
    completion: String,
}

/// One `{"prompt": ..., "completion": ...}` object per line.
pub fn finetune_to_jsonl(examples: &[FinetuneExample]) -> String {
    examples
        .iter()
        .map(|e| {
            serde_json::to_string(&FinetuneLine {
                prompt: e.prompt.clone(),
                completion: e.completion.clone(),
            })
            .expect("strings serialize")
                + "\n"
        })
        .collect()
}

/// Reads a fine-tune file back, checking the format of every line.
/// Provenance is not stored in the file and comes back empty.
pub fn parse_finetune_jsonl(
    text: &str,
    cfg: &PosteditConfig,
    counter: &dyn TokenCounter,
) -> Result<Vec<FinetuneExample>, PosteditError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let err = |message: String| PosteditError::Parse { line: k + 1, message };
        let l: FinetuneLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if parse_prompt(&l.prompt, cfg).is_none() {
            return Err(err("prompt is not src + sep1 + gtr + sep2".into()));
        }
        if parse_completion(&l.completion, cfg).is_none() {
            return Err(err("completion is not prefix + hum + eos".into()));
        }
        out.push(FinetuneExample {
            token_counts: (counter.count(&l.prompt), counter.count(&l.completion)),
            prompt: l.prompt,
            completion: l.completion,
            provenance: Provenance::default(),
        });
    }
    Ok(out)
}

/// Hyperparameters for the provider-side fine-tuning job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub model: String,
    pub training_file: String,
    pub n_epochs: u32,
    pub batch_size: u32,
    pub learning_rate_multiplier: f64,
    pub prompt_loss_weight: f64,
}

impl FinetuneJob {
    pub fn new(model: &str, training_file: &str) -> Self {
        FinetuneJob {
            model: model.to_string(),
            training_file: training_file.to_string(),
            n_epochs: 2,
            batch_size: 32,
            learning_rate_multiplier: 0.2,
            prompt_loss_weight: 0.1,
        }
    }
}

// ---------------------------------------------------------------------------
// Completion service

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub stop: String,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl CompletionRequest {
    /// Stable key for deduplicating retries and repeated calls.
    pub fn idempotency_key(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        Sha256::digest(&body).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub tokens_in: Option<usize>,
    pub tokens_out: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceError {
    /// Network failures, 429 and 5xx.
    Transient(String),
    Permanent(String),
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest, idempotency_key: &str) -> Result<Completion, ServiceError>;
}

/// OpenAI-style completions endpoint.
#[derive(Clone, Debug)]
pub struct HttpCompletionClient {
    pub endpoint: String,
    pub token: Option<String>,
}

impl HttpCompletionClient {
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        HttpCompletionClient {
            endpoint: endpoint.into(),
            token: std::env::var(API_TOKEN_ENV).ok(),
        }
    }
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<usize>,
    completion_tokens: Option<usize>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, request: &CompletionRequest, idempotency_key: &str) -> Result<Completion, ServiceError> {
        let mut req = ureq::post(&self.endpoint).header("Idempotency-Key", idempotency_key);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(request) {
            Ok(mut resp) => {
                let body: CompletionResponse = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| ServiceError::Permanent(format!("malformed response: {e}")))?;
                let text = body
                    .choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| ServiceError::Permanent("response has no choices".into()))?
                    .text;
                let (tokens_in, tokens_out) = body
                    .usage
                    .map(|u| (u.prompt_tokens, u.completion_tokens))
                    .unwrap_or((None, None));
                Ok(Completion {
                    text,
                    tokens_in,
                    tokens_out,
                })
            }
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(ServiceError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(ServiceError::Permanent(format!("HTTP {code}"))),
            Err(e) => Err(ServiceError::Transient(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub unit_price: f64,
}

/// Token usage per distinct request; a repeated idempotency key is billed once.
#[derive(Debug, Default)]
pub struct CostMeter {
    inner: Mutex<(HashSet<String>, Vec<CostEntry>)>,
}

impl CostMeter {
    pub fn new() -> Self {
        CostMeter::default()
    }

    /// Returns false when the key was already billed.
    pub fn record(&self, key: &str, entry: CostEntry) -> bool {
        let mut g = self.inner.lock().expect("cost meter lock");
        if !g.0.insert(key.to_string()) {
            return false;
        }
        g.1.push(entry);
        true
    }

    pub fn entries(&self) -> Vec<CostEntry> {
        self.inner.lock().expect("cost meter lock").1.clone()
    }

    pub fn total_tokens(&self) -> usize {
        self.entries().iter().map(|e| e.tokens_in + e.tokens_out).sum()
    }

    /// USD at `unit_price` per 1k tokens.
    pub fn total_cost(&self) -> f64 {
        self.entries()
            .iter()
            .map(|e| (e.tokens_in + e.tokens_out) as f64 / 1000.0 * e.unit_price)
            .sum()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries()
            .iter()
            .map(|e| serde_json::to_string(e).expect("cost entry serializes") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteditOutput {
    pub text: String,
    pub retries: u32,
    pub tokens_in: usize,
    pub tokens_out: usize,
}

/// Post-edits one paragraph.
///
/// The completion is cut at the first stop sequence and trimmed. An
/// over-budget prompt fails before any request is made.
pub fn postedit_paragraph(
    client: &dyn CompletionClient,
    src: &str,
    gtr: &str,
    cfg: &PosteditConfig,
    counter: &dyn TokenCounter,
    meter: &CostMeter,
) -> Result<PosteditOutput, PosteditError> {
    let prompt = format_prompt(src, gtr, cfg)?;
    let tokens = counter.count(&prompt);
    if tokens >= cfg.token_budget {
        return Err(PosteditError::OverBudget {
            tokens,
            budget: cfg.token_budget,
        });
    }
    let request = CompletionRequest {
        model: cfg.model.clone(),
        prompt,
        stop: cfg.eos.clone(),
        top_p: cfg.top_p,
        max_tokens: cfg.token_budget - tokens,
    };
    let key = request.idempotency_key();
    let (done, retries) = retry(&cfg.retry, |_| match client.complete(&request, &key) {
        Ok(c) => Ok(c),
        Err(ServiceError::Transient(m)) => Err(Attempt::Transient(m)),
        Err(ServiceError::Permanent(m)) => Err(Attempt::Permanent(m)),
    })
    .map_err(|e| PosteditError::Service {
        attempts: e.attempts,
        message: e.last,
    })?;
    let text = match done.text.find(&cfg.eos) {
        Some(k) => &done.text[..k],
        None => done.text.as_str(),
    }
    .trim()
    .to_string();
    let tokens_in = done.tokens_in.unwrap_or(tokens);
    let tokens_out = done.tokens_out.unwrap_or_else(|| counter.count(&done.text));
    meter.record(
        &key,
        CostEntry {
            tokens_in,
            tokens_out,
            unit_price: cfg.unit_price,
        },
    );
    Ok(PosteditOutput {
        text,
        retries,
        tokens_in,
        tokens_out,
    })
}

/// Post-edits `(src, gtr)` pairs with at most `cfg.concurrency` requests in
/// flight. Results are in input order.
pub fn postedit_batch(
    client: &dyn CompletionClient,
    items: &[(String, String)],
    cfg: &PosteditConfig,
    counter: &dyn TokenCounter,
    meter: &CostMeter,
) -> Vec<Result<PosteditOutput, PosteditError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, Result<PosteditOutput, PosteditError>>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..cfg.concurrency.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((src, gtr)) = items.get(k) else { break };
                let r = postedit_paragraph(client, src, gtr, cfg, counter, meter);
                results.lock().expect("results lock").insert(k, r);
            });
        }
    });
    results.into_inner().expect("results lock").into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Extras, Reference};
    use crate::metrics::{bleu, Bleu, BleuConfig};
    use crate::tokens::ApproxTokenCounter;
    use std::sync::atomic::AtomicU32;

    fn cfg() -> PosteditConfig {
        PosteditConfig {
            retry: RetryPolicy::immediate(5),
            ..PosteditConfig::default()
        }
    }

    fn b(h: &str, r: &[&str]) -> f64 {
        bleu(h, r, &BleuConfig::default()).unwrap()
    }

    fn record(idx: usize, gtr: &str, hums: &[(&str, &str)]) -> AlignmentRecord {
        AlignmentRecord {
            doc_id: "d".into(),
            source_index: idx,
            src: format!("source paragraph {idx}"),
            gtr: gtr.into(),
            hums: hums
                .iter()
                .map(|(t, x)| Reference {
                    translator_id: t.to_string(),
                    text: x.to_string(),
                })
                .collect(),
            sentence_counts: vec![],
            extras: Extras::new(),
        }
    }

    #[test]
    fn format_is_byte_exact() {
        let ex = format_example("s", "g", "h", &cfg(), &ApproxTokenCounter).unwrap();
        assert_eq!(ex.prompt, "s##g\n\n###\n\n");
        assert_eq!(ex.completion, " hDNE");
        assert_eq!(ex.token_counts, (3, 2));
        let seq = format!("{}{}", ex.prompt, ex.completion);
        let (head, tail) = seq.split_once("\n\n###\n\n").unwrap();
        assert_eq!(head, "s##g");
        assert_eq!(tail.strip_suffix("DNE").unwrap().trim_start(), "h");
    }

    #[test]
    fn format_rejects_unsafe_text() {
        let c = cfg();
        assert!(format_example("s", "g", "the DNE gene", &c, &ApproxTokenCounter).is_err());
        assert!(format_example("s ## t", "g", "h", &c, &ApproxTokenCounter).is_err());
        assert!(format_example("s#", "g", "h", &c, &ApproxTokenCounter).is_err());
        assert!(format_example("", "g", "h", &c, &ApproxTokenCounter).is_err());
        assert!(format_example("s", "g", "hDN", &c, &ApproxTokenCounter).is_ok());
    }

    #[test]
    fn select_reference_by_bleu() {
        let r = record(0, "the cat sat on the mat", &[("b", "a dog lay on a rug"), ("a", "the cat sat on the mat")]);
        assert_eq!(select_reference(&r, b), Some(("a", "the cat sat on the mat")));
        let single = record(0, "x y z", &[("z", "nothing alike here")]);
        assert_eq!(select_reference(&single, b).unwrap().0, "z");
        let tie = record(0, "x", &[("q", "same text"), ("p", "same text")]);
        assert_eq!(select_reference(&tie, |_: &str, _: &[&str]| 1.0).unwrap().0, "p");
    }

    #[test]
    fn select_reference_three_way() {
        let gtr = "He went to the market early in the morning.";
        let hums = [
            ("t1", "He went to the market in the morning."),
            ("t2", "Early in the morning he went to the market."),
            ("t3", "At dawn he set off for the bazaar."),
        ];
        let r = record(0, gtr, &hums);
        let best = hums
            .iter()
            .map(|(t, h)| (b(h, &[gtr]), *t))
            .fold((f64::NEG_INFINITY, ""), |acc, x| if x.0 > acc.0 { x } else { acc });
        assert_eq!(select_reference(&r, b).unwrap().0, best.1);
    }

    #[test]
    fn percentile_cut_keeps_eighty_of_hundred() {
        let s: Vec<f64> = (0..100).map(|k| (k * 7 % 100) as f64 + 0.5).collect();
        let (lo, hi) = percentile_bounds(&s, 10.0, 90.0);
        assert_eq!((lo, hi), (9.5, 90.5));
        let kept = s.iter().filter(|x| **x > lo && **x < hi).count();
        assert_eq!(kept, 80);
        assert_eq!(percentile_bounds(&s, 0.0, 100.0), (f64::NEG_INFINITY, f64::INFINITY));
    }

    fn synthetic(n: usize) -> Vec<AlignmentRecord> {
        let words = ["river", "stone", "night", "bread", "window", "horse", "letter", "garden", "winter", "candle"];
        (0..n)
            .map(|k| {
                let h1: Vec<&str> = (0..12).map(|j| words[(j + k) % 10]).collect();
                let h2: Vec<&str> = (0..12).map(|j| words[(j * 3 + k) % 10]).collect();
                let g: Vec<&str> = (0..12).map(|j| if j < k % 12 { words[(j + k) % 10] } else { "ash" }).collect();
                record(k, &g.join(" "), &[("a", &h1.join(" ")), ("b", &h2.join(" "))])
            })
            .collect()
    }

    #[test]
    fn prepare_is_seeded_and_capped() {
        let recs = synthetic(60);
        let c = PosteditConfig { sample_size: 10, seed: 9, ..cfg() };
        let a = prepare_finetune(&recs, &c, &Bleu::default(), b, &ApproxTokenCounter).unwrap();
        let again = prepare_finetune(&recs, &c, &Bleu::default(), b, &ApproxTokenCounter).unwrap();
        assert_eq!(a, again);
        assert_eq!(a.examples.len(), 10);
        let k = a.counts;
        assert_eq!(k.input, k.percentile + k.over_budget + k.unformattable + k.not_sampled + k.output);
        let big = PosteditConfig { sample_size: 30_000, ..c };
        let all = prepare_finetune(&recs, &big, &Bleu::default(), b, &ApproxTokenCounter).unwrap();
        assert_eq!(all.counts.not_sampled, 0);
    }

    #[test]
    fn budget_is_inclusive() {
        let hum = "word ".repeat(40);
        let r = record(0, "a machine output", &[("a", hum.trim()), ("b", "other words")]);
        let ex = format_example(&r.src, &r.gtr, hum.trim(), &cfg(), &ApproxTokenCounter).unwrap();
        let total = ex.total_tokens();
        let c = PosteditConfig { percentile_low: 0.0, percentile_high: 100.0, token_budget: total, ..cfg() };
        let pick = |h: &str, _: &[&str]| h.len() as f64;
        assert_eq!(prepare_finetune(std::slice::from_ref(&r), &c, &Bleu::default(), pick, &ApproxTokenCounter).unwrap().examples.len(), 1);
        let c = PosteditConfig { token_budget: total - 1, ..c };
        assert_eq!(
            prepare_finetune(&[r], &c, &Bleu::default(), pick, &ApproxTokenCounter),
            Err(PosteditError::NoSurvivors)
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let recs = synthetic(30);
        let out = prepare_finetune(&recs, &cfg(), &Bleu::default(), b, &ApproxTokenCounter).unwrap();
        let text = finetune_to_jsonl(&out.examples);
        let back = parse_finetune_jsonl(&text, &cfg(), &ApproxTokenCounter).unwrap();
        let strip = |v: &[FinetuneExample]| -> Vec<(String, String, (usize, usize))> {
            v.iter().map(|e| (e.prompt.clone(), e.completion.clone(), e.token_counts)).collect()
        };
        assert_eq!(strip(&back), strip(&out.examples));
        assert!(text.lines().all(|l| l.starts_with("{\"prompt\":")));
        assert!(parse_finetune_jsonl("{\"prompt\":\"x\",\"completion\":\" yDNE\"}\n", &cfg(), &ApproxTokenCounter).is_err());
    }

    struct Echo;

    impl CompletionClient for Echo {
        fn complete(&self, r: &CompletionRequest, _: &str) -> Result<Completion, ServiceError> {
            let (_, gtr) = parse_prompt(&r.prompt, &cfg()).unwrap();
            Ok(Completion {
                text: format!(" {gtr}DNE trailing"),
                tokens_in: None,
                tokens_out: Some(3),
            })
        }
    }

    struct Flaky {
        failures: AtomicU32,
        calls: AtomicU32,
    }

    impl CompletionClient for Flaky {
        fn complete(&self, _: &CompletionRequest, _: &str) -> Result<Completion, ServiceError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(ServiceError::Transient("HTTP 503".into()));
            }
            Ok(Completion {
                text: "fixed".into(),
                tokens_in: Some(10),
                tokens_out: Some(2),
            })
        }
    }

    #[test]
    fn echo_client() {
        let m = CostMeter::new();
        let out = postedit_paragraph(&Echo, "src", "the machine text", &cfg(), &ApproxTokenCounter, &m).unwrap();
        assert_eq!(out.text, "the machine text");
        assert_eq!(out.retries, 0);
        assert_eq!(m.entries().len(), 1);
    }

    #[test]
    fn transient_failures_are_retried() {
        let f = Flaky {
            failures: AtomicU32::new(2),
            calls: AtomicU32::new(0),
        };
        let m = CostMeter::new();
        let out = postedit_paragraph(&f, "s", "g", &cfg(), &ApproxTokenCounter, &m).unwrap();
        assert_eq!(out.retries, 2);
        assert_eq!(m.total_tokens(), 12);

        let dead = Flaky {
            failures: AtomicU32::new(100),
            calls: AtomicU32::new(0),
        };
        let err = postedit_paragraph(&dead, "s", "g", &cfg(), &ApproxTokenCounter, &m).unwrap_err();
        assert_eq!(
            err,
            PosteditError::Service {
                attempts: 5,
                message: "HTTP 503".into()
            }
        );
    }

    #[test]
    fn over_budget_makes_no_request() {
        let f = Flaky {
            failures: AtomicU32::new(0),
            calls: AtomicU32::new(0),
        };
        let long = "x".repeat(8000);
        let err = postedit_paragraph(&f, &long, "g", &cfg(), &ApproxTokenCounter, &CostMeter::new()).unwrap_err();
        assert!(matches!(err, PosteditError::OverBudget { .. }));
        assert_eq!(f.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn meter_bills_each_key_once() {
        let m = CostMeter::new();
        let e = CostEntry {
            tokens_in: 100,
            tokens_out: 900,
            unit_price: 0.12,
        };
        assert!(m.record("k", e.clone()));
        assert!(!m.record("k", e.clone()));
        assert_eq!(m.total_tokens(), 1000);
        assert!((m.total_cost() - 0.12).abs() < 1e-12);
        assert_eq!(m.to_jsonl(), "{\"tokens_in\":100,\"tokens_out\":900,\"unit_price\":0.12}\n");
    }

    #[test]
    fn batch_keeps_input_order() {
        let items: Vec<(String, String)> = (0..20).map(|k| (format!("s{k}"), format!("g{k}"))).collect();
        let m = CostMeter::new();
        let out = postedit_batch(&Echo, &items, &cfg(), &ApproxTokenCounter, &m);
        let texts: Vec<String> = out.into_iter().map(|r| r.unwrap().text).collect();
        let expected: Vec<String> = (0..20).map(|k| format!("g{k}")).collect();
        assert_eq!(texts, expected);
        assert_eq!(m.entries().len(), 20);
    }

    #[test]
    fn job_config() {
        let j = serde_json::to_value(FinetuneJob::new("davinci", "train.jsonl")).unwrap();
        assert_eq!(j["n_epochs"], 2);
        assert_eq!(j["batch_size"], 32);
        assert_eq!(j["learning_rate_multiplier"], 0.2);
        assert_eq!(j["prompt_loss_weight"], 0.1);
    }
}

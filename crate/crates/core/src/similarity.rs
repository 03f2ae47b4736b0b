//! Sentence similarity scoring for the aligner.
//!
//! The default scorer is an offline character-trigram cosine. A remote
//! embedding service can be used instead through [`EmbeddingScorer`]; its
//! cosines are rescaled from [-1, 1] to [0, 1] so the gap penalty always
//! lives on the same scale.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retry::{retry, Attempt, RetryPolicy};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("score matrix shape {rows}x{cols} does not match {len} values")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("score matrix needs at least one row and one column")]
    Empty,
    #[error("non-finite score at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("embedding protocol error: expected {expected} vectors, got {actual}")]
    VectorCount { expected: usize, actual: usize },
    #[error("embedding protocol error: {0}")]
    Protocol(String),
    #[error("embedding service failed after {attempts} attempts: {message}")]
    Service { attempts: u32, message: String },
}

/// Dense row-major matrix of pairwise scores; rows index sequence A.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self, SimilarityError> {
        if rows * cols != values.len() {
            return Err(SimilarityError::Shape {
                rows,
                cols,
                len: values.len(),
            });
        }
        Ok(ScoreMatrix { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        ScoreMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        ScoreMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Errors on the first non-finite cell.
    pub fn check_finite(&self) -> Result<(), SimilarityError> {
        match self.values.iter().position(|v| !v.is_finite_value()) {
            Some(k) => Err(SimilarityError::NonFinite {
                row: k / self.cols,
                col: k % self.cols,
            }),
            None => Ok(()),
        }
    }
}

/// Pairwise sentence similarity in [0, 1].
///
/// Implementations are expected to be symmetric with `score(a, a) == 1`
/// for non-empty `a`.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> Result<f64, SimilarityError>;

    fn score_matrix(&self, seq_a: &[&str], seq_b: &[&str]) -> Result<ScoreMatrix<f64>, SimilarityError> {
        if seq_a.is_empty() || seq_b.is_empty() {
            return Err(SimilarityError::Empty);
        }
        let mut values = Vec::with_capacity(seq_a.len() * seq_b.len());
        for a in seq_a {
            for b in seq_b {
                values.push(self.score(a, b)?);
            }
        }
        ScoreMatrix::new(seq_a.len(), seq_b.len(), values)
    }
}

/// Cell (i, j) = `scorer.score(a_i, b_j)`.
pub fn score_matrix(
    seq_a: &[&str],
    seq_b: &[&str],
    scorer: &dyn SimilarityScorer,
) -> Result<ScoreMatrix<f64>, SimilarityError> {
    scorer.score_matrix(seq_a, seq_b)
}

fn trigram_counts(text: &str) -> BTreeMap<String, f64> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = BTreeMap::new();
    if chars.is_empty() {
        return counts;
    }
    if chars.len() < 3 {
        counts.insert(chars.iter().collect(), 1.0);
        return counts;
    }
    for w in chars.windows(3) {
        *counts.entry(w.iter().collect()).or_insert(0.0) += 1.0;
    }
    counts
}

/// Cosine similarity of lowercased character-trigram count vectors.
///
/// Texts shorter than three characters count as a single gram. Two empty
/// strings score 1, an empty string against a non-empty one scores 0.
pub fn lexical_sim(a: &str, b: &str) -> f64 {
    trigram_cosine(&trigram_counts(a), &trigram_counts(b))
}

fn trigram_cosine(ca: &BTreeMap<String, f64>, cb: &BTreeMap<String, f64>) -> f64 {
    match (ca.is_empty(), cb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    // Walk both maps in key order so the sum is identical for (a, b) and (b, a).
    let mut dot = 0.0;
    let mut ib = cb.iter().peekable();
    for (ka, va) in ca {
        while let Some((kb, _)) = ib.peek() {
            if *kb < ka {
                ib.next();
            } else {
                break;
            }
        }
        if let Some((kb, vb)) = ib.peek() {
            if *kb == ka {
                dot += va * *vb;
            }
        }
    }
    let norm = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (norm(ca) * norm(cb))).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LexicalScorer;

impl SimilarityScorer for LexicalScorer {
    fn score(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        Ok(lexical_sim(a, b))
    }

    /// Same values as cell-by-cell [`lexical_sim`], with each text's
    /// trigram vector built once.
    fn score_matrix(&self, seq_a: &[&str], seq_b: &[&str]) -> Result<ScoreMatrix<f64>, SimilarityError> {
        if seq_a.is_empty() || seq_b.is_empty() {
            return Err(SimilarityError::Empty);
        }
        let va: Vec<_> = seq_a.par_iter().map(|t| trigram_counts(t)).collect();
        let vb: Vec<_> = seq_b.par_iter().map(|t| trigram_counts(t)).collect();
        let values: Vec<f64> = va
            .par_iter()
            .flat_map_iter(|a| vb.iter().map(move |b| trigram_cosine(a, b)))
            .collect();
        ScoreMatrix::new(seq_a.len(), seq_b.len(), values)
    }
}

// ---------------------------------------------------------------------------
// Remote embeddings

/// Failure of one embedding request.
#[derive(Debug)]
pub enum TransportError {
    /// Worth retrying: network errors, 429, 5xx.
    Transient(String),
    Permanent(String),
}

/// Sends one batch of texts and returns one vector per text, in order.
pub trait EmbeddingTransport: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Environment variable holding the embedding service bearer token.
pub const EMBED_TOKEN_ENV: &str = "LITFORGE_EMBED_TOKEN";

/// JSON-over-HTTP transport: POST `{"texts": [...]}`, expect `{"vectors": [[...], ...]}`.
#[derive(Clone, Debug)]
pub struct HttpEmbeddingTransport {
    pub endpoint: String,
    pub token: Option<String>,
}

impl HttpEmbeddingTransport {
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        HttpEmbeddingTransport {
            endpoint: endpoint.into(),
            token: std::env::var(EMBED_TOKEN_ENV).ok(),
        }
    }
}

impl EmbeddingTransport for HttpEmbeddingTransport {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        let mut req = ureq::post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(&EmbedRequest { texts }) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json::<EmbedResponse>()
                .map(|r| r.vectors)
                .map_err(|e| TransportError::Permanent(format!("malformed response: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(TransportError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(TransportError::Permanent(format!("HTTP {code}"))),
            Err(e) => Err(TransportError::Transient(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub batch_size: usize,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            batch_size: 64,
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Embedding-service scorer with a content-addressed vector cache.
pub struct EmbeddingScorer<T> {
    transport: T,
    cfg: EmbeddingConfig,
    cache: Mutex<HashMap<[u8; 32], Arc<Vec<f64>>>>,
    requests: AtomicUsize,
}

fn content_key(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

impl<T: EmbeddingTransport> EmbeddingScorer<T> {
    pub fn new(transport: T, cfg: EmbeddingConfig) -> Self {
        EmbeddingScorer {
            transport,
            cfg,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
        }
    }

    /// Number of batch requests sent so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn fetch_batch(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, SimilarityError> {
        let result = retry(&self.cfg.retry, |_| {
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.transport.embed(batch) {
                Ok(v) => Ok(v),
                Err(TransportError::Transient(m)) => Err(Attempt::Transient(m)),
                Err(TransportError::Permanent(m)) => Err(Attempt::Permanent(m)),
            }
        });
        let (vectors, _) = result.map_err(|e| SimilarityError::Service {
            attempts: e.attempts,
            message: e.last,
        })?;
        if vectors.len() != batch.len() {
            return Err(SimilarityError::VectorCount {
                expected: batch.len(),
                actual: vectors.len(),
            });
        }
        vectors.into_iter().map(normalize).collect()
    }

    /// Makes sure every text in `texts` has a cached unit vector.
    fn warm(&self, texts: &[&str]) -> Result<(), SimilarityError> {
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            for t in texts {
                let key = content_key(t);
                if !cache.contains_key(&key) && seen.insert(key) {
                    missing.push(t.to_string());
                }
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let batches: Vec<&[String]> = missing.chunks(self.cfg.batch_size.max(1)).collect();
        let mut results: Vec<Option<Result<Vec<Vec<f64>>, SimilarityError>>> =
            (0..batches.len()).map(|_| None).collect();
        for (group_idx, group) in batches.chunks(self.cfg.concurrency.max(1)).enumerate() {
            let base = group_idx * self.cfg.concurrency.max(1);
            let outs: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|b| s.spawn(move || self.fetch_batch(b)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for (k, out) in outs.into_iter().enumerate() {
                results[base + k] = Some(out);
            }
        }
        let mut cache = self.cache.lock().expect("cache lock");
        for (batch, res) in batches.iter().zip(results) {
            let vectors = res.expect("every batch ran")?;
            for (text, v) in batch.iter().zip(vectors) {
                cache.insert(content_key(text), Arc::new(v));
            }
        }
        Ok(())
    }

    fn vector(&self, text: &str) -> Arc<Vec<f64>> {
        self.cache.lock().expect("cache lock")[&content_key(text)].clone()
    }

    /// Cosine matrix of the two sequences, rescaled to [0, 1].
    pub fn remote_sim_matrix(&self, seq_a: &[&str], seq_b: &[&str]) -> Result<ScoreMatrix<f64>, SimilarityError> {
        if seq_a.is_empty() || seq_b.is_empty() {
            return Err(SimilarityError::Empty);
        }
        let all: Vec<&str> = seq_a.iter().chain(seq_b).copied().collect();
        self.warm(&all)?;
        let va: Vec<_> = seq_a.iter().map(|t| self.vector(t)).collect();
        let vb: Vec<_> = seq_b.iter().map(|t| self.vector(t)).collect();
        let mut values = Vec::with_capacity(va.len() * vb.len());
        for a in &va {
            for b in &vb {
                if a.len() != b.len() {
                    return Err(SimilarityError::Protocol(format!(
                        "vector dimensions differ: {} vs {}",
                        a.len(),
                        b.len()
                    )));
                }
                let cos: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                values.push(((cos + 1.0) / 2.0).clamp(0.0, 1.0));
            }
        }
        ScoreMatrix::new(va.len(), vb.len(), values)
    }
}

fn normalize(v: Vec<f64>) -> Result<Vec<f64>, SimilarityError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SimilarityError::Protocol("non-finite embedding component".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(SimilarityError::Protocol("zero-length embedding".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

impl<T: EmbeddingTransport> SimilarityScorer for EmbeddingScorer<T> {
    fn score(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        Ok(self.remote_sim_matrix(&[a], &[b])?.get(0, 0))
    }

    fn score_matrix(&self, seq_a: &[&str], seq_b: &[&str]) -> Result<ScoreMatrix<f64>, SimilarityError> {
        self.remote_sim_matrix(seq_a, seq_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent trigram cosine: grams via byte-free char slicing into a HashMap.
    fn oracle_cosine(a: &str, b: &str) -> f64 {
        fn grams(s: &str) -> HashMap<Vec<char>, usize> {
            let cs: Vec<char> = s.to_lowercase().chars().collect();
            let mut m = HashMap::new();
            if cs.len() < 3 {
                if !cs.is_empty() {
                    m.insert(cs, 1);
                }
                return m;
            }
            for k in 0..cs.len() - 2 {
                *m.entry(cs[k..k + 3].to_vec()).or_insert(0) += 1;
            }
            m
        }
        let (ga, gb) = (grams(a), grams(b));
        let dot: usize = ga.iter().map(|(k, v)| v * gb.get(k).unwrap_or(&0)).sum();
        let na: usize = ga.values().map(|v| v * v).sum();
        let nb: usize = gb.values().map(|v| v * v).sum();
        dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt())
    }

    #[test]
    fn lexical_examples() {
        assert!((lexical_sim("the cat", "the cat") - 1.0).abs() < 1e-12);
        assert_eq!(lexical_sim("abc", "xyz"), 0.0);
        assert_eq!(lexical_sim("", ""), 1.0);
        assert_eq!(lexical_sim("", "x"), 0.0);
    }

    #[test]
    fn lexical_matches_oracle_on_translation_fragments() {
        let a = "I want to have a talk with you.";
        let b = "I must have a talk with you.";
        let c = "Kingdoms wax and wane.";
        let ab = lexical_sim(a, b);
        assert!((ab - oracle_cosine(a, b)).abs() < 1e-12);
        assert!((ab - 0.728_357_040_729_229_7).abs() < 1e-12, "{ab}");
        assert!(ab > lexical_sim(a, c));
        assert!(ab > lexical_sim(b, c));
    }

    #[test]
    fn matrix_shapes_and_oracle() {
        let a = ["the cat sat", "a dog ran", "birds fly"];
        let b = ["the cat sat down", "dogs run", "flying birds"];
        let m = score_matrix(&a, &b, &LexicalScorer).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 3));
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                assert!((m.get(i, j) - oracle_cosine(x, y)).abs() < 1e-12);
            }
        }
        let m = score_matrix(&["x y"], &["a", "b", "c"], &LexicalScorer).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 3));
        let m = score_matrix(&["p q r", "s t u"], &["p q r", "s t u"], &LexicalScorer).unwrap();
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12 && (m.get(1, 1) - 1.0).abs() < 1e-12);
        assert!(matches!(score_matrix(&[], &["a"], &LexicalScorer), Err(SimilarityError::Empty)));
    }

    #[test]
    fn shape_mismatch_and_nan() {
        assert!(ScoreMatrix::new(2, 2, vec![0.0; 3]).is_err());
        let m = ScoreMatrix::new(1, 2, vec![0.5, f64::NAN]).unwrap();
        assert!(matches!(m.check_finite(), Err(SimilarityError::NonFinite { row: 0, col: 1 })));
    }

    /// Bag-of-letters embedding with a call log.
    struct LetterEmbedder {
        calls: Mutex<Vec<usize>>,
        wrong_count: bool,
        fail_first: AtomicUsize,
    }

    impl LetterEmbedder {
        fn new() -> Self {
            LetterEmbedder {
                calls: Mutex::new(Vec::new()),
                wrong_count: false,
                fail_first: AtomicUsize::new(0),
            }
        }
    }

    impl EmbeddingTransport for LetterEmbedder {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
            self.calls.lock().unwrap().push(texts.len());
            if self.fail_first.load(Ordering::SeqCst) > 0 {
                self.fail_first.fetch_sub(1, Ordering::SeqCst);
                return Err(TransportError::Transient("503".into()));
            }
            let mut out: Vec<Vec<f64>> = texts
                .iter()
                .map(|t| {
                    let mut v = vec![0.1; 26];
                    for c in t.to_lowercase().chars().filter(|c| c.is_ascii_lowercase()) {
                        v[(c as u8 - b'a') as usize] += 1.0;
                    }
                    v
                })
                .collect();
            if self.wrong_count {
                out.pop();
            }
            Ok(out)
        }
    }

    fn cfg() -> EmbeddingConfig {
        EmbeddingConfig {
            batch_size: 2,
            concurrency: 2,
            retry: RetryPolicy::immediate(3),
        }
    }

    #[test]
    fn cache_warm_repeat_makes_no_requests() {
        let scorer = EmbeddingScorer::new(LetterEmbedder::new(), cfg());
        let a = ["one fish", "two fish", "red fish"];
        let b = ["blue fish", "one fish"];
        let cold = scorer.remote_sim_matrix(&a, &b).unwrap();
        let sent = scorer.request_count();
        // four unique texts in batches of two
        assert_eq!(sent, 2);
        let warm = scorer.remote_sim_matrix(&a, &b).unwrap();
        assert_eq!(scorer.request_count(), sent);
        assert_eq!(cold, warm);
        assert!((cold.get(0, 1) - 1.0).abs() < 1e-6);
        assert!(cold.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_vector_count_is_protocol_error() {
        let mut t = LetterEmbedder::new();
        t.wrong_count = true;
        let scorer = EmbeddingScorer::new(t, cfg());
        match scorer.remote_sim_matrix(&["a b"], &["c d"]) {
            Err(SimilarityError::VectorCount { expected: 2, actual: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transient_failures_are_retried_then_surface() {
        let t = LetterEmbedder::new();
        t.fail_first.store(1, Ordering::SeqCst);
        let scorer = EmbeddingScorer::new(t, cfg());
        assert!(scorer.remote_sim_matrix(&["abc"], &["abd"]).is_ok());

        let t = LetterEmbedder::new();
        t.fail_first.store(10, Ordering::SeqCst);
        let scorer = EmbeddingScorer::new(t, cfg());
        match scorer.remote_sim_matrix(&["abc"], &["abd"]) {
            Err(SimilarityError::Service { attempts: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn lexical_symmetric_and_reflexive(a in "[a-zA-Z ]{0,20}", b in "[a-zA-Z ]{0,20}") {
            prop_assert_eq!(lexical_sim(&a, &b), lexical_sim(&b, &a));
            if !a.is_empty() {
                prop_assert!((lexical_sim(&a, &a) - 1.0).abs() < 1e-9);
            }
            let s = lexical_sim(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn transpose_matches_swapped_inputs(
            a in proptest::collection::vec("[a-z ]{1,10}", 1..4),
            b in proptest::collection::vec("[a-z ]{1,10}", 1..4),
        ) {
            let ra: Vec<&str> = a.iter().map(String::as_str).collect();
            let rb: Vec<&str> = b.iter().map(String::as_str).collect();
            let ab = score_matrix(&ra, &rb, &LexicalScorer).unwrap();
            let ba = score_matrix(&rb, &ra, &LexicalScorer).unwrap();
            prop_assert_eq!(ab.transpose(), ba);
        }
    }
}

//! Needleman–Wunsch global alignment of human-translation sentences (sequence
//! A, matrix rows) against machine-translation sentences (sequence B, matrix
//! columns), and projection of the result onto source paragraphs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IngestedBook;
use crate::scalar::Scalar;
use crate::segmentation::{segment_document, SegmentError, Segmenter, Sentence};
use crate::similarity::{ScoreMatrix, SimilarityError, SimilarityScorer};

/// Gap penalty on the [0, 1] similarity scale.
pub const DEFAULT_GAP_PENALTY: f64 = -0.25;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("score matrix needs at least one row and one column")]
    EmptyMatrix,
    #[error("gap penalty must be <= 0")]
    PositiveGap,
    #[error("gap penalty is not finite")]
    NonFiniteGap,
    #[error(transparent)]
    Matrix(#[from] SimilarityError),
    #[error("alignment path covers {path_a}x{path_b} sentences but {a}x{b} were supplied")]
    PathMismatch {
        path_a: usize,
        path_b: usize,
        a: usize,
        b: usize,
    },
    #[error("machine sentence {index} points at paragraph {paragraph}, only {paragraphs} exist")]
    ParagraphOutOfRange {
        index: usize,
        paragraph: usize,
        paragraphs: usize,
    },
}

/// One column of a global alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignStep {
    /// A[a] paired with B[b].
    Match { a: usize, b: usize },
    /// A[i] opposite a gap in B.
    GapA(usize),
    /// B[j] opposite a gap in A.
    GapB(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceAlignmentPath<T> {
    pub steps: Vec<AlignStep>,
    pub total_score: T,
}

impl<T: Scalar> SentenceAlignmentPath<T> {
    /// Number of (A, B) elements the path consumes.
    pub fn extent(&self) -> (usize, usize) {
        self.steps.iter().fold((0, 0), |(a, b), s| match s {
            AlignStep::Match { .. } => (a + 1, b + 1),
            AlignStep::GapA(_) => (a + 1, b),
            AlignStep::GapB(_) => (a, b + 1),
        })
    }

    /// Re-sums the path in step order: matched cells plus one penalty per gap.
    pub fn rescore(&self, matrix: &ScoreMatrix<T>, gap: T) -> T {
        self.steps.iter().fold(T::zero(), |acc, s| match *s {
            AlignStep::Match { a, b } => acc + matrix.get(a, b),
            _ => acc + gap,
        })
    }

    pub fn matches(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps.iter().filter_map(|s| match *s {
            AlignStep::Match { a, b } => Some((a, b)),
            _ => None,
        })
    }

    /// Tab-separated debug dump, one line per step: `kind  i  j  score`.
    pub fn trace(&self, matrix: &ScoreMatrix<T>, gap: T) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = match *s {
                AlignStep::Match { a, b } => writeln!(
                    out,
                    "match\t{a}\t{b}\t{}",
                    matrix.get(a, b).to_f64_lossy()
                ),
                AlignStep::GapA(i) => writeln!(out, "gap_a\t{i}\t-\t{}", gap.to_f64_lossy()),
                AlignStep::GapB(j) => writeln!(out, "gap_b\t-\t{j}\t{}", gap.to_f64_lossy()),
            };
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    Diag,
    Up,
    Left,
}

/// Maximum-score monotone global alignment.
///
/// `F(i,j) = max(F(i-1,j-1) + s(i,j), F(i-1,j) + g, F(i,j-1) + g)` with
/// `F(i,0) = i*g` and `F(0,j) = j*g`. Ties prefer the diagonal, then a gap
/// opposite an A element, then a gap opposite a B element.
pub fn needleman_wunsch<T: Scalar>(
    matrix: &ScoreMatrix<T>,
    gap_penalty: T,
) -> Result<SentenceAlignmentPath<T>, AlignError> {
    let (n, m) = (matrix.rows(), matrix.cols());
    if n == 0 || m == 0 {
        return Err(AlignError::EmptyMatrix);
    }
    if !gap_penalty.is_finite_value() {
        return Err(AlignError::NonFiniteGap);
    }
    if gap_penalty > T::zero() {
        return Err(AlignError::PositiveGap);
    }
    matrix.check_finite()?;

    let w = m + 1;
    let mut score = vec![T::zero(); (n + 1) * w];
    let mut dir = vec![Dir::Diag; (n + 1) * w];
    for i in 1..=n {
        score[i * w] = score[(i - 1) * w] + gap_penalty;
        dir[i * w] = Dir::Up;
    }
    for j in 1..=m {
        score[j] = score[j - 1] + gap_penalty;
        dir[j] = Dir::Left;
    }
    for i in 1..=n {
        for j in 1..=m {
            let mut best = score[(i - 1) * w + j - 1] + matrix.get(i - 1, j - 1);
            let mut d = Dir::Diag;
            let up = score[(i - 1) * w + j] + gap_penalty;
            if up > best {
                best = up;
                d = Dir::Up;
            }
            let left = score[i * w + j - 1] + gap_penalty;
            if left > best {
                best = left;
                d = Dir::Left;
            }
            score[i * w + j] = best;
            dir[i * w + j] = d;
        }
    }

    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        match dir[i * w + j] {
            Dir::Diag => {
                steps.push(AlignStep::Match { a: i - 1, b: j - 1 });
                i -= 1;
                j -= 1;
            }
            Dir::Up => {
                steps.push(AlignStep::GapA(i - 1));
                i -= 1;
            }
            Dir::Left => {
                steps.push(AlignStep::GapB(j - 1));
                j -= 1;
            }
        }
    }
    steps.reverse();
    Ok(SentenceAlignmentPath {
        steps,
        total_score: score[n * w + m],
    })
}

/// Human sentences projected onto one source paragraph for one translator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub doc_id: String,
    pub translator_id: String,
    pub source_index: usize,
    pub gtr_text: String,
    pub hum_text: String,
    /// Number of human sentences in `hum_text`.
    pub hum_sentences: usize,
    /// How many of those were gap-aligned and attached by the neighbour rule.
    pub gap_attached: usize,
    /// No human sentence landed on this paragraph.
    pub empty: bool,
}

/// Groups human sentences by the source paragraph of the machine sentence
/// they align to.
///
/// A gap-aligned human sentence takes the paragraph of the nearest earlier
/// matched human sentence, or the nearest later one when none precedes it.
/// Every machine paragraph yields one [`PairAlignment`]; paragraphs that
/// receive nothing come back with an empty `hum_text` and `empty` set.
pub fn project_to_paragraphs<T: Scalar>(
    path: &SentenceAlignmentPath<T>,
    hum_sentences: &[&str],
    gtr_sentences: &[Sentence],
    gtr_paragraphs: &[String],
    doc_id: &str,
    translator_id: &str,
) -> Result<Vec<PairAlignment>, AlignError> {
    let (pa, pb) = path.extent();
    if pa != hum_sentences.len() || pb != gtr_sentences.len() {
        return Err(AlignError::PathMismatch {
            path_a: pa,
            path_b: pb,
            a: hum_sentences.len(),
            b: gtr_sentences.len(),
        });
    }
    for (k, s) in gtr_sentences.iter().enumerate() {
        if s.paragraph_index >= gtr_paragraphs.len() {
            return Err(AlignError::ParagraphOutOfRange {
                index: k,
                paragraph: s.paragraph_index,
                paragraphs: gtr_paragraphs.len(),
            });
        }
    }

    let mut assigned: Vec<Option<usize>> = vec![None; hum_sentences.len()];
    // Paragraph of the last machine sentence consumed before each human
    // sentence; only used when the path has no matches at all.
    let mut positional = vec![0usize; hum_sentences.len()];
    let mut last_b: Option<usize> = None;
    for step in &path.steps {
        match *step {
            AlignStep::Match { a, b } => {
                assigned[a] = Some(gtr_sentences[b].paragraph_index);
                last_b = Some(b);
            }
            AlignStep::GapA(a) => {
                positional[a] = gtr_sentences[last_b.unwrap_or(0)].paragraph_index;
            }
            AlignStep::GapB(b) => last_b = Some(b),
        }
    }

    let matched = assigned.clone();
    let mut gap_flags = vec![false; hum_sentences.len()];
    for i in 0..assigned.len() {
        if matched[i].is_some() {
            continue;
        }
        gap_flags[i] = true;
        let before = matched[..i].iter().rev().find_map(|p| *p);
        let after = || matched[i + 1..].iter().find_map(|p| *p);
        assigned[i] = Some(before.or_else(after).unwrap_or(positional[i]));
    }

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); gtr_paragraphs.len()];
    for (i, p) in assigned.iter().enumerate() {
        buckets[p.expect("all sentences assigned")].push(i);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(p, idx)| PairAlignment {
            doc_id: doc_id.to_string(),
            translator_id: translator_id.to_string(),
            source_index: p,
            gtr_text: gtr_paragraphs[p].clone(),
            hum_text: idx
                .iter()
                .map(|&i| hum_sentences[i].trim())
                .collect::<Vec<_>>()
                .join(" "),
            hum_sentences: idx.len(),
            gap_attached: idx.iter().filter(|&&i| gap_flags[i]).count(),
            empty: idx.is_empty(),
        })
        .collect())
}

#[derive(Debug, Error)]
pub enum BookAlignError {
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("{doc_id}/{translator_id}: no sentences to align")]
    NoSentences { doc_id: String, translator_id: String },
}

/// Segments one human translation, aligns it against the machine sentences
/// of the same book and projects it onto the machine paragraphs.
#[allow(clippy::too_many_arguments)]
pub fn align_translation(
    doc_id: &str,
    translator_id: &str,
    gtr_paragraphs: &[String],
    gtr_sentences: &[Sentence],
    human_paragraphs: &[String],
    segmenter: &dyn Segmenter,
    scorer: &dyn SimilarityScorer,
    gap_penalty: f64,
) -> Result<Vec<PairAlignment>, BookAlignError> {
    let hum = segment_document(human_paragraphs, segmenter)?;
    if hum.is_empty() || gtr_sentences.is_empty() {
        return Err(BookAlignError::NoSentences {
            doc_id: doc_id.to_string(),
            translator_id: translator_id.to_string(),
        });
    }
    let hum_texts: Vec<&str> = hum.iter().map(|s| s.text.as_str()).collect();
    let gtr_texts: Vec<&str> = gtr_sentences.iter().map(|s| s.text.as_str()).collect();
    let matrix = scorer.score_matrix(&hum_texts, &gtr_texts)?;
    let path = needleman_wunsch(&matrix, gap_penalty)?;
    Ok(project_to_paragraphs(
        &path,
        &hum_texts,
        gtr_sentences,
        gtr_paragraphs,
        doc_id,
        translator_id,
    )?)
}

/// Pair alignments for every human translation of `book`, translators in
/// id order, paragraphs in source order within each translator.
pub fn align_book(
    book: &IngestedBook,
    segmenter: &dyn Segmenter,
    scorer: &dyn SimilarityScorer,
    gap_penalty: f64,
) -> Result<Vec<PairAlignment>, BookAlignError> {
    let gtr_sentences = segment_document(&book.machine.paragraphs, segmenter)?;
    let mut humans: Vec<_> = book.humans.iter().collect();
    humans.sort_by(|a, b| a.translator_id.cmp(&b.translator_id));
    let mut out = Vec::new();
    for h in humans {
        out.extend(align_translation(
            &book.source.doc_id,
            &h.translator_id,
            &book.machine.paragraphs,
            &gtr_sentences,
            &h.paragraphs,
            segmenter,
            scorer,
            gap_penalty,
        )?);
    }
    Ok(out)
}

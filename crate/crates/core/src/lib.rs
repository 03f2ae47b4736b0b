//! Building and evaluating paragraph-aligned literary parallel corpora.

pub mod aligner;
pub mod corpus;
pub mod filter;
pub mod metrics;
pub mod postedit;
pub mod retry;
pub mod scalar;
pub mod seed;
pub mod segmentation;
pub mod similarity;
pub mod stats;
pub mod tokens;

pub use aligner::{needleman_wunsch, AlignStep, SentenceAlignmentPath, DEFAULT_GAP_PENALTY};
pub use scalar::Scalar;
pub use similarity::ScoreMatrix;

/// Exact rational scalar.
pub type Exact = num_rational::Ratio<i64>;
pub type ScoreMatrixF64 = ScoreMatrix<f64>;
pub type ScoreMatrixExact = ScoreMatrix<Exact>;
pub type AlignmentPathF64 = SentenceAlignmentPath<f64>;
pub type AlignmentPathExact = SentenceAlignmentPath<Exact>;

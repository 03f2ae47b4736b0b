//! The single TOML configuration file.

use std::path::{Path, PathBuf};

use litforge_core::aligner::DEFAULT_GAP_PENALTY;
use litforge_core::filter::FilterConfig;
use litforge_core::metrics::BleuConfig;
use litforge_core::postedit::PosteditConfig;
use litforge_core::seed::derive_seed;
use litforge_core::similarity::EmbeddingConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    pub paths: Paths,
    pub segmenter: SegmenterSection,
    pub similarity: SimilaritySection,
    pub aligner: AlignerSection,
    pub filter: FilterConfig,
    pub metrics: BleuConfig,
    pub postedit: PosteditConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Book directories for `ingest` when none are given on the command line.
    pub books: Vec<PathBuf>,
    /// Where every artifact and the manifest are written.
    pub work: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            books: Vec::new(),
            work: PathBuf::from("litforge-out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterSection {
    /// External sentencizer; the rule-based splitter is used when unset.
    pub program: Option<String>,
    pub args: Vec<String>,
    /// Extra abbreviations protected from sentence splitting.
    pub abbreviations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Lexical,
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub kind: SimilarityKind,
    pub endpoint: Option<String>,
    pub embedding: EmbeddingConfig,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        SimilaritySection {
            kind: SimilarityKind::Lexical,
            endpoint: None,
            embedding: EmbeddingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignerSection {
    pub gap_penalty: f64,
}

impl Default for AlignerSection {
    fn default() -> Self {
        AlignerSection {
            gap_penalty: DEFAULT_GAP_PENALTY,
        }
    }
}

impl PipelineConfig {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.work = base.join(&cfg.paths.work);
        cfg.paths.books = cfg.paths.books.iter().map(|b| base.join(b)).collect();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.filter.validate()?;
        self.postedit.validate()?;
        if !self.aligner.gap_penalty.is_finite() || self.aligner.gap_penalty > 0.0 {
            anyhow::bail!("aligner.gap_penalty must be finite and <= 0");
        }
        if self.similarity.kind == SimilarityKind::Embedding && self.similarity.endpoint.is_none() {
            anyhow::bail!("similarity.endpoint is required for embedding similarity");
        }
        Ok(())
    }

    /// Seed for `stage`, derived from the global seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Filter settings with the derived build seed.
    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            seed: self.stage_seed("build"),
            ..self.filter.clone()
        }
    }

    pub fn postedit_config(&self) -> PosteditConfig {
        PosteditConfig {
            seed: self.stage_seed("prep-finetune"),
            ..self.postedit.clone()
        }
    }
}

//! Paragraph extraction, artifact stripping and rule-based sentence
//! segmentation.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::{Command, Stdio};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid strip pattern `{pattern}`: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("segmenter config needs at least one terminal mark")]
    NoTerminalMarks,
    #[error("segmenter subprocess `{program}` failed: {message}")]
    Subprocess { program: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub paragraph_index: usize,
    pub sentence_index: usize,
}

/// Terminals that end a sentence even without following whitespace.
const FULLWIDTH_TERMINALS: [char; 3] = ['。', '！', '？'];

const CLOSERS: [char; 13] = [
    '"', '\'', '”', '’', '»', '«', ')', ']', '」', '』', '）', '】', '›',
];

const EN_GUARDS: [&str; 24] = [
    "Mr.", "Mrs.", "Ms.", "Dr.", "St.", "Mme.", "Mlle.", "M.", "Prof.", "Rev.", "Capt.", "Col.",
    "Gen.", "Lt.", "Sgt.", "Jr.", "Sr.", "vs.", "etc.", "e.g.", "i.e.", "No.", "Messrs.", "Hon.",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub language: String,
    pub abbreviation_guards: BTreeSet<String>,
    pub terminal_marks: BTreeSet<char>,
    pub strip_patterns: Vec<String>,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig::for_language("en")
    }
}

impl SegmenterConfig {
    /// Defaults for `language`. English guards apply to every language since
    /// segmentation runs on English translations; Japanese adds furigana and
    /// annotation patterns for source-side cleanup.
    pub fn for_language(language: &str) -> Self {
        let strip_patterns = match language {
            "ja" => vec![
                // ruby readings: 漢字《かんじ》 and the ｜ base-text marker
                "《[^》]*》".to_string(),
                "｜".to_string(),
                // editorial annotations such as ［＃「x」に傍点］
                "［＃[^］]*］".to_string(),
            ],
            _ => Vec::new(),
        };
        SegmenterConfig {
            language: language.to_string(),
            abbreviation_guards: EN_GUARDS.iter().map(|s| s.to_string()).collect(),
            terminal_marks: ['.', '!', '?', '。', '！', '？', '…'].into_iter().collect(),
            strip_patterns,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.terminal_marks.is_empty() {
            return Err(SegmentError::NoTerminalMarks);
        }
        self.compile_patterns().map(|_| ())
    }

    fn compile_patterns(&self) -> Result<Vec<Regex>, SegmentError> {
        self.strip_patterns
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|source| SegmentError::Pattern {
                    pattern: p.clone(),
                    source,
                })
            })
            .collect()
    }
}

/// Splits raw book text on runs of blank lines.
///
/// Hard-wrapped lines inside a paragraph are joined with single spaces.
pub fn extract_paragraphs(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                out.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}

/// Removes every strip pattern until nothing more matches.
pub fn strip_artifacts(paragraph: &str, cfg: &SegmenterConfig) -> Result<String, SegmentError> {
    Ok(ArtifactStripper::new(cfg)?.strip(paragraph))
}

/// Precompiled form of [`strip_artifacts`] for use over many paragraphs.
#[derive(Clone, Debug)]
pub struct ArtifactStripper {
    patterns: Vec<Regex>,
}

impl ArtifactStripper {
    pub fn new(cfg: &SegmenterConfig) -> Result<Self, SegmentError> {
        Ok(ArtifactStripper {
            patterns: cfg.compile_patterns()?,
        })
    }

    pub fn strip(&self, paragraph: &str) -> String {
        let mut text = paragraph.to_string();
        // Removal can join fragments into a new match, so iterate to a fixpoint.
        loop {
            let mut next = text.clone();
            for re in &self.patterns {
                next = re.replace_all(&next, "").into_owned();
            }
            if next == text {
                return text;
            }
            text = next;
        }
    }
}

/// Something that splits one paragraph into sentence strings.
pub trait Segmenter: Send + Sync {
    fn split(&self, paragraph: &str) -> Result<Vec<String>, SegmentError>;
}

/// Deterministic terminal-mark splitter.
#[derive(Clone, Debug)]
pub struct RuleSegmenter {
    cfg: SegmenterConfig,
}

impl RuleSegmenter {
    pub fn new(cfg: SegmenterConfig) -> Result<Self, SegmentError> {
        cfg.validate()?;
        Ok(RuleSegmenter { cfg })
    }
}

impl Segmenter for RuleSegmenter {
    fn split(&self, paragraph: &str) -> Result<Vec<String>, SegmentError> {
        Ok(split_rule_based(paragraph, &self.cfg))
    }
}

fn split_rule_based(paragraph: &str, cfg: &SegmenterConfig) -> Vec<String> {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < n {
        let (pos, c) = chars[i];
        if !cfg.terminal_marks.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < n && cfg.terminal_marks.contains(&chars[j].1) {
            j += 1;
        }
        while j < n && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        if j >= n {
            break;
        }
        let fullwidth = chars[i..j]
            .iter()
            .any(|(_, ch)| FULLWIDTH_TERMINALS.contains(ch));
        let spaced = chars[j].1.is_whitespace();
        if (spaced || fullwidth) && !guarded(paragraph, start, pos + c.len_utf8(), cfg) {
            let end = chars[j].0;
            push_trimmed(&mut out, &paragraph[start..end]);
            start = end;
        }
        i = j;
    }
    push_trimmed(&mut out, &paragraph[start..]);
    if out.is_empty() {
        out.push(paragraph.trim().to_string());
    }
    out
}

/// True when the word ending at `end` is an abbreviation guard.
fn guarded(text: &str, start: usize, end: usize, cfg: &SegmenterConfig) -> bool {
    let head = &text[start..end];
    let word = head
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or(head)
        .trim_start_matches(|c: char| CLOSERS.contains(&c) || c == '“' || c == '‘' || c == '(');
    cfg.abbreviation_guards.contains(word)
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Splits `paragraph` with the default rule-based segmenter.
pub fn segment_sentences(paragraph: &str, paragraph_index: usize, cfg: &SegmenterConfig) -> Vec<Sentence> {
    index_sentences(split_rule_based(paragraph, cfg), paragraph_index)
}

/// Segments every paragraph of a document with `segmenter`.
pub fn segment_document(
    paragraphs: &[String],
    segmenter: &dyn Segmenter,
) -> Result<Vec<Sentence>, SegmentError> {
    let mut out = Vec::new();
    for (p, para) in paragraphs.iter().enumerate() {
        out.extend(index_sentences(segmenter.split(para)?, p));
    }
    Ok(out)
}

fn index_sentences(texts: Vec<String>, paragraph_index: usize) -> Vec<Sentence> {
    texts
        .into_iter()
        .enumerate()
        .map(|(k, text)| Sentence {
            text,
            paragraph_index,
            sentence_index: k,
        })
        .collect()
}

/// Wraps an external sentencizer: the paragraph goes to stdin on one line,
/// and each non-empty stdout line is a sentence.
#[derive(Clone, Debug)]
pub struct SubprocessSegmenter {
    pub program: String,
    pub args: Vec<String>,
}

impl Segmenter for SubprocessSegmenter {
    fn split(&self, paragraph: &str) -> Result<Vec<String>, SegmentError> {
        let fail = |message: String| SegmentError::Subprocess {
            program: self.program.clone(),
            message,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let line = paragraph.replace(['\n', '\r'], " ");
            stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| fail(e.to_string()))?;
        }
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !output.status.success() {
            return Err(fail(format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let text = String::from_utf8(output.stdout).map_err(|e| fail(e.to_string()))?;
        let sentences: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if sentences.is_empty() {
            return Err(fail("no sentences returned".into()));
        }
        Ok(sentences)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(p: &str) -> Vec<String> {
        segment_sentences(p, 0, &SegmenterConfig::default())
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    #[test]
    fn paragraphs_split_on_blank_lines() {
        assert_eq!(extract_paragraphs("A.\n\nB."), vec!["A.", "B."]);
        assert_eq!(extract_paragraphs("A.\n\n\n\nB."), vec!["A.", "B."]);
        assert!(extract_paragraphs("  \n\n").is_empty());
        assert_eq!(
            extract_paragraphs("  first line\nwrapped  \n \t\nnext"),
            vec!["first line wrapped", "next"]
        );
    }

    #[test]
    fn two_terminal_marks() {
        assert_eq!(texts("I woke. It was cold."), vec!["I woke.", "It was cold."]);
    }

    #[test]
    fn guard_suppresses_split() {
        assert_eq!(texts("Mr. Smith left."), vec!["Mr. Smith left."]);
    }

    #[test]
    fn machine_translation_paragraph() {
        // Hand-applied: the semicolon is not terminal; each period followed
        // by a space closes a sentence.
        let abridged = "“Excuse me; stop by for a little time. I will need to speak with you.";
        assert_eq!(texts(abridged).len(), 2);
        let full = "“Excuse me; seeing from a distance how you entered the shop, I decided to disturb you. If you will be free after and on the way past my house, so do yourself a favour, stop by for a little time. I will need to speak with you.";
        let got = texts(full);
        assert_eq!(got.len(), 3);
        assert_eq!(got[2], "I will need to speak with you.");
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(
            texts("He said, “Go.” Then he left!"),
            vec!["He said, “Go.”", "Then he left!"]
        );
    }

    #[test]
    fn cjk_without_spaces() {
        assert_eq!(
            texts("吾輩は猫である。名前はまだ無い。"),
            vec!["吾輩は猫である。", "名前はまだ無い。"]
        );
        assert_eq!(texts("「行こう。」彼は言った。"), vec!["「行こう。」", "彼は言った。"]);
    }

    #[test]
    fn furigana_removed() {
        let cfg = SegmenterConfig::for_language("ja");
        let s = strip_artifacts("｜吾輩《わがはい》は猫である。", &cfg).unwrap();
        assert_eq!(s, "吾輩は猫である。");
        let plain = "No markers here.";
        assert_eq!(strip_artifacts(plain, &cfg).unwrap(), plain);
    }

    #[test]
    fn strip_reaches_fixpoint() {
        let cfg = SegmenterConfig {
            strip_patterns: vec!["ab".into()],
            ..SegmenterConfig::default()
        };
        let once = strip_artifacts("aabb", &cfg).unwrap();
        assert_eq!(once, "");
    }

    #[test]
    fn bad_pattern_is_an_error() {
        let cfg = SegmenterConfig {
            strip_patterns: vec!["(".into()],
            ..SegmenterConfig::default()
        };
        assert!(matches!(strip_artifacts("x", &cfg), Err(SegmentError::Pattern { .. })));
    }

    #[test]
    fn subprocess_contract() {
        let seg = SubprocessSegmenter {
            program: "sh".into(),
            args: vec!["-c".into(), "tr '|' '\\n'".into()],
        };
        assert_eq!(seg.split("one|two").unwrap(), vec!["one", "two"]);
        let failing = SubprocessSegmenter {
            program: "sh".into(),
            args: vec!["-c".into(), "exit 3".into()],
        };
        assert!(failing.split("x").is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_modulo_whitespace(p in "[A-Za-z .!?,“”]{1,80}") {
            prop_assume!(!p.trim().is_empty());
            let cfg = SegmenterConfig::default();
            let sents = segment_sentences(&p, 3, &cfg);
            prop_assert!(!sents.is_empty());
            let joined: String = sents.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let squash = |s: &str| s.split_whitespace().collect::<String>();
            prop_assert_eq!(squash(&joined), squash(&p));
            for (k, s) in sents.iter().enumerate() {
                prop_assert_eq!(s.sentence_index, k);
                prop_assert_eq!(s.paragraph_index, 3);
            }
        }

        #[test]
        fn strip_is_idempotent(p in "[a-z《》｜あ ]{0,40}") {
            let cfg = SegmenterConfig::for_language("ja");
            let once = strip_artifacts(&p, &cfg).unwrap();
            prop_assert_eq!(strip_artifacts(&once, &cfg).unwrap(), once.clone());
        }
    }
}

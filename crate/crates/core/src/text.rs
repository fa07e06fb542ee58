//! Source words, target tokens and the streaming view over a source sentence.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One whitespace-delimited source word. Never empty, never contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceWord(String);

impl SourceWord {
    pub fn new(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            None
        } else {
            Some(Self(text))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits a sentence into streamable words on Unicode whitespace.
pub fn tokenize_source(sentence: &str) -> Result<Vec<SourceWord>> {
    let words: Vec<SourceWord> = sentence
        .split_whitespace()
        .map(|w| SourceWord(w.to_owned()))
        .collect();
    if words.is_empty() {
        return Err(Error::EmptySource);
    }
    Ok(words)
}

pub fn join_words(words: &[SourceWord]) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w.as_str());
    }
    out
}

/// Number of whitespace-delimited words, the unit used for delays and LAAL.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// A source sentence revealed one word at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceStream {
    words: Vec<SourceWord>,
    cursor: usize,
}

impl SourceStream {
    /// A stream with nothing revealed yet.
    pub fn new(words: Vec<SourceWord>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptySource);
        }
        Ok(Self { words, cursor: 0 })
    }

    pub fn from_sentence(sentence: &str) -> Result<Self> {
        Self::new(tokenize_source(sentence)?)
    }

    /// Reveals the next word, returning it, or `None` once the source is exhausted.
    pub fn reveal(&mut self) -> Option<&SourceWord> {
        if self.cursor == self.words.len() {
            return None;
        }
        self.cursor += 1;
        Some(&self.words[self.cursor - 1])
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn total(&self) -> usize {
        self.words.len()
    }

    pub fn finished(&self) -> bool {
        self.cursor == self.words.len()
    }

    pub fn revealed(&self) -> &[SourceWord] {
        &self.words[..self.cursor]
    }

    pub fn words(&self) -> &[SourceWord] {
        &self.words
    }
}

/// A backend-native target unit. EOS tokens have no surface text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetToken {
    pub text: String,
    pub is_eos: bool,
}

impl TargetToken {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            is_eos: false,
        }
    }

    pub fn eos() -> Self {
        Self {
            text: String::new(),
            is_eos: true,
        }
    }
}

/// How backend pieces are glued back into surface text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "style", content = "marker", rename_all = "kebab-case")]
pub enum JoiningConvention {
    /// Pieces are separated by spaces, except that a piece ending in the
    /// marker is glued to the next one (`"Bahn@@" "hof"` → `Bahnhof`).
    ContinuationMarker(String),
    /// The marker at the start of a piece stands for a word boundary
    /// (sentencepiece `▁`); everything else is glued.
    PrecedingSpaceMarker(String),
    /// Pieces are concatenated verbatim; a non-empty marker (e.g. `Ġ`) is
    /// mapped back to a space.
    ByteLevel(String),
}

impl JoiningConvention {
    pub fn validate(&self) -> Result<()> {
        match self {
            JoiningConvention::ContinuationMarker(m)
            | JoiningConvention::PrecedingSpaceMarker(m)
                if m.is_empty() =>
            {
                Err(Error::Config(format!("{self} requires a non-empty marker")))
            }
            JoiningConvention::ByteLevel(m) if m.chars().any(char::is_whitespace) => Err(
                Error::Config("byte-level marker must not be whitespace".into()),
            ),
            _ => Ok(()),
        }
    }
}

impl Default for JoiningConvention {
    fn default() -> Self {
        JoiningConvention::ContinuationMarker("@@".into())
    }
}

impl fmt::Display for JoiningConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JoiningConvention::ContinuationMarker(m) => write!(f, "continuation:{m}"),
            JoiningConvention::PrecedingSpaceMarker(m) => write!(f, "space-marker:{m}"),
            JoiningConvention::ByteLevel(m) if m.is_empty() => f.write_str("byte-level"),
            JoiningConvention::ByteLevel(m) => write!(f, "byte-level:{m}"),
        }
    }
}

impl FromStr for JoiningConvention {
    type Err = Error;

    /// Parses `continuation:@@`, `space-marker:▁`, `byte-level` or `byte-level:Ġ`.
    fn from_str(s: &str) -> Result<Self> {
        let (style, marker) = match s.split_once(':') {
            Some((style, marker)) => (style, marker),
            None => (s, ""),
        };
        let conv = match style {
            "continuation" => JoiningConvention::ContinuationMarker(marker.to_owned()),
            "space-marker" => JoiningConvention::PrecedingSpaceMarker(marker.to_owned()),
            "byte-level" => JoiningConvention::ByteLevel(marker.to_owned()),
            other => return Err(Error::Config(format!("unknown joining style {other:?}"))),
        };
        conv.validate()?;
        Ok(conv)
    }
}

/// Joins target pieces into surface text. EOS tokens contribute nothing and
/// the result carries no leading or trailing whitespace.
pub fn detokenize(tokens: &[TargetToken], joining: &JoiningConvention) -> String {
    let pieces = tokens.iter().filter(|t| !t.is_eos).map(|t| t.text.as_str());
    let mut out = String::new();
    match joining {
        JoiningConvention::ContinuationMarker(marker) => {
            let mut glue = true;
            for piece in pieces {
                let (stem, glue_next) = match piece.strip_suffix(marker.as_str()) {
                    Some(stem) => (stem, true),
                    None => (piece, false),
                };
                if !glue && !stem.is_empty() {
                    out.push(' ');
                }
                out.push_str(stem);
                glue = glue_next || (stem.is_empty() && glue);
            }
        }
        JoiningConvention::PrecedingSpaceMarker(marker) => {
            for piece in pieces {
                out.push_str(&piece.replace(marker.as_str(), " "));
            }
        }
        JoiningConvention::ByteLevel(marker) => {
            for piece in pieces {
                if marker.is_empty() {
                    out.push_str(piece);
                } else {
                    out.push_str(&piece.replace(marker.as_str(), " "));
                }
            }
        }
    }
    out.trim().to_owned()
}

/// One `source<TAB>target` line of a parallel corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    /// 1-based line number in the corpus file, as a string.
    pub id: String,
    pub source: String,
    pub target: String,
}

/// Parses a UTF-8 TSV parallel corpus. Blank lines are skipped; any other
/// line without exactly two tab-separated fields is rejected.
pub fn parse_corpus(text: &str) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Corpus {
                line,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].trim().is_empty() {
            return Err(Error::Corpus {
                line,
                message: "empty source sentence".into(),
            });
        }
        pairs.push(SentencePair {
            id: line.to_string(),
            source: fields[0].to_owned(),
            target: fields[1].to_owned(),
        });
    }
    Ok(pairs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<SentencePair>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text)
}

/// Orders sentence ids numerically when both parse as integers, lexically otherwise.
pub fn compare_ids(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

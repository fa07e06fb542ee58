//! Prompt construction for incremental states.
//!
//! The model input at step `t` is the instruction rendered over the revealed
//! source words, wrapped in the open/close markers, followed by the target
//! text committed so far. The model then only has to continue the target.

use crate::error::{Error, Result};
use crate::text::{detokenize, join_words, JoiningConvention, SourceStream, TargetToken};

pub const DEFAULT_INSTRUCTION: &str =
    "Translate the following sentence from {src_lang} to {tgt_lang}: {source}";
pub const DEFAULT_OPEN_MARKER: &str = "[INST] ";
pub const DEFAULT_CLOSE_MARKER: &str = " [/INST] ";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    SrcLang,
    TgtLang,
    Source,
}

/// Instruction pattern plus chat markers. Construct with [`PromptTemplate::new`],
/// which checks that `{source}` occurs exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pattern: String,
    segments: Vec<Segment>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub open_marker: String,
    pub close_marker: String,
    pub one_shot: Option<(String, String)>,
}

impl PromptTemplate {
    pub fn new(pattern: &str, src_lang: &str, tgt_lang: &str) -> Result<Self> {
        let segments = parse_pattern(pattern)?;
        Ok(Self {
            pattern: pattern.to_owned(),
            segments,
            src_lang: src_lang.to_owned(),
            tgt_lang: tgt_lang.to_owned(),
            open_marker: DEFAULT_OPEN_MARKER.to_owned(),
            close_marker: DEFAULT_CLOSE_MARKER.to_owned(),
            one_shot: None,
        })
    }

    pub fn with_markers(mut self, open: &str, close: &str) -> Self {
        self.open_marker = open.to_owned();
        self.close_marker = close.to_owned();
        self
    }

    pub fn with_one_shot(mut self, source: &str, target: &str) -> Self {
        self.one_shot = Some((source.to_owned(), target.to_owned()));
        self
    }

    pub fn with_languages(&self, src_lang: &str, tgt_lang: &str) -> Self {
        Self {
            src_lang: src_lang.to_owned(),
            tgt_lang: tgt_lang.to_owned(),
            ..self.clone()
        }
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// The instruction with `{source}` filled in, without markers.
    pub fn render_instruction(&self, source: &str) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::SrcLang => out.push_str(&self.src_lang),
                Segment::TgtLang => out.push_str(&self.tgt_lang),
                Segment::Source => out.push_str(source),
            }
        }
        out
    }

    /// Renders a complete prompt for a source string and target prefix text.
    pub fn render(&self, source: &str, target: &str) -> String {
        let mut out = String::new();
        if let Some((ex_src, ex_tgt)) = &self.one_shot {
            out.push_str(&self.open_marker);
            out.push_str(&self.render_instruction(ex_src));
            out.push_str(&self.close_marker);
            out.push_str(ex_tgt);
            out.push('\n');
        }
        out.push_str(&self.open_marker);
        out.push_str(&self.render_instruction(source));
        out.push_str(&self.close_marker);
        out.push_str(target);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_INSTRUCTION, "English", "German").expect("default pattern is valid")
    }
}

fn parse_pattern(pattern: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = pattern;
    let mut sources = 0;
    while !rest.is_empty() {
        let placeholder = [
            ("{src_lang}", Segment::SrcLang),
            ("{tgt_lang}", Segment::TgtLang),
            ("{source}", Segment::Source),
        ]
        .into_iter()
        .find(|(name, _)| rest.starts_with(name));
        match placeholder {
            Some((name, seg)) => {
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                if seg == Segment::Source {
                    sources += 1;
                }
                segments.push(seg);
                rest = &rest[name.len()..];
            }
            None => {
                let ch = rest.chars().next().expect("rest is non-empty");
                literal.push(ch);
                rest = &rest[ch.len_utf8()..];
            }
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    if sources != 1 {
        return Err(Error::Template(format!(
            "pattern must contain {{source}} exactly once, found {sources}"
        )));
    }
    Ok(segments)
}

/// `S_t` and `T_t` at step `t`, where `t` is the number of revealed source words.
#[derive(Debug, Clone)]
pub struct IncrementalState {
    pub source: SourceStream,
    target: Vec<TargetToken>,
}

impl IncrementalState {
    pub fn new(source: SourceStream) -> Self {
        Self {
            source,
            target: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.source.cursor()
    }

    pub fn target(&self) -> &[TargetToken] {
        &self.target
    }

    /// Appends committed tokens. The target only ever grows.
    pub fn commit(&mut self, tokens: &[TargetToken]) {
        self.target.extend_from_slice(tokens);
    }
}

/// Builds the model input for the current state.
pub fn build_prompt(
    template: &PromptTemplate,
    state: &IncrementalState,
    joining: &JoiningConvention,
) -> Result<String> {
    if state.source.cursor() == 0 {
        return Err(Error::EmptySource);
    }
    let source = join_words(state.source.revealed());
    let target = detokenize(state.target(), joining);
    Ok(template.render(&source, &target))
}

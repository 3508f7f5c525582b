//! Labeling prompts and reply parsing.
//!
//! Every dimension has its own prompt template with a single `{text}` slot.
//! The LLM is asked to end its reply with the dimension's score tag followed
//! by an integer on the dimension's Likert scale; [`parse_score`] recovers
//! that integer or reports why it could not.

use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::fnv1a;
use crate::model::{DimensionSpec, Document};

/// Placeholder the document text replaces.
pub const TEXT_SLOT: &str = "{text}";

const TEMPLATES: [(&str, &str); 11] = [
    ("coherence", include_str!("prompts/coherence.txt")),
    ("conciseness", include_str!("prompts/conciseness.txt")),
    ("spelling accuracy", include_str!("prompts/spelling_accuracy.txt")),
    ("knowledge depth", include_str!("prompts/knowledge_depth.txt")),
    ("knowledge richness", include_str!("prompts/knowledge_richness.txt")),
    ("reasoning", include_str!("prompts/reasoning.txt")),
    ("educational value", include_str!("prompts/educational_value.txt")),
    ("practical helpfulness", include_str!("prompts/practical_helpfulness.txt")),
    ("comprehension difficulty", include_str!("prompts/comprehension_difficulty.txt")),
    ("factual accuracy", include_str!("prompts/factual_accuracy.txt")),
    ("completeness", include_str!("prompts/completeness.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no prompt template for dimension {0:?}")]
    UnknownDimension(String),
    #[error("document {0} has empty text")]
    EmptyText(String),
}

/// Why a reply did not yield a usable score. Each variant means the cell
/// has to be re-queried or dropped.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("reply does not contain the tag {tag:?}")]
    MissingTag { tag: String },
    #[error("no integer follows the tag {tag:?}")]
    MalformedScore { tag: String },
    #[error("score {value} is outside [0, {scale_max}]")]
    OutOfRange { value: i64, scale_max: u8 },
}

pub fn template(dimension: &str) -> Option<&'static str> {
    TEMPLATES
        .iter()
        .find(|(name, _)| *name == dimension)
        .map(|(_, t)| *t)
}

/// The dimension's template with the document substituted at `{text}`.
/// Substitution is a single pass, so braces inside the document are kept
/// literally.
pub fn render_prompt(doc: &Document, dim: &DimensionSpec) -> Result<String, PromptError> {
    if doc.text.is_empty() {
        return Err(PromptError::EmptyText(doc.id.clone()));
    }
    let tpl = template(&dim.name).ok_or_else(|| PromptError::UnknownDimension(dim.name.clone()))?;
    let (head, tail) = tpl
        .split_once(TEXT_SLOT)
        .expect("every bundled template has a text slot");
    let mut out = String::with_capacity(head.len() + doc.text.len() + tail.len());
    out.push_str(head);
    out.push_str(&doc.text);
    out.push_str(tail);
    Ok(out)
}

/// Stable 64-bit fingerprint of a rendered prompt, used in cache keys.
pub fn prompt_hash(prompt: &str) -> u64 {
    fnv1a(prompt.as_bytes())
}

/// Extracts the score from an LLM reply.
///
/// The tag is matched exactly first and case-insensitively as a fallback.
/// When it occurs several times the last occurrence that is followed by a
/// number wins, since replies tend to restate the format before concluding.
/// Whitespace and light markup (`*`, quotes, `:`, `[`, `(`) between tag and
/// number are skipped. A fractional part is accepted only if it is zero.
pub fn parse_score(reply: &str, dim: &DimensionSpec) -> Result<u8, ParseError> {
    let tag = dim.score_tag.as_str();
    let mut positions = match_positions(reply, tag, false);
    if positions.is_empty() {
        positions = match_positions(reply, tag, true);
    }
    if positions.is_empty() {
        return Err(ParseError::MissingTag { tag: tag.into() });
    }
    for &start in positions.iter().rev() {
        let rest = &reply[start + tag.len()..];
        match leading_integer(rest) {
            Number::Integer(value) => {
                if (0..=i64::from(dim.scale_max)).contains(&value) {
                    return Ok(value as u8);
                }
                return Err(ParseError::OutOfRange {
                    value,
                    scale_max: dim.scale_max,
                });
            }
            Number::Fractional => return Err(ParseError::MalformedScore { tag: tag.into() }),
            Number::Absent => continue,
        }
    }
    Err(ParseError::MalformedScore { tag: tag.into() })
}

fn match_positions(haystack: &str, needle: &str, ignore_case: bool) -> alloc::vec::Vec<usize> {
    let mut out = alloc::vec::Vec::new();
    if needle.is_empty() || needle.len() > haystack.len() {
        return out;
    }
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    for i in 0..=(h.len() - n.len()) {
        let window = &h[i..i + n.len()];
        let hit = if ignore_case {
            window.eq_ignore_ascii_case(n)
        } else {
            window == n
        };
        if hit && haystack.is_char_boundary(i) {
            out.push(i);
        }
    }
    out
}

enum Number {
    Integer(i64),
    Fractional,
    Absent,
}

fn leading_integer(s: &str) -> Number {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() && matches!(bytes[i], b' ' | b'\t' | b'\r' | b'\n' | b'*' | b'"' | b'\'' | b':' | b'[' | b'(' | b'`') {
        i += 1;
    }
    let negative = i < bytes.len() && bytes[i] == b'-';
    if negative {
        i += 1;
    }
    let start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == start {
        return Number::Absent;
    }
    let mut value: i64 = 0;
    for &b in &bytes[start..i] {
        value = value.saturating_mul(10).saturating_add(i64::from(b - b'0'));
    }
    if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
        let mut j = i + 1;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            if bytes[j] != b'0' {
                return Number::Fractional;
            }
            j += 1;
        }
    }
    Number::Integer(if negative { -value } else { value })
}

/// One (document, dimension) cell to be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub doc_id: String,
    pub dimension: DimensionSpec,
    pub prompt_text: String,
}

impl LabelRequest {
    pub fn new(doc: &Document, dim: &DimensionSpec) -> Result<Self, PromptError> {
        Ok(Self {
            doc_id: doc.id.clone(),
            dimension: dim.clone(),
            prompt_text: render_prompt(doc, dim)?,
        })
    }

    pub fn prompt_hash(&self) -> u64 {
        prompt_hash(&self.prompt_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub doc_id: String,
    pub dimension: String,
    pub raw_reply: String,
    pub parsed_score: Result<u8, ParseError>,
}

impl LabelResponse {
    pub fn from_reply(request: &LabelRequest, reply: String) -> Self {
        let parsed_score = parse_score(&reply, &request.dimension);
        Self {
            doc_id: request.doc_id.clone(),
            dimension: request.dimension.name.clone(),
            raw_reply: reply,
            parsed_score,
        }
    }
}

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("no well-formed code list in model output")]
pub struct ParseError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum IndexSpec {
    One(i64),
    Many(Vec<i64>),
    Text(String),
}

impl IndexSpec {
    /// 1-based indices; text like `"2, 3"` is split on non-digits.
    pub fn indices(&self) -> Vec<i64> {
        match self {
            IndexSpec::One(i) => vec![*i],
            IndexSpec::Many(v) => v.clone(),
            IndexSpec::Text(s) => s
                .split(|c: char| !c.is_ascii_digit())
                .filter_map(|p| p.parse().ok())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ParsedCode {
    pub label: String,
    #[serde(default)]
    pub definition: Option<String>,
    #[serde(default)]
    pub message_index: Option<IndexSpec>,
    #[serde(default)]
    pub parent: Option<String>,
}

/// Extracts the first well-formed JSON list of code objects from model
/// output, ignoring any surrounding prose or code fences. Entries with
/// blank labels are dropped; `[]` is a valid empty answer.
pub fn parse_code_list(text: &str) -> Result<Vec<ParsedCode>, ParseError> {
    for (pos, _) in text.match_indices('[') {
        let mut stream =
            serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Vec<ParsedCode>>();
        if let Some(Ok(items)) = stream.next() {
            return Ok(items
                .into_iter()
                .filter(|c| !c.label.trim().is_empty())
                .map(|mut c| {
                    c.label = c.label.trim().to_string();
                    c
                })
                .collect());
        }
    }
    Err(ParseError)
}

/// A topic label reply: first non-empty line, trimmed, without one pair of
/// wrapping quotes.
pub fn parse_label_line(text: &str) -> Option<String> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let unquoted = ['"', '\'', '`']
        .iter()
        .find_map(|q| line.strip_prefix(*q).and_then(|l| l.strip_suffix(*q)))
        .unwrap_or(line)
        .trim();
    (!unquoted.is_empty()).then(|| unquoted.to_string())
}

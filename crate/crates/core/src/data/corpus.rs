//! Annotated-sentence records, one JSON object per line:
//!
//! ```text
//! {"sentence_id": "s3", "tokens": ["Pierre", "Vinken", "joined"],
//!  "positive_units": [{"span1": [0, 2], "gold": "PERSON"}],
//!  "candidate_spans": [[0, 2], [2, 3]]}
//! ```
//!
//! `span2` inside a unit and `candidate_spans` are optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::{check_fields, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositiveUnit {
    pub span1: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span2: Option<Span>,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub positive_units: Vec<PositiveUnit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_spans: Option<Vec<Span>>,
}

impl AnnotatedSentence {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let t = self.tokens.len();
        let unit_spans = self
            .positive_units
            .iter()
            .flat_map(|u| std::iter::once(u.span1).chain(u.span2));
        let candidates = self.candidate_spans.iter().flatten().copied();
        for span in unit_spans.chain(candidates) {
            if !span.fits(t) {
                return Err(format!(
                    "span {span} out of bounds for sentence {:?} with {t} tokens",
                    self.sentence_id
                ));
            }
        }
        Ok(())
    }
}

const CORPUS_FIELDS: [&str; 4] = ["sentence_id", "tokens", "positive_units", "candidate_spans"];

pub fn parse_corpus(text: &str, source: &str, strict: bool) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Record {
            path: source.to_owned(),
            line: lineno + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        check_fields(&value, &CORPUS_FIELDS, strict).map_err(err)?;
        let sentence: AnnotatedSentence =
            serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        sentence.validate().map_err(err)?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>, strict: bool) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), strict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_units_and_candidates() {
        let text = r#"{"sentence_id": "s", "tokens": ["a", "b", "c"], "positive_units": [{"span1": [0, 1], "span2": [2, 3], "gold": "nsubj"}], "candidate_spans": [[1, 3]]}"#;
        let c = parse_corpus(text, "c", true).unwrap();
        assert_eq!(
            c[0].positive_units[0].span2,
            Some(Span { start: 2, end: 3 })
        );
        assert_eq!(c[0].candidate_spans.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn rejects_out_of_bounds_and_unknown() {
        let oob = r#"{"sentence_id": "s", "tokens": ["a"], "positive_units": [{"span1": [0, 2], "gold": "X"}]}"#;
        assert!(parse_corpus(oob, "c", false).is_err());
        let extra = r#"{"sentence_id": "s", "tokens": ["a"], "lang": "en"}"#;
        assert!(parse_corpus(extra, "c", false).is_ok());
        assert!(parse_corpus(extra, "c", true).is_err());
    }
}

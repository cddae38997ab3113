//! Probing examples and the line-delimited JSON task file.
//!
//! Each line is one object:
//!
//! ```text
//! {"id": "ex-17", "sentence_id": "s3", "span1": [2, 4], "span2": [7, 8], "label": 1, "gold": "ARG0"}
//! ```
//!
//! `id`, `span2` and `gold` are optional. Spans are half-open token
//! intervals. `gold` is only allowed on positive (`label: 1`) records.
//! In strict mode any other key is an error; otherwise it is ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingIndex;
use crate::error::{Error, Result};

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", try_from = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("empty span [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Midpoint in token units, doubled so it stays integral.
    pub fn twice_midpoint(&self) -> usize {
        self.start + self.end - 1
    }

    pub fn fits(&self, num_tokens: usize) -> bool {
        self.start < self.end && self.end <= num_tokens
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl TryFrom<[usize; 2]> for Span {
    type Error = String;

    fn try_from([start, end]: [usize; 2]) -> std::result::Result<Self, String> {
        if start < end {
            Ok(Span { start, end })
        } else {
            Err(format!("span [{start}, {end}) is empty"))
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// One binary probing example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanTarget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub sentence_id: String,
    pub span1: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span2: Option<Span>,
    #[serde(with = "label_as_int")]
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

mod label_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

impl SpanTarget {
    pub fn arity(&self) -> usize {
        1 + usize::from(self.span2.is_some())
    }

    pub fn spans(&self) -> impl Iterator<Item = Span> + '_ {
        std::iter::once(self.span1).chain(self.span2)
    }

    /// Gold fine-grained label of a gold-positive example.
    pub fn gold_positive(&self) -> Option<&str> {
        if self.label {
            self.gold.as_deref()
        } else {
            None
        }
    }

    fn check(&self, num_tokens: Option<usize>) -> std::result::Result<(), String> {
        if !self.label && self.gold.is_some() {
            return Err("negative example carries a gold label".into());
        }
        if let Some(t) = num_tokens {
            for span in self.spans() {
                if !span.fits(t) {
                    return Err(format!(
                        "span {span} out of bounds for sentence {:?} with {t} tokens",
                        self.sentence_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub split: Split,
    pub examples: Vec<SpanTarget>,
    pub label_inventory: BTreeSet<String>,
}

impl TaskDataset {
    pub fn new(name: impl Into<String>, split: Split, examples: Vec<SpanTarget>) -> Self {
        let label_inventory = examples
            .iter()
            .filter_map(|e| e.gold_positive().map(str::to_owned))
            .collect();
        Self {
            name: name.into(),
            split,
            examples,
            label_inventory,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of spans per example; errors if the task mixes arities.
    pub fn arity(&self) -> Result<usize> {
        let mut it = self.examples.iter().map(SpanTarget::arity);
        let first = it
            .next()
            .ok_or_else(|| Error::invalid(format!("task {:?} is empty", self.name)))?;
        if it.any(|a| a != first) {
            return Err(Error::invalid(format!(
                "task {:?} mixes single-span and span-pair examples",
                self.name
            )));
        }
        Ok(first)
    }

    /// Example id: the record's `id` field, or its zero-based line position.
    pub fn example_id(&self, i: usize) -> String {
        self.examples[i].id.clone().unwrap_or_else(|| i.to_string())
    }
}

const TASK_FIELDS: [&str; 6] = ["id", "sentence_id", "span1", "span2", "label", "gold"];

/// Rejects keys not in `known` when strict.
pub(crate) fn check_fields(
    value: &serde_json::Value,
    known: &[&str],
    strict: bool,
) -> std::result::Result<(), String> {
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    if strict {
        if let Some(k) = obj.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(format!("unknown field {k:?}"));
        }
    }
    Ok(())
}

/// Parses task records. With an embedding index every sentence id and span
/// is checked against it.
pub fn parse_task(
    text: &str,
    source: &str,
    embeddings: Option<&EmbeddingIndex>,
    strict: bool,
) -> Result<Vec<SpanTarget>> {
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
        check_fields(&value, &TASK_FIELDS, strict).map_err(err)?;
        let target: SpanTarget = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        let num_tokens = match embeddings {
            Some(index) => Some(
                index
                    .get(&target.sentence_id)
                    .ok_or_else(|| {
                        err(format!(
                            "dangling sentence_id {:?}: no embeddings",
                            target.sentence_id
                        ))
                    })?
                    .num_tokens(),
            ),
            None => None,
        };
        target.check(num_tokens).map_err(err)?;
        out.push(target);
    }
    Ok(out)
}

/// Name and split from a file stem like `ner.dev`; unknown suffixes default
/// to the train split.
fn name_and_split(path: &Path) -> (String, Split) {
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_suffix(".jsonl").unwrap_or(s))
        .unwrap_or("task");
    if let Some((name, split)) = stem.rsplit_once('.') {
        if let Ok(split) = split.parse() {
            return (name.to_owned(), split);
        }
    }
    (stem.to_owned(), Split::Train)
}

pub fn load_task(
    path: impl AsRef<Path>,
    embeddings: &EmbeddingIndex,
    strict: bool,
) -> Result<TaskDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let examples = parse_task(&text, &path.display().to_string(), Some(embeddings), strict)?;
    let (name, split) = name_and_split(path);
    Ok(TaskDataset::new(name, split, examples))
}

/// Reads a task file without resolving sentence ids.
pub fn load_task_unchecked(path: impl AsRef<Path>, strict: bool) -> Result<TaskDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let examples = parse_task(&text, &path.display().to_string(), None, strict)?;
    let (name, split) = name_and_split(path);
    Ok(TaskDataset::new(name, split, examples))
}

pub fn encode_task(examples: &[SpanTarget]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("span target serializes"));
        out.push('\n');
    }
    out
}

pub fn write_task(path: impl AsRef<Path>, examples: &[SpanTarget]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_task(examples)).map_err(|e| Error::io(path, e))
}

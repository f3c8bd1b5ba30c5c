//! Line-delimited question records.
//!
//! One JSON object per line:
//!
//! ```json
//! {"question_id":"q1","question":"Capital of France?","gold_answers":["Paris"],
//!  "models":[{"name":"llama","samples":[{"text":"Paris","sum_logprob":-0.1,"token_count":1}],
//!             "p_false":0.2}],
//!  "correct":true}
//! ```
//!
//! | Field | Type | Notes |
//! |-------|------|-------|
//! | `question_id` | string | unique within a file |
//! | `question` | string | |
//! | `gold_answers` | string[] | needed by the `exact` and `contains` matchers |
//! | `models[].name` | string | unique within a record |
//! | `models[].samples[].text` | string | non-empty after trimming |
//! | `models[].samples[].sum_logprob` | number ≤ 0 | nats; paired with `token_count` |
//! | `models[].samples[].token_count` | integer ≥ 1 | paired with `sum_logprob` |
//! | `models[].p_false` | number in [0, 1] | optional |
//! | `models[].regular_entropy` | number ≥ 0 | optional exact token-level entropy |
//! | `models[].correct` | bool | optional per-model label |
//! | `correct` | bool | optional label of the system answer (`oracle` matcher) |
//!
//! Unknown fields at any level are kept and written back after the known ones.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::clustering::{normalize_text, ResponseSample};
use crate::error::{file_error, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u32>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponses {
    pub name: String,
    pub samples: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_false: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regular_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    pub models: Vec<ModelResponses>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl QuestionRecord {
    /// All samples pooled in model order, tagged with their model index.
    pub fn samples(&self) -> Vec<ResponseSample> {
        self.models
            .iter()
            .enumerate()
            .flat_map(|(i, m)| {
                m.samples.iter().map(move |s| ResponseSample {
                    model_index: i,
                    text: s.text.clone(),
                    sum_logprob: s.sum_logprob,
                    token_count: s.token_count,
                })
            })
            .collect()
    }

    pub fn model_names(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.name.as_str()).collect()
    }

    fn validate(&self, line: usize) -> Result<()> {
        let violation = |field: &str, reason: String| Error::SchemaViolation {
            line,
            field: field.to_string(),
            reason,
        };
        if self.question_id.trim().is_empty() {
            return Err(violation("question_id", "empty".into()));
        }
        if self.models.is_empty() {
            return Err(violation("models", "no models".into()));
        }
        let mut names = HashSet::new();
        for m in &self.models {
            if m.name.trim().is_empty() {
                return Err(violation("models.name", "empty".into()));
            }
            if !names.insert(m.name.as_str()) {
                return Err(violation(
                    "models.name",
                    format!("duplicate model `{}`", m.name),
                ));
            }
            if m.samples.is_empty() {
                return Err(violation(
                    "models.samples",
                    format!("model `{}` has no samples", m.name),
                ));
            }
            if let Some(p) = m.p_false {
                if !(0.0..=1.0).contains(&p) {
                    return Err(violation("models.p_false", format!("{p} outside [0, 1]")));
                }
            }
            if let Some(h) = m.regular_entropy {
                if !(h >= 0.0 && h.is_finite()) {
                    return Err(violation(
                        "models.regular_entropy",
                        format!("{h} must be ≥ 0"),
                    ));
                }
            }
            for s in &m.samples {
                if s.text.trim().is_empty() {
                    return Err(violation("samples.text", "empty text".into()));
                }
                match (s.sum_logprob, s.token_count) {
                    (Some(_), None) => {
                        return Err(violation(
                            "samples.token_count",
                            "sum_logprob given without token_count".into(),
                        ))
                    }
                    (None, Some(_)) => {
                        return Err(violation(
                            "samples.sum_logprob",
                            "token_count given without sum_logprob".into(),
                        ))
                    }
                    (Some(lp), Some(n)) => {
                        if n == 0 {
                            return Err(violation("samples.token_count", "must be ≥ 1".into()));
                        }
                        if !(lp <= 0.0 && lp.is_finite()) {
                            return Err(violation(
                                "samples.sum_logprob",
                                format!("{lp} must be ≤ 0"),
                            ));
                        }
                    }
                    (None, None) => {}
                }
            }
        }
        Ok(())
    }
}

/// Parses records from line-delimited text; blank lines are skipped.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<QuestionRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason: e.to_string(),
        })?;
        record.validate(line_no)?;
        if !ids.insert(record.question_id.clone()) {
            return Err(Error::SchemaViolation {
                line: line_no,
                field: "question_id".into(),
                reason: format!("duplicate id `{}`", record.question_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_error(path))?;
    parse_dataset(&text, path)
}

/// Canonical serialization: one compact JSON object per line.
pub fn dataset_to_string(records: &[QuestionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[QuestionRecord]) -> Result<()> {
    write_atomic(path.as_ref(), dataset_to_string(records)?.as_bytes())
}

/// Writes through a temporary sibling file so a failed run leaves nothing behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// How a system answer is judged against the gold answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    /// Normalized equality with any gold answer.
    Exact,
    /// Some normalized gold answer occurs inside the normalized answer.
    #[default]
    Contains,
    /// The record's precomputed `correct` label.
    Oracle,
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Matcher::Exact => "exact",
            Matcher::Contains => "contains",
            Matcher::Oracle => "oracle",
        })
    }
}

impl FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Matcher::Exact),
            "contains" => Ok(Matcher::Contains),
            "oracle" => Ok(Matcher::Oracle),
            other => Err(Error::Config(format!("unknown matcher `{other}`"))),
        }
    }
}

pub fn label_correctness(record: &QuestionRecord, answer: &str, matcher: Matcher) -> Result<bool> {
    if matcher == Matcher::Oracle {
        return record
            .correct
            .ok_or_else(|| Error::MissingLabel(record.question_id.clone()));
    }
    if record.gold_answers.is_empty() {
        return Err(Error::MissingField(format!(
            "gold_answers (question {})",
            record.question_id
        )));
    }
    let answer = normalize_text(answer);
    let golds = record.gold_answers.iter().map(|g| normalize_text(g));
    Ok(match matcher {
        Matcher::Exact => golds.into_iter().any(|g| g == answer),
        _ => golds
            .into_iter()
            .any(|g| !g.is_empty() && answer.contains(&g)),
    })
}

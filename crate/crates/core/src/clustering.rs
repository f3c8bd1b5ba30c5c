//! Shared semantic clustering of pooled responses.
//!
//! All models' samples for one query are pooled and partitioned in a single
//! greedy pass: each sample joins the first existing cluster whose
//! representative (its lowest-indexed member) it mutually entails with, and
//! otherwise opens a new cluster. This costs `O(m·l)` oracle calls rather than
//! the `O(m²)` of all-pairs comparison. When the oracle's mutual-entailment
//! relation is transitive the result equals the connected components of that
//! relation.
//!
//! Texts are normalized (trimmed, whitespace collapsed, lowercased) before they
//! reach the oracle and before deduplication.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distribution::ClusterDistribution;
use crate::error::{Error, Result};

/// Trim, collapse internal whitespace runs to one space, and lowercase.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Content address of a text: hex SHA-256 of its normalized form.
pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(normalize_text(text).as_bytes()))
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub model_index: usize,
    pub text: String,
    /// Sum of token log-probabilities, in nats.
    pub sum_logprob: Option<f64>,
    pub token_count: Option<u32>,
}

impl ResponseSample {
    pub fn new(
        model_index: usize,
        text: impl Into<String>,
        sum_logprob: Option<f64>,
        token_count: Option<u32>,
    ) -> Result<Self> {
        match (sum_logprob, token_count) {
            (Some(lp), Some(n)) => {
                if n == 0 {
                    return Err(Error::InvalidDistribution("token_count must be ≥ 1".into()));
                }
                if !lp.is_finite() || lp > 0.0 {
                    return Err(Error::InvalidDistribution(format!(
                        "sum_logprob must be finite and ≤ 0, got {lp}"
                    )));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidDistribution(
                    "sum_logprob and token_count must be given together".into(),
                ))
            }
        }
        Ok(ResponseSample {
            model_index,
            text: text.into(),
            sum_logprob,
            token_count,
        })
    }

    pub fn with_logprob(
        model_index: usize,
        text: impl Into<String>,
        sum_logprob: f64,
        token_count: u32,
    ) -> Result<Self> {
        Self::new(model_index, text, Some(sum_logprob), Some(token_count))
    }

    pub fn text_only(model_index: usize, text: impl Into<String>) -> Self {
        ResponseSample {
            model_index,
            text: text.into(),
            sum_logprob: None,
            token_count: None,
        }
    }

    /// Mean per-token log-probability.
    pub fn mean_logprob(&self) -> Option<f64> {
        match (self.sum_logprob, self.token_count) {
            (Some(lp), Some(n)) if n > 0 => Some(lp / n as f64),
            _ => None,
        }
    }
}

/// `exp(sum_logprob / token_count)`.
pub fn length_normalized_prob(sample: &ResponseSample) -> Result<f64> {
    sample
        .mean_logprob()
        .map(f64::exp)
        .ok_or(Error::MissingLogprob {
            model: sample.model_index,
        })
}

/// Directional entailment judgments between two texts.
///
/// Implementations must be reflexive and deterministic for fixed inputs
/// within one run.
pub trait EntailmentOracle: Send + Sync {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool>;

    fn mutually_entail(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.entails(a, b)? && self.entails(b, a)?)
    }
}

impl<O: EntailmentOracle + ?Sized> EntailmentOracle for &O {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        (**self).entails(premise, hypothesis)
    }
}

/// Entailment as equality of normalized text.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchOracle;

impl EntailmentOracle for ExactMatchOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        Ok(normalize_text(premise) == normalize_text(hypothesis))
    }
}

/// Partition of the pooled samples into semantic clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpace {
    /// Cluster id of each pooled sample, in input order.
    assignments: Vec<usize>,
    /// Lowest-indexed member of each cluster.
    representatives: Vec<usize>,
}

impl ClusterSpace {
    /// Number of clusters `l`.
    pub fn num_clusters(&self) -> usize {
        self.representatives.len()
    }

    pub fn num_samples(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    pub fn cluster_of(&self, sample: usize) -> usize {
        self.assignments[sample]
    }

    /// Sample indices in cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Greedy sequential clustering of `samples` under `oracle`.
pub fn cluster_pool(
    samples: &[ResponseSample],
    oracle: &dyn EntailmentOracle,
) -> Result<ClusterSpace> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to cluster".into()));
    }
    let texts: Vec<String> = samples.iter().map(|s| normalize_text(&s.text)).collect();
    if let Some(i) = texts.iter().position(String::is_empty) {
        return Err(Error::EmptyInput(format!("sample {i} has empty text")));
    }

    let mut assignments = Vec::with_capacity(samples.len());
    let mut representatives: Vec<usize> = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let mut found = None;
        for (c, &r) in representatives.iter().enumerate() {
            let rep = &texts[r];
            // Reflexivity: identical normalized texts need no oracle call.
            if rep == text || oracle.mutually_entail(text, rep)? {
                found = Some(c);
                break;
            }
        }
        let c = found.unwrap_or_else(|| {
            representatives.push(i);
            representatives.len() - 1
        });
        assignments.push(c);
    }
    Ok(ClusterSpace {
        assignments,
        representatives,
    })
}

/// How per-sample probability mass is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbMode {
    /// Length-normalized generation probabilities, distinct texts only.
    #[default]
    Logprob,
    /// Sample counts.
    Frequency,
}

impl fmt::Display for ProbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbMode::Logprob => "logprob",
            ProbMode::Frequency => "frequency",
        })
    }
}

impl FromStr for ProbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logprob" => Ok(ProbMode::Logprob),
            "frequency" | "freq" => Ok(ProbMode::Frequency),
            other => Err(Error::Config(format!("unknown probability mode `{other}`"))),
        }
    }
}

/// Cluster distribution of one model over the shared space.
///
/// `samples` must be the slice that produced `space`.
pub fn model_distribution(
    space: &ClusterSpace,
    samples: &[ResponseSample],
    model_index: usize,
    mode: ProbMode,
) -> Result<ClusterDistribution> {
    if samples.len() != space.num_samples() {
        return Err(Error::DimensionMismatch {
            left: samples.len(),
            right: space.num_samples(),
        });
    }
    let mut masses = vec![0.0; space.num_clusters()];
    let mut any = false;
    let mut seen = HashSet::new();
    for (i, s) in samples.iter().enumerate() {
        if s.model_index != model_index {
            continue;
        }
        any = true;
        let c = space.cluster_of(i);
        match mode {
            ProbMode::Frequency => masses[c] += 1.0,
            ProbMode::Logprob => {
                // A repeated sequence is one sequence; count its mass once.
                if seen.insert(normalize_text(&s.text)) {
                    masses[c] += length_normalized_prob(s)?;
                }
            }
        }
    }
    if !any {
        return Err(Error::NoSamplesForModel(model_index));
    }
    ClusterDistribution::from_masses(masses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(model: usize, ts: &[&str]) -> Vec<ResponseSample> {
        ts.iter()
            .map(|t| ResponseSample::text_only(model, *t))
            .collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Paris\t is   NICE \n"), "paris is nice");
        assert_eq!(text_hash("Paris"), text_hash(" paris "));
        assert_ne!(text_hash("Paris"), text_hash("Rome"));
    }

    #[test]
    fn length_normalized_examples() {
        let s = ResponseSample::with_logprob(0, "a", 0.0, 5).unwrap();
        assert_eq!(length_normalized_prob(&s).unwrap(), 1.0);
        let s = ResponseSample::with_logprob(0, "a", -5.0 * std::f64::consts::LN_2, 5).unwrap();
        assert!((length_normalized_prob(&s).unwrap() - 0.5).abs() < 1e-15);
        let s = ResponseSample::with_logprob(0, "a", -3.0, 1).unwrap();
        assert!((length_normalized_prob(&s).unwrap() - 0.049787).abs() < 1e-6);
        let s = ResponseSample::text_only(2, "a");
        assert!(matches!(
            length_normalized_prob(&s),
            Err(Error::MissingLogprob { .. })
        ));
    }

    #[test]
    fn sample_field_pairing() {
        assert!(ResponseSample::new(0, "a", Some(-1.0), None).is_err());
        assert!(ResponseSample::new(0, "a", None, Some(3)).is_err());
        assert!(ResponseSample::new(0, "a", Some(-1.0), Some(0)).is_err());
    }

    #[test]
    fn identical_texts_form_one_cluster() {
        let s = texts(0, &["Paris", "paris", " Paris "]);
        let space = cluster_pool(&s, &ExactMatchOracle).unwrap();
        assert_eq!(space.num_clusters(), 1);
        assert_eq!(space.members(0), vec![0, 1, 2]);
    }

    #[test]
    fn greedy_trace() {
        let s = texts(0, &["A", "B", "A", "C"]);
        let space = cluster_pool(&s, &ExactMatchOracle).unwrap();
        assert_eq!(space.num_clusters(), 3);
        assert_eq!(space.representatives(), &[0, 1, 3]);
        assert_eq!(space.assignments(), &[0, 1, 0, 2]);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            cluster_pool(&[], &ExactMatchOracle),
            Err(Error::EmptyInput(_))
        ));
        let s = texts(0, &["a", "   "]);
        assert!(matches!(
            cluster_pool(&s, &ExactMatchOracle),
            Err(Error::EmptyInput(_))
        ));
    }

    struct Failing;
    impl EntailmentOracle for Failing {
        fn entails(&self, _: &str, _: &str) -> Result<bool> {
            Err(Error::OracleFailure("down".into()))
        }
    }

    #[test]
    fn oracle_failure_propagates() {
        let s = texts(0, &["a", "b"]);
        assert!(matches!(
            cluster_pool(&s, &Failing),
            Err(Error::OracleFailure(_))
        ));
        // A single sample never consults the oracle.
        assert!(cluster_pool(&s[..1], &Failing).is_ok());
    }

    #[test]
    fn frequency_distribution() {
        let s = texts(0, &["x", "x", "x", "x"]);
        let space = cluster_pool(&s, &ExactMatchOracle).unwrap();
        let p = model_distribution(&space, &s, 0, ProbMode::Frequency).unwrap();
        assert_eq!(p.probs(), &[1.0]);
    }

    #[test]
    fn logprob_distribution_with_dedup() {
        let lp = |p: f64| p.ln();
        let s = vec![
            ResponseSample::with_logprob(0, "paris", lp(0.6), 1).unwrap(),
            ResponseSample::with_logprob(0, "Paris", lp(0.6), 1).unwrap(),
            ResponseSample::with_logprob(0, "rome", lp(0.2), 1).unwrap(),
            ResponseSample::with_logprob(0, "madrid", lp(0.2), 1).unwrap(),
        ];
        // "paris" and "rome" mutually entail under this oracle; madrid is alone.
        struct Pairs;
        impl EntailmentOracle for Pairs {
            fn entails(&self, a: &str, b: &str) -> Result<bool> {
                let group = |t: &str| if t == "madrid" { 1 } else { 0 };
                Ok(group(a) == group(b))
            }
        }
        let space = cluster_pool(&s, &Pairs).unwrap();
        assert_eq!(space.num_clusters(), 2);
        let p = model_distribution(&space, &s, 0, ProbMode::Logprob).unwrap();
        assert!((p.probs()[0] - 0.8).abs() < 1e-12);
        assert!((p.probs()[1] - 0.2).abs() < 1e-12);
        let f = model_distribution(&space, &s, 0, ProbMode::Frequency).unwrap();
        assert_eq!(f.probs(), &[0.75, 0.25]);
    }

    #[test]
    fn absent_model_gets_zero_mass() {
        let mut s = texts(0, &["a", "b"]);
        s.extend(texts(1, &["c"]));
        let space = cluster_pool(&s, &ExactMatchOracle).unwrap();
        let p0 = model_distribution(&space, &s, 0, ProbMode::Frequency).unwrap();
        assert_eq!(p0.probs(), &[0.5, 0.5, 0.0]);
        assert!(matches!(
            model_distribution(&space, &s, 2, ProbMode::Frequency),
            Err(Error::NoSamplesForModel(2))
        ));
        assert!(matches!(
            model_distribution(&space, &s, 0, ProbMode::Logprob),
            Err(Error::MissingLogprob { .. })
        ));
    }
}

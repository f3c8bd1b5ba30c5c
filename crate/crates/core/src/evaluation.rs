//! Selective-prediction metrics and baseline uncertainty scores.
//!
//! Scores are uncertainties: higher means less trustworthy. AUROC is the
//! probability that a correct item scores strictly lower than an incorrect
//! one, ties counted half. Rejection curves sort ascending by uncertainty with
//! `item_id` breaking ties, so every number here is reproducible bit for bit.

use std::cmp::Ordering;

use serde::Serialize;

use crate::clustering::ResponseSample;
use crate::error::{Error, Result};

/// Retention levels reported by default.
pub const DEFAULT_RETENTION: [f64; 4] = [0.80, 0.90, 0.95, 1.00];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredItem {
    pub item_id: String,
    pub uncertainty: f64,
    pub correct: bool,
}

impl ScoredItem {
    pub fn new(item_id: impl Into<String>, uncertainty: f64, correct: bool) -> Result<Self> {
        if !uncertainty.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "uncertainty must be finite, got {uncertainty}"
            )));
        }
        Ok(ScoredItem {
            item_id: item_id.into(),
            uncertainty,
            correct,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub auroc: f64,
    pub aurac: f64,
    /// `(retention, accuracy)` pairs in the requested order.
    pub rejection_accuracy: Vec<(f64, f64)>,
    pub n_items: usize,
}

fn label_counts(items: &[ScoredItem]) -> (usize, usize) {
    let correct = items.iter().filter(|i| i.correct).count();
    (correct, items.len() - correct)
}

fn ascending(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    a.uncertainty
        .total_cmp(&b.uncertainty)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Rank-sum AUROC for "correct items carry lower uncertainty".
pub fn auroc(items: &[ScoredItem]) -> Result<f64> {
    let (n_correct, n_incorrect) = label_counts(items);
    if n_correct == 0 || n_incorrect == 0 {
        return Err(Error::DegenerateLabels {
            correct: n_correct,
            incorrect: n_incorrect,
        });
    }
    let mut sorted: Vec<&ScoredItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.uncertainty.total_cmp(&b.uncertainty));

    // Twice the midrank of every tie group is an integer, so the statistic is
    // accumulated exactly.
    let mut rank_sum_x2: u128 = 0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].uncertainty == sorted[start].uncertainty {
            end += 1;
        }
        // 1-based ranks start+1 ..= end; doubled midrank = start + 1 + end.
        let midrank_x2 = (start + 1 + end) as u128;
        let incorrect_in_group = sorted[start..end].iter().filter(|i| !i.correct).count() as u128;
        rank_sum_x2 += midrank_x2 * incorrect_in_group;
        start = end;
    }
    let ni = n_incorrect as u128;
    // 2U = 2R − n(n+1) counts (incorrect above correct) twice, ties once.
    let u_x2 = rank_sum_x2 - ni * (ni + 1);
    Ok(u_x2 as f64 / (2 * n_correct as u128 * ni) as f64)
}

/// Number of items kept at a retention fraction, `ceil(retention · n)`.
pub fn retained_count(n: usize, retention: f64) -> usize {
    // Guard against k/n · n landing a hair above k.
    let kept = (retention * n as f64 - 1e-9).ceil();
    (kept.max(1.0) as usize).min(n)
}

/// Accuracy among the `ceil(retention · n)` least uncertain items.
pub fn rejection_accuracy(items: &[ScoredItem], retention: f64) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no scored items".into()));
    }
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::Config(format!(
            "retention must lie in (0, 1], got {retention}"
        )));
    }
    let mut sorted: Vec<&ScoredItem> = items.iter().collect();
    sorted.sort_by(|a, b| ascending(a, b));
    let kept = retained_count(items.len(), retention);
    let correct = sorted[..kept].iter().filter(|i| i.correct).count();
    Ok(correct as f64 / kept as f64)
}

/// Area under the rejection-accuracy curve: the mean of the accuracies on the
/// `k` least uncertain items, `k = 1..=n`.
pub fn aurac(items: &[ScoredItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no scored items".into()));
    }
    let mut sorted: Vec<&ScoredItem> = items.iter().collect();
    sorted.sort_by(|a, b| ascending(a, b));
    let mut correct = 0usize;
    let mut area = 0.0;
    for (k, item) in sorted.iter().enumerate() {
        correct += item.correct as usize;
        area += correct as f64 / (k + 1) as f64;
    }
    Ok(area / items.len() as f64)
}

pub fn evaluate(items: &[ScoredItem], retention: &[f64]) -> Result<EvalSummary> {
    let rejection_accuracy = retention
        .iter()
        .map(|&r| Ok((r, rejection_accuracy(items, r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary {
        auroc: auroc(items)?,
        aurac: aurac(items)?,
        rejection_accuracy,
        n_items: items.len(),
    })
}

/// Arithmetic mean of per-model semantic entropies.
pub fn baseline_mean_se(per_model_se: &[f64]) -> Result<f64> {
    if per_model_se.is_empty() {
        return Err(Error::EmptyInput("no models".into()));
    }
    Ok(per_model_se.iter().sum::<f64>() / per_model_se.len() as f64)
}

/// Mean negative per-token log-likelihood of one model's samples, a
/// Monte-Carlo proxy for the entropy of the raw generation distribution.
pub fn baseline_regular_entropy(samples: &[ResponseSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total -= s.mean_logprob().ok_or(Error::MissingLogprob {
            model: s.model_index,
        })?;
    }
    Ok((total / samples.len() as f64).max(0.0))
}

/// A self-judged probability of "False", passed through as an uncertainty.
pub fn baseline_p_false(p_false: Option<f64>) -> Result<f64> {
    let p = p_false.ok_or_else(|| Error::MissingField("p_false".into()))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidDistribution(format!(
            "p_false = {p} outside [0, 1]"
        )));
    }
    Ok(p)
}

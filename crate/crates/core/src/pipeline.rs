//! From one question record to a scored ensemble.

use std::collections::BTreeMap;

use crate::clustering::{
    cluster_pool, model_distribution, ClusterSpace, EntailmentOracle, ProbMode, ResponseSample,
};
use crate::distribution::{ensemble_mean, EnsembleState};
use crate::error::{Error, Result};
use crate::harness::dataset::QuestionRecord;

/// How ensemble weights are assigned to the models of a record.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum WeightScheme {
    #[default]
    Uniform,
    /// Weight per model name, renormalized over the models present.
    ByName(BTreeMap<String, f64>),
}

impl WeightScheme {
    pub fn weights_for(&self, names: &[&str]) -> Result<Vec<f64>> {
        match self {
            WeightScheme::Uniform => Ok(vec![1.0 / names.len() as f64; names.len()]),
            WeightScheme::ByName(map) => {
                let raw = names
                    .iter()
                    .map(|n| {
                        map.get(*n).copied().ok_or_else(|| {
                            Error::Config(format!("no weight given for model `{n}`"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::Config("weights must be finite and ≥ 0".into()));
                }
                let total: f64 = raw.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Config("weights sum to zero".into()));
                }
                Ok(raw.into_iter().map(|w| w / total).collect())
            }
        }
    }
}

/// Clustering and per-model distributions for one question.
#[derive(Debug, Clone)]
pub struct QuestionEnsemble {
    pub samples: Vec<ResponseSample>,
    pub space: ClusterSpace,
    pub ensemble: EnsembleState,
}

impl QuestionEnsemble {
    /// Text of the representative of cluster `c`.
    pub fn representative_text(&self, c: usize) -> &str {
        &self.samples[self.space.representatives()[c]].text
    }

    /// Representative of the cluster with the largest ensemble-mean mass.
    pub fn majority_answer(&self) -> (usize, &str) {
        let c = ensemble_mean(&self.ensemble).argmax();
        (c, self.representative_text(c))
    }
}

pub fn build_question(
    record: &QuestionRecord,
    oracle: &dyn EntailmentOracle,
    mode: ProbMode,
    weights: &WeightScheme,
) -> Result<QuestionEnsemble> {
    let samples = record.samples();
    let space = cluster_pool(&samples, oracle)?;
    let dists = (0..record.models.len())
        .map(|i| model_distribution(&space, &samples, i, mode))
        .collect::<Result<Vec<_>>>()?;
    let w = weights.weights_for(&record.model_names())?;
    let ensemble = EnsembleState::new(dists, w)?.with_query_id(record.question_id.clone());
    Ok(QuestionEnsemble {
        samples,
        space,
        ensemble,
    })
}

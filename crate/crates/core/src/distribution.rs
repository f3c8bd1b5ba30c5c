//! Cluster distributions, ensembles, and the Collaborative Entropy decomposition.
//!
//! For an ensemble of `K` models with cluster distributions `p_i` over a shared
//! space of `l` semantic clusters and weights `w_i`:
//!
//! ```text
//! U_A   = (1/K) Σ_i H(p_i)                 aleatoric, unweighted mean
//! U_E   = Σ_i w_i · D(p_i ‖ p̄)             epistemic, p̄ = Σ_i w_i p_i
//! U_CoE = U_A + U_E
//! ```
//!
//! Entropies are in nats. `0 · ln 0 = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};

/// Inputs whose mass deviates from 1 by more than this are rejected.
pub const SIMPLEX_REJECT_TOL: f64 = 1e-6;

/// A probability vector over the shared clusters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClusterDistribution {
    probs: Vec<f64>,
}

impl ClusterDistribution {
    /// Validates a probability vector and renormalizes it to sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total = Self::check_masses(&probs)?;
        if (total - 1.0).abs() > SIMPLEX_REJECT_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Ok(Self::renormalized(probs, total))
    }

    /// Builds a distribution from arbitrary non-negative masses.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        let total = Self::check_masses(&masses)?;
        Ok(Self::renormalized(masses, total))
    }

    /// All mass on `cluster`.
    pub fn delta(len: usize, cluster: usize) -> Result<Self> {
        if cluster >= len {
            return Err(Error::InvalidDistribution(format!(
                "delta index {cluster} out of range for {len} clusters"
            )));
        }
        let mut probs = vec![0.0; len];
        probs[cluster] = 1.0;
        Ok(ClusterDistribution { probs })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidDistribution("no clusters".into()));
        }
        Ok(ClusterDistribution {
            probs: vec![1.0 / len as f64; len],
        })
    }

    fn check_masses(masses: &[f64]) -> Result<f64> {
        if masses.is_empty() {
            return Err(Error::InvalidDistribution("no clusters".into()));
        }
        if let Some((j, v)) = masses
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidDistribution(format!("entry {j} = {v}")));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("all entries are zero".into()));
        }
        Ok(total)
    }

    fn renormalized(mut probs: Vec<f64>, total: f64) -> Self {
        if total != 1.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        ClusterDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of clusters `l`.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the most probable cluster; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = j;
            }
        }
        best
    }

    /// The cluster holding all the mass, if this is a delta distribution.
    pub fn delta_cluster(&self) -> Option<usize> {
        let j = self.argmax();
        (self.probs[j] == 1.0).then_some(j)
    }

    /// Applies a cluster relabelling: entry `j` moves to `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::DimensionMismatch {
                left: perm.len(),
                right: self.len(),
            });
        }
        let mut probs = vec![0.0; self.len()];
        for (j, &to) in perm.iter().enumerate() {
            probs[to] = self.probs[j];
        }
        Ok(ClusterDistribution { probs })
    }
}

impl<'de> Deserialize<'de> for ClusterDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(de)?;
        ClusterDistribution::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Shannon entropy `-Σ p_j ln p_j` of a distribution, in `[0, ln l]`.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Semantic entropy of one model's cluster distribution.
pub fn semantic_entropy(d: &ClusterDistribution) -> f64 {
    shannon_entropy(d.probs())
}

/// `K` cluster distributions over one shared cluster space, plus ensemble
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    distributions: Vec<ClusterDistribution>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
}

impl EnsembleState {
    pub fn new(distributions: Vec<ClusterDistribution>, weights: Vec<f64>) -> Result<Self> {
        if distributions.is_empty() {
            return Err(Error::InvalidEnsemble("no models".into()));
        }
        let l = distributions[0].len();
        if let Some(i) = distributions.iter().position(|d| d.len() != l) {
            return Err(Error::InvalidEnsemble(format!(
                "model {i} has {} clusters, model 0 has {l}",
                distributions[i].len()
            )));
        }
        if weights.len() != distributions.len() {
            return Err(Error::InvalidEnsemble(format!(
                "{} weights for {} models",
                weights.len(),
                distributions.len()
            )));
        }
        let weights = ClusterDistribution::new(weights)
            .map_err(|e| Error::InvalidEnsemble(format!("weights: {e}")))?
            .probs;
        Ok(EnsembleState {
            distributions,
            weights,
            query_id: None,
        })
    }

    /// Equal weights `1/K`.
    pub fn uniform(distributions: Vec<ClusterDistribution>) -> Result<Self> {
        let k = distributions.len().max(1);
        Self::new(distributions, vec![1.0 / k as f64; k])
    }

    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = Some(id.into());
        self
    }

    pub fn query_id(&self) -> Option<&str> {
        self.query_id.as_deref()
    }

    pub fn distributions(&self) -> &[ClusterDistribution] {
        &self.distributions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of models `K`.
    pub fn num_models(&self) -> usize {
        self.distributions.len()
    }

    /// Number of shared clusters `l`.
    pub fn num_clusters(&self) -> usize {
        self.distributions[0].len()
    }
}

/// Mean of the per-model semantic entropies. The weights are not used.
pub fn u_aleatoric(e: &EnsembleState) -> f64 {
    let total: f64 = e.distributions.iter().map(semantic_entropy).sum();
    total / e.num_models() as f64
}

/// Weighted mixture `p̄ = Σ_i w_i p_i`.
pub fn ensemble_mean(e: &EnsembleState) -> ClusterDistribution {
    let mut mean = vec![0.0; e.num_clusters()];
    for (d, &w) in e.distributions.iter().zip(&e.weights) {
        for (m, &p) in mean.iter_mut().zip(d.probs()) {
            *m += w * p;
        }
    }
    ClusterDistribution::from_masses(mean).expect("convex combination of simplices")
}

/// Per-model divergence to the ensemble mean; zero-weight models are not
/// evaluated and report 0.
fn per_model_divergence(e: &EnsembleState, kind: &DivergenceKind) -> Result<Vec<f64>> {
    let mean = ensemble_mean(e);
    e.distributions
        .iter()
        .zip(&e.weights)
        .map(|(d, &w)| {
            if w == 0.0 {
                Ok(0.0)
            } else if *kind == DivergenceKind::Kl {
                Ok(kl_to_mixture(d.probs(), mean.probs(), w))
            } else {
                kind.eval(d, &mean)
            }
        })
        .collect()
}

// A member with weight w satisfies p̄(c) ≥ w·p(c); honoring that bound keeps
// the term finite when the product underflows.
fn kl_to_mixture(p: &[f64], mean: &[f64], w: f64) -> f64 {
    let mut acc = 0.0;
    for (&pj, &mj) in p.iter().zip(mean) {
        if pj > 0.0 {
            let q = mj.max(w * pj);
            acc += pj * (pj / q).ln();
        }
    }
    acc.max(0.0)
}

/// `Σ_i w_i · D(p_i ‖ p̄)`.
pub fn u_epistemic(e: &EnsembleState, kind: &DivergenceKind) -> Result<f64> {
    let divs = per_model_divergence(e, kind)?;
    Ok(weighted_sum(&e.weights, &divs))
}

fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// The four regimes of the `(U_A, U_E)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    /// High aleatoric, high epistemic.
    WeDoNotKnow,
    /// Low aleatoric, high epistemic.
    ConfidentDisagree,
    /// Low aleatoric, low epistemic.
    VerySure,
    /// High aleatoric, low epistemic.
    MultipleReasonable,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::WeDoNotKnow,
        Quadrant::ConfidentDisagree,
        Quadrant::VerySure,
        Quadrant::MultipleReasonable,
    ];

    pub fn from_levels(high_aleatoric: bool, high_epistemic: bool) -> Self {
        match (high_aleatoric, high_epistemic) {
            (true, true) => Quadrant::WeDoNotKnow,
            (false, true) => Quadrant::ConfidentDisagree,
            (false, false) => Quadrant::VerySure,
            (true, false) => Quadrant::MultipleReasonable,
        }
    }

    /// Short label `q1`..`q4`.
    pub fn short(&self) -> &'static str {
        match self {
            Quadrant::WeDoNotKnow => "q1",
            Quadrant::ConfidentDisagree => "q2",
            Quadrant::VerySure => "q3",
            Quadrant::MultipleReasonable => "q4",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Quadrant::WeDoNotKnow => "we_do_not_know",
            Quadrant::ConfidentDisagree => "confident_disagree",
            Quadrant::VerySure => "very_sure",
            Quadrant::MultipleReasonable => "multiple_reasonable",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Quadrant::ALL
            .into_iter()
            .find(|q| q.short() == s || q.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown quadrant `{s}`")))
    }
}

/// Fractions of the component maxima above which a component counts as high:
/// `U_A > aleatoric · ln l` and `U_E > epistemic · ln K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantThresholds {
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl Default for QuadrantThresholds {
    fn default() -> Self {
        QuadrantThresholds {
            aleatoric: 0.3,
            epistemic: 0.3,
        }
    }
}

impl QuadrantThresholds {
    pub fn classify(&self, u_a: f64, u_e: f64, num_clusters: usize, num_models: usize) -> Quadrant {
        let a_cut = self.aleatoric * (num_clusters as f64).ln();
        let e_cut = self.epistemic * (num_models as f64).ln();
        Quadrant::from_levels(u_a > a_cut, u_e > e_cut)
    }
}

/// The decomposition for one ensemble and one divergence kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoeReport {
    pub u_aleatoric: f64,
    pub u_epistemic: f64,
    pub u_coe: f64,
    pub per_model_se: Vec<f64>,
    /// `D(p_i ‖ p̄)`; 0 for zero-weight models, which are not evaluated.
    pub per_model_div: Vec<f64>,
    #[serde(serialize_with = "ser_kind")]
    pub divergence_kind: DivergenceKind,
    pub quadrant: Quadrant,
}

fn ser_kind<S: serde::Serializer>(
    k: &DivergenceKind,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(k.name())
}

/// Collaborative Entropy with the default quadrant thresholds.
pub fn coe(e: &EnsembleState, kind: &DivergenceKind) -> Result<CoeReport> {
    coe_with(e, kind, &QuadrantThresholds::default())
}

pub fn coe_with(
    e: &EnsembleState,
    kind: &DivergenceKind,
    thresholds: &QuadrantThresholds,
) -> Result<CoeReport> {
    let per_model_se: Vec<f64> = e.distributions.iter().map(semantic_entropy).collect();
    let u_aleatoric = per_model_se.iter().sum::<f64>() / e.num_models() as f64;
    let per_model_div = per_model_divergence(e, kind)?;
    let u_epistemic = weighted_sum(&e.weights, &per_model_div);
    let quadrant = thresholds.classify(u_aleatoric, u_epistemic, e.num_clusters(), e.num_models());
    Ok(CoeReport {
        u_aleatoric,
        u_epistemic,
        u_coe: u_aleatoric + u_epistemic,
        per_model_se,
        per_model_div,
        divergence_kind: kind.clone(),
        quadrant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> ClusterDistribution {
        ClusterDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn constructor_validates() {
        assert!(ClusterDistribution::new(vec![]).is_err());
        assert!(ClusterDistribution::new(vec![0.0, 0.0]).is_err());
        assert!(ClusterDistribution::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(ClusterDistribution::new(vec![0.5, f64::NAN]).is_err());
        assert!(ClusterDistribution::new(vec![0.5, 0.6]).is_err());
        // Within the rejection tolerance: accepted and renormalized.
        let p = ClusterDistribution::new(vec![0.5, 0.5 + 1e-8]).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let m = ClusterDistribution::from_masses(vec![2.0, 6.0]).unwrap();
        assert_eq!(m.probs(), &[0.25, 0.75]);
    }

    #[test]
    fn semantic_entropy_examples() {
        assert_eq!(semantic_entropy(&d(&[1.0, 0.0, 0.0])), 0.0);
        let u4 = ClusterDistribution::uniform(4).unwrap();
        assert!((semantic_entropy(&u4) - 4f64.ln()).abs() < 1e-15);
        assert!((semantic_entropy(&d(&[0.7, 0.2, 0.1])) - 0.801819).abs() < 1e-6);
    }

    #[test]
    fn aleatoric_examples() {
        let deltas = EnsembleState::uniform(vec![d(&[1.0, 0.0]), d(&[0.0, 1.0])]).unwrap();
        assert_eq!(u_aleatoric(&deltas), 0.0);

        let e = EnsembleState::uniform(vec![
            d(&[0.7, 0.2, 0.1]),
            ClusterDistribution::uniform(3).unwrap(),
        ])
        .unwrap();
        assert!((u_aleatoric(&e) - 0.950215).abs() < 1e-6);

        // Weights do not enter the aleatoric mean.
        let skewed = EnsembleState::new(e.distributions().to_vec(), vec![0.9, 0.1]).unwrap();
        assert_eq!(u_aleatoric(&skewed), u_aleatoric(&e));

        let single = EnsembleState::uniform(vec![d(&[0.7, 0.2, 0.1])]).unwrap();
        assert_eq!(u_aleatoric(&single), semantic_entropy(&d(&[0.7, 0.2, 0.1])));
    }

    #[test]
    fn mean_examples() {
        let e = EnsembleState::uniform(vec![d(&[1.0, 0.0]), d(&[0.0, 1.0])]).unwrap();
        assert_eq!(ensemble_mean(&e).probs(), &[0.5, 0.5]);
        let e = EnsembleState::new(vec![d(&[1.0, 0.0]), d(&[0.0, 1.0])], vec![0.25, 0.75]).unwrap();
        assert_eq!(ensemble_mean(&e).probs(), &[0.25, 0.75]);
        let p = d(&[0.2, 0.3, 0.5]);
        let e = EnsembleState::new(vec![p.clone(), p.clone()], vec![0.1, 0.9]).unwrap();
        for (a, b) in ensemble_mean(&e).probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn epistemic_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        let same = EnsembleState::uniform(vec![p.clone(), p.clone(), p]).unwrap();
        for kind in DivergenceKind::all() {
            assert!(u_epistemic(&same, &kind).unwrap().abs() < 1e-15);
        }
        let two = EnsembleState::uniform(vec![d(&[1.0, 0.0]), d(&[0.0, 1.0])]).unwrap();
        let v = u_epistemic(&two, &DivergenceKind::Kl).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

        let three = EnsembleState::uniform(
            (0..3)
                .map(|j| ClusterDistribution::delta(3, j).unwrap())
                .collect(),
        )
        .unwrap();
        let v = u_epistemic(&three, &DivergenceKind::Kl).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_model_is_skipped() {
        // The zero-weight model has support outside p̄; KL to it would be infinite.
        let e = EnsembleState::new(vec![d(&[1.0, 0.0]), d(&[0.0, 1.0])], vec![1.0, 0.0]).unwrap();
        let r = coe(&e, &DivergenceKind::Kl).unwrap();
        assert_eq!(r.u_epistemic, 0.0);
        assert_eq!(r.per_model_div, vec![0.0, 0.0]);
        assert_eq!(r.u_aleatoric, 0.0);
    }

    #[test]
    fn coe_examples() {
        let consensus = EnsembleState::uniform(vec![d(&[0.0, 1.0, 0.0]); 3]).unwrap();
        let r = coe(&consensus, &DivergenceKind::Kl).unwrap();
        assert_eq!(r.u_coe, 0.0);
        assert_eq!(r.quadrant, Quadrant::VerySure);

        let distinct = EnsembleState::uniform(
            (0..4)
                .map(|j| ClusterDistribution::delta(4, j).unwrap())
                .collect(),
        )
        .unwrap();
        let r = coe(&distinct, &DivergenceKind::Kl).unwrap();
        assert!((r.u_coe - 4f64.ln()).abs() < 1e-12);
        assert_eq!(r.u_coe, r.u_epistemic);
        assert_eq!(r.quadrant, Quadrant::ConfidentDisagree);

        let uniform =
            EnsembleState::uniform(vec![ClusterDistribution::uniform(3).unwrap(); 2]).unwrap();
        let r = coe(&uniform, &DivergenceKind::Kl).unwrap();
        assert_eq!(r.u_epistemic, 0.0);
        assert!((r.u_aleatoric - 3f64.ln()).abs() < 1e-15);
        assert_eq!(r.quadrant, Quadrant::MultipleReasonable);
        assert_eq!(r.u_coe, r.u_aleatoric + r.u_epistemic);
    }

    #[test]
    fn ensemble_validation() {
        assert!(EnsembleState::uniform(vec![]).is_err());
        assert!(EnsembleState::uniform(vec![d(&[1.0]), d(&[0.5, 0.5])]).is_err());
        assert!(EnsembleState::new(vec![d(&[1.0])], vec![0.5, 0.5]).is_err());
        assert!(EnsembleState::new(vec![d(&[1.0]), d(&[1.0])], vec![0.7, 0.7]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(d(&[0.5, 0.5]).argmax(), 0);
        assert_eq!(d(&[0.2, 0.4, 0.4]).argmax(), 1);
        assert_eq!(d(&[0.0, 1.0]).delta_cluster(), Some(1));
        assert_eq!(d(&[0.5, 0.5]).delta_cluster(), None);
    }

    #[test]
    fn quadrant_parsing() {
        assert_eq!(
            "q2".parse::<Quadrant>().unwrap(),
            Quadrant::ConfidentDisagree
        );
        assert_eq!("very_sure".parse::<Quadrant>().unwrap(), Quadrant::VerySure);
        assert!("q5".parse::<Quadrant>().is_err());
    }
}

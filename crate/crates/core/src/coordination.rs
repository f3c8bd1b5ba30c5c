//! CoE-guided post-hoc coordination.
//!
//! Starting from an ensemble, each iteration
//!
//! 1. collapses every model onto its most probable cluster (greedy delta),
//! 2. rescales each weight by `1 − SE_i` of the updated distribution and
//!    renormalizes,
//! 3. recomputes the ensemble mean and CoE,
//!
//! and stops once CoE changes by less than `epsilon` or `t_max` iterations have
//! run. After the first collapse every distribution is a fixed point of the
//! greedy step and every weight factor is 1, so the loop settles by the second
//! iteration. The terminal CoE is then purely epistemic: zero when the deltas
//! agree, `−Σ_i w_i ln p̄(c_i*)` (under KL) when they do not.

use serde::Serialize;

use crate::distribution::{coe, semantic_entropy, ClusterDistribution, EnsembleState};
use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationConfig {
    /// Convergence threshold on successive CoE values, in nats.
    pub epsilon: f64,
    pub t_max: usize,
    pub divergence_kind: DivergenceKind,
    /// Lower clamp for the raw weight factor `1 − SE_i`.
    pub weight_floor: f64,
    /// Use `1 − SE_i / ln l` as the weight factor instead of `1 − SE_i`.
    pub normalized_entropy: bool,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        CoordinationConfig {
            epsilon: 1e-6,
            t_max: 10,
            divergence_kind: DivergenceKind::Kl,
            weight_floor: 0.0,
            normalized_entropy: false,
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self, num_models: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be ≥ 1".into()));
        }
        let cap = 1.0 / num_models as f64;
        if !(self.weight_floor >= 0.0 && self.weight_floor < cap) {
            return Err(Error::Config(format!(
                "weight_floor must lie in [0, {cap}), got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }
}

/// A per-model distribution update applied at each iteration.
pub trait DistributionUpdate: Sync {
    fn update(&self, d: &ClusterDistribution) -> ClusterDistribution;
}

/// Collapse onto the most probable cluster.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyDelta;

impl DistributionUpdate for GreedyDelta {
    fn update(&self, d: &ClusterDistribution) -> ClusterDistribution {
        greedy_delta(d)
    }
}

/// Delta on `argmax_j p_j`, ties to the lowest index.
pub fn greedy_delta(d: &ClusterDistribution) -> ClusterDistribution {
    ClusterDistribution::delta(d.len(), d.argmax()).expect("argmax is in range")
}

fn weight_factor(d: &ClusterDistribution, normalized: bool) -> f64 {
    let se = semantic_entropy(d);
    if normalized {
        let max = (d.len() as f64).ln();
        if max > 0.0 {
            1.0 - se / max
        } else {
            1.0
        }
    } else {
        1.0 - se
    }
}

/// Entropy-proportional reweighting `w_i · max(floor, 1 − SE_i)`, renormalized.
pub fn weight_update(e: &EnsembleState, floor: f64) -> Result<Vec<f64>> {
    weight_update_with(e, floor, false)
}

pub fn weight_update_with(e: &EnsembleState, floor: f64, normalized: bool) -> Result<Vec<f64>> {
    let raw: Vec<f64> = e
        .distributions()
        .iter()
        .zip(e.weights())
        .map(|(d, &w)| w * weight_factor(d, normalized).max(floor))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// State after one iteration (iteration 0 is the input ensemble).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub distributions: Vec<ClusterDistribution>,
    pub weights: Vec<f64>,
    pub u_aleatoric: f64,
    pub u_epistemic: f64,
    pub u_coe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinationTrace {
    pub records: Vec<IterationRecord>,
    pub final_state: EnsembleState,
    pub converged: bool,
    pub iterations_used: usize,
    /// Shared cluster when every terminal distribution is a delta on it.
    pub consensus_cluster: Option<usize>,
}

impl CoordinationTrace {
    pub fn initial_u_coe(&self) -> f64 {
        self.records[0].u_coe
    }

    pub fn final_u_coe(&self) -> f64 {
        self.records.last().expect("trace holds iteration 0").u_coe
    }
}

fn record(
    iteration: usize,
    state: &EnsembleState,
    kind: &DivergenceKind,
) -> Result<IterationRecord> {
    let r = coe(state, kind)?;
    Ok(IterationRecord {
        iteration,
        distributions: state.distributions().to_vec(),
        weights: state.weights().to_vec(),
        u_aleatoric: r.u_aleatoric,
        u_epistemic: r.u_epistemic,
        u_coe: r.u_coe,
    })
}

/// Runs the heuristic with greedy delta collapse.
pub fn coordinate(e: &EnsembleState, cfg: &CoordinationConfig) -> Result<CoordinationTrace> {
    coordinate_with(e, cfg, &GreedyDelta)
}

pub fn coordinate_with(
    e: &EnsembleState,
    cfg: &CoordinationConfig,
    step: &dyn DistributionUpdate,
) -> Result<CoordinationTrace> {
    cfg.validate(e.num_models())?;
    let kind = &cfg.divergence_kind;
    let mut state = e.clone();
    let mut records = vec![record(0, &state, kind)?];
    let mut converged = false;
    let mut iterations_used = 0;

    for t in 1..=cfg.t_max {
        let updated: Vec<ClusterDistribution> = state
            .distributions()
            .iter()
            .map(|d| step.update(d))
            .collect();
        let staged = EnsembleState::new(updated, state.weights().to_vec())?;
        let weights = weight_update_with(&staged, cfg.weight_floor, cfg.normalized_entropy)?;
        let mut next = EnsembleState::new(staged.distributions().to_vec(), weights)?;
        if let Some(id) = e.query_id() {
            next = next.with_query_id(id);
        }
        let rec = record(t, &next, kind)?;
        let delta = (rec.u_coe - records[t - 1].u_coe).abs();
        records.push(rec);
        state = next;
        iterations_used = t;
        if delta < cfg.epsilon {
            converged = true;
            break;
        }
    }

    let consensus_cluster = consensus(&state);
    Ok(CoordinationTrace {
        records,
        final_state: state,
        converged,
        iterations_used,
        consensus_cluster,
    })
}

// Zero-weight models do not vote: they contribute nothing to U_CoE.
fn consensus(state: &EnsembleState) -> Option<usize> {
    let mut clusters = state
        .distributions()
        .iter()
        .zip(state.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(d, _)| d.delta_cluster());
    let first = clusters.next()??;
    clusters.all(|c| c == Some(first)).then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{ensemble_mean, u_aleatoric};

    fn d(v: &[f64]) -> ClusterDistribution {
        ClusterDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn greedy_delta_examples() {
        assert_eq!(greedy_delta(&d(&[0.2, 0.5, 0.3])).probs(), &[0.0, 1.0, 0.0]);
        assert_eq!(greedy_delta(&d(&[0.5, 0.5])).probs(), &[1.0, 0.0]);
        let once = greedy_delta(&d(&[0.1, 0.6, 0.3]));
        assert_eq!(greedy_delta(&once), once);
    }

    #[test]
    fn weight_update_examples() {
        let deltas = EnsembleState::new(
            vec![d(&[1.0, 0.0]), d(&[0.0, 1.0]), d(&[1.0, 0.0])],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let w = weight_update(&deltas, 0.0).unwrap();
        for (a, b) in w.iter().zip(deltas.weights()) {
            assert!((a - b).abs() < 1e-15);
        }

        let e = EnsembleState::uniform(vec![d(&[1.0, 0.0, 0.0]), d(&[0.7, 0.2, 0.1])]).unwrap();
        let w = weight_update(&e, 0.0).unwrap();
        assert!((w[0] - 0.834598).abs() < 1e-6);
        assert!((w[1] - 0.165402).abs() < 1e-6);

        let e = EnsembleState::uniform(vec![
            d(&[1.0, 0.0, 0.0, 0.0]),
            ClusterDistribution::uniform(4).unwrap(),
        ])
        .unwrap();
        assert_eq!(weight_update(&e, 0.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn degenerate_weights() {
        let u = ClusterDistribution::uniform(4).unwrap();
        let e = EnsembleState::uniform(vec![u.clone(), u]).unwrap();
        assert!(matches!(
            weight_update(&e, 0.0),
            Err(Error::DegenerateWeights)
        ));
        // A floor keeps the weights alive.
        assert_eq!(weight_update(&e, 0.1).unwrap(), vec![0.5, 0.5]);
        // The normalized factor is 0 at maximum entropy as well.
        assert!(weight_update_with(&e, 0.0, true).is_err());
    }

    #[test]
    fn consensus_converges_in_one_iteration() {
        let e = EnsembleState::uniform(vec![d(&[0.0, 1.0]); 3]).unwrap();
        let tr = coordinate(&e, &CoordinationConfig::default()).unwrap();
        assert_eq!(tr.iterations_used, 1);
        assert!(tr.converged);
        assert_eq!(tr.final_u_coe(), 0.0);
        assert_eq!(tr.consensus_cluster, Some(1));
    }

    #[test]
    fn disagreement_leaves_ln2() {
        let e = EnsembleState::uniform(vec![d(&[0.8, 0.2]), d(&[0.3, 0.7])]).unwrap();
        let tr = coordinate(&e, &CoordinationConfig::default()).unwrap();
        assert!((tr.final_u_coe() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(tr.consensus_cluster, None);
        assert!(tr.iterations_used <= 2);
        assert_eq!(tr.records[1].u_aleatoric, 0.0);
        assert_eq!(tr.final_state.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn partial_agreement_closed_form() {
        let e = EnsembleState::new(
            vec![
                d(&[0.6, 0.4, 0.0]),
                d(&[0.5, 0.2, 0.3]),
                d(&[0.1, 0.1, 0.8]),
            ],
            vec![0.5, 0.3, 0.2],
        )
        .unwrap();
        let tr = coordinate(&e, &CoordinationConfig::default()).unwrap();
        // Models 0 and 1 collapse onto cluster 0 (mass 0.8), model 2 onto cluster 2.
        let expected = -(0.5 * 0.8f64.ln() + 0.3 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert!((tr.final_u_coe() - expected).abs() < 1e-12);
        assert_eq!(u_aleatoric(&tr.final_state), 0.0);
        let mean = ensemble_mean(&tr.final_state);
        assert!((mean.probs()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn t_max_one_reports_unconverged() {
        let e = EnsembleState::uniform(vec![d(&[0.8, 0.2]), d(&[0.3, 0.7])]).unwrap();
        let cfg = CoordinationConfig {
            t_max: 1,
            ..Default::default()
        };
        let tr = coordinate(&e, &cfg).unwrap();
        assert_eq!(tr.iterations_used, 1);
        assert!(!tr.converged);
        assert_eq!(tr.records.len(), 2);
    }

    #[test]
    fn config_validation() {
        let e = EnsembleState::uniform(vec![d(&[1.0]); 2]).unwrap();
        let bad = [
            CoordinationConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            CoordinationConfig {
                t_max: 0,
                ..Default::default()
            },
            CoordinationConfig {
                weight_floor: 0.5,
                ..Default::default()
            },
            CoordinationConfig {
                weight_floor: -0.1,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(coordinate(&e, &cfg), Err(Error::Config(_))));
        }
    }

    struct Identity;
    impl DistributionUpdate for Identity {
        fn update(&self, d: &ClusterDistribution) -> ClusterDistribution {
            d.clone()
        }
    }

    #[test]
    fn pluggable_update() {
        let e = EnsembleState::uniform(vec![d(&[0.8, 0.2]), d(&[0.3, 0.7])]).unwrap();
        let tr = coordinate_with(&e, &CoordinationConfig::default(), &Identity).unwrap();
        assert_eq!(tr.consensus_cluster, None);
        assert!(tr.final_state.distributions()[0] == d(&[0.8, 0.2]));
    }
}

//! Synthetic ensembles for each of the four `(U_A, U_E)` regimes.
//!
//! Draws come from Dirichlet distributions built on per-coordinate Gamma
//! variates, driven by a seeded ChaCha8 stream, so a seed reproduces the same
//! ensemble on every platform. Small concentrations are sampled in log space
//! so near-delta draws never collapse to an all-zero vector.
//!
//! | Regime | Construction |
//! |--------|--------------|
//! | Q1 high A, high E | each model spread over its own window of clusters |
//! | Q2 low A, high E  | each model near-delta on its own cluster |
//! | Q3 low A, low E   | every model near-delta on one shared cluster |
//! | Q4 high A, low E  | one shared spread base, plus small per-model noise |

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::distribution::{coe, ClusterDistribution, EnsembleState, Quadrant};
use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeSpec {
    pub quadrant: Quadrant,
    /// Number of models.
    pub k: usize,
    /// Number of clusters.
    pub l: usize,
    /// Concentration for peaked draws, below 1.
    pub alpha_sharp: f64,
    /// Concentration for spread draws, above 1.
    pub alpha_flat: f64,
    /// Mixing weight toward the target delta for peaked draws; 1 gives exact deltas.
    pub sharpen: f64,
    /// Relative size of the per-model perturbation in Q4.
    pub noise: f64,
    pub seed: u64,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        RegimeSpec {
            quadrant: Quadrant::VerySure,
            k: 3,
            l: 3,
            alpha_sharp: 0.05,
            alpha_flat: 5.0,
            sharpen: 0.9,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl RegimeSpec {
    pub fn new(quadrant: Quadrant, seed: u64) -> Self {
        RegimeSpec {
            quadrant,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.l < 2 {
            return Err(Error::InvalidSpec(format!(
                "need k ≥ 2 and l ≥ 2, got k = {}, l = {}",
                self.k, self.l
            )));
        }
        if !(self.alpha_sharp > 0.0 && self.alpha_sharp < 1.0 && self.alpha_flat > 1.0)
            || !self.alpha_flat.is_finite()
        {
            return Err(Error::InvalidSpec(format!(
                "need 0 < alpha_sharp < 1 < alpha_flat, got {} and {}",
                self.alpha_sharp, self.alpha_flat
            )));
        }
        if !(0.0..=1.0).contains(&self.sharpen) {
            return Err(Error::InvalidSpec(format!(
                "sharpen {} outside [0, 1]",
                self.sharpen
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "noise {} must be ≥ 0",
                self.noise
            )));
        }
        Ok(())
    }
}

/// Symmetric Dirichlet draw of dimension `dim`.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, dim: usize) -> Vec<f64> {
    let logs: Vec<f64> = (0..dim).map(|_| log_gamma_variate(rng, alpha)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

// ln of a Gamma(shape, 1) variate. Below shape 1 uses
// G(a) = G(a + 1) · U^(1/a), kept in log space.
fn log_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape ≥ 1").sample(rng);
        g.ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        g.ln() + u.ln() / shape
    }
}

/// `k` target clusters, pairwise distinct whenever `k ≤ l`.
fn distinct_targets(rng: &mut ChaCha8Rng, k: usize, l: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..l).collect();
    order.shuffle(rng);
    (0..k)
        .map(|i| {
            if i < l {
                order[i]
            } else {
                rng.random_range(0..l)
            }
        })
        .collect()
}

fn peaked(rng: &mut ChaCha8Rng, spec: &RegimeSpec, target: usize) -> Vec<f64> {
    let mut d = sample_dirichlet(rng, spec.alpha_sharp, spec.l);
    let top = ClusterDistribution::from_masses(d.clone())
        .expect("Dirichlet draw")
        .argmax();
    d.swap(top, target);
    for (j, p) in d.iter_mut().enumerate() {
        let hit = if j == target { 1.0 } else { 0.0 };
        *p = (1.0 - spec.sharpen) * *p + spec.sharpen * hit;
    }
    d
}

fn windowed(rng: &mut ChaCha8Rng, spec: &RegimeSpec, start: usize) -> Vec<f64> {
    let width = spec.l.div_ceil(2).max(2);
    let draw = sample_dirichlet(rng, spec.alpha_flat, width);
    let mut d = vec![0.0; spec.l];
    for (offset, p) in draw.into_iter().enumerate() {
        d[(start + offset) % spec.l] = p;
    }
    d
}

/// Draws one ensemble in the requested regime, with uniform weights.
pub fn sample_ensemble(spec: &RegimeSpec) -> Result<EnsembleState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let masses: Vec<Vec<f64>> = match spec.quadrant {
        Quadrant::WeDoNotKnow => distinct_targets(&mut rng, spec.k, spec.l)
            .into_iter()
            .map(|s| windowed(&mut rng, spec, s))
            .collect(),
        Quadrant::ConfidentDisagree => distinct_targets(&mut rng, spec.k, spec.l)
            .into_iter()
            .map(|t| peaked(&mut rng, spec, t))
            .collect(),
        Quadrant::VerySure => {
            let shared = rng.random_range(0..spec.l);
            (0..spec.k)
                .map(|_| peaked(&mut rng, spec, shared))
                .collect()
        }
        Quadrant::MultipleReasonable => {
            let base = sample_dirichlet(&mut rng, spec.alpha_flat, spec.l);
            (0..spec.k)
                .map(|_| {
                    let noise = sample_dirichlet(&mut rng, spec.alpha_flat, spec.l);
                    base.iter()
                        .zip(&noise)
                        .map(|(b, n)| b + spec.noise * n)
                        .collect()
                })
                .collect()
        }
    };
    let dists = masses
        .into_iter()
        .map(ClusterDistribution::from_masses)
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleState::uniform(dists)?.with_query_id(format!(
        "{}-{}",
        spec.quadrant.short(),
        spec.seed
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub quadrant: Quadrant,
    pub seed: u64,
    pub k: usize,
    pub l: usize,
    pub u_aleatoric: f64,
    pub u_epistemic: f64,
    pub u_coe: f64,
    /// Quadrant assigned by the default classifier.
    pub classified: Quadrant,
}

/// One row per spec, in input order.
pub fn regime_sweep(specs: &[RegimeSpec], kind: &DivergenceKind) -> Result<Vec<SweepRow>> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("no regime specs".into()));
    }
    specs
        .iter()
        .map(|spec| {
            let e = sample_ensemble(spec)?;
            let r = coe(&e, kind)?;
            Ok(SweepRow {
                quadrant: spec.quadrant,
                seed: spec.seed,
                k: spec.k,
                l: spec.l,
                u_aleatoric: r.u_aleatoric,
                u_epistemic: r.u_epistemic,
                u_coe: r.u_coe,
                classified: r.quadrant,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::u_epistemic;

    #[test]
    fn dirichlet_draws_are_simplices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for alpha in [0.01, 0.05, 0.5, 1.0, 5.0] {
            for _ in 0..200 {
                let d = sample_dirichlet(&mut rng, alpha, 4);
                assert!(d.iter().all(|&p| (0.0..=1.0).contains(&p)));
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        for q in Quadrant::ALL {
            let a = sample_ensemble(&RegimeSpec::new(q, 42)).unwrap();
            let b = sample_ensemble(&RegimeSpec::new(q, 42)).unwrap();
            assert_eq!(a, b);
            let c = sample_ensemble(&RegimeSpec::new(q, 43)).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn q3_is_near_zero() {
        for seed in 0..50 {
            let spec = RegimeSpec::new(Quadrant::VerySure, seed);
            let r = coe(&sample_ensemble(&spec).unwrap(), &DivergenceKind::Kl).unwrap();
            let bound = 0.1 * ((spec.l as f64).ln() + (spec.k as f64).ln());
            assert!(r.u_coe < bound, "seed {seed}: {}", r.u_coe);
        }
    }

    #[test]
    fn exact_q2_deltas_hit_ln_k() {
        for k in 2..=4 {
            let spec = RegimeSpec {
                quadrant: Quadrant::ConfidentDisagree,
                k,
                l: 5,
                sharpen: 1.0,
                seed: 9,
                ..Default::default()
            };
            let r = coe(&sample_ensemble(&spec).unwrap(), &DivergenceKind::Kl).unwrap();
            assert_eq!(r.u_aleatoric, 0.0);
            assert!((r.u_epistemic - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_q4_has_no_disagreement() {
        let spec = RegimeSpec {
            quadrant: Quadrant::MultipleReasonable,
            noise: 0.0,
            seed: 5,
            ..Default::default()
        };
        let e = sample_ensemble(&spec).unwrap();
        for kind in DivergenceKind::all() {
            assert!(u_epistemic(&e, &kind).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            RegimeSpec {
                k: 1,
                ..Default::default()
            },
            RegimeSpec {
                l: 1,
                ..Default::default()
            },
            RegimeSpec {
                alpha_sharp: 1.5,
                ..Default::default()
            },
            RegimeSpec {
                alpha_flat: 0.5,
                ..Default::default()
            },
            RegimeSpec {
                sharpen: 1.5,
                ..Default::default()
            },
            RegimeSpec {
                noise: -1.0,
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(matches!(sample_ensemble(&spec), Err(Error::InvalidSpec(_))));
        }
        assert!(regime_sweep(&[], &DivergenceKind::Kl).is_err());
    }

    #[test]
    fn sweep_rows_follow_specs() {
        let specs: Vec<_> = Quadrant::ALL
            .iter()
            .map(|&q| RegimeSpec::new(q, 3))
            .collect();
        let rows = regime_sweep(&specs, &DivergenceKind::Kl).unwrap();
        assert_eq!(rows.len(), 4);
        for (row, spec) in rows.iter().zip(&specs) {
            assert_eq!(row.quadrant, spec.quadrant);
            assert_eq!(row.u_coe, row.u_aleatoric + row.u_epistemic);
        }
    }
}

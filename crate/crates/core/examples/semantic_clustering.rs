//! Group sampled answers from several models into shared meaning clusters and
//! turn them into per-model distributions.
//!
//! cargo run --example semantic_clustering

use coe::clustering::{
    cluster_pool, model_distribution, EntailmentOracle, ProbMode, ResponseSample,
};
use coe::error::Result;

/// A toy entailment judge: two answers entail each other when they name the
/// same city. A real deployment would call an NLI model.
struct CityOracle;

impl EntailmentOracle for CityOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        let city = |t: &str| {
            let t = t.to_lowercase();
            ["paris", "lyon", "marseille"]
                .into_iter()
                .find(|c| t.contains(c))
        };
        Ok(city(premise).is_some() && city(premise) == city(hypothesis))
    }
}

fn main() -> Result<()> {
    let samples = vec![
        ResponseSample::with_logprob(0, "Paris", -0.1, 1)?,
        ResponseSample::with_logprob(0, "It is Paris.", -0.9, 4)?,
        ResponseSample::with_logprob(0, "Lyon", -2.0, 1)?,
        ResponseSample::with_logprob(1, "Lyon, France", -0.4, 3)?,
        ResponseSample::with_logprob(1, "lyon", -0.3, 1)?,
        ResponseSample::with_logprob(1, "Marseille", -1.5, 2)?,
    ];
    let space = cluster_pool(&samples, &CityOracle)?;
    for c in 0..space.num_clusters() {
        let texts: Vec<&str> = space
            .members(c)
            .iter()
            .map(|&i| samples[i].text.as_str())
            .collect();
        println!("cluster {c}: {texts:?}");
    }
    for model in 0..2 {
        for mode in [ProbMode::Logprob, ProbMode::Frequency] {
            let d = model_distribution(&space, &samples, model, mode)?;
            println!("model {model} ({mode}): {:.3?}", d.probs());
        }
    }
    Ok(())
}

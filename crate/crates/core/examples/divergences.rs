//! The four disagreement measures side by side, including a custom ground
//! metric for the transport distance.
//!
//! cargo run --example divergences

use std::sync::Arc;

use coe::distribution::{u_epistemic, ClusterDistribution, EnsembleState};
use coe::divergence::{kl, CostMatrix, DivergenceKind};

fn main() -> coe::error::Result<()> {
    let p = ClusterDistribution::new(vec![0.7, 0.2, 0.1])?;
    let q = ClusterDistribution::new(vec![0.1, 0.3, 0.6])?;

    // Clusters 0 and 1 are near-synonyms; cluster 2 is far from both.
    let metric = CostMatrix::new(vec![
        vec![0.0, 0.2, 1.0],
        vec![0.2, 0.0, 1.0],
        vec![1.0, 1.0, 0.0],
    ])?;
    let mut kinds = DivergenceKind::all().to_vec();
    kinds.push(DivergenceKind::Wasserstein(Some(Arc::new(metric))));

    let label = |kind: &DivergenceKind| match kind {
        DivergenceKind::Wasserstein(Some(_)) => "wasserstein (custom)".to_string(),
        other => other.to_string(),
    };
    println!("{:<24} {:>10} {:>10}", "divergence", "D(p||q)", "D(q||p)");
    for kind in &kinds {
        let label = label(kind);
        println!(
            "{label:<24} {:>10.4} {:>10.4}",
            kind.eval(&p, &q)?,
            kind.eval(&q, &p)?
        );
    }

    // KL is undefined when q puts zero mass where p does not.
    let delta = ClusterDistribution::delta(3, 0)?;
    match kl(&q, &delta) {
        Ok(v) => println!("KL(q || delta) = {v}"),
        Err(e) => println!("KL(q || delta): {e}"),
    }

    // Inside an ensemble every model is compared with the mixture, which
    // covers every model's support, so KL is always finite there.
    let e = EnsembleState::uniform(vec![p, q, delta])?;
    for kind in &kinds {
        println!("U_E with {}: {:.4}", label(kind), u_epistemic(&e, kind)?);
    }
    Ok(())
}

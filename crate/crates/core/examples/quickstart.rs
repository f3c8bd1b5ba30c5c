//! Score a three-model ensemble and read off its uncertainty regime.
//!
//! cargo run --example quickstart

use coe::distribution::{coe, ClusterDistribution, EnsembleState};
use coe::divergence::DivergenceKind;

fn main() -> coe::error::Result<()> {
    // Each model's probability over three meaning clusters.
    let models = vec![
        ClusterDistribution::new(vec![0.80, 0.15, 0.05])?,
        ClusterDistribution::new(vec![0.10, 0.85, 0.05])?,
        ClusterDistribution::new(vec![0.70, 0.20, 0.10])?,
    ];
    let ensemble = EnsembleState::uniform(models)?;

    let report = coe(&ensemble, &DivergenceKind::Kl)?;
    println!(
        "aleatoric (mean per-model entropy): {:.4}",
        report.u_aleatoric
    );
    println!(
        "epistemic (cross-model disagreement): {:.4}",
        report.u_epistemic
    );
    println!("collaborative entropy: {:.4}", report.u_coe);
    println!("regime: {}", report.quadrant.name());
    for (i, (se, div)) in report
        .per_model_se
        .iter()
        .zip(&report.per_model_div)
        .enumerate()
    {
        println!("  model {i}: entropy {se:.4}, divergence from mean {div:.4}");
    }
    Ok(())
}

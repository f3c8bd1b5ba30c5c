//! Run the CoE-guided coordination heuristic: every model commits to its most
//! likely cluster, then weights are revised until the score settles.
//!
//! cargo run --example coordination

use coe::coordination::{coordinate, CoordinationConfig};
use coe::distribution::{ensemble_mean, ClusterDistribution, EnsembleState};

fn run(label: &str, e: &EnsembleState) -> coe::error::Result<()> {
    let trace = coordinate(e, &CoordinationConfig::default())?;
    println!("{label}");
    for r in &trace.records {
        println!(
            "  iteration {}: U_A {:.4}  U_E {:.4}  U_CoE {:.4}  weights {:.3?}",
            r.iteration, r.u_aleatoric, r.u_epistemic, r.u_coe, r.weights
        );
    }
    match trace.consensus_cluster {
        Some(c) => println!("  consensus on cluster {c}"),
        None => println!(
            "  no consensus; heaviest cluster is {}",
            ensemble_mean(&trace.final_state).argmax()
        ),
    }
    Ok(())
}

fn main() -> coe::error::Result<()> {
    let agree = EnsembleState::uniform(vec![
        ClusterDistribution::new(vec![0.6, 0.3, 0.1])?,
        ClusterDistribution::new(vec![0.5, 0.4, 0.1])?,
        ClusterDistribution::new(vec![0.9, 0.05, 0.05])?,
    ])?;
    run("models that lean the same way", &agree)?;

    let split = EnsembleState::uniform(vec![
        ClusterDistribution::new(vec![0.8, 0.2])?,
        ClusterDistribution::new(vec![0.3, 0.7])?,
    ])?;
    run("two models that disagree (terminal score is ln 2)", &split)
}

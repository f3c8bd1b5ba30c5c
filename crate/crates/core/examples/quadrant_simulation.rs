//! Draw synthetic ensembles from each uncertainty regime and check that the
//! classifier recovers the regime.
//!
//! cargo run --example quadrant_simulation

use coe::distribution::Quadrant;
use coe::divergence::DivergenceKind;
use coe::simulator::{regime_sweep, RegimeSpec};

fn main() -> coe::error::Result<()> {
    println!(
        "{:<22} {:>8} {:>8} {:>8} {:>9}",
        "regime", "mean U_A", "mean U_E", "mean CoE", "recovered"
    );
    for q in Quadrant::ALL {
        let specs: Vec<RegimeSpec> = (0..200).map(|seed| RegimeSpec::new(q, seed)).collect();
        let rows = regime_sweep(&specs, &DivergenceKind::Kl)?;
        let n = rows.len() as f64;
        let mean = |f: fn(&coe::simulator::SweepRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let hits = rows.iter().filter(|r| r.classified == q).count();
        println!(
            "{:<22} {:>8.3} {:>8.3} {:>8.3} {:>8.1}%",
            q.name(),
            mean(|r| r.u_aleatoric),
            mean(|r| r.u_epistemic),
            mean(|r| r.u_coe),
            100.0 * hits as f64 / n
        );
    }
    Ok(())
}

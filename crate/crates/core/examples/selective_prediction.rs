//! Judge an uncertainty score by how well it ranks right answers above wrong
//! ones, and by the accuracy kept when the most uncertain answers are dropped.
//!
//! cargo run --example selective_prediction

use coe::evaluation::{evaluate, ScoredItem, DEFAULT_RETENTION};

fn main() -> coe::error::Result<()> {
    let data = [
        ("q01", 0.05, true),
        ("q02", 0.10, true),
        ("q03", 0.20, true),
        ("q04", 0.35, false),
        ("q05", 0.40, true),
        ("q06", 0.55, true),
        ("q07", 0.70, false),
        ("q08", 0.90, false),
        ("q09", 1.10, true),
        ("q10", 1.30, false),
    ];
    let items = data
        .iter()
        .map(|&(id, u, ok)| ScoredItem::new(id, u, ok))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = evaluate(&items, &DEFAULT_RETENTION)?;
    println!("items: {}", summary.n_items);
    println!("AUROC: {:.4}", summary.auroc);
    println!("AURAC: {:.4}", summary.aurac);
    for (keep, acc) in &summary.rejection_accuracy {
        println!("accuracy keeping {:>3.0}%: {acc:.4}", keep * 100.0);
    }
    Ok(())
}

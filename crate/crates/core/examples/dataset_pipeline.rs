//! The file-based workflow: load a JSONL dataset, cluster and score every
//! question, cache entailment judgments, and summarize selective prediction.
//! The `coe` binary wraps the same steps as `coe score` and `coe evaluate`.
//!
//! cargo run --example dataset_pipeline

use coe::clustering::{ExactMatchOracle, ProbMode};
use coe::distribution::coe;
use coe::divergence::DivergenceKind;
use coe::evaluation::{evaluate, ScoredItem, DEFAULT_RETENTION};
use coe::harness::dataset::{label_correctness, load_dataset, Matcher};
use coe::harness::{CachedOracle, EntailmentCache};
use coe::pipeline::{build_question, WeightScheme};

fn main() -> coe::error::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden.jsonl");
    let records = load_dataset(path)?;

    let judge = ExactMatchOracle;
    let mut cache = EntailmentCache::new();
    let mut items = Vec::new();
    for record in &records {
        let oracle = CachedOracle::new(&judge, &cache);
        let q = build_question(record, &oracle, ProbMode::Logprob, &WeightScheme::Uniform)?;
        let report = coe(&q.ensemble, &DivergenceKind::Js)?;
        let (_, answer) = q.majority_answer();
        let correct = label_correctness(record, answer, Matcher::Contains)?;
        println!(
            "{:<16} clusters {}  U_CoE {:.4}  {:<20} answer {answer:?} ({})",
            record.question_id,
            q.space.num_clusters(),
            report.u_coe,
            report.quadrant.name(),
            if correct { "correct" } else { "wrong" }
        );
        items.push(ScoredItem::new(
            record.question_id.clone(),
            report.u_coe,
            correct,
        )?);
        let new = oracle.into_buffer();
        cache.merge(new);
    }
    println!("cached judgments: {}", cache.len());

    let summary = evaluate(&items, &DEFAULT_RETENTION)?;
    println!("AUROC {:.3}  AURAC {:.3}", summary.auroc, summary.aurac);
    Ok(())
}

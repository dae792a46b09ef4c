//! Score externally produced completions against a dataset. Here the
//! completions are the gold traces with a few verdicts flipped.
//!
//! cargo run --example replay_eval

use std::collections::BTreeMap;

use aai::cot::Family;
use aai::harness::dataset::generate_dataset;
use aai::harness::{run_replay, PromptSettings};

fn main() -> aai::Result<()> {
    let records = generate_dataset(2, 3, 11, 8)?;
    let completions: BTreeMap<String, String> = records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let gold = r.meta.as_ref().and_then(|m| m["gold_trace"].as_str()).unwrap_or_default();
            let text = if k % 3 == 0 {
                gold.replace("= True.", "= Unknown.").replace("= False.", "= True.")
            } else {
                gold.to_string()
            };
            (r.id.clone(), text)
        })
        .collect();

    let out = run_replay(&records, Family::ProofWriter, &completions, &PromptSettings::default())?;
    for r in &out.results {
        println!("{:<12} gold={:<8} got={:<8} correct={} trace_valid={:?}", r.id, r.gold.to_string(), r.verdict.to_string(), r.correct, r.trace_valid);
    }
    println!("accuracy {}/{} = {:.3}", out.score.correct, out.score.total, out.score.accuracy);
    for ((gold, got), n) in &out.score.confusion {
        println!("  {gold} -> {got}: {n}");
    }
    Ok(())
}

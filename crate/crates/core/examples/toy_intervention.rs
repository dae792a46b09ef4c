//! Generate a few synthetic worlds, run the seeded toy model under each
//! head-selection mode, and print the head table and per-mode accuracy.
//!
//! cargo run --example toy_intervention -- [seed] [count]

use aai::harness::dataset::generate_dataset;
use aai::harness::{run_toy, ToyConfig};
use aai::heads::SelectionMode;
use aai::cot::Family;

fn main() -> aai::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let records = generate_dataset(2, 2, seed, count)?;
    for mode in [
        SelectionMode::Baseline,
        SelectionMode::Aai,
        SelectionMode::AaiAgg,
        SelectionMode::AllHeads,
    ] {
        let mut cfg = ToyConfig { mode, ..ToyConfig::default() };
        cfg.model.seed = seed;
        let started = std::time::Instant::now();
        let out = run_toy(&records, Family::ProofWriter, &cfg)?;
        if mode == SelectionMode::Baseline {
            if let Some(table) = &out.heads {
                print!("{}", table.to_tsv());
            }
        }
        let selected: Vec<String> = out.selected.iter().map(|h| h.to_string()).collect();
        println!(
            "{mode:<10} selected=[{}] accuracy={:.3} ({:.1?})",
            selected.join(" "),
            out.score.accuracy,
            started.elapsed()
        );
        for r in &out.results {
            println!("    {} -> {:?}", r.id, r.generated);
        }
    }
    Ok(())
}

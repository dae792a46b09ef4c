//! Train a small toy model on synthetic reasoning text, then compare head
//! classes before and after.
//!
//! cargo run --release --example train_toy -- [steps] [seed]

use aai::heads::{analyze_model, select_heads, HeadClass, SelectionMode, SelectionThresholds};
use aai::mask::HeadMaskPlan;
use aai::model::{encode, Model, ModelConfig};
use aai::train::{synthetic_corpus, train, TrainConfig};

fn summary(model: &Model, probe: &[u32]) -> aai::Result<()> {
    let trace = model.prefill(probe, &HeadMaskPlan::baseline())?.trace().clone();
    let table = analyze_model(&trace, &SelectionThresholds::default())?;
    print!("{}", table.to_tsv());
    println!(
        "anchor_or_copy={} aggregation={} other={} aai selects {:?}",
        table.count(HeadClass::AnchorOrCopy),
        table.count(HeadClass::Aggregation),
        table.count(HeadClass::Other),
        select_heads(&table, SelectionMode::Aai).iter().map(|h| h.to_string()).collect::<Vec<_>>()
    );
    Ok(())
}

fn main() -> aai::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(150);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let model = Model::new(ModelConfig { model_dim: 32, head_dim: 8, max_seq: 256, seed, ..Default::default() })?;
    let corpus = encode(&synthetic_corpus(2, 2, seed, 40)?);
    let probe = &corpus[..128];

    println!("untrained ({} parameters)", model.parameter_count());
    summary(&model, probe)?;

    let cfg = TrainConfig { steps, batch: 4, window: 96, seed, ..Default::default() };
    let started = std::time::Instant::now();
    let (trained, report) = train(&model, &corpus, &cfg)?;
    let head = report.losses.iter().take(10).sum::<f64>() / 10.0;
    let tail = report.losses.iter().rev().take(10).sum::<f64>() / 10.0;
    println!("\ntrained {steps} steps in {:.1?}: loss {head:.3} -> {tail:.3}", started.elapsed());
    summary(&trained, probe)?;
    Ok(())
}

//! List the prompt templates and render one for a synthetic record.
//!
//! cargo run --example prompt_templates -- [shots]

use aai::cot::templates::catalog;
use aai::harness::dataset::generate_dataset;
use aai::harness::experiment::{build_prompt, prompt_hash};
use aai::harness::PromptSettings;
use aai::cot::{Family, PromptStyle};

fn main() -> aai::Result<()> {
    let shots = std::env::args().nth(1).and_then(|s| s.parse().ok());
    for t in catalog() {
        println!("{:<32} shots={} placeholders={:?}", t.name(), t.shot_count(), t.placeholders());
    }
    let record = &generate_dataset(1, 2, 3, 1)?[0];
    let settings = PromptSettings { style: PromptStyle::SymbolicAided, shots };
    let prompt = build_prompt(record, Family::ProofWriter, &settings)?;
    println!("\n{prompt}\n\nsha256 {}", prompt_hash(&prompt));
    Ok(())
}

//! Generate a synthetic rule world, render its gold derivation, parse it back
//! and check it; then break one step and check again.
//!
//! cargo run --example synthetic_reasoning -- [depth] [width] [seed]

use aai::cot::{extract_answer, forward_chain, generate_world, parse_trace, render_gold_trace, validate_trace, Family};

fn main() -> aai::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().ok());
    let depth = args.next().flatten().unwrap_or(3) as usize;
    let width = args.next().flatten().unwrap_or(3) as usize;
    let seed = args.next().flatten().unwrap_or(7);

    let world = generate_world(depth, width, seed)?;
    println!("{}\n{}\n", world.context_text(), world.question_text());
    println!("forward chaining says {:?}", forward_chain(&world)?.label);

    let gold = render_gold_trace(&world);
    println!("{gold}\n");
    let trace = parse_trace(&gold);
    println!(
        "{} steps, {} inferences, answer {:?}, valid={}",
        trace.steps.len(),
        trace.inference_count(),
        extract_answer(&gold, Family::ProofWriter),
        validate_trace(&trace, &world).is_valid()
    );

    let mut broken = trace.clone();
    if let Some(step) = broken.steps.iter_mut().rev().find(|s| !s.consumed.is_empty()) {
        step.rule = step.rule % world.statements.len() as u32 + 1;
    }
    match validate_trace(&broken, &world).violation {
        Some(v) => println!("after swapping a rule id: {:?} at step {:?}: {}", v.kind, v.step, v.detail),
        None => println!("after swapping a rule id: still valid"),
    }
    Ok(())
}

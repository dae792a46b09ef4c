//! Locate rule spans and mentions in a prompt, build the REF/NOREF pair sets
//! and show how the final mask reshapes one head's attention.
//!
//! cargo run --example reference_masks

use std::collections::BTreeSet;

use aai::heads::HeadId;
use aai::mask::{compose_final, reweight_value, HeadMaskPlan, ReweightParams};
use aai::model::{encode, Model, ModelConfig};
use aai::rules::{annotate_text, build_pair_sets, PairOptions};

const PROMPT: &str = "# (Rule1): Bob is big.\n# (Rule2): If someone is big then they are kind.\n# (Answer): F(KB, Rule1) => `Bob is big` => F(KB, Rule2) => `Bob is kind`";

fn main() -> aai::Result<()> {
    let seq = annotate_text(PROMPT)?;
    for s in seq.spans() {
        println!("span Rule{} tokens {:?}", s.rule, s.tokens);
    }
    for m in seq.mentions() {
        println!("mention Rule{} at token {} defining={}", m.rule, m.tokens.start, m.defining);
    }

    for include_defining in [true, false] {
        let pairs = build_pair_sets(&seq, PairOptions { include_defining, final_block_only: false });
        println!(
            "include_defining={include_defining}: {} REF, {} NOREF",
            pairs.ref_pairs.len(),
            pairs.noref_pairs.len()
        );
    }

    let pairs = build_pair_sets(&seq, PairOptions::default());
    let model = Model::new(ModelConfig::default())?;
    let tokens = encode(PROMPT);
    let head = HeadId::new(1, 2);
    let base = model.prefill(&tokens, &HeadMaskPlan::baseline())?;
    let scores = base.trace().scores(head.layer, head.head).expect("baseline keeps scores");
    let params = ReweightParams { coefficient: 1.0, bias: 2.0, ..Default::default() };
    println!("boost for {head}: {:.4}", reweight_value(scores, &params)?);

    let plan = HeadMaskPlan::new(BTreeSet::from([head]), pairs.clone(), params);
    let mask = compose_final(scores, &plan, head.layer, head.head, tokens.len())?;
    let after = model.prefill(&tokens, &plan)?;
    let (w0, w1) = (
        base.trace().weights(head.layer, head.head).unwrap(),
        after.trace().weights(head.layer, head.head).unwrap(),
    );
    let (mut ref0, mut ref1) = (0.0, 0.0);
    for &(i, j) in &pairs.ref_pairs {
        ref0 += w0.get(i, j);
        ref1 += w1.get(i, j);
    }
    let suppressed = pairs.noref_pairs.iter().filter(|&&(i, j)| mask.get(i, j) == f64::NEG_INFINITY).count();
    println!("attention on REF pairs: {ref0:.3} -> {ref1:.3}; {suppressed} NOREF cells at -inf");
    let leaked: f64 = pairs.noref_pairs.iter().map(|&(i, j)| w1.get(i, j)).sum();
    println!("attention left on NOREF pairs: {leaked}");
    Ok(())
}

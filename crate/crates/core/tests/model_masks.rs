mod common;

use std::collections::BTreeSet;

use aai::heads::HeadId;
use aai::kernel::Matrix;
use aai::mask::{causal_mask, compose_final, noref_mask, ref_mask, HeadMaskPlan, MedianScope, ReweightParams};
use aai::model::{default_stop, encode, Model, ModelConfig};
use aai::rules::{annotate_text, build_pair_sets, PairOptions};
use aai::trace::{export_trace, import_trace, AttentionTrace};
use common::{fuzz_prompt, max_abs_diff, random_matrix, reference_forward};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> Model {
    Model::new(ModelConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 16,
        head_dim: 8,
        vocab_size: 258,
        max_seq: 1024,
        seed,
    })
    .unwrap()
}

const PROMPT: &str = "# (Rule1): Gary is big.\n# (Rule2): If someone is big then they are red.\n# (Answer): Rule2 uses Rule1";

fn sorted_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn intervened_prefill_matches_reference() {
    let model = tiny(21);
    let tokens = encode(PROMPT);
    let pairs = build_pair_sets(&annotate_text(PROMPT).unwrap(), PairOptions::default());
    let selected: BTreeSet<HeadId> = [HeadId::new(0, 1), HeadId::new(1, 0)].into();
    let params = ReweightParams { coefficient: 0.7, bias: 1.5, median_scope: MedianScope::CausalEntries };
    let plan = HeadMaskPlan::new(selected.clone(), pairs.clone(), params);
    let out = model.prefill(&tokens, &plan).unwrap();

    let reference = reference_forward(&model, &tokens, |l, h, raw| {
        if !selected.contains(&HeadId::new(l, h)) {
            return None;
        }
        let causal: Vec<f64> = raw.iter().enumerate().flat_map(|(i, r)| r[..=i].to_vec()).collect();
        let boost = 0.7 * sorted_median(causal) + 1.5;
        let n = raw.len();
        let mut extra = vec![vec![0.0; n]; n];
        for &(i, j) in &pairs.ref_pairs {
            extra[i][j] = boost;
        }
        for &(i, j) in &pairs.noref_pairs {
            extra[i][j] = f64::NEG_INFINITY;
        }
        Some(extra)
    });
    assert!(max_abs_diff(&out.logits, &reference.logits) < 1e-9);
    for (k, w) in reference.weights.iter().enumerate() {
        assert!(max_abs_diff(out.trace().weights(k / 2, k % 2).unwrap(), w) < 1e-9, "head {k}");
    }
}

#[test]
fn trace_file_roundtrip_is_bit_exact() {
    let model = tiny(2);
    let out = model.prefill(&encode(PROMPT), &HeadMaskPlan::baseline()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.trace");
    export_trace(out.trace(), &path).unwrap();
    let back = import_trace(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), out.trace().to_bytes().unwrap());
    assert_eq!(&back, out.trace());
    out.trace().validate(1e-9).unwrap();
}

#[test]
fn import_rejects_non_stochastic_rows() {
    let model = tiny(2);
    let out = model.prefill(&encode("abc"), &HeadMaskPlan::baseline()).unwrap();
    let mut bytes = out.trace().to_bytes().unwrap();
    // the last 8 bytes are the final weight or score cell; perturb the first weight instead
    let header_end = bytes.iter().position(|b| *b == b'\n').unwrap() + 1;
    let v = f64::from_le_bytes(bytes[header_end..header_end + 8].try_into().unwrap());
    bytes[header_end..header_end + 8].copy_from_slice(&(v + 1e-3).to_le_bytes());
    assert!(AttentionTrace::from_bytes(&bytes).is_err());
    bytes[header_end..header_end + 8].copy_from_slice(&(v + 1e-8).to_le_bytes());
    assert!(AttentionTrace::from_bytes(&bytes).is_ok());
}

#[test]
fn generation_leaves_weights_untouched() {
    let model = tiny(8);
    let before = model.checksum();
    let pairs = build_pair_sets(&annotate_text(PROMPT).unwrap(), PairOptions::default());
    let mut plan = HeadMaskPlan::new([HeadId::new(1, 1)].into(), pairs, ReweightParams::default());
    plan.prefill_only = false;
    model.greedy_decode(&encode(PROMPT), &plan, 12, &default_stop()).unwrap();
    assert_eq!(model.checksum(), before);
    assert_eq!(Model::new(model.config().clone()).unwrap().checksum(), before);
}

#[test]
fn mask_terms_commute() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = annotate_text(PROMPT).unwrap();
    let n = seq.len();
    let pairs = build_pair_sets(&seq, PairOptions::default());
    let scores = random_matrix(&mut rng, n, n, 2.0);
    let params = ReweightParams::default();
    let (r, s, c) = (
        ref_mask(&scores, &pairs, &params).unwrap(),
        noref_mask(n, &pairs).unwrap(),
        causal_mask(n),
    );
    let plan = HeadMaskPlan::new([HeadId::new(0, 0)].into(), pairs, params);
    let composed = compose_final(&scores, &plan, 0, 0, n).unwrap();
    for order in [[&r, &s, &c], [&c, &s, &r], [&s, &c, &r]] {
        let sum = order[0].add(order[1]).unwrap().add(order[2]).unwrap();
        assert_eq!(sum.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   composed.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    // unselected heads only see the causal mask
    assert_eq!(compose_final(&scores, &plan, 1, 0, n).unwrap(), c);
}

#[test]
fn out_of_range_pairs_are_rejected() {
    let seq = annotate_text(PROMPT).unwrap();
    let pairs = build_pair_sets(&seq, PairOptions::default());
    let short = Matrix::zeros(5, 5);
    assert!(ref_mask(&short, &pairs, &ReweightParams::default()).is_err());
    assert!(noref_mask(5, &pairs).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn suppressed_cells_are_zero_on_fuzzed_prompts(seed in any::<u64>(), model_seed in 0u64..4) {
        let prompt = fuzz_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let model = tiny(model_seed);
        let pairs = build_pair_sets(&annotate_text(&prompt).unwrap(), PairOptions::default());
        let all: BTreeSet<HeadId> = (0..2).flat_map(|l| (0..2).map(move |h| HeadId::new(l, h))).collect();
        let plan = HeadMaskPlan::new(all, pairs.clone(), ReweightParams::default());
        let out = model.prefill(&encode(&prompt), &plan).unwrap();
        out.trace().validate(1e-9).unwrap();
        for l in 0..2 {
            for h in 0..2 {
                let w = out.trace().weights(l, h).unwrap();
                for &(i, j) in &pairs.noref_pairs {
                    prop_assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn vacuous_plans_match_baseline(text in "[ -~]{1,60}", seed in 0u64..4) {
        let model = tiny(seed);
        let tokens = encode(&text);
        let all: BTreeSet<HeadId> = (0..2).flat_map(|l| (0..2).map(move |h| HeadId::new(l, h))).collect();
        let mut plan = HeadMaskPlan::new(all, Default::default(), ReweightParams { coefficient: 3.0, bias: -2.0, ..Default::default() });
        plan.prefill_only = false;
        let a = model.prefill(&tokens, &HeadMaskPlan::baseline()).unwrap();
        let b = model.prefill(&tokens, &plan).unwrap();
        prop_assert_eq!(a.trace().to_bytes().unwrap(), b.trace().to_bytes().unwrap());
        prop_assert_eq!(a.hidden, b.hidden);
        let stop = default_stop();
        prop_assert_eq!(
            model.greedy_decode(&tokens, &HeadMaskPlan::baseline(), 6, &stop).unwrap(),
            model.greedy_decode(&tokens, &plan, 6, &stop).unwrap()
        );
    }
}

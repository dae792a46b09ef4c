mod common;

use aai::rules::{annotate_text, build_pair_sets, PairOptions, ReferencePairSets};
use common::fuzz_prompt;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn options() -> impl Strategy<Value = PairOptions> {
    (any::<bool>(), any::<bool>()).prop_map(|(include_defining, final_block_only)| PairOptions {
        include_defining,
        final_block_only,
    })
}

proptest! {
    #[test]
    fn pairs_point_into_the_right_spans(seed in any::<u64>(), opts in options()) {
        let prompt = fuzz_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let seq = annotate_text(&prompt).unwrap();
        let pairs = build_pair_sets(&seq, opts);
        prop_assert!(pairs.ref_pairs.is_disjoint(&pairs.noref_pairs));

        // every pair must be explained by a mention covering the query
        for (set, same_rule) in [(&pairs.ref_pairs, true), (&pairs.noref_pairs, false)] {
            for &(i, j) in set {
                prop_assert!(j <= i);
                let explained = seq.mentions().iter().filter(|m| m.tokens.contains(&i)).any(|m| {
                    seq.spans().iter().any(|s| {
                        s.block == m.block && (s.rule == m.rule) == same_rule && s.tokens.contains(&j)
                    })
                });
                prop_assert!(explained, "pair ({}, {}) has no source", i, j);
            }
        }
    }

    #[test]
    fn trailing_text_keeps_existing_pairs(seed in any::<u64>(), tail in "[a-z .]{0,40}", opts in options()) {
        let prompt = fuzz_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let before = build_pair_sets(&annotate_text(&prompt).unwrap(), opts);
        let longer = format!("{prompt} {tail}");
        let after = build_pair_sets(&annotate_text(&longer).unwrap(), opts);
        prop_assert_eq!(before, after);
    }

    #[test]
    fn lines_roundtrip(seed in any::<u64>(), opts in options()) {
        let prompt = fuzz_prompt(&mut ChaCha8Rng::seed_from_u64(seed));
        let pairs = build_pair_sets(&annotate_text(&prompt).unwrap(), opts);
        let text = pairs.to_lines();
        let mut sorted: Vec<&str> = text.lines().collect();
        sorted.sort_by_key(|l| {
            let mut it = l.split(' ');
            (it.next().unwrap().parse::<usize>().unwrap(), it.next().unwrap().parse::<usize>().unwrap())
        });
        prop_assert_eq!(sorted, text.lines().collect::<Vec<_>>());
        prop_assert_eq!(ReferencePairSets::from_lines(&text).unwrap(), pairs);
    }
}

#[test]
fn defining_mentions_bind_their_own_line() {
    let text = "# (Rule1): a b\n# (Rule2): c";
    let seq = annotate_text(text).unwrap();
    let with = build_pair_sets(&seq, PairOptions { include_defining: true, final_block_only: false });
    let without = build_pair_sets(&seq, PairOptions { include_defining: false, final_block_only: false });
    assert!(without.is_empty());
    // the Rule2 identifier (bytes 18..23) reads the whole first span and its own prefix
    let rule1 = &seq.spans()[0].tokens;
    for j in rule1.clone() {
        assert!(with.noref_pairs.contains(&(18, j)), "missing suppression of key {j}");
    }
    assert!(with.ref_pairs.contains(&(22, 18)));
}

#[test]
fn final_block_only_ignores_worked_examples() {
    let text = "# (Rule1): x\n=> Rule1\n-------\n# (Rule1): y\n=> Rule1";
    let seq = annotate_text(text).unwrap();
    let all = build_pair_sets(&seq, PairOptions { include_defining: false, final_block_only: false });
    let last = build_pair_sets(&seq, PairOptions { include_defining: false, final_block_only: true });
    let first_block_end = text.find("-------").unwrap();
    assert!(all.ref_pairs.iter().any(|(i, _)| *i < first_block_end));
    assert!(last.ref_pairs.iter().all(|(i, j)| *i > first_block_end && *j > first_block_end));
    assert!(!last.ref_pairs.is_empty());
}

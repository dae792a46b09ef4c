//! Plain-text run reports. Output depends only on the inputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::experiment::RunResult;
use super::score::Score;
use crate::heads::{HeadClass, HeadId, HeadTable};

/// Everything a report shows.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub config: &'a [(String, String)],
    pub heads: Option<&'a HeadTable>,
    pub selected: &'a BTreeSet<HeadId>,
    pub results: &'a [RunResult],
    pub score: &'a Score,
}

/// Selected heads over all heads; `None` without a head table.
pub fn selected_fraction(heads: Option<&HeadTable>, selected: &BTreeSet<HeadId>) -> Option<f64> {
    let table = heads?;
    let total = table.total_heads();
    Some(if total == 0 {
        0.0
    } else {
        selected.len() as f64 / total as f64
    })
}

pub fn render_report(r: &ReportInputs<'_>) -> String {
    let mut out = String::from("== aai report ==\n\n[config]\n");
    for (k, v) in r.config {
        writeln!(out, "{k} = {v}").unwrap();
    }

    out.push_str("\n[heads]\n");
    match r.heads {
        Some(t) => {
            writeln!(out, "total = {}", t.total_heads()).unwrap();
            for class in [HeadClass::AnchorOrCopy, HeadClass::Aggregation, HeadClass::Other] {
                writeln!(out, "{class} = {}", t.count(class)).unwrap();
            }
        }
        None => out.push_str("total = n/a\n"),
    }
    let names: Vec<String> = r.selected.iter().map(HeadId::to_string).collect();
    writeln!(out, "selected = {}", if names.is_empty() { "-".into() } else { names.join(" ") }).unwrap();
    match selected_fraction(r.heads, r.selected) {
        Some(f) => writeln!(out, "selected_head_fraction = {f:.6}").unwrap(),
        None => out.push_str("selected_head_fraction = n/a\n"),
    }

    let s = r.score;
    out.push_str("\n[score]\n");
    writeln!(out, "accuracy = {:.6}", s.accuracy).unwrap();
    writeln!(out, "correct = {}", s.correct).unwrap();
    writeln!(out, "total = {}", s.total).unwrap();
    let checked: Vec<bool> = r.results.iter().filter_map(|x| x.trace_valid).collect();
    if !checked.is_empty() {
        writeln!(
            out,
            "valid_traces = {}/{}",
            checked.iter().filter(|v| **v).count(),
            checked.len()
        )
        .unwrap();
    }
    out.push_str("\n[confusion] gold -> predicted\n");
    for ((gold, pred), n) in &s.confusion {
        writeln!(out, "{gold} -> {pred} = {n}").unwrap();
    }

    out.push_str("\n[records]\n");
    for x in r.results {
        writeln!(
            out,
            "{}\tgold={}\tpred={}\t{}\t{}",
            x.id,
            x.gold,
            x.verdict,
            if x.correct { "ok" } else { "miss" },
            &x.prompt_hash[..12.min(x.prompt_hash.len())]
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cot::Verdict;
    use crate::harness::score::score_pairs;
    use crate::heads::{HeadPattern, HeadRecord, SelectionThresholds};

    fn table(n: usize) -> HeadTable {
        HeadTable {
            num_layers: 1,
            num_heads: n,
            thresholds: SelectionThresholds::default(),
            records: (0..n)
                .map(|h| HeadRecord {
                    layer: 0,
                    head: h,
                    pattern: HeadPattern::defined(1.0, 0.0, 0.0, 1),
                    class: HeadClass::AnchorOrCopy,
                })
                .collect(),
        }
    }

    #[test]
    fn fractions() {
        let t = table(4);
        assert_eq!(selected_fraction(Some(&t), &BTreeSet::new()), Some(0.0));
        let all: BTreeSet<_> = (0..4).map(|h| HeadId::new(0, h)).collect();
        assert_eq!(selected_fraction(Some(&t), &all), Some(1.0));
        assert_eq!(selected_fraction(None, &all), None);
    }

    #[test]
    fn stable_output() {
        let t = table(2);
        let score = score_pairs([(&Verdict::True, &Verdict::True)]).unwrap();
        let sel = BTreeSet::new();
        let inputs = ReportInputs {
            config: &[("mode".into(), "aai".into())],
            heads: Some(&t),
            selected: &sel,
            results: &[],
            score: &score,
        };
        let a = render_report(&inputs);
        assert_eq!(a, render_report(&inputs));
        assert!(a.contains("selected_head_fraction = 0.000000"));
    }
}

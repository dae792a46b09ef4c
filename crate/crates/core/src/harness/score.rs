//! Accuracy and confusion counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cot::Verdict;
use crate::error::{AaiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// `(gold, predicted) -> count`.
    pub confusion: BTreeMap<(Verdict, Verdict), usize>,
}

/// Scores `(gold, predicted)` pairs. A prediction is correct when equal to gold.
pub fn score_pairs<'a>(pairs: impl IntoIterator<Item = (&'a Verdict, &'a Verdict)>) -> Result<Score> {
    let mut confusion = BTreeMap::new();
    let mut correct = 0;
    let mut total = 0;
    for (gold, pred) in pairs {
        total += 1;
        if gold == pred {
            correct += 1;
        }
        *confusion.entry((gold.clone(), pred.clone())).or_insert(0) += 1;
    }
    if total == 0 {
        return Err(AaiError::EmptyInput("no results to score".into()));
    }
    Ok(Score {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_of_four() {
        let gold = [Verdict::True, Verdict::False, Verdict::Unknown, Verdict::True];
        let pred = [Verdict::True, Verdict::False, Verdict::Unknown, Verdict::Abstain];
        let s = score_pairs(gold.iter().zip(&pred)).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.confusion.values().sum::<usize>(), 4);
        assert_eq!(s.confusion[&(Verdict::True, Verdict::Abstain)], 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(score_pairs(std::iter::empty()), Err(AaiError::EmptyInput(_))));
    }
}

//! Additive attention masks for rule-reference reweighting.
//!
//! A selected head receives `M = M_ref + M_noref + M_causal` where
//!
//! - `M_causal` is `-inf` above the diagonal,
//! - `M_noref` is `-inf` on suppressed pairs,
//! - `M_ref` holds `c * median(S) + b` on reinforced pairs, with `S` that
//!   head's own pre-softmax scores.
//!
//! Every other head keeps the plain causal mask.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AaiError, Result};
use crate::heads::HeadId;
use crate::kernel::Matrix;
use crate::rules::{PairOptions, ReferencePairSets};

/// Which score entries feed the median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianScope {
    /// Entries with `i >= j`; these are the only ones that reach the softmax.
    #[default]
    CausalEntries,
    AllEntries,
}

impl FromStr for MedianScope {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" | "causal_entries" => Ok(MedianScope::CausalEntries),
            "all" | "all_entries" => Ok(MedianScope::AllEntries),
            other => Err(AaiError::Config(format!("unknown median scope `{other}`"))),
        }
    }
}

impl fmt::Display for MedianScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MedianScope::CausalEntries => "causal",
            MedianScope::AllEntries => "all",
        })
    }
}

/// Coefficient `c`, bias `b`, and median scope of the reference boost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightParams {
    pub coefficient: f64,
    pub bias: f64,
    pub median_scope: MedianScope,
}

impl Default for ReweightParams {
    fn default() -> Self {
        Self {
            coefficient: 1.0,
            bias: 0.0,
            median_scope: MedianScope::CausalEntries,
        }
    }
}

/// Which heads are reweighted, with which pairs and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaskPlan {
    pub selected_heads: BTreeSet<HeadId>,
    pub pairs: ReferencePairSets,
    pub params: ReweightParams,
    /// Apply the intervention during prefill only; decoding uses causal masks.
    pub prefill_only: bool,
    /// Annotation options for re-deriving pairs while decoding, used only
    /// when `prefill_only` is false.
    pub pair_options: PairOptions,
}

impl Default for HeadMaskPlan {
    fn default() -> Self {
        Self::baseline()
    }
}

impl HeadMaskPlan {
    /// No selected heads: every head gets the causal mask.
    pub fn baseline() -> Self {
        Self {
            selected_heads: BTreeSet::new(),
            pairs: ReferencePairSets::default(),
            params: ReweightParams::default(),
            prefill_only: true,
            pair_options: PairOptions::default(),
        }
    }

    pub fn new(
        selected_heads: BTreeSet<HeadId>,
        pairs: ReferencePairSets,
        params: ReweightParams,
    ) -> Self {
        Self {
            selected_heads,
            pairs,
            params,
            prefill_only: true,
            pair_options: PairOptions::default(),
        }
    }

    pub fn is_selected(&self, layer: usize, head: usize) -> bool {
        self.selected_heads.contains(&HeadId::new(layer, head))
    }
}

/// `-inf` where `i < j`, else 0.
pub fn causal_mask(len: usize) -> Matrix {
    let mut m = Matrix::zeros(len, len);
    for i in 0..len {
        for v in &mut m.row_mut(i)[i + 1..] {
            *v = f64::NEG_INFINITY;
        }
    }
    m
}

fn check_bounds(pairs: &std::collections::BTreeSet<(usize, usize)>, len: usize) -> Result<()> {
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= len || *j >= len) {
        return Err(AaiError::Bounds {
            query: i,
            key: j,
            len,
        });
    }
    Ok(())
}

/// `-inf` exactly on the suppressed pairs.
pub fn noref_mask(len: usize, pairs: &ReferencePairSets) -> Result<Matrix> {
    check_bounds(&pairs.noref_pairs, len)?;
    let mut m = Matrix::zeros(len, len);
    for &(i, j) in &pairs.noref_pairs {
        m.set(i, j, f64::NEG_INFINITY);
    }
    Ok(m)
}

/// Median of `values` (reordered in place). Even lengths average the two
/// middle values. `None` when empty.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((below + upper) / 2.0)
    }
}

/// Median of a head's scores over `scope`.
pub fn score_median(scores: &Matrix, scope: MedianScope) -> Result<f64> {
    let mut values: Vec<f64> = match scope {
        MedianScope::AllEntries => scores.data().to_vec(),
        MedianScope::CausalEntries => (0..scores.rows())
            .flat_map(|i| {
                let row = scores.row(i);
                row[..(i + 1).min(row.len())].iter().copied()
            })
            .collect(),
    };
    median(&mut values).ok_or_else(|| AaiError::DegenerateInput("median of an empty score set".into()))
}

/// The boost `c * median(S) + b` placed on every reference pair.
pub fn reweight_value(scores: &Matrix, params: &ReweightParams) -> Result<f64> {
    Ok(params.coefficient * score_median(scores, params.median_scope)? + params.bias)
}

/// `c * median(S) + b` on reference pairs, 0 elsewhere.
pub fn ref_mask(scores: &Matrix, pairs: &ReferencePairSets, params: &ReweightParams) -> Result<Matrix> {
    if !scores.is_square() {
        return Err(AaiError::Shape(format!(
            "score matrix must be square, got {}x{}",
            scores.rows(),
            scores.cols()
        )));
    }
    let len = scores.rows();
    check_bounds(&pairs.ref_pairs, len)?;
    let value = reweight_value(scores, params)?;
    let mut m = Matrix::zeros(len, len);
    for &(i, j) in &pairs.ref_pairs {
        m.set(i, j, value);
    }
    Ok(m)
}

/// Final additive mask for one head.
pub fn compose_final(
    scores: &Matrix,
    plan: &HeadMaskPlan,
    layer: usize,
    head: usize,
    len: usize,
) -> Result<Matrix> {
    if scores.rows() != len || scores.cols() != len {
        return Err(AaiError::Shape(format!(
            "scores are {}x{}, expected {len}x{len}",
            scores.rows(),
            scores.cols()
        )));
    }
    let causal = causal_mask(len);
    if !plan.is_selected(layer, head) {
        return Ok(causal);
    }
    let reference = ref_mask(scores, &plan.pairs, &plan.params)?;
    let suppress = noref_mask(len, &plan.pairs)?;
    reference.add(&suppress)?.add(&causal)
}

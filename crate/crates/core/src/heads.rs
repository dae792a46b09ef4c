//! Head-pattern analysis: binarize attention maps, score their directional
//! structure, classify heads, and select the heads an intervention targets.
//!
//! A head's binarized map `H` keeps causal cells whose weight exceeds a
//! threshold. Three adjacency counts, each normalized by the number of active
//! cells, summarize its shape:
//!
//! - diagonal: `H[i][j] && H[i+1][j+1]` (self attention, span copying)
//! - column adjacency: `H[i][j] && H[i+1][j]` (one key read by successive queries)
//! - row adjacency: `H[i][j] && H[i][j+1]` (one query reading a run of keys)
//!
//! Which of the last two is called "vertical" depends on [`Orientation`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AaiError, Result};
use crate::kernel::Matrix;
use crate::trace::AttentionTrace;

/// Causal boolean map of strong attention edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryAttentionMap {
    size: usize,
    bits: Vec<bool>,
}

impl BinaryAttentionMap {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            bits: vec![false; size * size],
        }
    }

    /// Builds a map from explicit active cells. Cells above the diagonal are rejected.
    pub fn from_cells(size: usize, cells: &[(usize, usize)]) -> Result<Self> {
        let mut map = Self::empty(size);
        for &(i, j) in cells {
            if i >= size || j >= size {
                return Err(AaiError::Bounds {
                    query: i,
                    key: j,
                    len: size,
                });
            }
            if i < j {
                return Err(AaiError::Shape(format!(
                    "cell ({i}, {j}) lies outside the causal region"
                )));
            }
            map.bits[i * size + j] = true;
        }
        Ok(map)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// How the two axis-aligned adjacency counts are named.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Column adjacency (a key read by consecutive queries) is "vertical".
    #[default]
    Prose,
    /// Row adjacency is "vertical", column adjacency "horizontal".
    Literal,
}

impl FromStr for Orientation {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prose" => Ok(Orientation::Prose),
            "literal" => Ok(Orientation::Literal),
            other => Err(AaiError::Config(format!("unknown orientation `{other}`"))),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Prose => "prose",
            Orientation::Literal => "literal",
        })
    }
}

/// Directional scores of one head. All three are `None` when no cell is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPattern {
    pub diagonal: Option<f64>,
    pub vertical: Option<f64>,
    pub horizontal: Option<f64>,
    pub active_count: usize,
}

impl HeadPattern {
    /// Pattern with the given scores and a nonzero active count.
    pub fn defined(diagonal: f64, vertical: f64, horizontal: f64, active_count: usize) -> Self {
        Self {
            diagonal: Some(diagonal),
            vertical: Some(vertical),
            horizontal: Some(horizontal),
            active_count,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.active_count > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadClass {
    AnchorOrCopy,
    Aggregation,
    Other,
}

impl fmt::Display for HeadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadClass::AnchorOrCopy => "anchor_or_copy",
            HeadClass::Aggregation => "aggregation",
            HeadClass::Other => "other",
        })
    }
}

impl FromStr for HeadClass {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor_or_copy" => Ok(HeadClass::AnchorOrCopy),
            "aggregation" => Ok(HeadClass::Aggregation),
            "other" => Ok(HeadClass::Other),
            other => Err(AaiError::Format(format!("unknown head class `{other}`"))),
        }
    }
}

/// Binarization cutoff and classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub binarize_threshold: f64,
    pub diag_threshold: f64,
    pub vert_threshold: f64,
    pub other_threshold: f64,
    pub orientation: Orientation,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.04,
            diag_threshold: 0.3,
            vert_threshold: 0.6,
            other_threshold: 0.3,
            orientation: Orientation::Prose,
        }
    }
}

/// `H[i][j] = A[i][j] > threshold && i >= j`.
pub fn binarize(weights: &Matrix, threshold: f64) -> Result<BinaryAttentionMap> {
    if !weights.is_square() {
        return Err(AaiError::Shape(format!(
            "attention map must be square, got {}x{}",
            weights.rows(),
            weights.cols()
        )));
    }
    if !(threshold > 0.0) {
        return Err(AaiError::Config(format!(
            "binarization threshold must be positive, got {threshold}"
        )));
    }
    let n = weights.rows();
    let mut map = BinaryAttentionMap::empty(n);
    for i in 0..n {
        let row = weights.row(i);
        for j in 0..=i {
            map.bits[i * n + j] = row[j] > threshold;
        }
    }
    Ok(map)
}

/// Diagonal, column-adjacent and row-adjacent pair counts of a map.
fn adjacency_counts(map: &BinaryAttentionMap) -> (usize, usize, usize) {
    let n = map.size;
    let (mut diag, mut col, mut row) = (0, 0, 0);
    for i in 0..n {
        for j in 0..=i {
            if !map.get(i, j) {
                continue;
            }
            if i + 1 < n {
                if map.get(i + 1, j) {
                    col += 1;
                }
                if j + 1 < n && map.get(i + 1, j + 1) {
                    diag += 1;
                }
            }
            if j + 1 <= i && map.get(i, j + 1) {
                row += 1;
            }
        }
    }
    (diag, col, row)
}

/// Directional pattern of a binarized map.
pub fn directional_scores(map: &BinaryAttentionMap, orientation: Orientation) -> HeadPattern {
    let active = map.active_count();
    if active == 0 {
        return HeadPattern {
            diagonal: None,
            vertical: None,
            horizontal: None,
            active_count: 0,
        };
    }
    let (diag, col, row) = adjacency_counts(map);
    let total = active as f64;
    let (vertical, horizontal) = match orientation {
        Orientation::Prose => (col, row),
        Orientation::Literal => (row, col),
    };
    HeadPattern::defined(
        diag as f64 / total,
        vertical as f64 / total,
        horizontal as f64 / total,
        active,
    )
}

/// Anchor/copy heads have `diagonal > diag_threshold`; aggregation heads have
/// `vertical > vert_threshold` with horizontal and diagonal both below
/// `other_threshold`. Anchor/copy wins if both hold.
pub fn classify_head(pattern: &HeadPattern, t: &SelectionThresholds) -> Result<HeadClass> {
    let (Some(diag), Some(vert), Some(horiz)) =
        (pattern.diagonal, pattern.vertical, pattern.horizontal)
    else {
        return Err(AaiError::Unclassifiable);
    };
    if diag > t.diag_threshold {
        Ok(HeadClass::AnchorOrCopy)
    } else if vert > t.vert_threshold && horiz < t.other_threshold && diag < t.other_threshold {
        Ok(HeadClass::Aggregation)
    } else {
        Ok(HeadClass::Other)
    }
}

/// `(layer, head)` coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl FromStr for HeadId {
    type Err = AaiError;

    /// Parses the `L{layer}H{head}` form.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || AaiError::Format(format!("`{s}` is not a head id like L0H1"));
        let rest = s.trim().strip_prefix('L').ok_or_else(bad)?;
        let (layer, head) = rest.split_once('H').ok_or_else(bad)?;
        Ok(HeadId::new(
            layer.parse().map_err(|_| bad())?,
            head.parse().map_err(|_| bad())?,
        ))
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub layer: usize,
    pub head: usize,
    pub pattern: HeadPattern,
    pub class: HeadClass,
}

impl HeadRecord {
    pub fn id(&self) -> HeadId {
        HeadId::new(self.layer, self.head)
    }
}

/// Per-head analysis of a whole trace, layer-major then head-minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTable {
    pub num_layers: usize,
    pub num_heads: usize,
    pub thresholds: SelectionThresholds,
    pub records: Vec<HeadRecord>,
}

impl HeadTable {
    pub fn total_heads(&self) -> usize {
        self.num_layers * self.num_heads
    }

    pub fn count(&self, class: HeadClass) -> usize {
        self.records.iter().filter(|r| r.class == class).count()
    }

    /// Tab-separated report with one header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("layer\thead\ts_diag\ts_vert\ts_horiz\tactive\tclass\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.layer,
                r.head,
                fmt_score(r.pattern.diagonal),
                fmt_score(r.pattern.vertical),
                fmt_score(r.pattern.horizontal),
                r.pattern.active_count,
                r.class
            ));
        }
        out
    }

    /// Parses the output of [`HeadTable::to_tsv`]. Classes are taken as printed.
    pub fn from_tsv(text: &str, thresholds: SelectionThresholds) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(AaiError::Format(format!(
                    "head table line {}: expected 7 columns",
                    n + 1
                )));
            }
            let num = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| AaiError::Format(format!("head table line {}: bad index `{s}`", n + 1)))
            };
            let score = |s: &str| -> Result<Option<f64>> {
                if s == "NA" {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| {
                        AaiError::Format(format!("head table line {}: bad score `{s}`", n + 1))
                    })
                }
            };
            records.push(HeadRecord {
                layer: num(cols[0])?,
                head: num(cols[1])?,
                pattern: HeadPattern {
                    diagonal: score(cols[2])?,
                    vertical: score(cols[3])?,
                    horizontal: score(cols[4])?,
                    active_count: num(cols[5])?,
                },
                class: cols[6].parse()?,
            });
        }
        let num_layers = records.iter().map(|r| r.layer + 1).max().unwrap_or(0);
        let num_heads = records.iter().map(|r| r.head + 1).max().unwrap_or(0);
        if records.len() != num_layers * num_heads {
            return Err(AaiError::IncompleteTrace(format!(
                "head table has {} rows for {num_layers}x{num_heads} heads",
                records.len()
            )));
        }
        Ok(Self {
            num_layers,
            num_heads,
            thresholds,
            records,
        })
    }
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Pattern of a single weight matrix under `t`.
pub fn analyze_head(weights: &Matrix, t: &SelectionThresholds) -> Result<(HeadPattern, HeadClass)> {
    let map = binarize(weights, t.binarize_threshold)?;
    let pattern = directional_scores(&map, t.orientation);
    let class = if pattern.is_defined() {
        classify_head(&pattern, t)?
    } else {
        HeadClass::Other
    };
    Ok((pattern, class))
}

/// Analyzes every head of a trace. Heads with no active cell are `Other`.
pub fn analyze_model(trace: &AttentionTrace, t: &SelectionThresholds) -> Result<HeadTable> {
    let meta = trace.meta();
    let mut records = Vec::with_capacity(meta.num_layers * meta.num_heads);
    for layer in 0..meta.num_layers {
        for head in 0..meta.num_heads {
            let weights = trace.weights(layer, head).ok_or_else(|| {
                AaiError::IncompleteTrace(format!("no weights for layer {layer} head {head}"))
            })?;
            let (pattern, class) = analyze_head(weights, t)?;
            records.push(HeadRecord {
                layer,
                head,
                pattern,
                class,
            });
        }
    }
    Ok(HeadTable {
        num_layers: meta.num_layers,
        num_heads: meta.num_heads,
        thresholds: *t,
        records,
    })
}

/// Experiment setting deciding which heads are reweighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Anchor and copy heads.
    #[default]
    Aai,
    /// Aggregation heads.
    AaiAgg,
    /// Every head, no selection.
    AllHeads,
    /// No intervention.
    Baseline,
}

impl FromStr for SelectionMode {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aai" => Ok(SelectionMode::Aai),
            "aai-agg" | "aai_agg" => Ok(SelectionMode::AaiAgg),
            "all-heads" | "all_heads" => Ok(SelectionMode::AllHeads),
            "baseline" => Ok(SelectionMode::Baseline),
            other => Err(AaiError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Aai => "aai",
            SelectionMode::AaiAgg => "aai-agg",
            SelectionMode::AllHeads => "all-heads",
            SelectionMode::Baseline => "baseline",
        })
    }
}

pub fn select_heads(table: &HeadTable, mode: SelectionMode) -> BTreeSet<HeadId> {
    let wanted = match mode {
        SelectionMode::Baseline => return BTreeSet::new(),
        SelectionMode::AllHeads => return table.records.iter().map(HeadRecord::id).collect(),
        SelectionMode::Aai => HeadClass::AnchorOrCopy,
        SelectionMode::AaiAgg => HeadClass::Aggregation,
    };
    table
        .records
        .iter()
        .filter(|r| r.class == wanted)
        .map(HeadRecord::id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_is_pure_diagonal() {
        let map = binarize(&Matrix::identity(4), 0.04).unwrap();
        assert_eq!(map, BinaryAttentionMap::from_cells(4, &[(0, 0), (1, 1), (2, 2), (3, 3)]).unwrap());
        for o in [Orientation::Prose, Orientation::Literal] {
            assert_eq!(directional_scores(&map, o), HeadPattern::defined(0.75, 0.0, 0.0, 4));
        }
    }

    #[test]
    fn upper_triangle_is_ignored() {
        let mut a = Matrix::zeros(3, 3);
        a.set(0, 1, 0.9);
        let map = binarize(&a, 0.04).unwrap();
        assert_eq!(map.active_count(), 0);
        let p = directional_scores(&map, Orientation::Prose);
        assert_eq!(p.diagonal, None);
        assert!(matches!(
            classify_head(&p, &SelectionThresholds::default()),
            Err(AaiError::Unclassifiable)
        ));
    }

    #[test]
    fn threshold_is_strict() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.04, 0.96]]).unwrap();
        let map = binarize(&a, 0.04).unwrap();
        assert!(!map.get(1, 0));
        assert!(binarize(&a, 0.0).is_err());
        assert!(binarize(&Matrix::zeros(2, 3), 0.04).is_err());
    }

    #[test]
    fn column_map_orientation() {
        let map = BinaryAttentionMap::from_cells(4, &[(0, 0), (1, 0), (2, 0), (3, 0)]).unwrap();
        assert_eq!(
            directional_scores(&map, Orientation::Prose),
            HeadPattern::defined(0.0, 0.75, 0.0, 4)
        );
        assert_eq!(
            directional_scores(&map, Orientation::Literal),
            HeadPattern::defined(0.0, 0.0, 0.75, 4)
        );
    }

    #[test]
    fn off_diagonal_segment() {
        let map = BinaryAttentionMap::from_cells(6, &[(3, 0), (4, 1), (5, 2)]).unwrap();
        let p = directional_scores(&map, Orientation::Prose);
        assert_eq!(p, HeadPattern::defined(2.0 / 3.0, 0.0, 0.0, 3));
    }

    #[test]
    fn classification_rules() {
        let t = SelectionThresholds::default();
        let cases = [
            ((0.75, 0.0, 0.0), HeadClass::AnchorOrCopy),
            ((0.1, 0.8, 0.1), HeadClass::Aggregation),
            ((0.2, 0.2, 0.2), HeadClass::Other),
            // exactly at the threshold does not qualify
            ((0.3, 0.0, 0.0), HeadClass::Other),
            ((0.1, 0.6, 0.1), HeadClass::Other),
            ((0.1, 0.8, 0.3), HeadClass::Other),
        ];
        for ((d, v, h), want) in cases {
            let p = HeadPattern::defined(d, v, h, 1);
            assert_eq!(classify_head(&p, &t).unwrap(), want, "{d} {v} {h}");
        }
    }

    #[test]
    fn anchor_wins_ties() {
        let t = SelectionThresholds {
            other_threshold: 0.9,
            ..SelectionThresholds::default()
        };
        let p = HeadPattern::defined(0.5, 0.8, 0.1, 1);
        assert_eq!(classify_head(&p, &t).unwrap(), HeadClass::AnchorOrCopy);
    }

    #[test]
    fn defaults() {
        let t = SelectionThresholds::default();
        assert_eq!(t.binarize_threshold, 0.04);
        assert_eq!(t.diag_threshold, 0.3);
        assert_eq!(t.vert_threshold, 0.6);
        assert_eq!(t.other_threshold, 0.3);
        assert_eq!(t.orientation, Orientation::Prose);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("aai-agg".parse::<SelectionMode>().unwrap(), SelectionMode::AaiAgg);
        assert_eq!("all-heads".parse::<SelectionMode>().unwrap(), SelectionMode::AllHeads);
        assert!("everything".parse::<SelectionMode>().is_err());
    }
}

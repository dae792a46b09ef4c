//! Attention traces: per-head weight (and optionally score) matrices captured
//! from a forward pass, plus the on-disk exchange format.
//!
//! File layout:
//!
//! ```text
//! AAI-TRACE {"version":1,"kind":"attention","num_layers":..,"num_heads":..,
//!            "seq_len":..,"tokens":[..],"has_scores":..}\n
//! <weights: num_layers*num_heads matrices, layer-major, head-minor>
//! <scores:  same order, present iff has_scores>
//! ```
//!
//! The header is one line of JSON after the magic word. Each matrix is
//! `seq_len * seq_len` little-endian `f64` values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AaiError, Result};
use crate::heads::HeadId;
use crate::kernel::Matrix;

pub const TRACE_MAGIC: &str = "AAI-TRACE";
pub const TRACE_VERSION: u32 = 1;

/// Row-sum tolerance applied to traces read from disk.
pub const IMPORT_ROW_TOLERANCE: f64 = 1e-6;

/// What the weight slot of a trace holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    /// Row-stochastic attention weights.
    #[default]
    Attention,
    /// Additive pre-softmax masks (may contain `-inf`).
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub version: u32,
    #[serde(default)]
    pub kind: TraceKind,
    pub num_layers: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    #[serde(default)]
    pub tokens: Vec<String>,
    #[serde(default)]
    pub has_scores: bool,
}

impl TraceMeta {
    pub fn new(num_layers: usize, num_heads: usize, seq_len: usize, tokens: Vec<String>) -> Self {
        Self {
            version: TRACE_VERSION,
            kind: TraceKind::Attention,
            num_layers,
            num_heads,
            seq_len,
            tokens,
            has_scores: false,
        }
    }

    fn head_ids(&self) -> impl Iterator<Item = HeadId> + '_ {
        (0..self.num_layers)
            .flat_map(move |layer| (0..self.num_heads).map(move |head| HeadId::new(layer, head)))
    }
}

/// Weight matrices for every `(layer, head)` and optional pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    meta: TraceMeta,
    weights: BTreeMap<HeadId, Matrix>,
    scores: BTreeMap<HeadId, Matrix>,
}

impl AttentionTrace {
    /// Empty trace; fill it with [`AttentionTrace::insert`].
    pub fn new(mut meta: TraceMeta) -> Self {
        meta.has_scores = false;
        Self {
            meta,
            weights: BTreeMap::new(),
            scores: BTreeMap::new(),
        }
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn kind(&self) -> TraceKind {
        self.meta.kind
    }

    pub fn set_kind(&mut self, kind: TraceKind) {
        self.meta.kind = kind;
    }

    pub fn insert(&mut self, layer: usize, head: usize, weights: Matrix, scores: Option<Matrix>) {
        let id = HeadId::new(layer, head);
        self.weights.insert(id, weights);
        if let Some(s) = scores {
            self.scores.insert(id, s);
        }
        self.meta.has_scores = !self.scores.is_empty();
    }

    pub fn weights(&self, layer: usize, head: usize) -> Option<&Matrix> {
        self.weights.get(&HeadId::new(layer, head))
    }

    pub fn scores(&self, layer: usize, head: usize) -> Option<&Matrix> {
        self.scores.get(&HeadId::new(layer, head))
    }

    pub fn iter_weights(&self) -> impl Iterator<Item = (HeadId, &Matrix)> {
        self.weights.iter().map(|(k, v)| (*k, v))
    }

    /// Checks completeness, shapes, and (for attention traces) row sums.
    pub fn validate(&self, row_tolerance: f64) -> Result<()> {
        let m = &self.meta;
        if m.seq_len == 0 {
            return Err(AaiError::Format("seq_len must be positive".into()));
        }
        if !m.tokens.is_empty() && m.tokens.len() != m.seq_len {
            return Err(AaiError::Format(format!(
                "{} tokens for seq_len {}",
                m.tokens.len(),
                m.seq_len
            )));
        }
        for id in m.head_ids() {
            let w = self.weights.get(&id).ok_or_else(|| {
                AaiError::IncompleteTrace(format!("missing weights for layer {} head {}", id.layer, id.head))
            })?;
            check_square(w, m.seq_len, id)?;
            match m.kind {
                TraceKind::Attention => check_row_stochastic(w, row_tolerance, id)?,
                TraceKind::Mask => {
                    if w.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                        return Err(AaiError::Format(format!("mask {id} holds NaN or +inf")));
                    }
                }
            }
            if m.has_scores {
                let s = self.scores.get(&id).ok_or_else(|| {
                    AaiError::IncompleteTrace(format!("missing scores for layer {} head {}", id.layer, id.head))
                })?;
                check_square(s, m.seq_len, id)?;
            }
        }
        let declared = m.num_layers * m.num_heads;
        if self.weights.len() != declared {
            return Err(AaiError::Format(format!(
                "trace holds {} weight matrices but declares {declared}",
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// Serializes to the exchange format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate(IMPORT_ROW_TOLERANCE)?;
        let header = serde_json::to_string(&self.meta)
            .map_err(|e| AaiError::Format(format!("header: {e}")))?;
        let l = self.meta.seq_len;
        let n = self.weights.len() * (1 + usize::from(self.meta.has_scores));
        let mut out = Vec::with_capacity(header.len() + 16 + n * l * l * 8);
        out.extend_from_slice(TRACE_MAGIC.as_bytes());
        out.push(b' ');
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        let mut put = |m: &Matrix| {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for id in self.meta.head_ids() {
            put(&self.weights[&id]);
        }
        if self.meta.has_scores {
            for id in self.meta.head_ids() {
                put(&self.scores[&id]);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| AaiError::Format("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| AaiError::Format("header is not UTF-8".into()))?;
        let json = header
            .strip_prefix(TRACE_MAGIC)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| AaiError::Format(format!("header does not start with `{TRACE_MAGIC}`")))?;
        let meta: TraceMeta =
            serde_json::from_str(json).map_err(|e| AaiError::Format(format!("header: {e}")))?;
        if meta.version != TRACE_VERSION {
            return Err(AaiError::Format(format!(
                "unsupported trace version {}",
                meta.version
            )));
        }
        let l = meta.seq_len;
        let per = l * l * 8;
        let heads = meta.num_layers * meta.num_heads;
        let expected = heads * per * (1 + usize::from(meta.has_scores));
        let payload = &bytes[nl + 1..];
        if payload.len() < expected {
            let present = if per == 0 { 0 } else { payload.len() / per };
            return Err(AaiError::IncompleteTrace(format!(
                "header declares {} matrices but only {present} are present",
                expected / per.max(1)
            )));
        }
        if payload.len() > expected {
            return Err(AaiError::Format(format!(
                "{} trailing bytes after the last matrix",
                payload.len() - expected
            )));
        }
        let read = |idx: usize| -> Matrix {
            let chunk = &payload[idx * per..(idx + 1) * per];
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Matrix::new(l, l, data).expect("chunk sized to l*l")
        };
        let mut trace = AttentionTrace {
            meta: meta.clone(),
            weights: BTreeMap::new(),
            scores: BTreeMap::new(),
        };
        for (idx, id) in meta.head_ids().enumerate() {
            trace.weights.insert(id, read(idx));
            if meta.has_scores {
                trace.scores.insert(id, read(heads + idx));
            }
        }
        trace.validate(IMPORT_ROW_TOLERANCE)?;
        Ok(trace)
    }
}

fn check_square(m: &Matrix, l: usize, id: HeadId) -> Result<()> {
    if m.rows() != l || m.cols() != l {
        return Err(AaiError::Format(format!(
            "{id}: matrix is {}x{}, expected {l}x{l}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn check_row_stochastic(m: &Matrix, tol: f64, id: HeadId) -> Result<()> {
    for i in 0..m.rows() {
        let row = m.row(i);
        if row.iter().any(|v| !v.is_finite() || *v < -tol) {
            return Err(AaiError::Format(format!("{id}: row {i} has invalid weights")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(AaiError::Format(format!(
                "{id}: row {i} sums to {sum}, outside tolerance {tol}"
            )));
        }
    }
    Ok(())
}

pub fn export_trace(trace: &AttentionTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = trace.to_bytes()?;
    fs::write(path, bytes).map_err(|e| AaiError::io(path, e))
}

pub fn import_trace(path: impl AsRef<Path>) -> Result<AttentionTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AaiError::io(path, e))?;
    AttentionTrace::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_file(matrices: &[[f64; 4]], heads: usize, has_scores: bool) -> Vec<u8> {
        let mut out = format!(
            "AAI-TRACE {{\"version\":1,\"num_layers\":1,\"num_heads\":{heads},\"seq_len\":2,\"tokens\":[\"a\",\"b\"],\"has_scores\":{has_scores}}}\n"
        )
        .into_bytes();
        for m in matrices {
            for v in m {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn smallest_valid_trace() {
        let bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.5]], 1, false);
        let trace = AttentionTrace::from_bytes(&bytes).unwrap();
        assert_eq!(trace.meta().kind, TraceKind::Attention);
        assert_eq!(trace.weights(0, 0).unwrap().row(1), &[0.5, 0.5]);
        let again = AttentionTrace::from_bytes(&trace.to_bytes().unwrap()).unwrap();
        assert_eq!(again, trace);
    }

    #[test]
    fn missing_matrix() {
        let bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.5]], 2, false);
        assert!(matches!(
            AttentionTrace::from_bytes(&bytes),
            Err(AaiError::IncompleteTrace(_))
        ));
        let bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.5]], 1, true);
        assert!(matches!(
            AttentionTrace::from_bytes(&bytes),
            Err(AaiError::IncompleteTrace(_))
        ));
    }

    #[test]
    fn bad_rows_and_headers() {
        let bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.6]], 1, false);
        assert!(matches!(AttentionTrace::from_bytes(&bytes), Err(AaiError::Format(_))));
        let mut bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.5]], 1, false);
        bytes[0] = b'X';
        assert!(matches!(AttentionTrace::from_bytes(&bytes), Err(AaiError::Format(_))));
        assert!(AttentionTrace::from_bytes(b"AAI-TRACE {not json}\n").is_err());
        let mut bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.5]], 1, false);
        bytes.push(0);
        assert!(matches!(AttentionTrace::from_bytes(&bytes), Err(AaiError::Format(_))));
    }

    #[test]
    fn tolerance_admits_small_drift() {
        let bytes = minimal_file(&[[1.0, 0.0, 0.5, 0.5 + 5e-7]], 1, false);
        assert!(AttentionTrace::from_bytes(&bytes).is_ok());
    }
}

//! JSONL datasets and completion files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cot::world::{generate_world, SyntheticWorld};
use crate::cot::{render_gold_trace, Family, Verdict};
use crate::error::{AaiError, Result};

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub context: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl DatasetRecord {
    pub fn gold(&self, family: Family) -> Result<Verdict> {
        Verdict::parse_gold(&self.answer, family)
            .map_err(|e| AaiError::Schema(format!("record `{}`: {e}", self.id)))
    }
}

/// Parses JSONL text; `origin` names the source in errors.
pub fn parse_dataset(text: &str, family: Family, origin: &Path) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| AaiError::Load {
            path: origin.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        record.gold(family)?;
        if family.requires_options() && record.options.as_ref().map_or(true, Vec::is_empty) {
            return Err(AaiError::Schema(format!("record `{}` has no options", record.id)));
        }
        if !ids.insert(record.id.clone()) {
            return Err(AaiError::Schema(format!("duplicate id `{}`", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>, family: Family) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AaiError::io(path, e))?;
    parse_dataset(&text, family, path)
}

pub fn dataset_to_jsonl(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_jsonl(records)).map_err(|e| AaiError::io(path, e))
}

/// A generated text for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub id: String,
    pub completion: String,
}

pub fn parse_completions(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Completion = serde_json::from_str(line).map_err(|e| AaiError::Load {
            path: origin.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if out.insert(c.id.clone(), c.completion).is_some() {
            return Err(AaiError::Schema(format!("duplicate completion for `{}`", c.id)));
        }
    }
    Ok(out)
}

pub fn load_completions(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AaiError::io(path, e))?;
    parse_completions(&text, path)
}

pub fn completions_to_jsonl(completions: &[Completion]) -> String {
    completions
        .iter()
        .map(|c| serde_json::to_string(c).expect("completions serialize") + "\n")
        .collect()
}

/// Dataset record for a generated world. The gold derivation travels in `meta`.
pub fn world_record(world: &SyntheticWorld, id: String, depth: usize, width: usize, seed: u64) -> DatasetRecord {
    DatasetRecord {
        id,
        context: world.context_text(),
        question: world.question_text(),
        options: None,
        answer: world.label.to_string(),
        meta: Some(serde_json::json!({
            "generator": "synthetic",
            "depth": depth,
            "width": width,
            "seed": seed,
            "gold_trace": render_gold_trace(world),
        })),
    }
}

/// `count` worlds with seeds `seed, seed + 1, ...`.
pub fn generate_dataset(depth: usize, width: usize, seed: u64, count: usize) -> Result<Vec<DatasetRecord>> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let world = generate_world(depth, width, s)?;
            Ok(world_record(&world, format!("synth-d{depth}-w{width}-s{s}"), depth, width, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_lines() {
        let text = r#"{"id":"a","context":"c","question":"q","answer":"True"}
{"id":"b","context":"c","question":"q","answer":"Unknown"}
"#;
        let recs = parse_dataset(text, Family::ProofWriter, Path::new("mem")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].id, "b");
    }

    #[test]
    fn schema_errors() {
        let dup = r#"{"id":"a","context":"c","question":"q","answer":"True"}
{"id":"a","context":"c","question":"q","answer":"False"}"#;
        assert!(matches!(
            parse_dataset(dup, Family::ProofWriter, Path::new("mem")),
            Err(AaiError::Schema(_))
        ));
        let bad = r#"{"id":"a","context":"c","question":"q","answer":"Unknown"}"#;
        assert!(matches!(
            parse_dataset(bad, Family::ProntoQa, Path::new("mem")),
            Err(AaiError::Schema(_))
        ));
        let broken = "{\"id\":\"a\"}\nnot json";
        match parse_dataset(broken, Family::ProofWriter, Path::new("mem")) {
            Err(AaiError::Load { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_roundtrip() {
        let recs = generate_dataset(2, 2, 9, 5).unwrap();
        let text = dataset_to_jsonl(&recs);
        assert_eq!(parse_dataset(&text, Family::ProofWriter, Path::new("mem")).unwrap(), recs);
    }
}

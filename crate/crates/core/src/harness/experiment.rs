//! Experiment orchestration: toy-model generation or completion replay.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::DatasetRecord;
use super::score::{score_pairs, Score};
use crate::cot::trace::validate_trace;
use crate::cot::world::SyntheticWorld;
use crate::cot::{extract_answer, parse_trace, tag_rules, Family, PromptInputs, PromptStyle, PromptTemplate, Verdict};
use crate::error::{AaiError, Result};
use crate::heads::{analyze_model, select_heads, HeadId, HeadTable, SelectionMode, SelectionThresholds};
use crate::mask::{HeadMaskPlan, ReweightParams};
use crate::model::{default_stop, encode, Model, ModelConfig};
use crate::rules::{annotate_text, build_pair_sets, ids_to_text, PairOptions};

/// Template choice for rendering records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub style: PromptStyle,
    /// Worked examples to keep; `None` keeps all of them.
    pub shots: Option<usize>,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            style: PromptStyle::SymbolicAided,
            shots: None,
        }
    }
}

/// Renders the prompt for one record. Families without a template in the
/// requested style fall back to the compact one.
pub fn build_prompt(record: &DatasetRecord, family: Family, settings: &PromptSettings) -> Result<String> {
    let template = PromptTemplate::get(settings.style, family)
        .or_else(|_| PromptTemplate::get(PromptStyle::Compact, family))?;
    let context = if record.question.trim().is_empty() {
        record.context.clone()
    } else {
        format!("{} {}", record.context.trim_end(), record.question.trim())
    };
    let inputs = PromptInputs {
        rule_content: Some(tag_rules(&record.context)),
        question: Some(format!("{}{}", template.question_framing(), record.question)),
        options: record.options.clone(),
        context: Some(context),
    };
    match settings.shots {
        Some(n) => template.render_with_shots(&inputs, n),
        None => template.render(&inputs),
    }
}

/// Hex SHA-256 of a prompt.
pub fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub id: String,
    pub prompt_hash: String,
    pub generated: String,
    pub verdict: Verdict,
    pub gold: Verdict,
    pub correct: bool,
    /// Semantic trace check, for records in the canonical synthetic grammar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_valid: Option<bool>,
    /// Wall time in milliseconds; only recorded on request, since it breaks
    /// run-to-run equality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

fn judge(record: &DatasetRecord, family: Family, prompt: &str, generated: String) -> Result<RunResult> {
    let gold = record.gold(family)?;
    let verdict = extract_answer(&generated, family);
    let trace_valid = (family == Family::ProofWriter)
        .then(|| SyntheticWorld::from_text(&record.context, &record.question).ok())
        .flatten()
        .map(|world| validate_trace(&parse_trace(&generated), &world).is_valid());
    Ok(RunResult {
        id: record.id.clone(),
        prompt_hash: prompt_hash(prompt),
        correct: verdict == gold,
        generated,
        verdict,
        gold,
        trace_valid,
        timing_ms: None,
    })
}

/// Results, their score, and the head analysis that drove the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub results: Vec<RunResult>,
    pub score: Score,
    pub heads: Option<HeadTable>,
    pub selected: BTreeSet<HeadId>,
}

pub fn score_results(results: &[RunResult]) -> Result<Score> {
    score_pairs(results.iter().map(|r| (&r.gold, &r.verdict)))
}

/// Scores externally produced completions. No model is involved.
pub fn run_replay(
    records: &[DatasetRecord],
    family: Family,
    completions: &BTreeMap<String, String>,
    prompts: &PromptSettings,
) -> Result<ExperimentOutput> {
    if let Some(missing) = records.iter().find(|r| !completions.contains_key(&r.id)) {
        return Err(AaiError::Coverage(format!("no completion for record `{}`", missing.id)));
    }
    let results = records
        .iter()
        .map(|r| {
            let prompt = build_prompt(r, family, prompts)?;
            judge(r, family, &prompt, completions[&r.id].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let score = score_results(&results)?;
    Ok(ExperimentOutput {
        results,
        score,
        heads: None,
        selected: BTreeSet::new(),
    })
}

/// Settings of a toy-model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub model: ModelConfig,
    pub mode: SelectionMode,
    pub params: ReweightParams,
    pub include_defining: bool,
    pub final_block_only: bool,
    pub thresholds: SelectionThresholds,
    pub prefill_only: bool,
    pub prompts: PromptSettings,
    pub max_new: usize,
    /// Record whose baseline prefill drives the head analysis.
    pub calibration: usize,
    pub record_timing: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            mode: SelectionMode::Aai,
            params: ReweightParams::default(),
            include_defining: true,
            final_block_only: false,
            thresholds: SelectionThresholds::default(),
            prefill_only: true,
            prompts: PromptSettings {
                style: PromptStyle::SymbolicAided,
                shots: Some(0),
            },
            max_new: 24,
            calibration: 0,
            record_timing: false,
        }
    }
}

impl ToyConfig {
    pub fn pair_options(&self) -> PairOptions {
        PairOptions {
            include_defining: self.include_defining,
            final_block_only: self.final_block_only,
        }
    }

    /// `key = value` lines echoed into reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let m = &self.model;
        vec![
            ("mode".into(), self.mode.to_string()),
            ("seed".into(), m.seed.to_string()),
            (
                "model".into(),
                format!(
                    "layers={} heads={} model_dim={} head_dim={} vocab={} max_seq={}",
                    m.num_layers, m.num_heads, m.model_dim, m.head_dim, m.vocab_size, m.max_seq
                ),
            ),
            ("binarize_threshold".into(), self.thresholds.binarize_threshold.to_string()),
            ("diag_threshold".into(), self.thresholds.diag_threshold.to_string()),
            ("vert_threshold".into(), self.thresholds.vert_threshold.to_string()),
            ("other_threshold".into(), self.thresholds.other_threshold.to_string()),
            ("orientation".into(), self.thresholds.orientation.to_string()),
            ("coef".into(), self.params.coefficient.to_string()),
            ("bias".into(), self.params.bias.to_string()),
            ("median_scope".into(), self.params.median_scope.to_string()),
            ("include_defining".into(), self.include_defining.to_string()),
            ("final_block_only".into(), self.final_block_only.to_string()),
            ("prefill_only".into(), self.prefill_only.to_string()),
            ("style".into(), self.prompts.style.to_string()),
            (
                "shots".into(),
                self.prompts.shots.map_or_else(|| "all".to_string(), |n| n.to_string()),
            ),
            ("max_new".into(), self.max_new.to_string()),
            ("calibration".into(), self.calibration.to_string()),
        ]
    }
}

/// Head analysis on the calibration record's prompt, then greedy generation
/// for every record with its own reference pairs.
pub fn run_toy(records: &[DatasetRecord], family: Family, cfg: &ToyConfig) -> Result<ExperimentOutput> {
    if records.is_empty() {
        return Err(AaiError::EmptyInput("dataset has no records".into()));
    }
    let model = Model::new(cfg.model.clone())?;
    let prompts = records
        .iter()
        .map(|r| build_prompt(r, family, &cfg.prompts))
        .collect::<Result<Vec<_>>>()?;

    let calibration_prompt = prompts.get(cfg.calibration).ok_or_else(|| {
        AaiError::Config(format!(
            "calibration index {} outside {} records",
            cfg.calibration,
            prompts.len()
        ))
    })?;
    let calibration = model.prefill(&encode(calibration_prompt), &HeadMaskPlan::baseline())?;
    let table = analyze_model(calibration.trace(), &cfg.thresholds)?;
    let selected = select_heads(&table, cfg.mode);

    let stop = default_stop();
    let mut results = Vec::with_capacity(records.len());
    for (record, prompt) in records.iter().zip(&prompts) {
        let started = Instant::now();
        let annotated = annotate_text(prompt)?;
        let mut plan = HeadMaskPlan::new(
            selected.clone(),
            build_pair_sets(&annotated, cfg.pair_options()),
            cfg.params,
        );
        plan.prefill_only = cfg.prefill_only;
        plan.pair_options = cfg.pair_options();
        let generated = model.greedy_decode(&encode(prompt), &plan, cfg.max_new, &stop)?;
        let mut result = judge(record, family, prompt, ids_to_text(&generated))?;
        if cfg.record_timing {
            result.timing_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        results.push(result);
    }
    let score = score_results(&results)?;
    Ok(ExperimentOutput {
        results,
        score,
        heads: Some(table),
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::generate_dataset;

    #[test]
    fn replay_gold_and_empty() {
        let recs = generate_dataset(1, 2, 3, 6).unwrap();
        let gold: BTreeMap<_, _> = recs.iter().map(|r| (r.id.clone(), r.answer.clone())).collect();
        let out = run_replay(&recs, Family::ProofWriter, &gold, &PromptSettings::default()).unwrap();
        assert_eq!(out.score.accuracy, 1.0);

        let empty: BTreeMap<_, _> = recs.iter().map(|r| (r.id.clone(), String::new())).collect();
        let out = run_replay(&recs, Family::ProofWriter, &empty, &PromptSettings::default()).unwrap();
        assert_eq!(out.score.accuracy, 0.0);

        let mut partial = gold.clone();
        partial.remove(&recs[2].id);
        assert!(matches!(
            run_replay(&recs, Family::ProofWriter, &partial, &PromptSettings::default()),
            Err(AaiError::Coverage(_))
        ));
    }

    #[test]
    fn replay_of_gold_traces_validates() {
        let recs = generate_dataset(3, 2, 40, 4).unwrap();
        let traces: BTreeMap<_, _> = recs
            .iter()
            .map(|r| {
                let t = r.meta.as_ref().unwrap()["gold_trace"].as_str().unwrap().to_string();
                (r.id.clone(), t)
            })
            .collect();
        let out = run_replay(&recs, Family::ProofWriter, &traces, &PromptSettings::default()).unwrap();
        assert_eq!(out.score.accuracy, 1.0);
        assert!(out.results.iter().all(|r| r.trace_valid == Some(true)));
    }

    #[test]
    fn prompt_contains_tagged_rules() {
        let recs = generate_dataset(1, 1, 0, 1).unwrap();
        let p = build_prompt(&recs[0], Family::ProofWriter, &PromptSettings { style: PromptStyle::SymbolicAided, shots: Some(0) }).unwrap();
        assert!(p.contains("# (Rule1): "));
        assert!(p.ends_with("# (Answer):"));
        assert!(p.contains(&format!("true, false, or unknown? {}", recs[0].question)));
    }
}

//! Reasoning traces: parsing, rendering and checking.
//!
//! Line grammar:
//!
//! ```text
//! # KB = {Harry is kind, Harry is smart}
//! => Rule6 = `Harry is kind`
//! => F(KB['Harry is kind', 'Harry is big'], Rule8) => `Harry is nice`
//! => Validate(Question=`Harry is nice`, KB('Harry is nice')) = True.
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::answer::Verdict;
use super::world::{forward_chain, Atom, Label, Statement, SyntheticWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// `=> RuleN = ...`: a premise read straight from the context.
    Fact,
    /// `=> F(KB[...], RuleN) => ...`: a rule applied to known premises.
    Inference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    pub rule: u32,
    pub consumed: Vec<String>,
    pub produced: String,
    /// 1-based source line.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub steps: Vec<TraceStep>,
    pub kb_snapshots: Vec<BTreeSet<String>>,
    pub verdict: Verdict,
    /// Lines that matched no grammar rule, with their 1-based line numbers.
    pub opaque: Vec<(usize, String)>,
}

impl ReasoningTrace {
    pub fn inference_count(&self) -> usize {
        self.steps.iter().filter(|s| s.kind == StepKind::Inference).count()
    }

    /// Each snapshot contains the previous one.
    pub fn is_monotone(&self) -> bool {
        self.kb_snapshots.windows(2).all(|w| w[0].is_subset(&w[1]))
    }
}

fn fact_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^=>\s*Rule(\d+)\s*=\s*`([^`]*)`\s*$").expect("valid regex"))
}

fn infer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^=>\s*F\(\s*KB\s*[\[(](.*)[\])]\s*,\s*Rule(\d+)\s*\)\s*=>\s*`([^`]*)`\s*$").expect("valid regex")
    })
}

fn quoted_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"'([^']*)'|`([^`]*)`").expect("valid regex"))
}

fn kb_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#\s*KB\s*=\s*\{(.*)\}\s*$").expect("valid regex"))
}

fn validate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Validate\(.*=\s*(True|False|Unknown|Uncertain)\b").expect("valid regex"))
}

/// Best-effort line-by-line parse. Never fails.
pub fn parse_trace(generated: &str) -> ReasoningTrace {
    let mut trace = ReasoningTrace {
        steps: Vec::new(),
        kb_snapshots: Vec::new(),
        verdict: Verdict::Abstain,
        opaque: Vec::new(),
    };
    for (n, raw) in generated.lines().enumerate() {
        let line = raw.trim();
        let lineno = n + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(c) = fact_re().captures(line) {
            if let Ok(rule) = c[1].parse() {
                trace.steps.push(TraceStep {
                    kind: StepKind::Fact,
                    rule,
                    consumed: Vec::new(),
                    produced: c[2].trim().to_string(),
                    line: lineno,
                });
                continue;
            }
        } else if let Some(c) = infer_re().captures(line) {
            if let Ok(rule) = c[2].parse() {
                let consumed = quoted_re()
                    .captures_iter(&c[1])
                    .filter_map(|q| q.get(1).or(q.get(2)))
                    .map(|m| m.as_str().trim().to_string())
                    .collect();
                trace.steps.push(TraceStep {
                    kind: StepKind::Inference,
                    rule,
                    consumed,
                    produced: c[3].trim().to_string(),
                    line: lineno,
                });
                continue;
            }
        } else if let Some(c) = kb_re().captures(line) {
            let items = c[1]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            trace.kb_snapshots.push(items);
            continue;
        } else if let Some(c) = validate_re().captures(line) {
            trace.verdict = match &c[1] {
                "True" => Verdict::True,
                "False" => Verdict::False,
                _ => Verdict::Unknown,
            };
            continue;
        }
        trace.opaque.push((lineno, line.to_string()));
    }
    trace
}

fn kb_line(kb: &[String]) -> String {
    format!("# KB = {{{}}}", kb.join(", "))
}

/// Writes a world's gold derivation in the trace grammar.
pub fn render_gold_trace(world: &SyntheticWorld) -> String {
    let mut lines = Vec::new();
    let mut kb: Vec<String> = Vec::new();
    lines.push(kb_line(&kb));
    let mut retrieving = true;
    for step in &world.gold_trace {
        let produced = step.produced.to_string();
        if step.consumed.is_empty() {
            lines.push(format!("=> Rule{} = `{produced}`", step.rule));
        } else {
            if retrieving {
                lines.push(kb_line(&kb));
                retrieving = false;
            }
            let cited: Vec<String> = step.consumed.iter().map(|a| format!("'{a}'")).collect();
            lines.push(format!("=> F(KB[{}], Rule{}) => `{produced}`", cited.join(", "), step.rule));
        }
        kb.push(produced);
        if !retrieving {
            lines.push(kb_line(&kb));
        }
    }
    if retrieving && !world.gold_trace.is_empty() {
        lines.push(kb_line(&kb));
    }
    let question = &world.question;
    let support = match world.label {
        Label::True => format!("KB('{question}')"),
        Label::False => format!("KB('{}')", question.negated()),
        Label::Unknown => "KB".to_string(),
    };
    lines.push(format!(
        "=> Validate(Question=`{question}`, {support}) = {}.",
        world.label
    ));
    lines.join("\n")
}

/// Gold derivation of `world` as a parsed trace.
pub fn gold_reasoning_trace(world: &SyntheticWorld) -> ReasoningTrace {
    parse_trace(&render_gold_trace(world))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    UnknownRule,
    NotAFact,
    NotARule,
    UnparsablePremise,
    ConditionMismatch,
    ConclusionMismatch,
    NonMonotonicKb,
    MissingVerdict,
    VerdictMismatch,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::UnknownRule => "unknown-rule",
            ViolationKind::NotAFact => "not-a-fact",
            ViolationKind::NotARule => "not-a-rule",
            ViolationKind::UnparsablePremise => "unparsable-premise",
            ViolationKind::ConditionMismatch => "condition-mismatch",
            ViolationKind::ConclusionMismatch => "conclusion-mismatch",
            ViolationKind::NonMonotonicKb => "non-monotonic-kb",
            ViolationKind::MissingVerdict => "missing-verdict",
            ViolationKind::VerdictMismatch => "verdict-mismatch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 0-based step index, when the violation belongs to a step.
    pub step: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

/// First violation found, or none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violation: Option<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violation.is_none()
    }

    fn fail(step: Option<usize>, kind: ViolationKind, detail: String) -> Self {
        Self {
            violation: Some(Violation { step, kind, detail }),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.violation {
            None => f.write_str("valid"),
            Some(v) => {
                f.write_str("invalid")?;
                if let Some(s) = v.step {
                    write!(f, " at step {}", s + 1)?;
                }
                write!(f, ": {}: {}", v.kind, v.detail)
            }
        }
    }
}

fn monotone_violation(trace: &ReasoningTrace) -> Option<ValidationReport> {
    trace.kb_snapshots.windows(2).enumerate().find_map(|(i, w)| {
        (!w[0].is_subset(&w[1])).then(|| {
            ValidationReport::fail(
                None,
                ViolationKind::NonMonotonicKb,
                format!("snapshot {} drops premises of snapshot {}", i + 2, i + 1),
            )
        })
    })
}

/// Semantic check against a world in the canonical grammar.
pub fn validate_trace(trace: &ReasoningTrace, world: &SyntheticWorld) -> ValidationReport {
    let mut kb: BTreeSet<Atom> = BTreeSet::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let at = Some(i);
        let Some(statement) = world.statement(step.rule as usize) else {
            return ValidationReport::fail(at, ViolationKind::UnknownRule, format!("Rule{} does not exist", step.rule));
        };
        let Some(produced) = Atom::parse(&step.produced) else {
            return ValidationReport::fail(
                at,
                ViolationKind::UnparsablePremise,
                format!("`{}` is not a premise", step.produced),
            );
        };
        match (step.kind, statement) {
            (StepKind::Fact, Statement::Fact(fact)) => {
                if *fact != produced {
                    return ValidationReport::fail(
                        at,
                        ViolationKind::ConclusionMismatch,
                        format!("Rule{} states `{fact}`, not `{produced}`", step.rule),
                    );
                }
            }
            (StepKind::Fact, Statement::Rule { .. }) => {
                return ValidationReport::fail(at, ViolationKind::NotAFact, format!("Rule{} is a rule", step.rule));
            }
            (StepKind::Inference, Statement::Fact(_)) => {
                return ValidationReport::fail(at, ViolationKind::NotARule, format!("Rule{} is a fact", step.rule));
            }
            (
                StepKind::Inference,
                Statement::Rule {
                    conditions,
                    conclusion,
                },
            ) => {
                let entity = &produced.entity;
                if let Some(c) = conditions.iter().map(|c| c.of(entity)).find(|c| !kb.contains(c)) {
                    return ValidationReport::fail(
                        at,
                        ViolationKind::ConditionMismatch,
                        format!("Rule{} needs `{c}`, which is not in the KB", step.rule),
                    );
                }
                for cited in &step.consumed {
                    match Atom::parse(cited) {
                        Some(a) if kb.contains(&a) => {}
                        _ => {
                            return ValidationReport::fail(
                                at,
                                ViolationKind::ConditionMismatch,
                                format!("cited premise `{cited}` is not in the KB"),
                            )
                        }
                    }
                }
                let expected = conclusion.of(entity);
                if expected != produced {
                    return ValidationReport::fail(
                        at,
                        ViolationKind::ConclusionMismatch,
                        format!("Rule{} yields `{expected}`, not `{produced}`", step.rule),
                    );
                }
            }
        }
        kb.insert(produced);
    }
    if let Some(r) = monotone_violation(trace) {
        return r;
    }
    if trace.verdict == Verdict::Abstain {
        return ValidationReport::fail(None, ViolationKind::MissingVerdict, "no Validate line".into());
    }
    let label = match forward_chain(world) {
        Ok(d) => d.label,
        Err(e) => return ValidationReport::fail(None, ViolationKind::VerdictMismatch, e.to_string()),
    };
    if trace.verdict != label.verdict() {
        return ValidationReport::fail(
            None,
            ViolationKind::VerdictMismatch,
            format!("trace concludes {}, the rules give {label}", trace.verdict),
        );
    }
    ValidationReport { violation: None }
}

/// Structural check for free-form contexts with `rule_count` tagged rules:
/// cited rules exist, snapshots grow, a verdict is present.
pub fn validate_structure(trace: &ReasoningTrace, rule_count: usize) -> ValidationReport {
    for (i, step) in trace.steps.iter().enumerate() {
        if step.rule == 0 || step.rule as usize > rule_count {
            return ValidationReport::fail(
                Some(i),
                ViolationKind::UnknownRule,
                format!("Rule{} is outside 1..={rule_count}", step.rule),
            );
        }
    }
    if let Some(r) = monotone_violation(trace) {
        return r;
    }
    if trace.verdict == Verdict::Abstain {
        return ValidationReport::fail(None, ViolationKind::MissingVerdict, "no Validate line".into());
    }
    ValidationReport { violation: None }
}

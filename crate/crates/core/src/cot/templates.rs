//! Prompt templates and rule tagging.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AaiError, Result};

/// Version directory of the bundled template assets.
pub const TEMPLATE_VERSION: &str = "v1";

/// Line separating the header, worked examples and the final query.
pub const SECTION_SEPARATOR: &str = "\n-------\n";

pub const PH_RULES: &str = "{{RULE CONTENT}}";
pub const PH_QUESTION: &str = "{{QUESTION}}";
pub const PH_OPTIONS: &str = "{{OPTIONS}}";
pub const PH_CONTEXT: &str = "{{CONTEXT}}";

const PLACEHOLDERS: [&str; 4] = [PH_RULES, PH_QUESTION, PH_OPTIONS, PH_CONTEXT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    SymbolicAided,
    Compact,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 2] = [PromptStyle::SymbolicAided, PromptStyle::Compact];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::SymbolicAided => "symbolic_aided",
            PromptStyle::Compact => "compact",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "symbolic_aided" | "symbolic" => Ok(PromptStyle::SymbolicAided),
            "compact" => Ok(PromptStyle::Compact),
            other => Err(AaiError::Config(format!("unknown prompt style `{other}`"))),
        }
    }
}

/// Benchmark family; fixes the answer domain and template wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ProofWriter,
    ProntoQa,
    LogicalDeduction,
    Folio,
    Gsm8k,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::ProofWriter,
        Family::ProntoQa,
        Family::LogicalDeduction,
        Family::Folio,
        Family::Gsm8k,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::ProofWriter => "proofwriter",
            Family::ProntoQa => "prontoqa",
            Family::LogicalDeduction => "logical_deduction",
            Family::Folio => "folio",
            Family::Gsm8k => "gsm8k",
        }
    }

    pub fn requires_options(self) -> bool {
        self == Family::LogicalDeduction
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = AaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "proofwriter" => Ok(Family::ProofWriter),
            "prontoqa" => Ok(Family::ProntoQa),
            "logical_deduction" | "logicaldeduction" => Ok(Family::LogicalDeduction),
            "folio" => Ok(Family::Folio),
            "gsm8k" => Ok(Family::Gsm8k),
            other => Err(AaiError::Config(format!("unknown dataset family `{other}`"))),
        }
    }
}

/// A bundled prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub style: PromptStyle,
    pub family: Family,
    pub body: &'static str,
}

macro_rules! template {
    ($style:expr, $family:expr, $file:literal) => {
        PromptTemplate {
            style: $style,
            family: $family,
            body: include_str!(concat!("../../templates/v1/", $file)),
        }
    };
}

static CATALOG: [PromptTemplate; 9] = [
    template!(PromptStyle::SymbolicAided, Family::ProofWriter, "symbolic_aided_proofwriter.txt"),
    template!(PromptStyle::SymbolicAided, Family::LogicalDeduction, "symbolic_aided_logical_deduction.txt"),
    template!(PromptStyle::SymbolicAided, Family::ProntoQa, "symbolic_aided_prontoqa.txt"),
    template!(PromptStyle::SymbolicAided, Family::Folio, "symbolic_aided_folio.txt"),
    template!(PromptStyle::Compact, Family::ProofWriter, "compact_proofwriter.txt"),
    template!(PromptStyle::Compact, Family::LogicalDeduction, "compact_logical_deduction.txt"),
    template!(PromptStyle::Compact, Family::ProntoQa, "compact_prontoqa.txt"),
    template!(PromptStyle::Compact, Family::Folio, "compact_folio.txt"),
    template!(PromptStyle::Compact, Family::Gsm8k, "compact_gsm8k.txt"),
];

/// Every bundled template.
pub fn catalog() -> &'static [PromptTemplate] {
    &CATALOG
}

/// Values substituted into a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptInputs {
    pub rule_content: Option<String>,
    pub question: Option<String>,
    pub options: Option<Vec<String>>,
    pub context: Option<String>,
}

impl PromptTemplate {
    pub fn get(style: PromptStyle, family: Family) -> Result<&'static PromptTemplate> {
        CATALOG
            .iter()
            .find(|t| t.style == style && t.family == family)
            .ok_or_else(|| AaiError::Config(format!("no {style} template for {family}")))
    }

    /// File stem, e.g. `symbolic_aided_proofwriter`.
    pub fn name(&self) -> String {
        format!("{}_{}", self.style, self.family)
    }

    pub fn placeholders(&self) -> Vec<&'static str> {
        PLACEHOLDERS
            .iter()
            .copied()
            .filter(|p| self.body.contains(p))
            .collect()
    }

    /// Number of worked examples between the header and the final query.
    pub fn shot_count(&self) -> usize {
        self.body.split(SECTION_SEPARATOR).count().saturating_sub(2)
    }

    /// Wording placed before a bare statement in the question slot, for
    /// templates whose question line does not already carry it.
    pub fn question_framing(&self) -> &'static str {
        match (self.style, self.family) {
            (PromptStyle::SymbolicAided, Family::ProofWriter) => {
                "Based on the above information, is the following statement true, false, or unknown? "
            }
            (_, Family::ProntoQa) => "Is the following statement true or false? ",
            _ => "",
        }
    }

    /// Header, the first `shots` worked examples, and the final query section.
    pub fn body_with_shots(&self, shots: usize) -> String {
        let sections: Vec<&str> = self.body.split(SECTION_SEPARATOR).collect();
        let n = sections.len();
        if n < 2 || shots >= n - 2 {
            return self.body.to_string();
        }
        let mut kept = vec![sections[0]];
        kept.extend(&sections[1..1 + shots]);
        kept.push(sections[n - 1]);
        kept.join(SECTION_SEPARATOR)
    }

    pub fn render(&self, inputs: &PromptInputs) -> Result<String> {
        render_body(self.body, self.family, inputs)
    }

    /// [`PromptTemplate::render`] on [`PromptTemplate::body_with_shots`].
    pub fn render_with_shots(&self, inputs: &PromptInputs, shots: usize) -> Result<String> {
        render_body(&self.body_with_shots(shots), self.family, inputs)
    }
}

/// `A) first\nB) second ...`
pub fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}) {}", (b'A' + i as u8) as char, o))
        .collect::<Vec<_>>()
        .join("\n")
}

fn value_for(placeholder: &str, family: Family, inputs: &PromptInputs) -> Result<String> {
    let missing = |what: &str| AaiError::Render(format!("no value for {what}"));
    match placeholder {
        PH_RULES => inputs.rule_content.clone().ok_or_else(|| missing(PH_RULES)),
        PH_QUESTION => inputs.question.clone().ok_or_else(|| missing(PH_QUESTION)),
        PH_CONTEXT => inputs.context.clone().ok_or_else(|| missing(PH_CONTEXT)),
        PH_OPTIONS => match &inputs.options {
            Some(opts) if !opts.is_empty() => Ok(format_options(opts)),
            _ => Err(AaiError::Render(format!("{family} prompts need at least one option"))),
        },
        other => Err(AaiError::Render(format!("unknown placeholder {other}"))),
    }
}

/// Single left-to-right pass, so substituted text is never rescanned.
fn render_body(body: &str, family: Family, inputs: &PromptInputs) -> Result<String> {
    let mut out = String::with_capacity(body.len() + 256);
    let mut rest = body;
    while let Some(pos) = rest.find("{{") {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        match PLACEHOLDERS.iter().find(|p| tail.starts_with(**p)) {
            Some(p) => {
                out.push_str(&value_for(p, family, inputs)?);
                rest = &tail[p.len()..];
            }
            None => {
                out.push_str("{{");
                rest = &tail[2..];
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Splits `context` into sentences and tags sentence `k` as `# (Rulek): ...`.
///
/// A sentence ends at a period followed by whitespace or the end of text.
pub fn tag_rules(context: &str) -> String {
    split_sentences(context)
        .iter()
        .enumerate()
        .map(|(k, s)| format!("# (Rule{}): {s}", k + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let at_end = i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace();
        if b == b'.' && at_end {
            let s = text[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_complete() {
        assert_eq!(catalog().len(), 9);
        for t in catalog() {
            assert!(t.body.starts_with("### Let us define F"), "{}", t.name());
            assert!(!t.body.ends_with('\n'));
        }
        assert!(PromptTemplate::get(PromptStyle::SymbolicAided, Family::Gsm8k).is_err());
        let gsm = PromptTemplate::get(PromptStyle::Compact, Family::Gsm8k).unwrap();
        assert_eq!(gsm.placeholders(), vec![PH_CONTEXT]);
    }

    #[test]
    fn tagging() {
        assert_eq!(
            tag_rules("The cow is blue. The cow is round."),
            "# (Rule1): The cow is blue.\n# (Rule2): The cow is round."
        );
        assert_eq!(tag_rules("Bob is big."), "# (Rule1): Bob is big.");
        assert_eq!(tag_rules(""), "");
        assert_eq!(tag_rules("Pi is 3.14 roughly. Ok."), "# (Rule1): Pi is 3.14 roughly.\n# (Rule2): Ok.");
    }

    #[test]
    fn gsm8k_ends_with_context() {
        let t = PromptTemplate::get(PromptStyle::Compact, Family::Gsm8k).unwrap();
        let inputs = PromptInputs {
            context: Some("Tom has 3 apples.".into()),
            ..Default::default()
        };
        assert!(t.render(&inputs).unwrap().ends_with("Context: Tom has 3 apples."));
    }

    #[test]
    fn missing_values_fail() {
        let t = PromptTemplate::get(PromptStyle::SymbolicAided, Family::LogicalDeduction).unwrap();
        let mut inputs = PromptInputs {
            rule_content: Some("# (Rule1): x".into()),
            question: Some("q".into()),
            options: Some(vec![]),
            context: None,
        };
        assert!(matches!(t.render(&inputs), Err(AaiError::Render(_))));
        inputs.options = Some(vec!["a".into(), "b".into()]);
        let text = t.render(&inputs).unwrap();
        assert!(text.contains("# (Options): A) a\nB) b\n"));
    }

    #[test]
    fn substituted_text_is_not_rescanned() {
        let t = PromptTemplate::get(PromptStyle::SymbolicAided, Family::ProofWriter).unwrap();
        let inputs = PromptInputs {
            rule_content: Some("{{QUESTION}}".into()),
            question: Some("Q".into()),
            ..Default::default()
        };
        let text = t.render(&inputs).unwrap();
        assert!(text.contains("{{QUESTION}}\n# (Question): Q"));
    }

    #[test]
    fn shot_trimming() {
        let t = PromptTemplate::get(PromptStyle::SymbolicAided, Family::ProofWriter).unwrap();
        assert_eq!(t.shot_count(), 2);
        let zero = t.body_with_shots(0);
        assert_eq!(zero.split(SECTION_SEPARATOR).count(), 2);
        assert!(zero.ends_with("# (Answer):"));
        assert_eq!(t.body_with_shots(5), t.body);
    }
}

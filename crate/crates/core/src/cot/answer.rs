//! Final-answer extraction.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::templates::Family;
use crate::error::{AaiError, Result};

/// A normalized answer. `Unknown` also covers "Uncertain".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    True,
    False,
    Unknown,
    Option(char),
    /// Canonical decimal form, see [`canonical_number`].
    Number(String),
    Abstain,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::True => f.write_str("True"),
            Verdict::False => f.write_str("False"),
            Verdict::Unknown => f.write_str("Unknown"),
            Verdict::Option(c) => write!(f, "{c}"),
            Verdict::Number(n) => f.write_str(n),
            Verdict::Abstain => f.write_str("Abstain"),
        }
    }
}

impl Verdict {
    /// Parses a gold answer, checking it lies in the family's domain.
    pub fn parse_gold(text: &str, family: Family) -> Result<Verdict> {
        let t = text.trim();
        let bad = || AaiError::Schema(format!("`{t}` is not a valid {family} answer"));
        match family {
            Family::ProofWriter | Family::Folio | Family::ProntoQa => {
                let v = truth_word(t).ok_or_else(bad)?;
                if family == Family::ProntoQa && v == Verdict::Unknown {
                    return Err(bad());
                }
                Ok(v)
            }
            Family::LogicalDeduction => {
                let inner = t.trim_start_matches('(').trim_end_matches(')');
                let mut chars = inner.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphabetic() => Ok(Verdict::Option(c.to_ascii_uppercase())),
                    _ => Err(bad()),
                }
            }
            Family::Gsm8k => canonical_number(t).map(Verdict::Number).ok_or_else(bad),
        }
    }

    /// Text that [`extract_answer`] maps back to this verdict.
    pub fn answer_text(&self, family: Family) -> String {
        match (self, family) {
            (Verdict::Unknown, Family::Folio) => "Uncertain".into(),
            (v, _) => v.to_string(),
        }
    }
}

fn truth_word(t: &str) -> Option<Verdict> {
    match t.to_ascii_lowercase().as_str() {
        "true" => Some(Verdict::True),
        "false" => Some(Verdict::False),
        "unknown" | "uncertain" => Some(Verdict::Unknown),
        _ => None,
    }
}

/// Strips commas and trailing periods, then prints through `f64`, so `1,000.`
/// and `1000.0` both become `1000`.
pub fn canonical_number(text: &str) -> Option<String> {
    let cleaned: String = text.trim().trim_end_matches('.').chars().filter(|c| *c != ',').collect();
    if cleaned.is_empty() || cleaned.contains(['e', 'E', 'i', 'I', 'n', 'N']) {
        return None;
    }
    let v: f64 = cleaned.parse().ok()?;
    v.is_finite().then(|| {
        let v = if v == 0.0 { 0.0 } else { v };
        format!("{v}")
    })
}

fn truth_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"=\s*`?(True|False|Unknown|Uncertain)\b").expect("valid regex"))
}

fn option_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*:\s*\(?([A-Z])\b").expect("valid regex"))
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("valid regex"))
}

/// Final verdict of a generated answer; the last match wins.
///
/// A completion that is nothing but an answer word, letter or number is also
/// accepted. Never fails: no match gives [`Verdict::Abstain`].
pub fn extract_answer(generated: &str, family: Family) -> Verdict {
    let found = match family {
        Family::ProofWriter | Family::Folio | Family::ProntoQa => truth_re()
            .captures_iter(generated)
            .last()
            .and_then(|c| truth_word(&c[1]))
            .or_else(|| truth_word(generated.trim().trim_end_matches('.'))),
        Family::LogicalDeduction => option_re()
            .captures_iter(generated)
            .last()
            .and_then(|c| c[1].chars().next())
            .map(|c| Verdict::Option(c.to_ascii_uppercase()))
            .or_else(|| Verdict::parse_gold(generated, family).ok()),
        Family::Gsm8k => {
            let tail = generated.rsplit_once('=').map_or(generated, |(_, t)| t);
            number_re()
                .find_iter(tail)
                .last()
                .and_then(|m| canonical_number(m.as_str()))
                .map(Verdict::Number)
        }
    };
    match (family, found) {
        (Family::ProntoQa, Some(Verdict::Unknown)) | (_, None) => Verdict::Abstain,
        (_, Some(v)) => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_values() {
        let t = "=> Validate(Question=`The tiger is not young`, KB('The tiger is young')) = False.";
        assert_eq!(extract_answer(t, Family::ProofWriter), Verdict::False);
        assert_eq!(extract_answer("x = True. later = Uncertain.", Family::Folio), Verdict::Unknown);
        assert_eq!(extract_answer("Unknown", Family::ProofWriter), Verdict::Unknown);
        assert_eq!(extract_answer("= Unknown.", Family::ProntoQa), Verdict::Abstain);
        assert_eq!(extract_answer("", Family::ProofWriter), Verdict::Abstain);
    }

    #[test]
    fn options_and_numbers() {
        assert_eq!(
            extract_answer("Check all the above options => answer: B", Family::LogicalDeduction),
            Verdict::Option('B')
        );
        assert_eq!(extract_answer("(C)", Family::LogicalDeduction), Verdict::Option('C'));
        assert_eq!(
            extract_answer("... = 58 - 25 = 33.", Family::Gsm8k),
            Verdict::Number("33".into())
        );
        assert_eq!(extract_answer("x = 1,250.50.", Family::Gsm8k), Verdict::Number("1250.5".into()));
        assert_eq!(extract_answer("about 12 or 14", Family::Gsm8k), Verdict::Number("14".into()));
        assert_eq!(extract_answer("x = nothing", Family::Gsm8k), Verdict::Abstain);
    }

    #[test]
    fn gold_domains() {
        assert_eq!(Verdict::parse_gold("uncertain", Family::Folio).unwrap(), Verdict::Unknown);
        assert!(Verdict::parse_gold("Unknown", Family::ProntoQa).is_err());
        assert!(Verdict::parse_gold("maybe", Family::ProofWriter).is_err());
        assert_eq!(Verdict::parse_gold("b", Family::LogicalDeduction).unwrap(), Verdict::Option('B'));
        assert_eq!(Verdict::parse_gold("33.0", Family::Gsm8k).unwrap(), Verdict::Number("33".into()));
        assert!(Verdict::parse_gold("thirty", Family::Gsm8k).is_err());
    }

    #[test]
    fn answer_text_roundtrips() {
        for (v, fam) in [
            (Verdict::Unknown, Family::Folio),
            (Verdict::True, Family::ProntoQa),
            (Verdict::Option('D'), Family::LogicalDeduction),
            (Verdict::Number("-4.5".into()), Family::Gsm8k),
        ] {
            assert_eq!(extract_answer(&v.answer_text(fam), fam), v);
        }
    }
}

//! Rule structure of a tagged prompt.
//!
//! Prompts tag each context sentence as `# (Rule<n>): ...`. This module finds
//! those rule lines and every later `Rule<n>` mention, projects them onto
//! token positions, and derives the query/key pairs that an intervention
//! reinforces (mention to its own rule) or suppresses (mention to other rules).
//!
//! Few-shot prompts restart numbering in every example, so rules are scoped to
//! blocks separated by `-------` lines: a mention refers to the rule with that
//! number in its own block.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{AaiError, Result};

/// Number of byte symbols in the vocabulary.
pub const BYTE_VOCAB: u32 = 256;
/// Beginning-of-sequence marker.
pub const BOS_TOKEN: u32 = 256;
/// End-of-sequence marker.
pub const EOS_TOKEN: u32 = 257;

/// A token and the byte range of the text it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn span(&self) -> Range<usize> {
        self.start..self.end
    }

    /// Printable surface form (lossy for partial UTF-8 sequences).
    pub fn surface(&self) -> String {
        match self.id {
            BOS_TOKEN => "<bos>".into(),
            EOS_TOKEN => "<eos>".into(),
            id if id < BYTE_VOCAB => String::from_utf8_lossy(&[id as u8]).into_owned(),
            id => format!("<{id}>"),
        }
    }
}

/// Byte-level tokenization: one token per UTF-8 byte, id = byte value.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.bytes()
        .enumerate()
        .map(|(i, b)| Token {
            id: u32::from(b),
            start: i,
            end: i + 1,
        })
        .collect()
}

/// Inverse of [`tokenize`]. Special tokens are dropped; invalid UTF-8 is
/// replaced.
pub fn detokenize(tokens: &[Token]) -> String {
    ids_to_text(&tokens.iter().map(|t| t.id).collect::<Vec<_>>())
}

/// Decodes raw token ids, skipping anything outside the byte range.
pub fn ids_to_text(ids: &[u32]) -> String {
    let bytes: Vec<u8> = ids
        .iter()
        .filter(|id| **id < BYTE_VOCAB)
        .map(|id| *id as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Content line of one tagged rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSpan {
    pub block: usize,
    pub rule: u32,
    /// Byte range from the identifier through the end of the line.
    pub chars: Range<usize>,
    pub tokens: Range<usize>,
}

/// One occurrence of `Rule<n>` in the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMention {
    pub block: usize,
    pub rule: u32,
    pub chars: Range<usize>,
    pub tokens: Range<usize>,
    /// The identifier that opens the rule's own tagged line.
    pub defining: bool,
}

/// Tokens plus located rule spans and identifier mentions.
#[derive(Debug, Clone)]
pub struct RuleAnnotatedSequence {
    tokens: Vec<Token>,
    spans: Vec<RuleSpan>,
    mentions: Vec<RuleMention>,
    dangling: Vec<RuleMention>,
    block_count: usize,
}

impl RuleAnnotatedSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rule spans in document order.
    pub fn spans(&self) -> &[RuleSpan] {
        &self.spans
    }

    /// Mentions that resolve to a rule in their block, in document order.
    pub fn mentions(&self) -> &[RuleMention] {
        &self.mentions
    }

    /// Mentions of rule numbers that have no tagged line in their block.
    pub fn dangling(&self) -> &[RuleMention] {
        &self.dangling
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn span(&self, block: usize, rule: u32) -> Option<&RuleSpan> {
        self.spans.iter().find(|s| s.block == block && s.rule == rule)
    }

    /// Last block that defines at least one rule.
    pub fn final_rule_block(&self) -> Option<usize> {
        self.spans.iter().map(|s| s.block).max()
    }
}

fn rule_tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#\s*\((Rule(\d+))\):").expect("valid regex"))
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bRule(\d+)\b").expect("valid regex"))
}

fn is_block_separator(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 3 && t.bytes().all(|b| b == b'-')
}

/// Indices of the tokens overlapping `chars`. Tokens must be sorted and
/// non-overlapping.
fn covering_tokens(tokens: &[Token], chars: &Range<usize>) -> Range<usize> {
    let first = tokens.partition_point(|t| t.end <= chars.start);
    let last = tokens.partition_point(|t| t.start < chars.end);
    first..last.max(first)
}

/// Locates rule lines and identifier mentions of `text`, whose tokenization is
/// `tokens`.
pub fn annotate_rules(text: &str, tokens: &[Token]) -> Result<RuleAnnotatedSequence> {
    let mut spans: Vec<RuleSpan> = Vec::new();
    // byte offset where each block starts
    let mut block_starts = vec![0usize];
    let mut seen: BTreeMap<(usize, u32), usize> = BTreeMap::new();

    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        if is_block_separator(line) {
            block_starts.push(offset + raw.len());
        } else if let Some(c) = rule_tag_re().captures(line) {
            let block = block_starts.len() - 1;
            let id = c.get(1).expect("group 1");
            let rule: u32 = c[2]
                .parse()
                .map_err(|_| AaiError::Annotation(format!("rule number `{}` is too large", &c[2])))?;
            if let Some(prev) = seen.insert((block, rule), offset) {
                return Err(AaiError::Annotation(format!(
                    "Rule{rule} is defined twice in block {block} (bytes {prev} and {offset})"
                )));
            }
            let chars = offset + id.start()..offset + line.len();
            let mut tok = covering_tokens(tokens, &chars);
            if let Some(prev) = spans.last() {
                tok.start = tok.start.max(prev.tokens.end);
                tok.end = tok.end.max(tok.start);
            }
            spans.push(RuleSpan {
                block,
                rule,
                chars,
                tokens: tok,
            });
        }
        offset += raw.len();
    }

    let block_of = |pos: usize| block_starts.partition_point(|s| *s <= pos) - 1;
    let mut mentions = Vec::new();
    let mut dangling = Vec::new();
    for m in mention_re().captures_iter(text) {
        let whole = m.get(0).expect("group 0");
        let Ok(rule) = m[1].parse::<u32>() else {
            continue;
        };
        let block = block_of(whole.start());
        let chars = whole.range();
        let span = spans.iter().find(|s| s.block == block && s.rule == rule);
        let mention = RuleMention {
            block,
            rule,
            tokens: covering_tokens(tokens, &chars),
            defining: span.is_some_and(|s| s.chars.start == chars.start),
            chars,
        };
        if span.is_some() {
            mentions.push(mention);
        } else {
            dangling.push(mention);
        }
    }

    Ok(RuleAnnotatedSequence {
        tokens: tokens.to_vec(),
        spans,
        mentions,
        dangling,
        block_count: block_starts.len(),
    })
}

/// Tokenizes `text` at byte level and annotates it.
pub fn annotate_text(text: &str) -> Result<RuleAnnotatedSequence> {
    annotate_rules(text, &tokenize(text))
}

/// Which mentions contribute pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOptions {
    /// Bind the identifier on a rule's own line to its content.
    pub include_defining: bool,
    /// Only use rules and mentions from the last block that defines rules.
    pub final_block_only: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            include_defining: true,
            final_block_only: false,
        }
    }
}

/// Whether a pair is reinforced or suppressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PairKind {
    Ref,
    NoRef,
}

/// Disjoint sets of causal `(query, key)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferencePairSets {
    pub ref_pairs: BTreeSet<(usize, usize)>,
    pub noref_pairs: BTreeSet<(usize, usize)>,
}

impl ReferencePairSets {
    pub fn is_empty(&self) -> bool {
        self.ref_pairs.is_empty() && self.noref_pairs.is_empty()
    }

    /// Largest index used by any pair.
    pub fn max_index(&self) -> Option<usize> {
        self.ref_pairs
            .iter()
            .chain(&self.noref_pairs)
            .map(|(i, j)| (*i).max(*j))
            .max()
    }

    /// Pairs whose query is `query`, with their kind.
    pub fn row(&self, query: usize) -> impl Iterator<Item = (usize, PairKind)> + '_ {
        let refs = self
            .ref_pairs
            .range((query, 0)..=(query, usize::MAX))
            .map(|(_, j)| (*j, PairKind::Ref));
        let norefs = self
            .noref_pairs
            .range((query, 0)..=(query, usize::MAX))
            .map(|(_, j)| (*j, PairKind::NoRef));
        refs.chain(norefs)
    }

    /// `"i j REF"` / `"i j NOREF"` lines sorted by query then key.
    pub fn to_lines(&self) -> String {
        let mut all: Vec<(usize, usize, PairKind)> = self
            .ref_pairs
            .iter()
            .map(|(i, j)| (*i, *j, PairKind::Ref))
            .chain(self.noref_pairs.iter().map(|(i, j)| (*i, *j, PairKind::NoRef)))
            .collect();
        all.sort_unstable();
        let mut out = String::new();
        for (i, j, kind) in all {
            let tag = match kind {
                PairKind::Ref => "REF",
                PairKind::NoRef => "NOREF",
            };
            out.push_str(&format!("{i} {j} {tag}\n"));
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut sets = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || AaiError::Format(format!("pair line {}: `{line}`", n + 1));
            let [i, j, tag] = parts[..] else {
                return Err(bad());
            };
            let i: usize = i.parse().map_err(|_| bad())?;
            let j: usize = j.parse().map_err(|_| bad())?;
            match tag {
                "REF" => sets.ref_pairs.insert((i, j)),
                "NOREF" => sets.noref_pairs.insert((i, j)),
                _ => return Err(bad()),
            };
        }
        Ok(sets)
    }
}

/// Builds the reinforce/suppress pair sets.
///
/// For a mention of rule `r` at query positions `I`, the reference set gains
/// `(i, j)` for every `j` in `r`'s span and the no-reference set gains `(i, j)`
/// for every `j` in the span of another rule of the same block. Pairs with
/// `i < j` are dropped. A pair reachable both ways stays a reference pair.
pub fn build_pair_sets(seq: &RuleAnnotatedSequence, options: PairOptions) -> ReferencePairSets {
    let final_block = seq.final_rule_block();
    let mut sets = ReferencePairSets::default();
    for m in &seq.mentions {
        if m.defining && !options.include_defining {
            continue;
        }
        if options.final_block_only && Some(m.block) != final_block {
            continue;
        }
        for span in seq.spans.iter().filter(|s| s.block == m.block) {
            let target = if span.rule == m.rule {
                &mut sets.ref_pairs
            } else {
                &mut sets.noref_pairs
            };
            for i in m.tokens.clone() {
                for j in span.tokens.start..span.tokens.end.min(i + 1) {
                    target.insert((i, j));
                }
            }
        }
    }
    let overlap: Vec<_> = sets
        .noref_pairs
        .intersection(&sets.ref_pairs)
        .copied()
        .collect();
    for p in overlap {
        sets.noref_pairs.remove(&p);
    }
    sets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_roundtrip() {
        assert!(tokenize("").is_empty());
        let toks = tokenize("Rule14");
        assert_eq!(toks.len(), 6);
        assert_eq!(toks[0].start, 0);
        assert_eq!(toks[5].end, 6);
        assert_eq!(detokenize(&toks), "Rule14");
        let s = "KB = {Gary is round} — ünïcode";
        assert_eq!(detokenize(&tokenize(s)), s);
    }

    #[test]
    fn two_rule_prompt() {
        let seq = annotate_text("# (Rule1): A.\n# (Rule2): B.").unwrap();
        assert_eq!(seq.spans().len(), 2);
        assert_eq!(seq.mentions().len(), 2);
        assert!(seq.mentions().iter().all(|m| m.defining));
        let s1 = &seq.spans()[0];
        assert_eq!(&"# (Rule1): A.\n# (Rule2): B."[s1.chars.clone()], "Rule1): A.");
        assert_eq!(s1.tokens, 3..13);
    }

    #[test]
    fn reasoning_line_mention() {
        let text = "# (Rule16): Smart people are quiet.\n=> F(KB['Harry is smart'], Rule16) => `Harry is quiet`";
        let seq = annotate_text(text).unwrap();
        let later: Vec<_> = seq.mentions().iter().filter(|m| !m.defining).collect();
        assert_eq!(later.len(), 1);
        assert_eq!(later[0].rule, 16);
        assert_eq!(&text[later[0].chars.clone()], "Rule16");
    }

    #[test]
    fn dangling_and_duplicates() {
        let seq = annotate_text("# (Rule1): A.\nsee Rule99").unwrap();
        assert_eq!(seq.dangling().len(), 1);
        assert_eq!(seq.dangling()[0].rule, 99);
        let pairs = build_pair_sets(&seq, PairOptions::default());
        assert!(pairs.ref_pairs.iter().all(|(i, _)| *i < 14));

        let err = annotate_text("# (Rule1): A.\n# (Rule1): B.").unwrap_err();
        assert!(matches!(err, AaiError::Annotation(_)));
        // numbering restarts after a separator
        assert!(annotate_text("# (Rule1): A.\n-------\n# (Rule1): B.").is_ok());
    }

    #[test]
    fn no_partial_identifier_matches() {
        let seq = annotate_text("# (Rule1): A.\nRule1x Rules1 XRule1").unwrap();
        assert_eq!(seq.mentions().len(), 1);
        assert!(seq.dangling().is_empty());
    }

    #[test]
    fn single_rule_later_mention() {
        let text = "# (Rule1): A b.\nthen Rule1";
        let seq = annotate_text(text).unwrap();
        let pairs = build_pair_sets(
            &seq,
            PairOptions {
                include_defining: false,
                final_block_only: false,
            },
        );
        assert!(pairs.noref_pairs.is_empty());
        let span = seq.spans()[0].tokens.clone();
        let mention = seq.mentions()[1].tokens.clone();
        assert_eq!(pairs.ref_pairs.len(), mention.len() * span.len());
    }

    #[test]
    fn forward_reference_is_dropped() {
        let text = "Rule2 first\n# (Rule1): A.\n# (Rule2): B.";
        let seq = annotate_text(text).unwrap();
        let pairs = build_pair_sets(
            &seq,
            PairOptions {
                include_defining: false,
                final_block_only: false,
            },
        );
        assert!(pairs.is_empty());
    }

    #[test]
    fn lines_roundtrip() {
        let seq = annotate_text("# (Rule1): A.\n# (Rule2): B.\nRule2").unwrap();
        let pairs = build_pair_sets(&seq, PairOptions::default());
        let text = pairs.to_lines();
        assert_eq!(ReferencePairSets::from_lines(&text).unwrap(), pairs);
        assert!(ReferencePairSets::from_lines("1 2 MAYBE").is_err());
    }

    #[test]
    fn final_block_only() {
        let text = "# (Rule1): A.\nRule1\n-------\n# (Rule1): B.\nRule1";
        let seq = annotate_text(text).unwrap();
        let all = build_pair_sets(&seq, PairOptions::default());
        let last = build_pair_sets(
            &seq,
            PairOptions {
                include_defining: true,
                final_block_only: true,
            },
        );
        let boundary = text.find("-------").unwrap();
        assert!(all.ref_pairs.iter().any(|(i, _)| *i < boundary));
        assert!(last.ref_pairs.iter().all(|(i, _)| *i > boundary));
    }
}

//! Synthetic open-world rule bases in a fixed English grammar.
//!
//! Facts read `Anne is red.` or `Anne is not red.`; rules read
//! `If someone is red and not kind then they are big.`. Statement `k` of a
//! world's context is `Rule{k}` once the context is tagged.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::answer::Verdict;
use super::templates::split_sentences;
use crate::error::{AaiError, Result};

pub const ENTITIES: [&str; 12] = [
    "Anne", "Bob", "Charlie", "Dave", "Erin", "Fiona", "Gary", "Harry", "Iris", "Jack", "Kate", "Liam",
];

pub const ATTRIBUTES: [&str; 24] = [
    "big", "blue", "bright", "calm", "cold", "furry", "green", "heavy", "kind", "loud", "nice", "quick",
    "quiet", "red", "rough", "round", "shiny", "smart", "soft", "tall", "warm", "white", "wild", "young",
];

/// Attempts before giving up on a parameter combination.
pub const MAX_ATTEMPTS: usize = 64;

/// `(attribute, polarity)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub attribute: String,
    pub positive: bool,
}

impl Literal {
    pub fn new(attribute: impl Into<String>, positive: bool) -> Self {
        Self {
            attribute: attribute.into(),
            positive,
        }
    }

    pub fn negated(&self) -> Self {
        Self::new(self.attribute.clone(), !self.positive)
    }

    pub fn of(&self, entity: &str) -> Atom {
        Atom {
            entity: entity.to_string(),
            literal: self.clone(),
        }
    }

    fn phrase(&self) -> String {
        if self.positive {
            self.attribute.clone()
        } else {
            format!("not {}", self.attribute)
        }
    }
}

/// A ground literal about one entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub entity: String,
    pub literal: Literal,
}

impl Atom {
    pub fn new(entity: &str, attribute: &str, positive: bool) -> Self {
        Literal::new(attribute, positive).of(entity)
    }

    pub fn negated(&self) -> Self {
        self.literal.negated().of(&self.entity)
    }

    /// Parses `Anne is red` or `Anne is not red`, with an optional period.
    pub fn parse(text: &str) -> Option<Atom> {
        let c = atom_re().captures(text.trim())?;
        Some(Atom::new(&c[1], &c[3], c.get(2).is_none()))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} is {}", self.entity, self.literal.phrase())
    }
}

fn atom_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-Z][a-z]+) is (not )?([a-z]+)\.?$").expect("valid regex"))
}

fn rule_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^If someone is ((?:not )?[a-z]+(?: and (?:not )?[a-z]+)*) then they are (not )?([a-z]+)\.$")
            .expect("valid regex")
    })
}

/// One sentence of the context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statement {
    Fact(Atom),
    Rule {
        conditions: Vec<Literal>,
        conclusion: Literal,
    },
}

impl Statement {
    pub fn sentence(&self) -> String {
        match self {
            Statement::Fact(a) => format!("{a}."),
            Statement::Rule {
                conditions,
                conclusion,
            } => {
                let conds: Vec<String> = conditions.iter().map(Literal::phrase).collect();
                format!(
                    "If someone is {} then they are {}.",
                    conds.join(" and "),
                    conclusion.phrase()
                )
            }
        }
    }

    pub fn parse(sentence: &str) -> Result<Statement> {
        let s = sentence.trim();
        if let Some(c) = rule_re().captures(s) {
            let conditions = c[1]
                .split(" and ")
                .map(|p| match p.strip_prefix("not ") {
                    Some(a) => Literal::new(a, false),
                    None => Literal::new(p, true),
                })
                .collect();
            return Ok(Statement::Rule {
                conditions,
                conclusion: Literal::new(&c[3], c.get(2).is_none()),
            });
        }
        if s.ends_with('.') {
            if let Some(a) = Atom::parse(s) {
                return Ok(Statement::Fact(a));
            }
        }
        Err(AaiError::Format(format!("`{s}` is outside the canonical grammar")))
    }
}

/// Open-world answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    True,
    False,
    Unknown,
}

impl Label {
    pub fn verdict(self) -> Verdict {
        match self {
            Label::True => Verdict::True,
            Label::False => Verdict::False,
            Label::Unknown => Verdict::Unknown,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.verdict().fmt(f)
    }
}

/// One application in a gold derivation. `rule` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldStep {
    pub rule: usize,
    pub consumed: Vec<Atom>,
    pub produced: Atom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticWorld {
    pub entities: Vec<String>,
    pub attributes: Vec<String>,
    /// Context order; statement `k` (0-based) is `Rule{k+1}`.
    pub statements: Vec<Statement>,
    pub question: Atom,
    pub label: Label,
    pub gold_trace: Vec<GoldStep>,
}

impl SyntheticWorld {
    pub fn facts(&self) -> impl Iterator<Item = &Atom> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Fact(a) => Some(a),
            _ => None,
        })
    }

    pub fn rules(&self) -> impl Iterator<Item = (&[Literal], &Literal)> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Rule {
                conditions,
                conclusion,
            } => Some((conditions.as_slice(), conclusion)),
            _ => None,
        })
    }

    /// `Rule{id}`, 1-based.
    pub fn statement(&self, id: usize) -> Option<&Statement> {
        id.checked_sub(1).and_then(|i| self.statements.get(i))
    }

    /// Context sentences joined by single spaces.
    pub fn context_text(&self) -> String {
        self.statements
            .iter()
            .map(Statement::sentence)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn question_text(&self) -> String {
        format!("{}.", self.question)
    }

    /// Number of inference steps in the gold trace.
    pub fn depth(&self) -> usize {
        self.gold_trace
            .iter()
            .filter(|s| matches!(self.statement(s.rule), Some(Statement::Rule { .. })))
            .count()
    }

    /// Rebuilds a world from context and question text. The label comes from
    /// forward chaining; there is no gold trace.
    pub fn from_text(context: &str, question: &str) -> Result<SyntheticWorld> {
        let statements = split_sentences(context)
            .into_iter()
            .map(Statement::parse)
            .collect::<Result<Vec<_>>>()?;
        let question = Atom::parse(question)
            .ok_or_else(|| AaiError::Format(format!("question `{question}` is outside the canonical grammar")))?;
        let mut entities = BTreeSet::new();
        let mut attributes = BTreeSet::new();
        entities.insert(question.entity.clone());
        attributes.insert(question.literal.attribute.clone());
        for s in &statements {
            match s {
                Statement::Fact(a) => {
                    entities.insert(a.entity.clone());
                    attributes.insert(a.literal.attribute.clone());
                }
                Statement::Rule {
                    conditions,
                    conclusion,
                } => {
                    attributes.extend(conditions.iter().map(|c| c.attribute.clone()));
                    attributes.insert(conclusion.attribute.clone());
                }
            }
        }
        let mut world = SyntheticWorld {
            entities: entities.into_iter().collect(),
            attributes: attributes.into_iter().collect(),
            statements,
            question,
            label: Label::Unknown,
            gold_trace: Vec::new(),
        };
        world.label = forward_chain(&world)?.label;
        Ok(world)
    }
}

/// Fixpoint of rule application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub derived: BTreeSet<Atom>,
    pub label: Label,
}

/// Least fixpoint over the world's facts and rules, with the open-world label
/// of its question.
pub fn forward_chain(world: &SyntheticWorld) -> Result<Derivation> {
    let derived = saturate(world.facts().cloned(), world.rules())?;
    let label = if derived.contains(&world.question) {
        Label::True
    } else if derived.contains(&world.question.negated()) {
        Label::False
    } else {
        Label::Unknown
    };
    Ok(Derivation { derived, label })
}

/// Agenda-driven saturation: each new atom only revisits rules that mention
/// its literal.
fn saturate<'a>(
    facts: impl Iterator<Item = Atom>,
    rules: impl Iterator<Item = (&'a [Literal], &'a Literal)>,
) -> Result<BTreeSet<Atom>> {
    let rules: Vec<_> = rules.collect();
    let mut by_literal: BTreeMap<&Literal, Vec<usize>> = BTreeMap::new();
    for (r, (conds, _)) in rules.iter().enumerate() {
        for c in conds.iter() {
            by_literal.entry(c).or_default().push(r);
        }
    }
    let mut known: BTreeSet<Atom> = BTreeSet::new();
    let mut agenda: VecDeque<Atom> = facts.collect();
    while let Some(atom) = agenda.pop_front() {
        if known.contains(&atom) {
            continue;
        }
        if known.contains(&atom.negated()) {
            return Err(AaiError::InconsistentWorld(format!(
                "both `{atom}` and `{}` hold",
                atom.negated()
            )));
        }
        known.insert(atom.clone());
        for &r in by_literal.get(&atom.literal).into_iter().flatten() {
            let (conds, concl) = rules[r];
            if conds.iter().all(|c| known.contains(&c.of(&atom.entity))) {
                let new = concl.of(&atom.entity);
                if !known.contains(&new) {
                    agenda.push_back(new);
                }
            }
        }
    }
    Ok(known)
}

/// Height of the shortest proof of every derivable atom (facts are 0).
fn proof_heights(world: &SyntheticWorld) -> BTreeMap<Atom, usize> {
    let mut heights: BTreeMap<Atom, usize> = world.facts().map(|a| (a.clone(), 0)).collect();
    let rules: Vec<_> = world.rules().collect();
    for round in 1.. {
        let mut fresh = Vec::new();
        for entity in &world.entities {
            for (conds, concl) in &rules {
                let atom = concl.of(entity);
                if heights.contains_key(&atom) {
                    continue;
                }
                if conds.iter().all(|c| heights.contains_key(&c.of(entity))) {
                    fresh.push(atom);
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        for a in fresh {
            heights.entry(a).or_insert(round);
        }
    }
    heights
}

/// Seeded world whose gold derivation has exactly `depth` rule applications.
///
/// `width` is the number of entities and of distractor rules.
pub fn generate_world(depth: usize, width: usize, seed: u64) -> Result<SyntheticWorld> {
    if width == 0 || width > ENTITIES.len() {
        return Err(AaiError::Generation(format!(
            "width must be in 1..={}, got {width}",
            ENTITIES.len()
        )));
    }
    // chain attributes, up to `depth` side conditions, and one spare
    if 2 * depth + 2 > ATTRIBUTES.len() {
        return Err(AaiError::Generation(format!(
            "depth {depth} needs more than the {} available attributes",
            ATTRIBUTES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(world) = attempt(depth, width, &mut rng)? {
            return Ok(world);
        }
    }
    Err(AaiError::Generation(format!(
        "no consistent world with depth {depth} and width {width} after {MAX_ATTEMPTS} attempts"
    )))
}

fn attempt(depth: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Option<SyntheticWorld>> {
    let mut names: Vec<&str> = ENTITIES.to_vec();
    names.shuffle(rng);
    let entities: Vec<String> = names[..width].iter().map(|s| s.to_string()).collect();
    let hero = entities[0].clone();

    let mut attrs: Vec<&str> = ATTRIBUTES.to_vec();
    attrs.shuffle(rng);
    let mut pool = attrs.into_iter();
    let chain: Vec<Literal> = (0..=depth)
        .map(|_| Literal::new(pool.next().expect("checked size"), rng.gen_bool(0.5)))
        .collect();

    let mut facts = vec![chain[0].of(&hero)];
    let mut rules = Vec::new();
    let mut needed = vec![chain[0].of(&hero)];
    for i in 1..=depth {
        let mut conditions = vec![chain[i - 1].clone()];
        if rng.gen_bool(0.4) {
            let side = Literal::new(pool.next().expect("checked size"), rng.gen_bool(0.5));
            let fact = side.of(&hero);
            facts.push(fact.clone());
            needed.push(fact);
            conditions.push(side);
            conditions.shuffle(rng);
        }
        rules.push(Statement::Rule {
            conditions,
            conclusion: chain[i].clone(),
        });
    }
    let reserved: BTreeSet<String> = facts
        .iter()
        .map(|a| a.literal.attribute.clone())
        .chain(chain.iter().map(|l| l.attribute.clone()))
        .collect();
    let free: Vec<&str> = ATTRIBUTES
        .iter()
        .copied()
        .filter(|a| !reserved.contains(*a))
        .collect();

    // distractor facts: one for the hero outside the chain, one or two per other entity
    facts.push(Atom::new(&hero, free.choose(rng).expect("spare attribute"), rng.gen_bool(0.5)));
    for e in &entities[1..] {
        for _ in 0..rng.gen_range(1..=2) {
            let attr = ATTRIBUTES.choose(rng).expect("nonempty");
            facts.push(Atom::new(e, attr, rng.gen_bool(0.5)));
        }
    }

    // distractor rules conclude on attributes the chain never uses, each on a
    // distinct attribute
    let mut used_conclusions: BTreeSet<&str> = BTreeSet::new();
    for _ in 0..width {
        let open: Vec<&str> = free
            .iter()
            .copied()
            .filter(|a| !used_conclusions.contains(a))
            .collect();
        let Some(&concl) = open.choose(rng) else {
            break;
        };
        used_conclusions.insert(concl);
        let n_cond = rng.gen_range(1..=2);
        let mut conditions: Vec<Literal> = Vec::new();
        while conditions.len() < n_cond {
            let attr = *ATTRIBUTES.choose(rng).expect("nonempty");
            if attr != concl && !conditions.iter().any(|c| c.attribute == attr) {
                conditions.push(Literal::new(attr, rng.gen_bool(0.5)));
            }
        }
        rules.push(Statement::Rule {
            conditions,
            conclusion: Literal::new(concl, rng.gen_bool(0.5)),
        });
    }

    let mut seen = BTreeSet::new();
    facts.retain(|f| seen.insert(f.clone()));
    if facts.iter().any(|f| seen.contains(&f.negated())) {
        return Ok(None);
    }
    facts.shuffle(rng);
    rules.shuffle(rng);
    let statements: Vec<Statement> = facts.into_iter().map(Statement::Fact).chain(rules).collect();

    let target = chain[depth].of(&hero);
    let label = match rng.gen_range(0..3) {
        0 => Label::True,
        1 => Label::False,
        _ => Label::Unknown,
    };
    let mut world = SyntheticWorld {
        entities,
        attributes: ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        statements,
        question: target.clone(),
        label,
        gold_trace: Vec::new(),
    };
    let derived = match saturate(world.facts().cloned(), world.rules()) {
        Ok(d) => d,
        Err(AaiError::InconsistentWorld(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    world.question = match label {
        Label::True => target.clone(),
        Label::False => target.negated(),
        Label::Unknown => {
            let open: Vec<&str> = ATTRIBUTES
                .iter()
                .copied()
                .filter(|a| {
                    let atom = Atom::new(&hero, a, true);
                    !derived.contains(&atom) && !derived.contains(&atom.negated())
                })
                .collect();
            let Some(attr) = open.choose(rng) else {
                return Ok(None);
            };
            Atom::new(&hero, attr, rng.gen_bool(0.5))
        }
    };
    if proof_heights(&world).get(&target) != Some(&depth) {
        return Ok(None);
    }

    let id_of = |s: &Statement| world.statements.iter().position(|t| t == s).map(|i| i + 1);
    let mut trace = Vec::new();
    let mut retrievals: Vec<(usize, Atom)> = needed
        .iter()
        .map(|a| (id_of(&Statement::Fact(a.clone())).expect("fact present"), a.clone()))
        .collect();
    retrievals.sort();
    for (rule, atom) in retrievals {
        trace.push(GoldStep {
            rule,
            consumed: Vec::new(),
            produced: atom,
        });
    }
    for i in 1..=depth {
        let (rule, conditions) = world
            .statements
            .iter()
            .enumerate()
            .find_map(|(k, s)| match s {
                Statement::Rule {
                    conditions,
                    conclusion,
                } if *conclusion == chain[i] => Some((k + 1, conditions.clone())),
                _ => None,
            })
            .expect("chain rule present");
        trace.push(GoldStep {
            rule,
            consumed: conditions.iter().map(|c| c.of(&hero)).collect(),
            produced: chain[i].of(&hero),
        });
    }
    world.gold_trace = trace;
    Ok(Some(world))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(statements: Vec<Statement>, question: Atom) -> SyntheticWorld {
        SyntheticWorld {
            entities: vec!["Anne".into()],
            attributes: vec![],
            statements,
            question,
            label: Label::Unknown,
            gold_trace: vec![],
        }
    }

    fn rule(conds: &[(&str, bool)], concl: (&str, bool)) -> Statement {
        Statement::Rule {
            conditions: conds.iter().map(|(a, p)| Literal::new(*a, *p)).collect(),
            conclusion: Literal::new(concl.0, concl.1),
        }
    }

    #[test]
    fn single_rule_fixpoint() {
        let w = tiny(
            vec![Statement::Fact(Atom::new("Anne", "red", true)), rule(&[("red", true)], ("big", true))],
            Atom::new("Anne", "big", true),
        );
        let d = forward_chain(&w).unwrap();
        assert_eq!(
            d.derived,
            BTreeSet::from([Atom::new("Anne", "red", true), Atom::new("Anne", "big", true)])
        );
        assert_eq!(d.label, Label::True);
    }

    #[test]
    fn negated_derivation_is_false() {
        let w = tiny(
            vec![
                Statement::Fact(Atom::new("Anne", "red", true)),
                rule(&[("red", true)], ("big", true)),
                rule(&[("big", true)], ("cold", false)),
            ],
            Atom::new("Anne", "cold", true),
        );
        assert_eq!(forward_chain(&w).unwrap().label, Label::False);
    }

    #[test]
    fn contradiction_is_reported() {
        let w = tiny(
            vec![
                Statement::Fact(Atom::new("Anne", "red", true)),
                Statement::Fact(Atom::new("Anne", "big", false)),
                rule(&[("red", true)], ("big", true)),
            ],
            Atom::new("Anne", "big", true),
        );
        assert!(matches!(forward_chain(&w), Err(AaiError::InconsistentWorld(_))));
    }

    #[test]
    fn sentences_roundtrip() {
        for s in [
            Statement::Fact(Atom::new("Bob", "kind", false)),
            rule(&[("red", true), ("kind", false)], ("big", true)),
            rule(&[("cold", false)], ("young", false)),
        ] {
            assert_eq!(Statement::parse(&s.sentence()).unwrap(), s);
        }
        assert_eq!(
            rule(&[("red", true), ("kind", false)], ("big", true)).sentence(),
            "If someone is red and not kind then they are big."
        );
        assert!(Statement::parse("The cow is blue and round.").is_err());
    }

    #[test]
    fn depth_zero_is_a_fact() {
        for seed in 0..20 {
            let w = generate_world(0, 2, seed).unwrap();
            assert_eq!(w.depth(), 0);
            let fact = &w.gold_trace[0].produced;
            match w.label {
                Label::True => assert_eq!(&w.question, fact),
                Label::False => assert_eq!(w.question, fact.negated()),
                Label::Unknown => {}
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate_world(3, 3, 11).unwrap(), generate_world(3, 3, 11).unwrap());
        assert!(generate_world(3, 0, 1).is_err());
        assert!(generate_world(40, 2, 1).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let w = generate_world(2, 3, 5).unwrap();
        let back = SyntheticWorld::from_text(&w.context_text(), &w.question_text()).unwrap();
        assert_eq!(back.statements, w.statements);
        assert_eq!(back.question, w.question);
        assert_eq!(back.label, w.label);
    }
}

//! Symbolic-aided chain-of-thought: prompt templates, answer extraction,
//! synthetic rule worlds, and reasoning-trace checking.

pub mod answer;
pub mod templates;
pub mod trace;
pub mod world;

pub use answer::{extract_answer, Verdict};
pub use templates::{tag_rules, Family, PromptInputs, PromptStyle, PromptTemplate};
pub use trace::{parse_trace, render_gold_trace, validate_trace, ReasoningTrace, ValidationReport};
pub use world::{forward_chain, generate_world, Label, SyntheticWorld};

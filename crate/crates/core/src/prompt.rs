//! Prompt rendering for the decision, explanation, and reflection calls.
//!
//! The templates live in `templates/` and are compiled in. Substitution is a
//! single literal pass: inserted text is never rescanned, so braces inside an
//! abstract come through untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CriteriaSet, Decision, ScreeningRecord};

pub const DECISION_TEMPLATE: &str = include_str!("../templates/decision.txt");
pub const EXPLAIN_TEMPLATE: &str = include_str!("../templates/explain.txt");
pub const REFLECT_TEMPLATE: &str = include_str!("../templates/reflect.txt");

/// Final line of every decision prompt.
pub const DECISION_TERMINATOR: &str = "Decision:";

const SLOTS: [&str; 7] = [
    "title",
    "abstract",
    "inclusion_criteria",
    "exclusion_criteria",
    "screening_prompt",
    "human_decision",
    "model_decision",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Decision,
    Explain,
    Reflect,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Decision => "decision",
            PromptKind::Explain => "explain",
            PromptKind::Reflect => "reflect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub kind: PromptKind,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("`{0}` is not an included/excluded decision")]
    InvalidDecision(Decision),
    #[error("human and model both decided `{0}`; reflection needs a disagreement")]
    NotADisagreement(Decision),
}

/// Renders the screening prompt for one record.
pub fn build_decision_prompt(record: &ScreeningRecord, criteria: &CriteriaSet) -> PromptText {
    PromptText {
        kind: PromptKind::Decision,
        body: render(DECISION_TEMPLATE, |slot| match slot {
            "title" => Some(record.title.as_str()),
            "abstract" => Some(record.abstract_text.as_str()),
            "inclusion_criteria" => Some(criteria.inclusion.as_str()),
            "exclusion_criteria" => Some(criteria.exclusion.as_str()),
            _ => None,
        }),
    }
}

/// Asks the model to justify `model`, with both decisions appended.
pub fn build_explain_prompt(
    record: &ScreeningRecord,
    criteria: &CriteriaSet,
    human: Decision,
    model: Decision,
) -> Result<PromptText, PromptError> {
    if !model.is_label() {
        return Err(PromptError::InvalidDecision(model));
    }
    Ok(follow_up(PromptKind::Explain, EXPLAIN_TEMPLATE, record, criteria, human, model))
}

/// Asks the model why `model` was wrong. Only valid when human and model disagree.
pub fn build_reflect_prompt(
    record: &ScreeningRecord,
    criteria: &CriteriaSet,
    human: Decision,
    model: Decision,
) -> Result<PromptText, PromptError> {
    for d in [model, human] {
        if !d.is_label() {
            return Err(PromptError::InvalidDecision(d));
        }
    }
    if human == model {
        return Err(PromptError::NotADisagreement(human));
    }
    Ok(follow_up(PromptKind::Reflect, REFLECT_TEMPLATE, record, criteria, human, model))
}

fn follow_up(
    kind: PromptKind,
    template: &str,
    record: &ScreeningRecord,
    criteria: &CriteriaSet,
    human: Decision,
    model: Decision,
) -> PromptText {
    let screening = build_decision_prompt(record, criteria).body;
    let without_terminator = screening
        .strip_suffix(DECISION_TERMINATOR)
        .unwrap_or(&screening);
    PromptText {
        kind,
        body: render(template, |slot| match slot {
            "screening_prompt" => Some(without_terminator),
            "human_decision" => Some(human.as_str()),
            "model_decision" => Some(model.as_str()),
            _ => None,
        }),
    }
}

/// Names of the `{slot}` placeholders in a template, in order of appearance.
pub fn template_slots(template: &str) -> Vec<&str> {
    let mut slots = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                slots.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    slots
}

fn is_slot_name(name: &str) -> bool {
    SLOTS.contains(&name)
}

// Single pass; a slot the binding does not know stays in the output verbatim.
fn render<'a>(template: &str, bind: impl Fn(&str) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(template.len() + 512);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replacement = after
            .find('}')
            .filter(|&close| is_slot_name(&after[..close]))
            .and_then(|close| bind(&after[..close]).map(|v| (close, v)));
        match replacement {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

//! Propagating a single-field policy edit across the policy set (phase 1)
//! and the insight cards (phase 2).
//!
//! Renames are fully deterministic: whole-token, case-sensitive
//! find-and-replace over the six text fields. [`reference_oracle`] is that
//! rule. Action and context changes need judgment and go to a model; this
//! module only checks what comes back and normalizes the update markers.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::{InsightCard, IssueType, Policy, PolicyField};
use crate::text::replace_token;

pub const UPDATED_MARKER: &str = " [Updated]";
const EDIT_MARKER_OPEN: &str = " [Edit: may be affected by ";

/// Description suffix recording what an edit may have changed.
pub fn edit_marker(summary: &str) -> String {
    format!("{EDIT_MARKER_OPEN}{summary}]")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditType {
    RenameSubject,
    RenameResource,
    ActionChange,
    ContextChange,
    TextOnly,
}

impl EditType {
    /// Label the propagation prompts use.
    pub fn label(self) -> &'static str {
        match self {
            EditType::RenameSubject => "RENAME_SUBJECT",
            EditType::RenameResource => "RENAME_RESOURCE",
            EditType::ActionChange => "ACTION_CHANGE",
            EditType::ContextChange => "CONTEXT_CHANGE",
            EditType::TextOnly => "TEXT_ONLY",
        }
    }

    pub fn is_rename(self) -> bool {
        matches!(self, EditType::RenameSubject | EditType::RenameResource)
    }
}

impl fmt::Display for EditType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RippleError {
    #[error("edit does not change the value")]
    NoOpEdit,
    #[error("unknown policy {0}")]
    UnknownPolicy(String),
    #[error("the reference rule covers renames and text-only edits, not {0}")]
    Unsupported(EditType),
}

pub fn classify_edit(field: PolicyField, old_value: &str, new_value: &str) -> Result<EditType, RippleError> {
    if old_value == new_value {
        return Err(RippleError::NoOpEdit);
    }
    Ok(match field {
        PolicyField::Subject => EditType::RenameSubject,
        PolicyField::Resource => EditType::RenameResource,
        PolicyField::Action => EditType::ActionChange,
        PolicyField::Context => EditType::ContextChange,
        PolicyField::Description | PolicyField::Explanation => EditType::TextOnly,
    })
}

/// One user edit of one policy field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyEdit {
    pub policy_number: String,
    pub field: PolicyField,
    pub old_value: String,
    pub new_value: String,
}

impl PolicyEdit {
    pub fn edit_type(&self) -> Result<EditType, RippleError> {
        classify_edit(self.field, &self.old_value, &self.new_value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RippleResult {
    pub has_ripple: bool,
    pub summary: String,
    pub policies: Vec<Policy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InsightRippleResult {
    pub has_changes: bool,
    pub summary: String,
    pub insights: Vec<InsightCard>,
}

/// Sets the edited field on its policy.
pub fn apply_edit(policies: &[Policy], edit: &PolicyEdit) -> Result<Vec<Policy>, RippleError> {
    let mut out = policies.to_vec();
    let p = out
        .iter_mut()
        .find(|p| p.policy_number == edit.policy_number)
        .ok_or_else(|| RippleError::UnknownPolicy(edit.policy_number.clone()))?;
    *p.field_mut(edit.field) = edit.new_value.clone();
    Ok(out)
}

fn plural(n: usize) -> &'static str {
    if n == 1 {
        "policy"
    } else {
        "policies"
    }
}

/// Deterministic phase 1 for renames and text-only edits. Accepts the
/// policy set from before or after the edit was applied.
pub fn reference_oracle(edit: &PolicyEdit, policies: &[Policy]) -> Result<RippleResult, RippleError> {
    let kind = edit.edit_type()?;
    let base = apply_edit(policies, edit)?;
    if kind == EditType::TextOnly {
        return Ok(RippleResult { has_ripple: false, summary: "Text-only edit; nothing to propagate".into(), policies: base });
    }
    if !kind.is_rename() {
        return Err(RippleError::Unsupported(kind));
    }
    let swapped: Vec<Policy> = base
        .iter()
        .map(|p| {
            let mut q = p.clone();
            for f in PolicyField::ALL {
                let next = replace_token(q.field(f), &edit.old_value, &edit.new_value);
                *q.field_mut(f) = next;
            }
            q
        })
        .collect();
    let has_ripple = swapped != base;
    let changed = swapped.iter().zip(policies).filter(|(a, b)| a != b).count();
    let summary = if has_ripple || changed > 0 {
        format!("Renamed '{}' to '{}' across {} {}", edit.old_value, edit.new_value, changed, plural(changed))
    } else {
        "No propagation needed".to_string()
    };
    Ok(RippleResult { has_ripple, summary, policies: swapped })
}

/// Silent name swap over insight text. Ids, types, elements and acceptance
/// are untouched.
pub fn rename_insights(edit: &PolicyEdit, cards: &[InsightCard]) -> InsightRippleResult {
    let (old, new) = (edit.old_value.as_str(), edit.new_value.as_str());
    let insights: Vec<InsightCard> = cards
        .iter()
        .map(|c| {
            let mut d = c.clone();
            d.heading = replace_token(&c.heading, old, new);
            d.description = replace_token(&c.description, old, new);
            d.rationale.happening = replace_token(&c.rationale.happening, old, new);
            d.rationale.expected = replace_token(&c.rationale.expected, old, new);
            d.rationale.consequence = replace_token(&c.rationale.consequence, old, new);
            d
        })
        .collect();
    let changed = insights.iter().zip(cards).filter(|(a, b)| a != b).count();
    InsightRippleResult {
        has_changes: changed > 0,
        summary: if changed > 0 {
            format!("Renamed '{old}' to '{new}' in {changed} insight{}", if changed == 1 { "" } else { "s" })
        } else {
            "No insights mention the old name".into()
        },
        insights,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RippleViolation {
    CountMismatch { expected: usize, found: usize },
    PolicyNumberChanged { index: usize, expected: String, found: String },
    ElementsChanged(String),
    IdChanged { index: usize, expected: String, found: String },
    TypeChanged(String),
    AcceptanceChanged(String),
    RelevantPoliciesChanged(String),
    OutcomeOnNonVignette(String),
}

impl fmt::Display for RippleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RippleViolation::CountMismatch { expected, found } => write!(f, "expected {expected} items, got {found}"),
            RippleViolation::PolicyNumberChanged { index, expected, found } => {
                write!(f, "[{index}] policyNumber {expected} became {found}")
            }
            RippleViolation::ElementsChanged(id) => write!(f, "{id}: elements changed"),
            RippleViolation::IdChanged { index, expected, found } => write!(f, "[{index}] id {expected} became {found}"),
            RippleViolation::TypeChanged(id) => write!(f, "{id}: type changed"),
            RippleViolation::AcceptanceChanged(id) => write!(f, "{id}: isAccepted changed"),
            RippleViolation::RelevantPoliciesChanged(id) => write!(f, "{id}: relevantPolicies changed"),
            RippleViolation::OutcomeOnNonVignette(id) => write!(f, "{id}: expectedOutcome on a non-vignette"),
        }
    }
}

/// Phase 1 invariants: same count, same policy numbers in the same order,
/// same elements.
pub fn validate_policy_ripple(before: &[Policy], returned: &[Policy]) -> Vec<RippleViolation> {
    if before.len() != returned.len() {
        return alloc::vec![RippleViolation::CountMismatch { expected: before.len(), found: returned.len() }];
    }
    let mut out = Vec::new();
    for (index, (a, b)) in before.iter().zip(returned).enumerate() {
        if a.policy_number != b.policy_number {
            out.push(RippleViolation::PolicyNumberChanged {
                index,
                expected: a.policy_number.clone(),
                found: b.policy_number.clone(),
            });
        } else if a.elements != b.elements {
            out.push(RippleViolation::ElementsChanged(a.policy_number.clone()));
        }
    }
    out
}

/// Phase 2 invariants: same count and order of ids, types, elements,
/// acceptance and relevant policies.
pub fn validate_insight_ripple(before: &[InsightCard], returned: &[InsightCard]) -> Vec<RippleViolation> {
    if before.len() != returned.len() {
        return alloc::vec![RippleViolation::CountMismatch { expected: before.len(), found: returned.len() }];
    }
    let mut out = Vec::new();
    for (index, (a, b)) in before.iter().zip(returned).enumerate() {
        if a.id != b.id {
            out.push(RippleViolation::IdChanged { index, expected: a.id.clone(), found: b.id.clone() });
            continue;
        }
        if a.kind != b.kind {
            out.push(RippleViolation::TypeChanged(a.id.clone()));
        }
        if a.elements != b.elements {
            out.push(RippleViolation::ElementsChanged(a.id.clone()));
        }
        if a.is_accepted() != b.is_accepted() {
            out.push(RippleViolation::AcceptanceChanged(a.id.clone()));
        }
        if a.relevant_policies != b.relevant_policies {
            out.push(RippleViolation::RelevantPoliciesChanged(a.id.clone()));
        }
        if b.kind != IssueType::Vignette && b.expected_outcome.is_some() {
            out.push(RippleViolation::OutcomeOnNonVignette(a.id.clone()));
        }
    }
    out
}

fn collapse_repeats(s: &str, marker: &str) -> String {
    let mut out = s;
    let doubled = format!("{marker}{marker}");
    while out.ends_with(doubled.as_str()) {
        out = &out[..out.len() - marker.len()];
    }
    out.to_string()
}

fn trailing_edit_marker(s: &str) -> Option<&str> {
    let start = s.rfind(EDIT_MARKER_OPEN)?;
    let tail = &s[start..];
    tail.ends_with(']').then_some(tail)
}

/// Collapses repeated trailing markers so each appears at most once.
pub fn normalize_markers(card: &InsightCard) -> InsightCard {
    let mut out = card.clone();
    out.heading = collapse_repeats(&card.heading, UPDATED_MARKER);
    let mut description = card.description.clone();
    while let Some(marker) = trailing_edit_marker(&description).map(str::to_string) {
        let collapsed = collapse_repeats(&description, &marker);
        if collapsed == description {
            break;
        }
        description = collapsed;
    }
    out.description = description;
    out
}

/// Appends the update markers unless they are already there. An edit
/// marker from an earlier edit is replaced by the one for `summary`.
pub fn mark_updated(card: &InsightCard, summary: &str) -> InsightCard {
    let mut out = normalize_markers(card);
    if !out.heading.ends_with(UPDATED_MARKER) {
        out.heading.push_str(UPDATED_MARKER);
    }
    let mut description = String::from(strip_edit_markers(&out.description));
    description.push_str(&edit_marker(summary));
    out.description = description;
    out
}

fn appended_only<'a>(original: &'a str, returned: &'a str, strip: fn(&str) -> &str) -> &'a str {
    if returned.starts_with(original) {
        original
    } else {
        strip(returned)
    }
}

fn strip_updated(s: &str) -> &str {
    let mut out = s;
    while let Some(rest) = out.strip_suffix(UPDATED_MARKER) {
        out = rest;
    }
    out
}

fn strip_edit_markers(s: &str) -> &str {
    let mut out = s;
    while let Some(m) = trailing_edit_marker(out) {
        out = &out[..out.len() - m.len()];
    }
    out
}

/// Reconciles one card returned by a semantic-impact pass with the card
/// that was sent. Untouched cards come back as sent. Touched cards keep
/// the original text with the markers appended once, whatever marker text
/// the model wrote. Identity fields always come from `original`.
pub fn settle_insight(original: &InsightCard, returned: &InsightCard, summary: &str) -> InsightCard {
    let before = normalize_markers(original);
    let after = normalize_markers(returned);
    let same_text = before.heading == after.heading
        && before.description == after.description
        && before.rationale == after.rationale
        && before.expected_outcome == after.expected_outcome;
    if same_text {
        return before;
    }
    let mut out = before.clone();
    out.heading = appended_only(&before.heading, &after.heading, strip_updated).to_string();
    out.description = appended_only(&before.description, &after.description, strip_edit_markers).to_string();
    out.rationale = after.rationale.clone();
    if original.kind == IssueType::Vignette {
        out.expected_outcome = after.expected_outcome.or(original.expected_outcome);
    }
    mark_updated(&out, summary)
}

/// Whether an insight can be touched by an edit to `edited`: it names the
/// policy in relevantPolicies, or, lacking that list, shares an element.
pub fn is_candidate(card: &InsightCard, edited: &Policy) -> bool {
    match &card.relevant_policies {
        Some(ps) => ps.contains(&edited.policy_number),
        None => card.kind != IssueType::Vignette && card.elements.iter().any(|e| edited.elements.contains(e)),
    }
}

/// Phase 2 runs only when phase 1 found cross-policy effects and there is
/// something to update.
pub fn phase2_required(phase1: &RippleResult, visible_insights: usize) -> bool {
    phase1.has_ripple && visible_insights > 0
}

/// A rename onto a name another policy already uses for a different
/// entity. Reported, never merged.
pub fn rename_collision(edit: &PolicyEdit, policies: &[Policy]) -> Option<String> {
    if !matches!(edit.field, PolicyField::Subject | PolicyField::Resource) {
        return None;
    }
    policies
        .iter()
        .find(|p| p.policy_number != edit.policy_number && p.field(edit.field) == edit.new_value)
        .map(|p| {
            format!(
                "'{}' is already the {} of {}; the rename now treats them as the same entity",
                edit.new_value,
                edit.field.name(),
                p.policy_number
            )
        })
}

/// User turn for the policy propagation call.
pub fn policy_ripple_request(edit: &PolicyEdit, kind: EditType, policies: &[Policy]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "editType": kind.label(),
        "policyNumber": edit.policy_number,
        "field": edit.field.name(),
        "oldValue": edit.old_value,
        "newValue": edit.new_value,
        "policies": policies,
    }))
    .unwrap_or_default()
}

/// User turn for the insight propagation call.
pub fn insight_ripple_request(
    edit: &PolicyEdit,
    kind: EditType,
    phase1_summary: &str,
    policies: &[Policy],
    insights: &[InsightCard],
) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "editType": kind.label(),
        "policyNumber": edit.policy_number,
        "field": edit.field.name(),
        "oldValue": edit.old_value,
        "newValue": edit.new_value,
        "policyChangeSummary": phase1_summary,
        "policies": policies,
        "insights": insights,
    }))
    .unwrap_or_default()
}

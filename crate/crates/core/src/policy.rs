//! Policies, insight cards and the structured rationale format.
//!
//! A [`Policy`] is one ABAC rule: who (subject) may do what (action) to which
//! resource under which condition (context). Sketch provenance is carried
//! only in `elements`, as `[N]` mark references; every other text field must
//! use real element names.
//!
//! Stored documents may carry fields this version does not know about. They
//! are kept in `extra` so a load/save cycle does not drop them. The strict
//! parsers in [`crate::schema`] reject them on model output instead.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::marks::MarkNumber;
use crate::text::{contains_mark_ref, parse_mark_ref};

/// Longest heading accepted on an insight card, in characters.
pub const MAX_HEADING_CHARS: usize = 120;

/// Literal stored in `context` for an unconditional policy.
pub const NO_CONTEXT: &str = "None";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Policy {
    pub policy_number: String,
    pub description: String,
    pub explanation: String,
    pub subject: String,
    pub resource: String,
    pub action: String,
    pub context: String,
    pub elements: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// The six user-editable text fields of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyField {
    Subject,
    Resource,
    Action,
    Context,
    Description,
    Explanation,
}

impl PolicyField {
    pub const ALL: [PolicyField; 6] = [
        PolicyField::Subject,
        PolicyField::Resource,
        PolicyField::Action,
        PolicyField::Context,
        PolicyField::Description,
        PolicyField::Explanation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyField::Subject => "subject",
            PolicyField::Resource => "resource",
            PolicyField::Action => "action",
            PolicyField::Context => "context",
            PolicyField::Description => "description",
            PolicyField::Explanation => "explanation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl Policy {
    pub fn field(&self, field: PolicyField) -> &str {
        match field {
            PolicyField::Subject => &self.subject,
            PolicyField::Resource => &self.resource,
            PolicyField::Action => &self.action,
            PolicyField::Context => &self.context,
            PolicyField::Description => &self.description,
            PolicyField::Explanation => &self.explanation,
        }
    }

    pub fn field_mut(&mut self, field: PolicyField) -> &mut String {
        match field {
            PolicyField::Subject => &mut self.subject,
            PolicyField::Resource => &mut self.resource,
            PolicyField::Action => &mut self.action,
            PolicyField::Context => &mut self.context,
            PolicyField::Description => &mut self.description,
            PolicyField::Explanation => &mut self.explanation,
        }
    }

    /// Mark numbers referenced by `elements`, skipping malformed entries.
    pub fn mark_numbers(&self) -> impl Iterator<Item = MarkNumber> + '_ {
        self.elements.iter().filter_map(|e| parse_mark_ref(e)).map(MarkNumber)
    }

    pub fn is_unconditional(&self) -> bool {
        self.context == NO_CONTEXT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueType {
    Risk,
    Ambiguity,
    Conflict,
    Vignette,
}

impl IssueType {
    pub const ALL: [IssueType; 4] = [IssueType::Risk, IssueType::Ambiguity, IssueType::Conflict, IssueType::Vignette];

    pub fn name(self) -> &'static str {
        match self {
            IssueType::Risk => "risk",
            IssueType::Ambiguity => "ambiguity",
            IssueType::Conflict => "conflict",
            IssueType::Vignette => "vignette",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Label of the third rationale segment for cards of this type.
    pub fn consequence_kind(self) -> ConsequenceKind {
        match self {
            IssueType::Vignette => ConsequenceKind::WhatThisTests,
            _ => ConsequenceKind::WhyItMatters,
        }
    }
}

impl fmt::Display for IssueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExpectedOutcome {
    Allow,
    Deny,
    Ambiguous,
}

impl ExpectedOutcome {
    pub fn name(self) -> &'static str {
        match self {
            ExpectedOutcome::Allow => "Allow",
            ExpectedOutcome::Deny => "Deny",
            ExpectedOutcome::Ambiguous => "Ambiguous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Allow" => Some(ExpectedOutcome::Allow),
            "Deny" => Some(ExpectedOutcome::Deny),
            "Ambiguous" => Some(ExpectedOutcome::Ambiguous),
            _ => None,
        }
    }
}

impl fmt::Display for ExpectedOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsequenceKind {
    WhyItMatters,
    WhatThisTests,
}

impl ConsequenceKind {
    pub fn label(self) -> &'static str {
        match self {
            ConsequenceKind::WhyItMatters => "Why it matters",
            ConsequenceKind::WhatThisTests => "What this tests",
        }
    }
}

const HAPPENING_PREFIX: &str = "What's happening: ";
const EXPECTED_PREFIX: &str = "What's expected: ";
const SEPARATOR: &str = " | ";

/// Three-part contextual-integrity rationale: the information flow, the
/// norm it should meet, and why the gap matters (or, for vignettes, what
/// boundary the case tests).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rationale {
    pub happening: String,
    pub expected: String,
    pub consequence: String,
    pub kind: ConsequenceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RationaleError {
    #[error("malformed rationale: {0}")]
    Malformed(String),
    #[error("rationale segment `{0}` is empty")]
    EmptySegment(&'static str),
    #[error("rationale segment `{0}` contains the ` | ` separator")]
    SeparatorInSegment(&'static str),
}

impl Rationale {
    pub fn new(
        happening: impl Into<String>,
        expected: impl Into<String>,
        consequence: impl Into<String>,
        kind: ConsequenceKind,
    ) -> Self {
        Rationale { happening: happening.into(), expected: expected.into(), consequence: consequence.into(), kind }
    }
}

/// Renders the pipe-separated wire form of a rationale.
pub fn render_rationale(r: &Rationale) -> Result<String, RationaleError> {
    for (name, seg) in [("happening", &r.happening), ("expected", &r.expected), ("consequence", &r.consequence)] {
        if seg.is_empty() {
            return Err(RationaleError::EmptySegment(name));
        }
        if seg.contains(SEPARATOR) {
            return Err(RationaleError::SeparatorInSegment(name));
        }
    }
    Ok(format!(
        "{HAPPENING_PREFIX}{}{SEPARATOR}{EXPECTED_PREFIX}{}{SEPARATOR}{}: {}",
        r.happening,
        r.expected,
        r.kind.label(),
        r.consequence
    ))
}

/// Parses the pipe-separated wire form. Inverse of [`render_rationale`].
pub fn parse_rationale(s: &str) -> Result<Rationale, RationaleError> {
    let segments: Vec<&str> = s.split(SEPARATOR).collect();
    if segments.len() != 3 {
        return Err(RationaleError::Malformed(format!("expected 3 segments, found {}", segments.len())));
    }
    let happening = segments[0]
        .strip_prefix(HAPPENING_PREFIX)
        .ok_or_else(|| RationaleError::Malformed("first segment must start with \"What's happening: \"".into()))?;
    let expected = segments[1]
        .strip_prefix(EXPECTED_PREFIX)
        .ok_or_else(|| RationaleError::Malformed("second segment must start with \"What's expected: \"".into()))?;
    let (kind, consequence) = [ConsequenceKind::WhyItMatters, ConsequenceKind::WhatThisTests]
        .into_iter()
        .find_map(|k| segments[2].strip_prefix(k.label()).and_then(|rest| rest.strip_prefix(": ")).map(|c| (k, c)))
        .ok_or_else(|| RationaleError::Malformed(format!("unknown third label in \"{}\"", segments[2])))?;
    let r = Rationale::new(happening, expected, consequence, kind);
    for (name, seg) in [("happening", &r.happening), ("expected", &r.expected), ("consequence", &r.consequence)] {
        if seg.is_empty() {
            return Err(RationaleError::EmptySegment(name));
        }
    }
    Ok(r)
}

impl Serialize for Rationale {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let s = render_rationale(self).map_err(serde::ser::Error::custom)?;
        serializer.serialize_str(&s)
    }
}

impl<'de> Deserialize<'de> for Rationale {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_rationale(&s).map_err(serde::de::Error::custom)
    }
}

/// A surfaced finding: risk, ambiguity, conflict, or test vignette.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InsightCard {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: IssueType,
    pub heading: String,
    pub description: String,
    pub elements: Vec<String>,
    pub rationale: Rationale,
    /// Absent: never acted on. `Some(true)`: accepted. `false` is never
    /// stored; dismissal is tracked by the ledger.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_outcome: Option<ExpectedOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_policies: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl InsightCard {
    /// Numeric suffix of the id, when the id has the `<type><N>` shape.
    pub fn ordinal(&self) -> Option<u32> {
        id_ordinal(&self.id, self.kind)
    }

    pub fn mark_numbers(&self) -> impl Iterator<Item = MarkNumber> + '_ {
        self.elements.iter().filter_map(|e| parse_mark_ref(e)).map(MarkNumber)
    }

    pub fn is_accepted(&self) -> bool {
        self.is_accepted == Some(true)
    }
}

/// Parses `policy<N>` ids.
pub fn policy_ordinal(id: &str) -> Option<u32> {
    positive_suffix(id.strip_prefix("policy")?)
}

/// Parses `<type><N>` ids such as `risk3`.
pub fn id_ordinal(id: &str, kind: IssueType) -> Option<u32> {
    positive_suffix(id.strip_prefix(kind.name())?)
}

/// Type implied by an insight id prefix, if any.
pub fn id_type(id: &str) -> Option<IssueType> {
    IssueType::ALL.into_iter().find(|t| id_ordinal(id, *t).is_some())
}

fn positive_suffix(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok().filter(|n| *n > 0)
}

/// One contract breach found by the validators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BadPolicyNumber(String),
    DuplicatePolicyNumber(String),
    EmptyField(&'static str),
    MarkRefInText(&'static str),
    MalformedElement(String),
    UnknownMark(String),
    BadInsightId { id: String, kind: IssueType },
    DuplicateInsightId(String),
    HeadingTooLong(usize),
    VignetteFieldMismatch(String),
    RationaleKindMismatch { id: String },
    UnknownPolicy(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadPolicyNumber(s) => write!(f, "policyNumber \"{s}\" is not of the form policy<N>"),
            Violation::DuplicatePolicyNumber(s) => write!(f, "duplicate policyNumber {s}"),
            Violation::EmptyField(name) => write!(f, "empty field {name}"),
            Violation::MarkRefInText(name) => write!(f, "mark reference in text field {name}"),
            Violation::MalformedElement(s) => write!(f, "malformed mark reference \"{s}\""),
            Violation::UnknownMark(s) => write!(f, "unknown mark reference {s}"),
            Violation::BadInsightId { id, kind } => write!(f, "insight id \"{id}\" does not match type {kind}"),
            Violation::DuplicateInsightId(s) => write!(f, "duplicate insight id {s}"),
            Violation::HeadingTooLong(n) => write!(f, "heading is {n} characters, limit {MAX_HEADING_CHARS}"),
            Violation::VignetteFieldMismatch(id) => {
                write!(f, "{id}: expectedOutcome and relevantPolicies must be present exactly on vignettes")
            }
            Violation::RationaleKindMismatch { id } => write!(f, "{id}: rationale label does not match card type"),
            Violation::UnknownPolicy(s) => write!(f, "relevantPolicies names unknown policy {s}"),
        }
    }
}

fn check_elements(elements: &[String], known: &BTreeSet<MarkNumber>, out: &mut Vec<Violation>) {
    for e in elements {
        match parse_mark_ref(e) {
            None => out.push(Violation::MalformedElement(e.clone())),
            Some(n) if !known.contains(&MarkNumber(n)) => out.push(Violation::UnknownMark(e.clone())),
            Some(_) => {}
        }
    }
}

/// Checks one policy against the format contract. Empty report means valid.
pub fn validate_policy(p: &Policy, known_marks: &BTreeSet<MarkNumber>) -> Vec<Violation> {
    let mut out = Vec::new();
    if policy_ordinal(&p.policy_number).is_none() {
        out.push(Violation::BadPolicyNumber(p.policy_number.clone()));
    }
    for field in PolicyField::ALL {
        let value = p.field(field);
        if value.trim().is_empty() {
            out.push(Violation::EmptyField(field.name()));
        } else if contains_mark_ref(value) {
            out.push(Violation::MarkRefInText(field.name()));
        }
    }
    check_elements(&p.elements, known_marks, &mut out);
    out
}

/// Validates every policy plus policyNumber uniqueness across the set.
pub fn validate_policy_set(policies: &[Policy], known_marks: &BTreeSet<MarkNumber>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for p in policies {
        out.extend(validate_policy(p, known_marks));
        if !seen.insert(p.policy_number.as_str()) {
            out.push(Violation::DuplicatePolicyNumber(p.policy_number.clone()));
        }
    }
    out
}

/// Checks one card. `policy_numbers` is the set relevantPolicies may name.
pub fn validate_insight(
    card: &InsightCard,
    known_marks: &BTreeSet<MarkNumber>,
    policy_numbers: &BTreeSet<&str>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if card.ordinal().is_none() {
        out.push(Violation::BadInsightId { id: card.id.clone(), kind: card.kind });
    }
    if card.heading.trim().is_empty() {
        out.push(Violation::EmptyField("heading"));
    } else {
        let n = card.heading.chars().count();
        if n > MAX_HEADING_CHARS {
            out.push(Violation::HeadingTooLong(n));
        }
        if contains_mark_ref(&card.heading) {
            out.push(Violation::MarkRefInText("heading"));
        }
    }
    if card.description.trim().is_empty() {
        out.push(Violation::EmptyField("description"));
    } else if contains_mark_ref(&card.description) {
        out.push(Violation::MarkRefInText("description"));
    }
    check_elements(&card.elements, known_marks, &mut out);
    let is_vignette = card.kind == IssueType::Vignette;
    if is_vignette != card.expected_outcome.is_some() || is_vignette != card.relevant_policies.is_some() {
        out.push(Violation::VignetteFieldMismatch(card.id.clone()));
    }
    if card.rationale.kind != card.kind.consequence_kind() {
        out.push(Violation::RationaleKindMismatch { id: card.id.clone() });
    }
    for p in card.relevant_policies.iter().flatten() {
        if !policy_numbers.contains(p.as_str()) {
            out.push(Violation::UnknownPolicy(p.clone()));
        }
    }
    out
}

/// Validates a set of cards plus id uniqueness.
pub fn validate_insight_set(
    cards: &[InsightCard],
    known_marks: &BTreeSet<MarkNumber>,
    policy_numbers: &BTreeSet<&str>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for c in cards {
        out.extend(validate_insight(c, known_marks, policy_numbers));
        if !seen.insert(c.id.as_str()) {
            out.push(Violation::DuplicateInsightId(c.id.clone()));
        }
    }
    out
}

/// What the analysis step concluded about a finding before it was typed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FindingBasis {
    /// The policy as written is dangerous regardless of intent.
    DangerAsWritten,
    /// Safe or unsafe depends on information only the user has.
    NeedsMoreInformation,
    /// Two policies answer the same request differently.
    ContradictoryDecisions,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftFinding {
    pub statement: String,
    pub basis: FindingBasis,
}

pub fn classify_issue_kind(finding: &DraftFinding) -> IssueType {
    match finding.basis {
        FindingBasis::DangerAsWritten => IssueType::Risk,
        FindingBasis::NeedsMoreInformation => IssueType::Ambiguity,
        FindingBasis::ContradictoryDecisions => IssueType::Conflict,
    }
}

/// OWASP A01 patterns detectable from a policy specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskPattern {
    OverPrivilege,
    PrivilegeEscalation,
    MissingAuthorization,
    InsecureDefaults,
    IndirectAccessPath,
    MissingInstanceScoping,
    TrustBoundaryViolation,
}

impl RiskPattern {
    pub const ALL: [RiskPattern; 7] = [
        RiskPattern::OverPrivilege,
        RiskPattern::PrivilegeEscalation,
        RiskPattern::MissingAuthorization,
        RiskPattern::InsecureDefaults,
        RiskPattern::IndirectAccessPath,
        RiskPattern::MissingInstanceScoping,
        RiskPattern::TrustBoundaryViolation,
    ];

    pub fn cwe(self) -> &'static str {
        match self {
            RiskPattern::OverPrivilege | RiskPattern::PrivilegeEscalation => "CWE-285",
            RiskPattern::MissingAuthorization => "CWE-862",
            RiskPattern::InsecureDefaults => "CWE-276",
            RiskPattern::IndirectAccessPath => "CWE-284",
            RiskPattern::MissingInstanceScoping => "CWE-639",
            RiskPattern::TrustBoundaryViolation => "CWE-668",
        }
    }

    pub fn owasp_pattern(self) -> &'static str {
        match self {
            RiskPattern::OverPrivilege => "Violation of least privilege",
            RiskPattern::PrivilegeEscalation => "Privilege escalation",
            RiskPattern::MissingAuthorization => "Missing authorization",
            RiskPattern::InsecureDefaults => "Incorrect default permissions",
            RiskPattern::IndirectAccessPath => "Access control bypass",
            RiskPattern::MissingInstanceScoping => "IDOR",
            RiskPattern::TrustBoundaryViolation => "CORS misconfiguration",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskPattern::OverPrivilege => "Over-privilege",
            RiskPattern::PrivilegeEscalation => "Privilege escalation",
            RiskPattern::MissingAuthorization => "Missing authorization",
            RiskPattern::InsecureDefaults => "Insecure defaults",
            RiskPattern::IndirectAccessPath => "Indirect access path",
            RiskPattern::MissingInstanceScoping => "Missing instance scoping",
            RiskPattern::TrustBoundaryViolation => "Trust boundary violation",
        }
    }

    /// Phrases that suggest this pattern in a risk card's text.
    fn cues(self) -> &'static [&'static str] {
        match self {
            RiskPattern::OverPrivilege => &["least privilege", "over-privilege", "overprivilege", "full control", "more access than"],
            RiskPattern::PrivilegeEscalation => &["escalation", "escalate", "manage settings", "configure", "admin"],
            RiskPattern::MissingAuthorization => &["missing authorization", "no policy restricts", "unrestricted", "anyone can"],
            RiskPattern::InsecureDefaults => &["default", "no policy exists", "undefined access", "implicitly allowed"],
            RiskPattern::IndirectAccessPath => &["bypass", "indirect", "alternative route", "preview"],
            RiskPattern::MissingInstanceScoping => &["all cameras", "all devices", "which instances", "every ", "scoping", "scope"],
            RiskPattern::TrustBoundaryViolation => &["trust boundary", "guest wifi", "guest network", "reachable from", "remote"],
        }
    }
}

/// Best-effort tag of a risk card with a pattern, by keyword cues in its
/// heading, description and rationale. Reporting only; never blocks.
pub fn tag_risk_pattern(card: &InsightCard) -> Option<RiskPattern> {
    if card.kind != IssueType::Risk {
        return None;
    }
    let mut haystack = card.heading.to_lowercase();
    haystack.push(' ');
    haystack.push_str(&card.description.to_lowercase());
    haystack.push(' ');
    haystack.push_str(&card.rationale.consequence.to_lowercase());
    RiskPattern::ALL.into_iter().find(|p| p.cues().iter().any(|cue| haystack.contains(cue)))
}

impl fmt::Display for RiskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.label(), self.cwe())
    }
}

/// Policy numbers as a lookup set.
pub fn policy_number_set(policies: &[Policy]) -> BTreeSet<&str> {
    policies.iter().map(|p| p.policy_number.as_str()).collect()
}

/// Builds a policy with no extra fields. Convenience for fixtures and
/// oracles.
#[allow(clippy::too_many_arguments)]
pub fn policy(
    number: &str,
    subject: &str,
    action: &str,
    resource: &str,
    context: &str,
    description: &str,
    explanation: &str,
    elements: &[&str],
) -> Policy {
    Policy {
        policy_number: number.to_string(),
        description: description.to_string(),
        explanation: explanation.to_string(),
        subject: subject.to_string(),
        resource: resource.to_string(),
        action: action.to_string(),
        context: context.to_string(),
        elements: elements.iter().map(|e| e.to_string()).collect(),
        extra: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn marks(ns: &[u32]) -> BTreeSet<MarkNumber> {
        ns.iter().copied().map(MarkNumber).collect()
    }

    fn alice() -> Policy {
        policy(
            "policy1",
            "Alice",
            "view",
            "Front Camera",
            "during business hours",
            "Alice is allowed to view Front Camera during business hours",
            "Alice is connected to Front Camera by a directed arrow labelled view, indicating Alice has view access to the Front Camera.",
            &["[1]", "[3]"],
        )
    }

    #[test]
    fn valid_policy_has_empty_report() {
        assert!(validate_policy(&alice(), &marks(&[1, 2, 3])).is_empty());
    }

    #[test]
    fn mark_reference_in_text_is_flagged() {
        let mut p = alice();
        p.description = "Alice [1] can view".into();
        let report = validate_policy(&p, &marks(&[1, 2, 3]));
        assert_eq!(report, vec![Violation::MarkRefInText("description")]);
        assert!(report[0].to_string().contains("mark reference in text field"));
    }

    #[test]
    fn unknown_mark_is_flagged() {
        let mut p = alice();
        p.elements = vec!["[9]".into()];
        let report = validate_policy(&p, &marks(&[1, 2, 3]));
        assert_eq!(report, vec![Violation::UnknownMark("[9]".into())]);
        assert_eq!(report[0].to_string(), "unknown mark reference [9]");
    }

    #[test]
    fn none_context_is_valid_and_empty_is_not() {
        let mut p = alice();
        p.context = NO_CONTEXT.into();
        assert!(validate_policy(&p, &marks(&[1, 3])).is_empty());
        p.context = "  ".into();
        assert_eq!(validate_policy(&p, &marks(&[1, 3])), vec![Violation::EmptyField("context")]);
    }

    #[test]
    fn policy_number_pattern_and_uniqueness() {
        let mut p = alice();
        p.policy_number = "policy0".into();
        assert!(matches!(validate_policy(&p, &marks(&[1, 3]))[0], Violation::BadPolicyNumber(_)));
        let set = [alice(), alice()];
        assert_eq!(validate_policy_set(&set, &marks(&[1, 3])), vec![Violation::DuplicatePolicyNumber("policy1".into())]);
    }

    #[test]
    fn parses_risk_rationale() {
        let s = "What's happening: Visitor -> full control -> Smart Thermostat | What's expected: Visitors should have limited or no control over building systems | Why it matters: Granting full control to transient visitors violates least privilege";
        let r = parse_rationale(s).unwrap();
        assert_eq!(r.happening, "Visitor -> full control -> Smart Thermostat");
        assert_eq!(r.kind, ConsequenceKind::WhyItMatters);
        assert_eq!(render_rationale(&r).unwrap(), s);
    }

    #[test]
    fn rejects_two_segments_and_unknown_label() {
        assert!(matches!(parse_rationale("a | b"), Err(RationaleError::Malformed(_))));
        assert!(matches!(
            parse_rationale("What's happening: a | What's expected: b | Why not: c"),
            Err(RationaleError::Malformed(_))
        ));
    }

    #[test]
    fn renders_both_labels() {
        let r = Rationale::new("A", "B", "C", ConsequenceKind::WhyItMatters);
        assert_eq!(render_rationale(&r).unwrap(), "What's happening: A | What's expected: B | Why it matters: C");
        let r = Rationale::new("A", "B", "C", ConsequenceKind::WhatThisTests);
        assert!(render_rationale(&r).unwrap().ends_with("| What this tests: C"));
    }

    #[test]
    fn render_rejects_empty_segment() {
        let r = Rationale::new("", "B", "C", ConsequenceKind::WhyItMatters);
        assert_eq!(render_rationale(&r), Err(RationaleError::EmptySegment("happening")));
    }

    #[test]
    fn classifies_findings() {
        let f = |s: &str, b| classify_issue_kind(&DraftFinding { statement: s.into(), basis: b });
        assert_eq!(f("Visitor has full control over Card Reader", FindingBasis::DangerAsWritten), IssueType::Risk);
        assert_eq!(
            f("Senior staff can use recording equipment", FindingBasis::NeedsMoreInformation),
            IssueType::Ambiguity
        );
        assert_eq!(
            f("Alice can view all cameras vs Visitors cannot view cameras", FindingBasis::ContradictoryDecisions),
            IssueType::Conflict
        );
    }

    #[test]
    fn risk_patterns_match_owasp_table() {
        let cwes: Vec<_> = RiskPattern::ALL.iter().map(|p| p.cwe()).collect();
        assert_eq!(cwes, ["CWE-285", "CWE-285", "CWE-862", "CWE-276", "CWE-284", "CWE-639", "CWE-668"]);
    }

    #[test]
    fn insight_validation_rules() {
        let pn: BTreeSet<&str> = ["policy1"].into_iter().collect();
        let card = InsightCard {
            id: "risk1".into(),
            kind: IssueType::Risk,
            heading: "Visitor full control over thermostat".into(),
            description: "Visitors can change any setting.".into(),
            elements: vec!["[1]".into()],
            rationale: Rationale::new("a", "b", "c", ConsequenceKind::WhyItMatters),
            is_accepted: None,
            expected_outcome: None,
            relevant_policies: None,
            extra: BTreeMap::new(),
        };
        assert!(validate_insight(&card, &marks(&[1]), &pn).is_empty());

        let mut bad = card.clone();
        bad.id = "conflict1".into();
        assert!(matches!(validate_insight(&bad, &marks(&[1]), &pn)[0], Violation::BadInsightId { .. }));

        let mut v = card.clone();
        v.kind = IssueType::Vignette;
        v.id = "vignette1".into();
        v.rationale.kind = ConsequenceKind::WhatThisTests;
        assert_eq!(validate_insight(&v, &marks(&[1]), &pn), vec![Violation::VignetteFieldMismatch("vignette1".into())]);
        v.expected_outcome = Some(ExpectedOutcome::Deny);
        v.relevant_policies = Some(vec!["policy7".into()]);
        assert_eq!(validate_insight(&v, &marks(&[1]), &pn), vec![Violation::UnknownPolicy("policy7".into())]);

        let mut long = card;
        long.heading = "x".repeat(121);
        assert_eq!(validate_insight(&long, &marks(&[1]), &pn), vec![Violation::HeadingTooLong(121)]);
    }

    #[test]
    fn tags_over_privilege() {
        let card = InsightCard {
            id: "risk1".into(),
            kind: IssueType::Risk,
            heading: "Visitor has full control over thermostat".into(),
            description: "d".into(),
            elements: vec![],
            rationale: Rationale::new("a", "b", "violates least privilege", ConsequenceKind::WhyItMatters),
            is_accepted: None,
            expected_outcome: None,
            relevant_policies: None,
            extra: BTreeMap::new(),
        };
        assert_eq!(tag_risk_pattern(&card), Some(RiskPattern::OverPrivilege));
    }
}

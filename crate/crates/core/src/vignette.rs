//! Test-case generation: factor decompositions, candidate enumeration,
//! worst-boundary-wins outcomes, scoring and greedy diverse selection.
//!
//! Everything here is deterministic. The two model calls of the test stage
//! (decomposition in, story realization out) live in the service; this
//! module only validates what they return and does the combinatorics in
//! between.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::marks::{Entity, SemanticRole};
use crate::policy::{ConsequenceKind, ExpectedOutcome, InsightCard, IssueType, Policy};
use crate::text::words;

/// Upper bound on candidates enumerated per policy.
pub const CANDIDATE_CAP: usize = 40;
/// Number of vignettes selected when the caller does not say.
pub const DEFAULT_K: usize = 6;

pub const MIN_VARIABLE_FACTORS: usize = 2;
pub const MAX_VARIABLE_FACTORS: usize = 5;
pub const MIN_ALTERNATIVES: usize = 2;
pub const MAX_ALTERNATIVES: usize = 4;

/// Weights of the five score components, in [`ScoreBreakdown`] field order.
pub const WEIGHTS: Weights =
    Weights { ambiguity: 0.25, boundary_proximity: 0.20, conflict_potential: 0.20, coverage_diversity: 0.20, novelty: 0.15 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub ambiguity: f64,
    pub boundary_proximity: f64,
    pub conflict_potential: f64,
    pub coverage_diversity: f64,
    pub novelty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryType {
    Baseline,
    JustInside,
    JustOutside,
    ClearlyOutside,
    Ambiguous,
}

impl BoundaryType {
    pub const ALL: [BoundaryType; 5] = [
        BoundaryType::Baseline,
        BoundaryType::JustInside,
        BoundaryType::JustOutside,
        BoundaryType::ClearlyOutside,
        BoundaryType::Ambiguous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryType::Baseline => "baseline",
            BoundaryType::JustInside => "just_inside",
            BoundaryType::JustOutside => "just_outside",
            BoundaryType::ClearlyOutside => "clearly_outside",
            BoundaryType::Ambiguous => "ambiguous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    /// Outcome a single value of this type implies on its own.
    pub fn outcome(self) -> ExpectedOutcome {
        match self {
            BoundaryType::Baseline | BoundaryType::JustInside => ExpectedOutcome::Allow,
            BoundaryType::JustOutside | BoundaryType::ClearlyOutside => ExpectedOutcome::Deny,
            BoundaryType::Ambiguous => ExpectedOutcome::Ambiguous,
        }
    }

    fn proximity(self) -> f64 {
        match self {
            BoundaryType::Ambiguous | BoundaryType::JustOutside => 1.0,
            BoundaryType::JustInside => 0.6,
            BoundaryType::ClearlyOutside => 0.3,
            BoundaryType::Baseline => 0.1,
        }
    }
}

impl fmt::Display for BoundaryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FactorValue {
    pub value: String,
    pub label: String,
    pub is_baseline: bool,
    pub boundary_type: BoundaryType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariableFactor {
    pub name: String,
    pub dimension: SemanticRole,
    pub policy_value: FactorValue,
    pub alternatives: Vec<FactorValue>,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction_hints: Option<Vec<String>>,
}

impl VariableFactor {
    fn hints(&self) -> &[String] {
        self.interaction_hints.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyAnalysis {
    pub identified_ambiguities: Vec<String>,
    pub identified_risks: Vec<String>,
    pub under_specified_conditions: Vec<String>,
    pub conflicts_with_policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicySchema {
    pub policy_number: String,
    pub explanation: String,
    pub fixed_factors: BTreeMap<String, String>,
    pub variable_factors: Vec<VariableFactor>,
    pub policy_analysis: PolicyAnalysis,
}

impl PolicySchema {
    pub fn factor(&self, name: &str) -> Option<&VariableFactor> {
        self.variable_factors.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreBreakdown {
    pub ambiguity: f64,
    pub boundary_proximity: f64,
    pub conflict_potential: f64,
    pub coverage_diversity: f64,
    pub novelty: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    /// Builds a breakdown from components and fills in the weighted total.
    pub fn from_components(
        ambiguity: f64,
        boundary_proximity: f64,
        conflict_potential: f64,
        coverage_diversity: f64,
        novelty: f64,
    ) -> Self {
        let mut s = ScoreBreakdown { ambiguity, boundary_proximity, conflict_potential, coverage_diversity, novelty, total: 0.0 };
        s.total = weighted_total(&s);
        s
    }
}

pub fn weighted_total(s: &ScoreBreakdown) -> f64 {
    WEIGHTS.ambiguity * s.ambiguity
        + WEIGHTS.boundary_proximity * s.boundary_proximity
        + WEIGHTS.conflict_potential * s.conflict_potential
        + WEIGHTS.coverage_diversity * s.coverage_diversity
        + WEIGHTS.novelty * s.novelty
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateCase {
    pub case_id: String,
    pub source_policy: String,
    pub assignments: BTreeMap<String, FactorValue>,
    /// Varied factor names in schema factor order.
    pub varied_factors: Vec<String>,
    pub expected_outcome: ExpectedOutcome,
    pub score_breakdown: ScoreBreakdown,
    pub diagnostics: String,
}

impl CandidateCase {
    /// `(factor, value)` pairs that differ from the baseline.
    pub fn varied_values(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.varied_factors
            .iter()
            .filter_map(|f| self.assignments.get(f).map(|v| (f.as_str(), v.value.as_str())))
    }
}

/// Worst-boundary-wins: any ambiguous value makes the case Ambiguous,
/// otherwise any outside value makes it Deny, otherwise Allow. An empty
/// input is the vacuous all-baseline case and yields Allow.
pub fn expected_outcome<I>(boundaries: I) -> ExpectedOutcome
where
    I: IntoIterator<Item = BoundaryType>,
{
    let mut deny = false;
    for b in boundaries {
        match b {
            BoundaryType::Ambiguous => return ExpectedOutcome::Ambiguous,
            BoundaryType::JustOutside | BoundaryType::ClearlyOutside => deny = true,
            BoundaryType::Baseline | BoundaryType::JustInside => {}
        }
    }
    if deny {
        ExpectedOutcome::Deny
    } else {
        ExpectedOutcome::Allow
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaViolation {
    UnknownPolicy(String),
    DuplicateSchema(String),
    FactorCount { policy: String, count: usize },
    DuplicateFactor { policy: String, factor: String },
    AlternativeCount { policy: String, factor: String, count: usize },
    MissingJustOutside { policy: String, factor: String },
    BaselineMismatch { policy: String, factor: String, value: String },
    DuplicateValue { policy: String, factor: String, value: String },
    Ungrounded { policy: String, factor: String, value: String },
    UnknownConflictPolicy { policy: String, other: String },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::UnknownPolicy(p) => write!(f, "schema for unknown policy {p}"),
            SchemaViolation::DuplicateSchema(p) => write!(f, "more than one schema for {p}"),
            SchemaViolation::FactorCount { policy, count } => write!(
                f,
                "{policy}: {count} variable factors, expected {MIN_VARIABLE_FACTORS}..={MAX_VARIABLE_FACTORS}"
            ),
            SchemaViolation::DuplicateFactor { policy, factor } => write!(f, "{policy}: factor {factor} appears twice"),
            SchemaViolation::AlternativeCount { policy, factor, count } => write!(
                f,
                "{policy}.{factor}: {count} alternatives, expected {MIN_ALTERNATIVES}..={MAX_ALTERNATIVES}"
            ),
            SchemaViolation::MissingJustOutside { policy, factor } => {
                write!(f, "{policy}.{factor}: no just_outside alternative")
            }
            SchemaViolation::BaselineMismatch { policy, factor, value } => {
                write!(f, "{policy}.{factor}: value {value} has inconsistent isBaseline/boundaryType")
            }
            SchemaViolation::DuplicateValue { policy, factor, value } => {
                write!(f, "{policy}.{factor}: value {value} listed twice")
            }
            SchemaViolation::Ungrounded { policy, factor, value } => {
                write!(f, "{policy}.{factor}: {value} is not a subject or resource of this session")
            }
            SchemaViolation::UnknownConflictPolicy { policy, other } => {
                write!(f, "{policy}: conflictsWithPolicies names unknown policy {other}")
            }
        }
    }
}

fn significant_words(s: &str) -> impl Iterator<Item = String> {
    words(s).into_iter().filter(|w| w.chars().count() >= 3)
}

/// Names subject and resource alternatives may draw from: policy subjects
/// and resources plus entity labels.
pub fn grounding_vocabulary(policies: &[Policy], entities: &[Entity]) -> BTreeSet<String> {
    policies
        .iter()
        .flat_map(|p| [p.subject.as_str(), p.resource.as_str()])
        .chain(entities.iter().map(|e| e.label.as_str()))
        .flat_map(significant_words)
        .collect()
}

fn is_grounded(value: &FactorValue, vocabulary: &BTreeSet<String>) -> bool {
    significant_words(&value.value).chain(significant_words(&value.label)).any(|w| vocabulary.contains(&w))
}

/// Checks decompositions against the session they were produced for.
/// Empty report means valid.
pub fn validate_schemas(schemas: &[PolicySchema], policies: &[Policy], entities: &[Entity]) -> Vec<SchemaViolation> {
    let known: BTreeSet<&str> = policies.iter().map(|p| p.policy_number.as_str()).collect();
    let vocabulary = grounding_vocabulary(policies, entities);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for s in schemas {
        let policy = s.policy_number.clone();
        if !known.contains(policy.as_str()) {
            out.push(SchemaViolation::UnknownPolicy(policy.clone()));
        }
        if !seen.insert(s.policy_number.as_str()) {
            out.push(SchemaViolation::DuplicateSchema(policy.clone()));
        }
        let n = s.variable_factors.len();
        if !(MIN_VARIABLE_FACTORS..=MAX_VARIABLE_FACTORS).contains(&n) {
            out.push(SchemaViolation::FactorCount { policy: policy.clone(), count: n });
        }
        let mut names = BTreeSet::new();
        for f in &s.variable_factors {
            let factor = f.name.clone();
            if !names.insert(f.name.as_str()) {
                out.push(SchemaViolation::DuplicateFactor { policy: policy.clone(), factor: factor.clone() });
            }
            let count = f.alternatives.len();
            if !(MIN_ALTERNATIVES..=MAX_ALTERNATIVES).contains(&count) {
                out.push(SchemaViolation::AlternativeCount { policy: policy.clone(), factor: factor.clone(), count });
            }
            if !f.alternatives.iter().any(|a| a.boundary_type == BoundaryType::JustOutside) {
                out.push(SchemaViolation::MissingJustOutside { policy: policy.clone(), factor: factor.clone() });
            }
            let pv = &f.policy_value;
            if !pv.is_baseline || pv.boundary_type != BoundaryType::Baseline {
                out.push(SchemaViolation::BaselineMismatch {
                    policy: policy.clone(),
                    factor: factor.clone(),
                    value: pv.value.clone(),
                });
            }
            let mut values = BTreeSet::new();
            values.insert(pv.value.as_str());
            for a in &f.alternatives {
                if a.is_baseline || a.boundary_type == BoundaryType::Baseline {
                    out.push(SchemaViolation::BaselineMismatch {
                        policy: policy.clone(),
                        factor: factor.clone(),
                        value: a.value.clone(),
                    });
                }
                if !values.insert(a.value.as_str()) {
                    out.push(SchemaViolation::DuplicateValue {
                        policy: policy.clone(),
                        factor: factor.clone(),
                        value: a.value.clone(),
                    });
                }
                let grounded_dimension = matches!(f.dimension, SemanticRole::Subject | SemanticRole::Resource);
                if grounded_dimension && !is_grounded(a, &vocabulary) {
                    out.push(SchemaViolation::Ungrounded {
                        policy: policy.clone(),
                        factor: factor.clone(),
                        value: a.value.clone(),
                    });
                }
            }
        }
        for other in &s.policy_analysis.conflicts_with_policies {
            if !known.contains(other.as_str()) {
                out.push(SchemaViolation::UnknownConflictPolicy { policy: policy.clone(), other: other.clone() });
            }
        }
    }
    out
}

fn case_id(policy: &str, varied: &[(&str, &str)]) -> String {
    if varied.is_empty() {
        return format!("{policy}:baseline");
    }
    let mut parts: Vec<String> = varied.iter().map(|(f, v)| format!("{f}={v}")).collect();
    parts.sort();
    format!("{policy}:{}", parts.join("+"))
}

fn make_case(schema: &PolicySchema, varied: &[(usize, usize)]) -> CandidateCase {
    let mut assignments = BTreeMap::new();
    for (i, f) in schema.variable_factors.iter().enumerate() {
        let value = match varied.iter().find(|(fi, _)| *fi == i) {
            Some((_, ai)) => f.alternatives[*ai].clone(),
            None => f.policy_value.clone(),
        };
        assignments.insert(f.name.clone(), value);
    }
    let varied_factors: Vec<String> = varied.iter().map(|(fi, _)| schema.variable_factors[*fi].name.clone()).collect();
    let pairs: Vec<(&str, &str)> = varied
        .iter()
        .map(|(fi, ai)| {
            let f = &schema.variable_factors[*fi];
            (f.name.as_str(), f.alternatives[*ai].value.as_str())
        })
        .collect();
    let expected_outcome = expected_outcome(assignments.values().map(|v| v.boundary_type));
    let diagnostics = if varied.is_empty() {
        String::from("baseline: every factor at its policy value")
    } else {
        let parts: Vec<String> = varied
            .iter()
            .map(|(fi, ai)| {
                let f = &schema.variable_factors[*fi];
                let a = &f.alternatives[*ai];
                format!("{}={} ({})", f.name, a.value, a.boundary_type)
            })
            .collect();
        format!("varied {}; outcome {}", parts.join(", "), expected_outcome)
    };
    CandidateCase {
        case_id: case_id(&schema.policy_number, &pairs),
        source_policy: schema.policy_number.clone(),
        assignments,
        varied_factors,
        expected_outcome,
        score_breakdown: ScoreBreakdown::default(),
        diagnostics,
    }
}

/// Factor index pairs in enumeration order: hinted pairs first, then the
/// rest, each group in index order.
fn factor_pairs(schema: &PolicySchema) -> Vec<(usize, usize)> {
    let fs = &schema.variable_factors;
    let mut hinted = Vec::new();
    let mut rest = Vec::new();
    for i in 0..fs.len() {
        for j in (i + 1)..fs.len() {
            let linked = fs[i].hints().iter().any(|h| *h == fs[j].name) || fs[j].hints().iter().any(|h| *h == fs[i].name);
            if linked {
                hinted.push((i, j));
            } else {
                rest.push((i, j));
            }
        }
    }
    hinted.extend(rest);
    hinted
}

/// Baseline, single-factor and two-factor cases for one schema, capped at
/// [`CANDIDATE_CAP`] by dropping two-factor cases from the end.
pub fn enumerate_schema(schema: &PolicySchema) -> Vec<CandidateCase> {
    let mut out = alloc::vec![make_case(schema, &[])];
    for (fi, f) in schema.variable_factors.iter().enumerate() {
        for ai in 0..f.alternatives.len() {
            out.push(make_case(schema, &[(fi, ai)]));
        }
    }
    'pairs: for (fi, gi) in factor_pairs(schema) {
        for ai in 0..schema.variable_factors[fi].alternatives.len() {
            for bi in 0..schema.variable_factors[gi].alternatives.len() {
                if out.len() >= CANDIDATE_CAP {
                    break 'pairs;
                }
                out.push(make_case(schema, &[(fi, ai), (gi, bi)]));
            }
        }
    }
    out.truncate(CANDIDATE_CAP);
    out
}

/// Candidates for every schema, concatenated in schema order.
pub fn enumerate_candidates(schemas: &[PolicySchema]) -> Vec<CandidateCase> {
    schemas.iter().flat_map(enumerate_schema).collect()
}

/// Closed-form candidate count for one schema.
pub fn candidate_count(schema: &PolicySchema) -> usize {
    let sizes: Vec<usize> = schema.variable_factors.iter().map(|f| f.alternatives.len()).collect();
    let singles: usize = sizes.iter().sum();
    let mut pairs = 0;
    for i in 0..sizes.len() {
        for j in (i + 1)..sizes.len() {
            pairs += sizes[i] * sizes[j];
        }
    }
    (1 + singles + pairs).min(CANDIDATE_CAP)
}

fn primary_dimension(c: &CandidateCase, schema: Option<&PolicySchema>) -> Option<SemanticRole> {
    let first = c.varied_factors.first()?;
    schema.and_then(|s| s.factor(first)).map(|f| f.dimension)
}

fn term_words(analysis: &PolicyAnalysis) -> BTreeSet<String> {
    analysis
        .identified_ambiguities
        .iter()
        .chain(&analysis.under_specified_conditions)
        .flat_map(|s| significant_words(s))
        .collect()
}

/// Scores one candidate against the cases selected so far.
pub fn score_candidate(c: &CandidateCase, schemas: &[PolicySchema], selected: &[CandidateCase]) -> ScoreBreakdown {
    let schema = schemas.iter().find(|s| s.policy_number == c.source_policy);

    let ambiguity = if c.expected_outcome == ExpectedOutcome::Ambiguous {
        1.0
    } else {
        let terms = schema.map(|s| term_words(&s.policy_analysis)).unwrap_or_default();
        let hit = c.varied_factors.iter().flat_map(|f| significant_words(f)).any(|w| terms.contains(&w));
        if hit {
            0.5
        } else {
            0.0
        }
    };

    let boundary_proximity = c
        .varied_factors
        .iter()
        .filter_map(|f| c.assignments.get(f))
        .map(|v| v.boundary_type)
        .filter(|b| *b != BoundaryType::Baseline)
        .map(BoundaryType::proximity)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
        .unwrap_or(BoundaryType::Baseline.proximity());

    let conflict_potential = match schema {
        Some(s) if !s.policy_analysis.conflicts_with_policies.is_empty() => {
            let touches_entities = c.varied_factors.iter().filter_map(|f| s.factor(f)).any(|f| {
                matches!(f.dimension, SemanticRole::Subject | SemanticRole::Resource)
            });
            if touches_entities {
                1.0
            } else {
                0.5
            }
        }
        _ => 0.0,
    };

    let coverage_diversity = {
        let mine = primary_dimension(c, schema);
        let same_policy = selected.iter().filter(|s| s.source_policy == c.source_policy).count();
        let same_dimension = selected
            .iter()
            .filter(|s| {
                let their_schema = schemas.iter().find(|x| x.policy_number == s.source_policy);
                primary_dimension(s, their_schema) == mine
            })
            .count();
        let denom = 2.0 * (selected.len().max(1) as f64);
        (1.0 - (same_policy + same_dimension) as f64 / denom).clamp(0.0, 1.0)
    };

    let novelty = {
        let mine: Vec<(&str, &str)> = c.varied_values().collect();
        if mine.is_empty() {
            0.0
        } else {
            let seen: BTreeSet<(&str, &str)> = selected.iter().flat_map(|s| s.varied_values()).collect();
            let fresh = mine.iter().filter(|v| !seen.contains(v)).count();
            fresh as f64 / mine.len() as f64
        }
    };

    ScoreBreakdown::from_components(ambiguity, boundary_proximity, conflict_potential, coverage_diversity, novelty)
}

fn better(a: &CandidateCase, b: &CandidateCase) -> bool {
    match a.score_breakdown.total.partial_cmp(&b.score_breakdown.total) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.case_id < b.case_id,
    }
}

/// Greedy diverse selection. Each round rescores every remaining candidate
/// against the current selection and takes the best total; ties go to the
/// lexicographically smaller caseId. Returned cases carry the breakdown
/// they were selected with.
pub fn select_greedy(candidates: &[CandidateCase], schemas: &[PolicySchema], k: usize) -> Vec<CandidateCase> {
    let mut remaining: Vec<CandidateCase> = candidates.to_vec();
    let mut selected: Vec<CandidateCase> = Vec::new();
    while selected.len() < k && !remaining.is_empty() {
        for c in remaining.iter_mut() {
            c.score_breakdown = score_candidate(c, schemas, &selected);
        }
        let mut best = 0;
        for i in 1..remaining.len() {
            if better(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let mut pick = remaining.remove(best);
        pick.diagnostics = format!("{}; selected at rank {}", pick.diagnostics, selected.len() + 1);
        selected.push(pick);
    }
    selected
}

/// Audit record of one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionDiagnostics {
    pub k: usize,
    /// Every candidate with its score against an empty selection.
    pub candidates: Vec<CandidateCase>,
    pub selection_order: Vec<String>,
    pub selected: Vec<CandidateCase>,
}

/// Enumerates, scores and selects in one step.
pub fn run_selection(schemas: &[PolicySchema], k: usize) -> SelectionDiagnostics {
    let mut candidates = enumerate_candidates(schemas);
    for c in candidates.iter_mut() {
        c.score_breakdown = score_candidate(c, schemas, &[]);
    }
    let selected = select_greedy(&candidates, schemas, k);
    SelectionDiagnostics {
        k,
        selection_order: selected.iter().map(|c| c.case_id.clone()).collect(),
        candidates,
        selected,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RealizationViolation {
    CountMismatch { expected: usize, found: usize },
    NotVignette(String),
    OutcomeDrift { case_id: String, expected: ExpectedOutcome, found: Option<ExpectedOutcome> },
    PolicyMismatch { case_id: String, expected: String },
    RationaleKind(String),
}

impl fmt::Display for RealizationViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RealizationViolation::CountMismatch { expected, found } => {
                write!(f, "expected {expected} vignettes, got {found}")
            }
            RealizationViolation::NotVignette(id) => write!(f, "{id} is not typed vignette"),
            RealizationViolation::OutcomeDrift { case_id, expected, found } => match found {
                Some(o) => write!(f, "{case_id}: expectedOutcome must be {expected}, got {o}"),
                None => write!(f, "{case_id}: expectedOutcome missing, must be {expected}"),
            },
            RealizationViolation::PolicyMismatch { case_id, expected } => {
                write!(f, "{case_id}: relevantPolicies must be [\"{expected}\"]")
            }
            RealizationViolation::RationaleKind(id) => write!(f, "{id}: rationale must end in \"What this tests\""),
        }
    }
}

/// Checks realized stories against the cases they translate, position by
/// position.
pub fn validate_realization(selected: &[CandidateCase], vignettes: &[InsightCard]) -> Vec<RealizationViolation> {
    let mut out = Vec::new();
    if selected.len() != vignettes.len() {
        out.push(RealizationViolation::CountMismatch { expected: selected.len(), found: vignettes.len() });
        return out;
    }
    for (c, v) in selected.iter().zip(vignettes) {
        if v.kind != IssueType::Vignette {
            out.push(RealizationViolation::NotVignette(v.id.clone()));
        }
        if v.expected_outcome != Some(c.expected_outcome) {
            out.push(RealizationViolation::OutcomeDrift {
                case_id: c.case_id.clone(),
                expected: c.expected_outcome,
                found: v.expected_outcome,
            });
        }
        if v.relevant_policies.as_deref() != Some(core::slice::from_ref(&c.source_policy)) {
            out.push(RealizationViolation::PolicyMismatch { case_id: c.case_id.clone(), expected: c.source_policy.clone() });
        }
        if v.rationale.kind != ConsequenceKind::WhatThisTests {
            out.push(RealizationViolation::RationaleKind(v.id.clone()));
        }
    }
    out
}

/// Structured case data sent to the realization call.
pub fn realization_payload(selected: &[CandidateCase], schemas: &[PolicySchema]) -> serde_json::Value {
    let cases: Vec<serde_json::Value> = selected
        .iter()
        .map(|c| {
            let schema = schemas.iter().find(|s| s.policy_number == c.source_policy);
            let assignments: serde_json::Map<String, serde_json::Value> = c
                .assignments
                .iter()
                .map(|(name, v)| {
                    let dimension = schema.and_then(|s| s.factor(name)).map(|f| f.dimension.name()).unwrap_or("");
                    (
                        name.clone(),
                        serde_json::json!({
                            "dimension": dimension,
                            "value": v.value,
                            "label": v.label,
                            "boundaryType": v.boundary_type,
                        }),
                    )
                })
                .collect();
            serde_json::json!({
                "caseId": c.case_id,
                "sourcePolicy": c.source_policy,
                "policyExplanation": schema.map(|s| s.explanation.as_str()).unwrap_or(""),
                "fixedFactors": schema.map(|s| s.fixed_factors.clone()).unwrap_or_default(),
                "assignments": assignments,
                "variedFactors": c.varied_factors,
                "expectedOutcome": c.expected_outcome,
                "diagnostics": c.diagnostics,
            })
        })
        .collect();
    serde_json::json!({ "candidates": cases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use BoundaryType::*;

    fn fv(value: &str, b: BoundaryType) -> FactorValue {
        FactorValue { value: value.into(), label: value.into(), is_baseline: b == Baseline, boundary_type: b }
    }

    fn factor(name: &str, dim: SemanticRole, alts: &[(&str, BoundaryType)]) -> VariableFactor {
        VariableFactor {
            name: name.into(),
            dimension: dim,
            policy_value: fv(&format!("{name}_base"), Baseline),
            alternatives: alts.iter().map(|(v, b)| fv(v, *b)).collect(),
            rationale: "r".into(),
            interaction_hints: None,
        }
    }

    fn schema(policy: &str, factors: Vec<VariableFactor>) -> PolicySchema {
        PolicySchema {
            policy_number: policy.into(),
            explanation: "e".into(),
            fixed_factors: BTreeMap::new(),
            variable_factors: factors,
            policy_analysis: PolicyAnalysis::default(),
        }
    }

    #[test]
    fn worst_boundary_wins() {
        assert_eq!(expected_outcome([Ambiguous, ClearlyOutside]), ExpectedOutcome::Ambiguous);
        assert_eq!(expected_outcome([JustInside, Baseline]), ExpectedOutcome::Allow);
        assert_eq!(expected_outcome([Baseline, Baseline]), ExpectedOutcome::Allow);
        assert_eq!(expected_outcome([JustOutside, JustInside]), ExpectedOutcome::Deny);
    }

    #[test]
    fn weights_sum_to_one() {
        let s = ScoreBreakdown::from_components(1.0, 1.0, 1.0, 1.0, 1.0);
        assert!((s.total - 1.0).abs() < 1e-12);
        let s = ScoreBreakdown::from_components(0.5, 1.0, 0.0, 0.5, 1.0);
        assert!((s.total - 0.575).abs() < 1e-12);
    }

    #[test]
    fn enumeration_with_hints_first() {
        let mut a = factor("a", SemanticRole::Subject, &[("a1", JustOutside), ("a2", Ambiguous)]);
        let b = factor("b", SemanticRole::Context, &[("b1", JustOutside), ("b2", JustInside)]);
        let c = factor("c", SemanticRole::Action, &[("c1", JustOutside), ("c2", ClearlyOutside)]);
        a.interaction_hints = Some(vec!["c".into()]);
        let s = schema("policy1", vec![a, b, c]);
        let cases = enumerate_schema(&s);
        assert_eq!(cases.len(), 1 + 6 + 12);
        assert_eq!(cases.len(), candidate_count(&s));
        assert_eq!(cases[0].case_id, "policy1:baseline");
        assert_eq!(cases[7].case_id, "policy1:a=a1+c=c1");
        let ids: BTreeSet<_> = cases.iter().map(|c| c.case_id.clone()).collect();
        assert_eq!(ids.len(), cases.len());
    }

    #[test]
    fn cap_truncates_pairs() {
        let alts = [("x1", JustOutside), ("x2", JustInside), ("x3", ClearlyOutside), ("x4", Ambiguous)];
        let fs = (0..5).map(|i| factor(&format!("f{i}"), SemanticRole::Context, &alts)).collect();
        let s = schema("policy1", fs);
        let cases = enumerate_schema(&s);
        assert_eq!(cases.len(), CANDIDATE_CAP);
        assert_eq!(candidate_count(&s), CANDIDATE_CAP);
        assert_eq!(cases.iter().filter(|c| c.varied_factors.len() == 1).count(), 20);
    }

    #[test]
    fn baseline_scores_low_proximity_and_zero_novelty() {
        let s = schema("policy1", vec![factor("a", SemanticRole::Context, &[("a1", JustOutside), ("a2", JustInside)])]);
        let cases = enumerate_schema(&s);
        let b = score_candidate(&cases[0], core::slice::from_ref(&s), &[]);
        assert_eq!(b.boundary_proximity, 0.1);
        assert_eq!(b.novelty, 0.0);
        assert_eq!(b.coverage_diversity, 1.0);
    }

    #[test]
    fn greedy_avoids_repeating_values() {
        let s1 = schema("policy1", vec![factor("a", SemanticRole::Context, &[("late", JustOutside), ("early", JustInside)])]);
        let s2 = schema("policy2", vec![factor("a", SemanticRole::Context, &[("late", JustOutside), ("early", JustInside)])]);
        let schemas = [s1, s2];
        let cands = enumerate_candidates(&schemas);
        let picked = select_greedy(&cands, &schemas, 2);
        assert_eq!(picked[0].case_id, "policy1:a=late");
        assert_eq!(picked[1].case_id, "policy2:a=early");
        let again = select_greedy(&cands, &schemas, 2);
        assert_eq!(picked, again);
    }

    #[test]
    fn ungrounded_subject_flagged() {
        let policies = [crate::policy::policy("policy1", "Maintenance Staff", "unlock", "Front Door", "None", "d", "e", &[])];
        let s = schema(
            "policy1",
            vec![
                factor("role", SemanticRole::Subject, &[("random_stranger", JustOutside), ("maintenance_sub", Ambiguous)]),
                factor("time", SemanticRole::Context, &[("night", JustOutside), ("dusk", JustInside)]),
            ],
        );
        let report = validate_schemas(&[s], &policies, &[]);
        assert_eq!(
            report,
            vec![SchemaViolation::Ungrounded { policy: "policy1".into(), factor: "role".into(), value: "random_stranger".into() }]
        );
    }

    #[test]
    fn one_alternative_flagged() {
        let s = schema(
            "policy1",
            vec![factor("a", SemanticRole::Context, &[("x", JustOutside)]), factor("b", SemanticRole::Context, &[("y", JustOutside), ("z", JustInside)])],
        );
        let policies = [crate::policy::policy("policy1", "A", "b", "C", "None", "d", "e", &[])];
        let report = validate_schemas(&[s], &policies, &[]);
        assert_eq!(report, vec![SchemaViolation::AlternativeCount { policy: "policy1".into(), factor: "a".into(), count: 1 }]);
    }
}

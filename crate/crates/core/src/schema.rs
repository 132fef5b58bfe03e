//! Strict parsing of model responses.
//!
//! Every response is checked field by field: required keys present, no
//! unknown keys, enums within their closed sets. Any violation fails the
//! whole parse with the JSON path of the first problem.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde_json::{Map, Value};

use crate::analysis::{AnalyzeResponse, NextAction};
use crate::clarify::{ClassificationResult, DeepResolution, Intent};
use crate::marks::{EnrichedMark, IdentificationResult, MarkGroup, MarkNumber, Relationship, RelationshipType, SemanticRole};
use crate::policy::{parse_rationale, ExpectedOutcome, InsightCard, IssueType, Policy};
use crate::prompt::CallKind;
use crate::ripple::{InsightRippleResult, RippleResult};
use crate::sketch::{SketchEvent, SketchSyncResponse};
use crate::vignette::{BoundaryType, FactorValue, PolicyAnalysis, PolicySchema, VariableFactor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn new(path: &str, message: impl Into<String>) -> Self {
        SchemaError { path: path.to_string(), message: message.into() }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "$" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

impl core::error::Error for SchemaError {}

type Result<T> = core::result::Result<T, SchemaError>;

/// Removes a surrounding markdown code fence, if any.
pub fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn index(path: &str, i: usize) -> String {
    format!("{path}[{i}]")
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, path: &str) -> Result<Self> {
        match v {
            Value::Object(map) => Ok(Obj { map, path: path.to_string() }),
            other => Err(SchemaError::new(path, format!("expected object, found {}", type_name(other)))),
        }
    }

    fn only(self, keys: &[&str]) -> Result<Self> {
        if let Some(k) = self.map.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(SchemaError::new(&join(&self.path, k), "unknown field"));
        }
        Ok(self)
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn req(&self, key: &str) -> Result<&'a Value> {
        self.map.get(key).ok_or_else(|| SchemaError::new(&self.at(key), "missing field"))
    }

    fn opt(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn str(&self, key: &str) -> Result<String> {
        as_str(self.req(key)?, &self.at(key))
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>> {
        self.opt(key).map(|v| as_str(v, &self.at(key))).transpose()
    }

    fn bool(&self, key: &str) -> Result<bool> {
        as_bool(self.req(key)?, &self.at(key))
    }

    fn opt_bool(&self, key: &str) -> Result<Option<bool>> {
        self.opt(key).map(|v| as_bool(v, &self.at(key))).transpose()
    }

    fn arr(&self, key: &str) -> Result<(&'a [Value], String)> {
        let path = self.at(key);
        as_arr(self.req(key)?, &path).map(|a| (a, path))
    }

    fn opt_arr(&self, key: &str) -> Result<Option<(&'a [Value], String)>> {
        match self.opt(key) {
            None => Ok(None),
            Some(v) => {
                let path = self.at(key);
                as_arr(v, &path).map(|a| Some((a, path)))
            }
        }
    }

    fn strings(&self, key: &str) -> Result<Vec<String>> {
        let (a, path) = self.arr(key)?;
        each(a, &path, as_str)
    }

    fn opt_strings(&self, key: &str) -> Result<Option<Vec<String>>> {
        self.opt_arr(key)?.map(|(a, path)| each(a, &path, as_str)).transpose()
    }

    fn closed<T>(&self, key: &str, parse: fn(&str) -> Option<T>) -> Result<T> {
        let s = self.str(key)?;
        parse(&s).ok_or_else(|| SchemaError::new(&self.at(key), format!("unknown value \"{s}\"")))
    }

    fn mark(&self, key: &str) -> Result<MarkNumber> {
        as_mark(self.req(key)?, &self.at(key))
    }
}

fn as_str(v: &Value, path: &str) -> Result<String> {
    v.as_str()
        .map(ToOwned::to_owned)
        .ok_or_else(|| SchemaError::new(path, format!("expected string, found {}", type_name(v))))
}

fn as_bool(v: &Value, path: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| SchemaError::new(path, format!("expected boolean, found {}", type_name(v))))
}

fn as_arr<'a>(v: &'a Value, path: &str) -> Result<&'a [Value]> {
    v.as_array()
        .map(Vec::as_slice)
        .ok_or_else(|| SchemaError::new(path, format!("expected array, found {}", type_name(v))))
}

fn as_mark(v: &Value, path: &str) -> Result<MarkNumber> {
    match v.as_u64() {
        Some(n) if n >= 1 && n <= u64::from(u32::MAX) => Ok(MarkNumber(n as u32)),
        _ => Err(SchemaError::new(path, "expected positive integer mark number")),
    }
}

fn each<T>(items: &[Value], path: &str, f: impl Fn(&Value, &str) -> Result<T>) -> Result<Vec<T>> {
    items.iter().enumerate().map(|(i, v)| f(v, &index(path, i))).collect()
}

fn parse_json(raw: &str) -> Result<Value> {
    serde_json::from_str(strip_code_fence(raw)).map_err(|e| SchemaError::new("", format!("invalid JSON: {e}")))
}

const POLICY_KEYS: [&str; 8] =
    ["policyNumber", "description", "explanation", "subject", "resource", "action", "context", "elements"];

pub fn policy(v: &Value, path: &str) -> Result<Policy> {
    let o = Obj::new(v, path)?.only(&POLICY_KEYS)?;
    Ok(Policy {
        policy_number: o.str("policyNumber")?,
        description: o.str("description")?,
        explanation: o.str("explanation")?,
        subject: o.str("subject")?,
        resource: o.str("resource")?,
        action: o.str("action")?,
        context: o.str("context")?,
        elements: o.strings("elements")?,
        extra: BTreeMap::new(),
    })
}

const CARD_KEYS: [&str; 9] = [
    "id",
    "type",
    "heading",
    "description",
    "elements",
    "rationale",
    "isAccepted",
    "expectedOutcome",
    "relevantPolicies",
];

/// One insight or vignette card. `isAccepted: false` reads as absent.
pub fn insight_card(v: &Value, path: &str) -> Result<InsightCard> {
    let o = Obj::new(v, path)?.only(&CARD_KEYS)?;
    let rationale_path = o.at("rationale");
    let rationale = parse_rationale(&o.str("rationale")?)
        .map_err(|e| SchemaError::new(&rationale_path, e.to_string()))?;
    let expected_outcome = match o.opt("expectedOutcome") {
        None => None,
        Some(_) => Some(o.closed("expectedOutcome", ExpectedOutcome::parse)?),
    };
    Ok(InsightCard {
        id: o.str("id")?,
        kind: o.closed("type", IssueType::parse)?,
        heading: o.str("heading")?,
        description: o.str("description")?,
        elements: o.strings("elements")?,
        rationale,
        is_accepted: o.opt_bool("isAccepted")?.filter(|a| *a),
        expected_outcome,
        relevant_policies: o.opt_strings("relevantPolicies")?,
        extra: BTreeMap::new(),
    })
}

fn policies(o: &Obj<'_>, key: &str) -> Result<Vec<Policy>> {
    let (a, path) = o.arr(key)?;
    each(a, &path, policy)
}

fn cards(o: &Obj<'_>, key: &str) -> Result<Vec<InsightCard>> {
    let (a, path) = o.arr(key)?;
    each(a, &path, insight_card)
}

/// A null or blank directive means no sketch change.
fn directive(o: &Obj<'_>) -> Result<Option<String>> {
    Ok(o.opt_str("generate")?.filter(|g| !g.trim().is_empty()))
}

pub fn parse_identification(raw: &str) -> Result<IdentificationResult> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["enrichedMarks", "relationships", "groups"])?;
    let (a, path) = o.arr("enrichedMarks")?;
    let enriched_marks = each(a, &path, |v, p| {
        let m = Obj::new(v, p)?.only(&["markNumber", "semanticRole", "semanticDescription", "relatedMarks"])?;
        let related_marks = match m.opt_arr("relatedMarks")? {
            Some((a, path)) => each(a, &path, as_mark)?,
            None => Vec::new(),
        };
        Ok(EnrichedMark {
            mark_number: m.mark("markNumber")?,
            semantic_role: m.closed("semanticRole", SemanticRole::parse)?,
            semantic_description: m.str("semanticDescription")?,
            related_marks,
        })
    })?;
    let relationships = match o.opt_arr("relationships")? {
        Some((a, path)) => each(a, &path, |v, p| {
            let r = Obj::new(v, p)?.only(&["fromMark", "toMark", "label", "type"])?;
            Ok(Relationship {
                from_mark: r.mark("fromMark")?,
                to_mark: r.mark("toMark")?,
                label: r.opt_str("label")?,
                kind: r.closed("type", RelationshipType::parse)?,
            })
        })?,
        None => Vec::new(),
    };
    let groups = match o.opt_arr("groups")? {
        Some((a, path)) => each(a, &path, |v, p| {
            let g = Obj::new(v, p)?.only(&["representativeMark", "memberMarks", "groupLabel", "groupRole"])?;
            let (members, mpath) = g.arr("memberMarks")?;
            Ok(MarkGroup {
                representative_mark: g.mark("representativeMark")?,
                member_marks: each(members, &mpath, as_mark)?,
                group_label: g.str("groupLabel")?,
                group_role: g.closed("groupRole", SemanticRole::parse)?,
            })
        })?,
        None => Vec::new(),
    };
    Ok(IdentificationResult { enriched_marks, relationships, groups })
}

pub fn parse_analyze(raw: &str) -> Result<AnalyzeResponse> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["chat", "generate", "policies", "insights", "nextAction"])?;
    Ok(AnalyzeResponse {
        chat: o.str("chat")?,
        generate: directive(&o)?,
        policies: policies(&o, "policies")?,
        insights: cards(&o, "insights")?,
        next_action: o.closed("nextAction", NextAction::parse)?,
    })
}

pub fn parse_classification(raw: &str) -> Result<ClassificationResult> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["intent", "response", "dismissInsight"])?;
    let intent = o.closed("intent", Intent::parse_model)?;
    Ok(ClassificationResult::new(intent, o.str("response")?, o.opt_bool("dismissInsight")?.unwrap_or(false)))
}

pub fn parse_deep_resolution(raw: &str) -> Result<DeepResolution> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["chat", "policies", "insights", "generate", "proposedActions"])?;
    let generate = directive(&o)?;
    let proposed_actions = o.opt_strings("proposedActions")?.unwrap_or_default();
    if generate.is_some() == proposed_actions.is_empty() {
        let msg = if generate.is_some() { "required when generate is set" } else { "must be empty when generate is null" };
        return Err(SchemaError::new("proposedActions", msg));
    }
    Ok(DeepResolution {
        chat: o.str("chat")?,
        policies: policies(&o, "policies")?,
        insights: cards(&o, "insights")?,
        generate,
        proposed_actions,
    })
}

const EVENT_KEYS: [(&str, &[&str]); 5] = [
    ("think", &["type", "intent"]),
    ("create", &["type", "shape", "intent"]),
    ("edit", &["type", "shapeId", "text", "color", "fill", "width", "height", "intent"]),
    ("move", &["type", "shapeId", "x", "y", "intent"]),
    ("delete", &["type", "shapeId", "intent"]),
];

fn sketch_event(v: &Value, path: &str) -> Result<SketchEvent> {
    let o = Obj::new(v, path)?;
    let kind = o.str("type")?;
    let Some((_, keys)) = EVENT_KEYS.iter().find(|(k, _)| *k == kind) else {
        return Err(SchemaError::new(&o.at("type"), format!("unknown value \"{kind}\"")));
    };
    let o = o.only(keys)?;
    if kind == "create" {
        let shape = Obj::new(o.req("shape")?, &o.at("shape"))?;
        shape.str("type")?;
        shape.str("shapeId")?;
    }
    serde_json::from_value(v.clone()).map_err(|e| SchemaError::new(path, e.to_string()))
}

pub fn parse_sketch_sync(raw: &str) -> Result<SketchSyncResponse> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["long_description_of_strategy", "events"])?;
    let (a, path) = o.arr("events")?;
    Ok(SketchSyncResponse { strategy: o.str("long_description_of_strategy")?, events: each(a, &path, sketch_event)? })
}

pub fn parse_policy_ripple(raw: &str) -> Result<RippleResult> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["hasRipple", "summary", "policies"])?;
    Ok(RippleResult { has_ripple: o.bool("hasRipple")?, summary: o.str("summary")?, policies: policies(&o, "policies")? })
}

pub fn parse_insight_ripple(raw: &str) -> Result<InsightRippleResult> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["hasChanges", "summary", "insights"])?;
    Ok(InsightRippleResult { has_changes: o.bool("hasChanges")?, summary: o.str("summary")?, insights: cards(&o, "insights")? })
}

fn factor_value(v: &Value, path: &str) -> Result<FactorValue> {
    let o = Obj::new(v, path)?.only(&["value", "label", "isBaseline", "boundaryType"])?;
    Ok(FactorValue {
        value: o.str("value")?,
        label: o.str("label")?,
        is_baseline: o.bool("isBaseline")?,
        boundary_type: o.closed("boundaryType", BoundaryType::parse)?,
    })
}

fn variable_factor(v: &Value, path: &str) -> Result<VariableFactor> {
    let o = Obj::new(v, path)?
        .only(&["name", "dimension", "policyValue", "alternatives", "rationale", "interactionHints"])?;
    let (alts, apath) = o.arr("alternatives")?;
    Ok(VariableFactor {
        name: o.str("name")?,
        dimension: o.closed("dimension", SemanticRole::parse)?,
        policy_value: factor_value(o.req("policyValue")?, &o.at("policyValue"))?,
        alternatives: each(alts, &apath, factor_value)?,
        rationale: o.str("rationale")?,
        interaction_hints: o.opt_strings("interactionHints")?,
    })
}

fn policy_schema(v: &Value, path: &str) -> Result<PolicySchema> {
    let o = Obj::new(v, path)?
        .only(&["policyNumber", "explanation", "fixedFactors", "variableFactors", "policyAnalysis"])?;
    let fixed = Obj::new(o.req("fixedFactors")?, &o.at("fixedFactors"))?;
    let fixed_factors = fixed
        .map
        .iter()
        .map(|(k, v)| as_str(v, &fixed.at(k)).map(|s| (k.clone(), s)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let (factors, fpath) = o.arr("variableFactors")?;
    let a = Obj::new(o.req("policyAnalysis")?, &o.at("policyAnalysis"))?.only(&[
        "identifiedAmbiguities",
        "identifiedRisks",
        "underSpecifiedConditions",
        "conflictsWithPolicies",
    ])?;
    Ok(PolicySchema {
        policy_number: o.str("policyNumber")?,
        explanation: o.str("explanation")?,
        fixed_factors,
        variable_factors: each(factors, &fpath, variable_factor)?,
        policy_analysis: PolicyAnalysis {
            identified_ambiguities: a.strings("identifiedAmbiguities")?,
            identified_risks: a.strings("identifiedRisks")?,
            under_specified_conditions: a.strings("underSpecifiedConditions")?,
            conflicts_with_policies: a.strings("conflictsWithPolicies")?,
        },
    })
}

pub fn parse_decomposition(raw: &str) -> Result<Vec<PolicySchema>> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["schemas"])?;
    let (a, path) = o.arr("schemas")?;
    each(a, &path, policy_schema)
}

/// `{"vignettes": [...]}`, shared by realization and the single-call fallback.
pub fn parse_vignettes(raw: &str) -> Result<Vec<InsightCard>> {
    let v = parse_json(raw)?;
    let o = Obj::new(&v, "")?.only(&["vignettes"])?;
    cards(&o, "vignettes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemaId {
    Identification,
    Analyze,
    Classify,
    DeepResolution,
    SketchSync,
    PolicyRipple,
    InsightRipple,
    Decompose,
    Realize,
}

impl SchemaId {
    pub fn name(self) -> &'static str {
        match self {
            SchemaId::Identification => "identification",
            SchemaId::Analyze => "analyze",
            SchemaId::Classify => "classify",
            SchemaId::DeepResolution => "deep_resolution",
            SchemaId::SketchSync => "sketch_sync",
            SchemaId::PolicyRipple => "policy_ripple",
            SchemaId::InsightRipple => "insight_ripple",
            SchemaId::Decompose => "decompose",
            SchemaId::Realize => "realize",
        }
    }

    pub fn for_call(kind: CallKind) -> Self {
        match kind {
            CallKind::MarkIdentification | CallKind::Reidentification => SchemaId::Identification,
            CallKind::CiAnalysis => SchemaId::Analyze,
            CallKind::IntentClassification => SchemaId::Classify,
            CallKind::DeepResolution => SchemaId::DeepResolution,
            CallKind::SketchSync => SchemaId::SketchSync,
            CallKind::PolicyPropagation => SchemaId::PolicyRipple,
            CallKind::InsightPropagation => SchemaId::InsightRipple,
            CallKind::FactorDecomposition => SchemaId::Decompose,
            CallKind::StoryRealization => SchemaId::Realize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structured {
    Identification(IdentificationResult),
    Analyze(AnalyzeResponse),
    Classify(ClassificationResult),
    DeepResolution(DeepResolution),
    SketchSync(SketchSyncResponse),
    PolicyRipple(RippleResult),
    InsightRipple(InsightRippleResult),
    Decompose(Vec<PolicySchema>),
    Realize(Vec<InsightCard>),
}

pub fn parse_structured(raw: &str, schema: SchemaId) -> Result<Structured> {
    Ok(match schema {
        SchemaId::Identification => Structured::Identification(parse_identification(raw)?),
        SchemaId::Analyze => Structured::Analyze(parse_analyze(raw)?),
        SchemaId::Classify => Structured::Classify(parse_classification(raw)?),
        SchemaId::DeepResolution => Structured::DeepResolution(parse_deep_resolution(raw)?),
        SchemaId::SketchSync => Structured::SketchSync(parse_sketch_sync(raw)?),
        SchemaId::PolicyRipple => Structured::PolicyRipple(parse_policy_ripple(raw)?),
        SchemaId::InsightRipple => Structured::InsightRipple(parse_insight_ripple(raw)?),
        SchemaId::Decompose => Structured::Decompose(parse_decomposition(raw)?),
        SchemaId::Realize => Structured::Realize(parse_vignettes(raw)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fences() {
        assert_eq!(strip_code_fence("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(strip_code_fence("  {\"a\":1} "), "{\"a\":1}");
        assert_eq!(strip_code_fence("```\n[]```"), "[]");
    }

    #[test]
    fn unknown_intent_path() {
        let e = parse_classification(r#"{"intent":"ponder","response":"hm","dismissInsight":false}"#).unwrap_err();
        assert_eq!(e.path, "intent");
    }

    #[test]
    fn unknown_field_rejected() {
        let e = parse_classification(r#"{"intent":"fix","response":"ok","mood":"calm"}"#).unwrap_err();
        assert_eq!(e.path, "mood");
    }

    #[test]
    fn nested_path() {
        let raw = r#"{"hasRipple":true,"summary":"s","policies":[{"policyNumber":"policy1"}]}"#;
        let e = parse_policy_ripple(raw).unwrap_err();
        assert_eq!(e.path, "policies[0].description");
    }

    #[test]
    fn accepted_false_reads_as_absent() {
        let raw = r#"{"vignettes":[{"id":"vignette1","type":"vignette","heading":"h","description":"d","elements":[],
            "rationale":"What's happening: a | What's expected: b | What this tests: c","isAccepted":false,
            "expectedOutcome":"Deny","relevantPolicies":["policy1"]}]}"#;
        let v = parse_vignettes(raw).unwrap();
        assert_eq!(v[0].is_accepted, None);
        assert_eq!(v[0].expected_outcome, Some(ExpectedOutcome::Deny));
    }

    #[test]
    fn directive_and_actions_agree() {
        let raw = r#"{"chat":"c","policies":[],"insights":[],"generate":"add camera","proposedActions":[]}"#;
        assert_eq!(parse_deep_resolution(raw).unwrap_err().path, "proposedActions");
        let raw = r#"{"chat":"c","policies":[],"insights":[],"generate":null}"#;
        assert!(parse_deep_resolution(raw).unwrap().generate.is_none());
    }
}

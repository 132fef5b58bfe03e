//! Standalone runs of the deterministic parts, for the CLI.

use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use sbac_core::policy::PolicyField;
use sbac_core::ripple::{reference_oracle, rename_insights, PolicyEdit};
use sbac_core::schema::{parse_decomposition, parse_structured, SchemaId};
use sbac_core::vignette::{run_selection, validate_schemas, DEFAULT_K};
use sbac_core::{InsightCard, Policy};

use crate::transport::load_fixture_dir;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RippleInput {
    policy_number: String,
    field: String,
    new_value: String,
    policies: Vec<Policy>,
    #[serde(default)]
    insights: Vec<InsightCard>,
}

/// Input: `{policyNumber, field, newValue, policies, insights?}`.
pub fn ripple(input: &str) -> Result<Value, String> {
    let inp: RippleInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let field = PolicyField::parse(&inp.field).ok_or_else(|| format!("unknown field {:?}", inp.field))?;
    let target = inp
        .policies
        .iter()
        .find(|p| p.policy_number == inp.policy_number)
        .ok_or_else(|| format!("unknown policy {}", inp.policy_number))?;
    let edit = PolicyEdit {
        policy_number: inp.policy_number.clone(),
        field,
        old_value: target.field(field).to_string(),
        new_value: inp.new_value,
    };
    let kind = edit.edit_type().map_err(|e| e.to_string())?;
    let phase1 = reference_oracle(&edit, &inp.policies).map_err(|e| e.to_string())?;
    let mut out = json!({ "editType": kind, "policies": phase1 });
    if kind.is_rename() && !inp.insights.is_empty() {
        out["insights"] = serde_json::to_value(rename_insights(&edit, &inp.insights)).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct VignetteInput {
    schemas: Value,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    policies: Option<Vec<Policy>>,
}

/// Input: `{schemas, k?, policies?}`. With policies, the schemas are
/// validated against them first.
pub fn vignette(input: &str) -> Result<Value, String> {
    let inp: VignetteInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let schemas = parse_decomposition(&json!({ "schemas": inp.schemas }).to_string()).map_err(|e| e.to_string())?;
    if let Some(policies) = &inp.policies {
        let v = validate_schemas(&schemas, policies, &[]);
        if !v.is_empty() {
            return Err(v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"));
        }
    }
    let k = inp.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err("k must be at least 1".into());
    }
    serde_json::to_value(run_selection(&schemas, k)).map_err(|e| e.to_string())
}

/// Checks a fixture directory: dense indices per session and every
/// response valid for its call kind. Returns one line per problem.
pub fn verify_fixtures(dir: &Path) -> Result<(usize, Vec<String>), String> {
    let sessions = load_fixture_dir(dir).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut count = 0;
    for (session, fixtures) in &sessions {
        for (i, fx) in fixtures.iter().enumerate() {
            count += 1;
            if fx.index != i {
                problems.push(format!("{session}: expected index {i}, found {}", fx.index));
            }
            if let Err(e) = parse_structured(&fx.response, SchemaId::for_call(fx.kind)) {
                problems.push(format!("{session}/{}: {e}", fx.file_name()));
            }
        }
    }
    Ok((count, problems))
}

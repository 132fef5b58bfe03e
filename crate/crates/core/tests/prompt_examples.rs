//! The response examples embedded in the prompt assets must pass the same
//! parsers and validators as live model output.

use std::collections::BTreeSet;

use sbac_core::marks::{
    assign_mark_numbers, consolidate_entities, validate_identification, BBox, RawShape,
};
use sbac_core::policy::{policy, validate_insight, ConsequenceKind};
use sbac_core::schema::{
    parse_decomposition, parse_deep_resolution, parse_identification, parse_policy_ripple, parse_vignettes,
};
use sbac_core::vignette::{candidate_count, enumerate_candidates, validate_schemas};
use sbac_core::{ExpectedOutcome, IssueType, MarkNumber, Policy, PromptTemplate};

/// First balanced `{...}` block after `marker`.
fn json_block(src: &str, marker: &str) -> String {
    let start = src.find(marker).expect("marker") + marker.len();
    let rest = &src[start..];
    let open = rest.find('{').unwrap();
    let (mut depth, mut in_str, mut escaped) = (0i32, false, false);
    for (i, c) in rest[open..].char_indices() {
        if in_str {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => in_str = false,
                _ => escaped = false,
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return rest[open..open + i + 1].to_string();
                }
            }
            _ => {}
        }
    }
    panic!("unbalanced block after {marker}");
}

fn shapes(n: usize) -> Vec<RawShape> {
    (0..n)
        .map(|i| RawShape {
            shape_id: format!("shape:{i}"),
            kind: "freehand".into(),
            bbox: BBox::new(i as f64 * 10.0, 0.0, 5.0, 5.0),
            text: None,
        })
        .collect()
}

#[test]
fn identification_example_validates() {
    let raw = json_block(PromptTemplate::MarkIdentification.source(), "Respond with JSON:");
    let r = parse_identification(&raw).unwrap();
    let marks = assign_mark_numbers(&shapes(6)).unwrap();
    assert_eq!(validate_identification(&r, &marks), vec![]);
    let entities = consolidate_entities(&r).unwrap();
    let ids: Vec<u32> = entities.iter().map(|e| e.entity_id.0).collect();
    assert_eq!(ids, vec![1, 2, 3, 4]);
    let alice = entities.iter().find(|e| e.entity_id == MarkNumber(4)).unwrap();
    assert_eq!(alice.member_marks, vec![MarkNumber(4), MarkNumber(5), MarkNumber(6)]);
    assert_eq!(alice.context_line(), "[4] Subject: Alice");
}

#[test]
fn deep_resolution_example_parses() {
    let raw = json_block(PromptTemplate::DeepResolution.source(), "## Response Format (JSON)");
    let r = parse_deep_resolution(&raw).unwrap();
    assert_eq!(r.policies.len(), 1);
    assert_eq!(r.insights.len(), 1);
    assert_eq!(r.insights[0].kind, IssueType::Risk);
    assert_eq!(r.insights[0].rationale.kind, ConsequenceKind::WhyItMatters);
    assert!(r.generate.is_some());
    assert_eq!(r.proposed_actions.len(), 2);
}

#[test]
fn policy_propagation_example_parses() {
    let raw = json_block(PromptTemplate::PolicyPropagation.source(), "## Response Format (strict JSON)");
    let r = parse_policy_ripple(&raw).unwrap();
    assert!(r.has_ripple);
    assert_eq!(r.summary, "Renamed 'Office Manager' to 'Building Manager' across 2 policies");
}

fn maintenance_session() -> Vec<Policy> {
    vec![
        policy(
            "policy1",
            "Maintenance Staff",
            "unlock",
            "Front Door",
            "during scheduled maintenance",
            "Maintenance Staff can unlock Front Door during scheduled maintenance",
            "Arrow from the maintenance figure to the door lock",
            &["[1]", "[3]"],
        ),
        policy("policy2", "Contractor", "enter", "Lobby", "None", "Contractor can enter Lobby", "Arrow", &["[4]", "[5]"]),
        policy("policy3", "Visitor", "enter", "Lobby", "weekdays", "Visitor can enter Lobby on weekdays", "Arrow", &["[6]", "[5]"]),
    ]
}

#[test]
fn decomposition_example_is_valid_and_yields_sixteen() {
    let raw = json_block(PromptTemplate::FactorDecomposition.source(), "exactly this format:");
    let schemas = parse_decomposition(&raw).unwrap();
    assert_eq!(schemas.len(), 1);
    assert_eq!(validate_schemas(&schemas, &maintenance_session(), &[]), vec![]);
    // baseline + 3 + 3 singles + 3 * 3 pairs
    assert_eq!(candidate_count(&schemas[0]), 16);
    let cases = enumerate_candidates(&schemas);
    assert_eq!(cases.len(), 16);
    let ids: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    assert_eq!(ids.len(), 16);
    assert_eq!(cases.iter().filter(|c| c.varied_factors.is_empty()).count(), 1);
    assert_eq!(cases.iter().filter(|c| c.varied_factors.len() == 1).count(), 6);
    assert_eq!(cases.iter().filter(|c| c.varied_factors.len() == 2).count(), 9);
}

#[test]
fn decomposition_example_rejected_without_grounding() {
    let raw = json_block(PromptTemplate::FactorDecomposition.source(), "exactly this format:");
    let schemas = parse_decomposition(&raw).unwrap();
    let only_first = &maintenance_session()[..1];
    let v = validate_schemas(&schemas, only_first, &[]);
    assert_eq!(v.len(), 2, "{v:?}");
}

#[test]
fn realization_example_is_a_valid_vignette() {
    let raw = json_block(PromptTemplate::StoryRealization.source(), "exactly this format:");
    let cards = parse_vignettes(&raw).unwrap();
    assert_eq!(cards.len(), 1);
    let v = &cards[0];
    assert_eq!(v.expected_outcome, Some(ExpectedOutcome::Ambiguous));
    assert_eq!(v.rationale.kind, ConsequenceKind::WhatThisTests);
    let known: BTreeSet<MarkNumber> = (1..=3).map(MarkNumber).collect();
    let policies: BTreeSet<&str> = ["policy1"].into_iter().collect();
    assert_eq!(validate_insight(v, &known, &policies), vec![]);
}

#[test]
fn fallback_example_parses() {
    let raw = json_block(PromptTemplate::MonolithicVignettes.source(), "exactly this format:");
    let cards = parse_vignettes(&raw).unwrap();
    assert_eq!(cards[0].expected_outcome, Some(ExpectedOutcome::Deny));
}

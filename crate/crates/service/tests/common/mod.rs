#![allow(dead_code)]

use std::sync::Arc;

use serde_json::{json, Value};

use sbac::gateway::{Image, ImagePurpose};
use sbac::transport::ScriptedTransport;
use sbac::{Gateway, Service, Stage};
use sbac_core::marks::{BBox, RawShape};
use sbac_core::schema::parse_decomposition;
use sbac_core::vignette::run_selection;
use sbac_core::{CallKind, Policy};

pub const SCENARIO: &str = "Small shared office with a lobby camera and a smart thermostat";

pub fn png(tag: &str) -> Vec<u8> {
    let mut b = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    b.extend_from_slice(tag.as_bytes());
    b
}

pub fn image(purpose: ImagePurpose, tag: &str) -> Image {
    Image::png(purpose, png(tag)).unwrap()
}

fn shape(id: &str, kind: &str, x: f64, text: Option<&str>) -> RawShape {
    RawShape { shape_id: id.into(), kind: kind.into(), bbox: BBox::new(x, 10.0, 80.0, 40.0), text: text.map(Into::into) }
}

/// Alice and Bob, the lobby camera and the thermostat, and three arrows.
pub fn shapes() -> Vec<RawShape> {
    vec![
        shape("shape:alice", "person", 0.0, Some("Alice")),
        shape("shape:bob", "person", 100.0, Some("Bob")),
        shape("shape:camera", "camera", 200.0, Some("Lobby Camera")),
        shape("shape:thermo", "thermostat", 300.0, Some("Thermostat")),
        shape("shape:a1", "arrow", 40.0, Some("view")),
        shape("shape:a2", "arrow", 140.0, Some("view")),
        shape("shape:a3", "arrow", 240.0, Some("adjust")),
    ]
}

pub fn identification() -> String {
    let m = |n: u32, role: &str, d: &str, rel: &[u32]| {
        json!({ "markNumber": n, "semanticRole": role, "semanticDescription": d, "relatedMarks": rel })
    };
    json!({
        "enrichedMarks": [
            m(1, "subject", "Alice", &[5, 3]),
            m(2, "subject", "Bob", &[6, 7]),
            m(3, "resource", "Lobby Camera", &[5, 6]),
            m(4, "resource", "Thermostat", &[7]),
            m(5, "action", "view", &[1, 3]),
            m(6, "action", "view", &[2, 3]),
            m(7, "action", "adjust", &[2, 4]),
        ],
        "relationships": [
            { "fromMark": 1, "toMark": 3, "label": "view", "type": "arrow" },
            { "fromMark": 2, "toMark": 3, "label": "view", "type": "arrow" },
            { "fromMark": 2, "toMark": 4, "label": "adjust", "type": "arrow" }
        ],
        "groups": []
    })
    .to_string()
}

pub fn policy(n: u32, s: &str, a: &str, r: &str, c: &str, d: &str, els: &[&str]) -> Value {
    json!({
        "policyNumber": format!("policy{n}"),
        "description": d,
        "explanation": format!("Arrow from {s} to {r} labeled {a}"),
        "subject": s,
        "resource": r,
        "action": a,
        "context": c,
        "elements": els,
    })
}

pub fn policies() -> Value {
    json!([
        policy(1, "Alice", "view", "Lobby Camera", "None", "Alice can view the Lobby Camera feed", &["[1]", "[5]", "[3]"]),
        policy(2, "Bob", "view", "Lobby Camera", "weekdays", "Bob can view the Lobby Camera feed on weekdays", &["[2]", "[6]", "[3]"]),
        policy(3, "Bob", "adjust", "Thermostat", "None", "Bob can adjust the Thermostat", &["[2]", "[7]", "[4]"]),
    ])
}

pub fn policy_vec() -> Vec<Policy> {
    serde_json::from_value(policies()).unwrap()
}

pub fn insights() -> Value {
    json!([
        {
            "id": "risk1",
            "type": "risk",
            "heading": "Alice can watch the lobby at any hour",
            "description": "Nothing limits when Alice views the feed.",
            "elements": ["[1]", "[3]"],
            "rationale": "What's happening: Alice -> view -> Lobby Camera at any time | What's expected: Viewing tied to office hours | Why it matters: Off-hours viewing exposes visitors"
        },
        {
            "id": "ambiguity1",
            "type": "ambiguity",
            "heading": "Which days count as weekdays for Bob?",
            "description": "Public holidays that fall on a weekday are not addressed.",
            "elements": ["[2]", "[3]"],
            "rationale": "What's happening: Bob -> view -> Lobby Camera on weekdays | What's expected: A clear schedule | Why it matters: Holiday access is undefined"
        }
    ])
}

pub fn analysis() -> String {
    json!({
        "chat": "Three policies drawn from the sketch.",
        "generate": null,
        "policies": policies(),
        "insights": insights(),
        "nextAction": "continue"
    })
    .to_string()
}

pub fn classification(intent: &str, dismiss: bool) -> String {
    json!({ "intent": intent, "response": format!("Handled as {intent}."), "dismissInsight": dismiss }).to_string()
}

/// A fix for risk1 that adds office hours to policy1 and drops risk1.
pub fn deep_fix(generate: bool) -> String {
    let mut ps = policies();
    ps[0]["context"] = json!("office hours");
    ps[0]["description"] = json!("Alice can view the Lobby Camera feed during office hours");
    let ins = insights();
    json!({
        "chat": "Limited Alice to office hours.",
        "policies": ps,
        "insights": [ins[1].clone()],
        "generate": if generate { json!("Add an office hours label next to Alice's arrow") } else { Value::Null },
        "proposedActions": if generate { json!(["Add office hours label"]) } else { json!([]) },
    })
    .to_string()
}

pub fn sketch_sync() -> String {
    json!({
        "long_description_of_strategy": "Place a text label beside the arrow from Alice.",
        "events": [
            { "type": "create", "shape": { "type": "text", "shapeId": "shape:hours", "x": 40.0, "y": 60.0, "text": "office hours" }, "intent": "label the condition" }
        ]
    })
    .to_string()
}

pub fn decomposition() -> Value {
    let v = |value: &str, label: &str, b: &str| {
        json!({ "value": value, "label": label, "isBaseline": b == "baseline", "boundaryType": b })
    };
    let schema = |n: u32, explanation: &str, factors: Value| {
        json!({
            "policyNumber": format!("policy{n}"),
            "explanation": explanation,
            "fixedFactors": { "site": "Shared office" },
            "variableFactors": factors,
            "policyAnalysis": {
                "identifiedAmbiguities": [],
                "identifiedRisks": [],
                "underSpecifiedConditions": [],
                "conflictsWithPolicies": []
            }
        })
    };
    json!({
        "schemas": [
            schema(1, "Arrow from Alice to Lobby Camera labeled view", json!([
                {
                    "name": "viewer",
                    "dimension": "subject",
                    "policyValue": v("alice", "Alice", "baseline"),
                    "alternatives": [v("bob", "Bob, another employee", "just_outside"), v("alice_guest", "A guest escorted by Alice", "just_inside")],
                    "rationale": "Who else might reach the feed",
                    "interactionHints": ["when"]
                },
                {
                    "name": "when",
                    "dimension": "context",
                    "policyValue": v("any_time", "At any time", "baseline"),
                    "alternatives": [v("late_night", "Late at night", "just_outside"), v("lunch", "During lunch", "just_inside")],
                    "rationale": "Time of access"
                }
            ])),
            schema(2, "Arrow from Bob to Lobby Camera labeled view", json!([
                {
                    "name": "day",
                    "dimension": "context",
                    "policyValue": v("weekday", "A regular weekday", "baseline"),
                    "alternatives": [v("holiday", "A public holiday on a weekday", "ambiguous"), v("saturday", "Saturday", "just_outside"), v("sunday_night", "Sunday night", "clearly_outside")],
                    "rationale": "Edges of weekdays"
                },
                {
                    "name": "target",
                    "dimension": "resource",
                    "policyValue": v("lobby_camera", "Lobby Camera", "baseline"),
                    "alternatives": [v("thermostat", "The Thermostat display", "just_outside"), v("lobby_camera_archive", "Recorded Lobby Camera footage", "ambiguous")],
                    "rationale": "Live feed versus recordings"
                }
            ])),
        ]
    })
}

/// A realization that follows the contract for whatever the selection is.
pub fn realization(k: usize) -> String {
    let schemas = parse_decomposition(&decomposition().to_string()).unwrap();
    let selected = run_selection(&schemas, k).selected;
    let ps = policy_vec();
    let vignettes: Vec<Value> = selected
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = ps.iter().find(|p| p.policy_number == c.source_policy).unwrap();
            json!({
                "id": format!("vignette{}", i + 1),
                "type": "vignette",
                "heading": format!("Case {}", c.case_id),
                "description": format!("Someone tries to {} the {}.", p.action, p.resource),
                "expectedOutcome": c.expected_outcome,
                "relevantPolicies": [c.source_policy],
                "elements": p.elements,
                "rationale": format!("What's happening: {} | What's expected: {} | What this tests: {}", c.diagnostics, p.description, c.case_id)
            })
        })
        .collect();
    json!({ "vignettes": vignettes }).to_string()
}

pub fn fallback_vignettes() -> String {
    json!({
        "vignettes": [{
            "id": "vignette1",
            "type": "vignette",
            "heading": "Bob checks the camera on a Saturday",
            "description": "Bob opens the lobby feed from home on a Saturday morning.",
            "expectedOutcome": "Deny",
            "relevantPolicies": ["policy2"],
            "elements": ["[2]", "[3]"],
            "rationale": "What's happening: Bob -> view -> Lobby Camera on Saturday | What's expected: Weekdays only | What this tests: The weekday boundary"
        }]
    })
    .to_string()
}

pub struct Harness {
    pub script: Arc<ScriptedTransport>,
    pub svc: Service,
    pub id: String,
}

impl Harness {
    pub fn new() -> Self {
        let script = Arc::new(ScriptedTransport::new());
        let svc = Service::in_memory(Gateway::new(script.clone()));
        let id = svc.create_session(SCENARIO).unwrap().session_id;
        svc.put_sketch(&id, shapes()).unwrap();
        Self { script, svc, id }
    }

    pub fn kinds(&self) -> Vec<CallKind> {
        self.svc.get(&self.id).unwrap().call_log.iter().map(|r| r.kind).collect()
    }

    pub fn calls(&self) -> usize {
        self.svc.get(&self.id).unwrap().call_log.len()
    }

    pub fn enter(&self, target: Stage) -> sbac::Result<sbac_core::IdentificationResult> {
        self.svc.enter_stage(
            &self.id,
            target,
            image(ImagePurpose::Unannotated, "raw"),
            image(ImagePurpose::Numbered, "numbered"),
        )
    }

    /// Specify to analyze, then one analysis: two calls.
    pub fn analyzed(self) -> Self {
        self.script.expect(CallKind::MarkIdentification, identification());
        self.enter(Stage::Analyze).unwrap();
        self.script.expect(CallKind::CiAnalysis, analysis());
        self.svc.analyze(&self.id, image(ImagePurpose::Som, "som"), None).unwrap();
        self
    }

    /// Analyze to test with a healthy pipeline: three calls.
    pub fn tested(&self) -> Vec<sbac_core::InsightCard> {
        self.script.expect(CallKind::Reidentification, identification());
        self.script.expect(CallKind::FactorDecomposition, decomposition().to_string());
        self.script.expect(CallKind::StoryRealization, realization(6));
        self.enter(Stage::Test).unwrap();
        self.svc.get(&self.id).unwrap().vignettes.visible().cloned().collect()
    }
}

//! Sketch-sync event batches: the structured canvas edits a model proposes
//! after a policy fix, their reference checks, and how they apply to a
//! shape snapshot.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::marks::{BBox, RawShape};

/// Shapes the canvas renders as labelled icon cards.
pub const DOMAIN_SHAPES: [&str; 7] =
    ["person", "card-reader", "camera", "smart-light", "smart-speaker", "smart-thermostat", "microphone"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NewShape {
    #[serde(rename = "type")]
    pub kind: String,
    pub shape_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y2: Option<f64>,
    /// Style properties this model does not interpret (`textAlign`, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl NewShape {
    fn default_size(&self) -> (f64, f64) {
        match self.kind.as_str() {
            k if DOMAIN_SHAPES.contains(&k) => (100.0, 80.0),
            "note" => (200.0, 200.0),
            "text" => (12.0 * self.text.as_deref().map_or(0, |t| t.chars().count()) as f64, 32.0),
            _ => (100.0, 100.0),
        }
    }

    /// Bounding box on the canvas; arrows span their endpoints.
    pub fn bbox(&self) -> BBox {
        if self.kind == "arrow" {
            let (x1, y1) = (self.x1.unwrap_or(0.0), self.y1.unwrap_or(0.0));
            let (x2, y2) = (self.x2.unwrap_or(x1), self.y2.unwrap_or(y1));
            return BBox::new(x1.min(x2), y1.min(y2), (x2 - x1).abs(), (y2 - y1).abs());
        }
        let (w, h) = self.default_size();
        BBox::new(self.x.unwrap_or(0.0), self.y.unwrap_or(0.0), self.width.unwrap_or(w), self.height.unwrap_or(h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SketchEvent {
    Think {
        intent: String,
    },
    Create {
        shape: NewShape,
        intent: String,
    },
    #[serde(rename_all = "camelCase")]
    Edit {
        shape_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        color: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fill: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<f64>,
        intent: String,
    },
    #[serde(rename_all = "camelCase")]
    Move {
        shape_id: String,
        x: f64,
        y: f64,
        intent: String,
    },
    #[serde(rename_all = "camelCase")]
    Delete {
        shape_id: String,
        intent: String,
    },
}

impl SketchEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            SketchEvent::Think { .. } => "think",
            SketchEvent::Create { .. } => "create",
            SketchEvent::Edit { .. } => "edit",
            SketchEvent::Move { .. } => "move",
            SketchEvent::Delete { .. } => "delete",
        }
    }

    pub fn intent(&self) -> &str {
        match self {
            SketchEvent::Think { intent }
            | SketchEvent::Create { intent, .. }
            | SketchEvent::Edit { intent, .. }
            | SketchEvent::Move { intent, .. }
            | SketchEvent::Delete { intent, .. } => intent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SketchSyncResponse {
    #[serde(rename = "long_description_of_strategy")]
    pub strategy: String,
    pub events: Vec<SketchEvent>,
}

/// A sync batch waiting for the user to apply or decline it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SketchProposal {
    pub directive: String,
    pub proposed_actions: Vec<String>,
    pub strategy: String,
    pub events: Vec<SketchEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventViolation {
    UnknownShape { index: usize, shape_id: String },
    DuplicateShape { index: usize, shape_id: String },
    DanglingBinding { index: usize, shape_id: String },
}

impl fmt::Display for EventViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventViolation::UnknownShape { index, shape_id } => write!(f, "events[{index}]: unknown shape {shape_id}"),
            EventViolation::DuplicateShape { index, shape_id } => {
                write!(f, "events[{index}]: shape {shape_id} already exists")
            }
            EventViolation::DanglingBinding { index, shape_id } => {
                write!(f, "events[{index}]: arrow bound to unknown shape {shape_id}")
            }
        }
    }
}

/// Checks that every event refers to shapes that exist at that point of the
/// batch.
pub fn validate_events(events: &[SketchEvent], shapes: &[RawShape]) -> Vec<EventViolation> {
    let mut live: BTreeSet<String> = shapes.iter().map(|s| s.shape_id.clone()).collect();
    let mut out = Vec::new();
    for (index, e) in events.iter().enumerate() {
        match e {
            SketchEvent::Think { .. } => {}
            SketchEvent::Create { shape, .. } => {
                for bound in [&shape.from_id, &shape.to_id].into_iter().flatten() {
                    if !live.contains(bound) {
                        out.push(EventViolation::DanglingBinding { index, shape_id: bound.clone() });
                    }
                }
                if !live.insert(shape.shape_id.clone()) {
                    out.push(EventViolation::DuplicateShape { index, shape_id: shape.shape_id.clone() });
                }
            }
            SketchEvent::Edit { shape_id, .. } | SketchEvent::Move { shape_id, .. } => {
                if !live.contains(shape_id) {
                    out.push(EventViolation::UnknownShape { index, shape_id: shape_id.clone() });
                }
            }
            SketchEvent::Delete { shape_id, .. } => {
                if !live.remove(shape_id) {
                    out.push(EventViolation::UnknownShape { index, shape_id: shape_id.clone() });
                }
            }
        }
    }
    out
}

/// Applies a validated batch to a snapshot. New shapes go on top of the
/// z-order; unknown ids are skipped.
pub fn apply_events(shapes: &[RawShape], events: &[SketchEvent]) -> Vec<RawShape> {
    let mut out: Vec<RawShape> = shapes.to_vec();
    for e in events {
        match e {
            SketchEvent::Think { .. } => {}
            SketchEvent::Create { shape, .. } => {
                if out.iter().all(|s| s.shape_id != shape.shape_id) {
                    out.push(RawShape {
                        shape_id: shape.shape_id.clone(),
                        kind: shape.kind.clone(),
                        bbox: shape.bbox(),
                        text: shape.text.clone(),
                    });
                }
            }
            SketchEvent::Edit { shape_id, text, width, height, .. } => {
                if let Some(s) = out.iter_mut().find(|s| &s.shape_id == shape_id) {
                    if let Some(t) = text {
                        s.text = Some(t.clone());
                    }
                    if let Some(w) = width {
                        s.bbox.width = *w;
                    }
                    if let Some(h) = height {
                        s.bbox.height = *h;
                    }
                }
            }
            SketchEvent::Move { shape_id, x, y, .. } => {
                if let Some(s) = out.iter_mut().find(|s| &s.shape_id == shape_id) {
                    s.bbox.x = *x;
                    s.bbox.y = *y;
                }
            }
            SketchEvent::Delete { shape_id, .. } => out.retain(|s| &s.shape_id != shape_id),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn shape(id: &str, kind: &str, text: &str) -> RawShape {
        RawShape { shape_id: id.into(), kind: kind.into(), bbox: BBox::new(100.0, 200.0, 100.0, 80.0), text: Some(text.into()) }
    }

    #[test]
    fn rename_is_an_edit_in_place() {
        let shapes = vec![shape("shape:person-1", "person", "Office Manager"), shape("shape:camera-1", "camera", "Lobby Camera")];
        let events = vec![SketchEvent::Edit {
            shape_id: "shape:camera-1".into(),
            text: Some("Front Door Camera".into()),
            color: None,
            fill: None,
            width: None,
            height: None,
            intent: "Rename camera".into(),
        }];
        assert!(validate_events(&events, &shapes).is_empty());
        let after = apply_events(&shapes, &events);
        assert_eq!(after.len(), 2);
        assert_eq!(after[1].text.as_deref(), Some("Front Door Camera"));
    }

    #[test]
    fn arrow_create_binds_existing_shapes() {
        let shapes = vec![shape("a", "person", "A"), shape("b", "camera", "B")];
        let arrow = NewShape {
            kind: "arrow".into(),
            shape_id: "arrow-a-b".into(),
            from_id: Some("a".into()),
            to_id: Some("zzz".into()),
            x1: Some(200.0),
            y1: Some(240.0),
            x2: Some(500.0),
            y2: Some(240.0),
            text: Some("view feed".into()),
            ..Default::default()
        };
        let events = vec![SketchEvent::Create { shape: arrow, intent: "connect".into() }];
        assert_eq!(
            validate_events(&events, &shapes),
            vec![EventViolation::DanglingBinding { index: 0, shape_id: "zzz".into() }]
        );
        let after = apply_events(&shapes, &events);
        assert_eq!(after[2].bbox, BBox::new(200.0, 240.0, 300.0, 0.0));
    }

    #[test]
    fn delete_then_edit_is_flagged() {
        let shapes = vec![shape("a", "person", "A")];
        let events = vec![
            SketchEvent::Delete { shape_id: "a".into(), intent: "x".into() },
            SketchEvent::Move { shape_id: "a".into(), x: 1.0, y: 2.0, intent: "y".into() },
        ];
        assert_eq!(validate_events(&events, &shapes), vec![EventViolation::UnknownShape { index: 1, shape_id: "a".to_string() }]);
    }

    #[test]
    fn event_wire_format() {
        let e: SketchEvent = serde_json::from_str(
            r#"{"type":"edit","shapeId":"shape:arrow-1","text":"monitor entrance","intent":"relabel"}"#,
        )
        .unwrap();
        assert_eq!(e.kind(), "edit");
        let back = serde_json::to_value(&e).unwrap();
        assert_eq!(back["shapeId"], "shape:arrow-1");
    }
}

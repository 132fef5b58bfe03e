//! Numbered marks over raw canvas shapes, the identification model's output
//! format, and consolidation of multi-mark groups into entities.
//!
//! Marks are numbered densely from 1 in canvas z-order. The identification
//! model classifies each mark into one of the four ABAC roles, reports
//! relationships, and may group several marks into one logical entity
//! (a stick figure plus its handwritten name). The group's lowest mark is
//! its representative and becomes the entity id that every later stage uses.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::text::{mark_ref, parse_mark_ref};

/// A mark number; positive, dense from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkNumber(pub u32);

impl MarkNumber {
    /// The `[N]` reference form used in `elements` arrays.
    pub fn reference(self) -> String {
        mark_ref(self.0)
    }
}

impl fmt::Display for MarkNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        BBox { x, y, width, height }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite()) && self.width >= 0.0 && self.height >= 0.0
    }
}

/// A shape as the drawing library reports it, in canvas z-order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawShape {
    pub shape_id: String,
    pub kind: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NumberedMark {
    pub mark_number: MarkNumber,
    pub shape_id: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticRole {
    Subject,
    Action,
    Resource,
    Context,
}

impl SemanticRole {
    pub const ALL: [SemanticRole; 4] =
        [SemanticRole::Subject, SemanticRole::Action, SemanticRole::Resource, SemanticRole::Context];

    pub fn name(self) -> &'static str {
        match self {
            SemanticRole::Subject => "subject",
            SemanticRole::Action => "action",
            SemanticRole::Resource => "resource",
            SemanticRole::Context => "context",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Capitalized form used in role-prefixed labels.
    pub fn title(self) -> &'static str {
        match self {
            SemanticRole::Subject => "Subject",
            SemanticRole::Action => "Action",
            SemanticRole::Resource => "Resource",
            SemanticRole::Context => "Context",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnrichedMark {
    pub mark_number: MarkNumber,
    pub semantic_role: SemanticRole,
    pub semantic_description: String,
    #[serde(default)]
    pub related_marks: Vec<MarkNumber>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarkGroup {
    pub representative_mark: MarkNumber,
    pub member_marks: Vec<MarkNumber>,
    pub group_label: String,
    pub group_role: SemanticRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationshipType {
    Arrow,
    Containment,
    Proximity,
}

impl RelationshipType {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "arrow" => Some(RelationshipType::Arrow),
            "containment" => Some(RelationshipType::Containment),
            "proximity" => Some(RelationshipType::Proximity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Relationship {
    pub from_mark: MarkNumber,
    pub to_mark: MarkNumber,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(rename = "type")]
    pub kind: RelationshipType,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IdentificationResult {
    pub enriched_marks: Vec<EnrichedMark>,
    #[serde(default)]
    pub relationships: Vec<Relationship>,
    #[serde(default)]
    pub groups: Vec<MarkGroup>,
}

/// One semantic entity: a group, or a single ungrouped mark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Entity {
    pub entity_id: MarkNumber,
    pub role: SemanticRole,
    pub label: String,
    pub member_marks: Vec<MarkNumber>,
    pub related_entities: Vec<MarkNumber>,
}

impl Entity {
    /// `"Subject: Alice"`
    pub fn role_label(&self) -> String {
        format!("{}: {}", self.role.title(), self.label)
    }

    /// `"[3] Subject: Alice"`, the form entities take in analysis prompts.
    pub fn context_line(&self) -> String {
        format!("{} {}", self.entity_id.reference(), self.role_label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarkError {
    #[error("duplicate shape id {0}")]
    DuplicateShapeId(String),
    #[error("shape {0} has invalid geometry")]
    InvalidGeometry(String),
    #[error("invalid identification: {0}")]
    InvalidIdentification(String),
    #[error("unknown mark reference {0}")]
    UnknownMarkReference(String),
}

/// Numbers shapes 1..n in the order given (canvas z-order).
pub fn assign_mark_numbers(shapes: &[RawShape]) -> Result<Vec<NumberedMark>, MarkError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.iter().enumerate() {
        if !seen.insert(shape.shape_id.as_str()) {
            return Err(MarkError::DuplicateShapeId(shape.shape_id.clone()));
        }
        if !shape.bbox.is_valid() {
            return Err(MarkError::InvalidGeometry(shape.shape_id.clone()));
        }
        out.push(NumberedMark { mark_number: MarkNumber(i as u32 + 1), shape_id: shape.shape_id.clone(), bbox: shape.bbox });
    }
    Ok(out)
}

/// JSON mapping of mark numbers to shape metadata, sent alongside the
/// numbered image.
pub fn mark_metadata(marks: &[NumberedMark], shapes: &[RawShape]) -> Value {
    let by_id: BTreeMap<&str, &RawShape> = shapes.iter().map(|s| (s.shape_id.as_str(), s)).collect();
    let mut map = Map::new();
    for m in marks {
        let shape = by_id.get(m.shape_id.as_str());
        map.insert(
            format!("{}", m.mark_number),
            json!({
                "shapeId": m.shape_id,
                "type": shape.map(|s| s.kind.as_str()).unwrap_or(""),
                "name": shape.and_then(|s| s.text.as_deref()).unwrap_or(""),
                "x": m.bbox.x,
                "y": m.bbox.y,
                "width": m.bbox.width,
                "height": m.bbox.height,
            }),
        );
    }
    Value::Object(map)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdentificationViolation {
    UnknownMark { context: &'static str, mark: MarkNumber },
    DuplicateEnrichedMark(MarkNumber),
    EmptyGroup(MarkNumber),
    DuplicateGroupMember { group: MarkNumber, mark: MarkNumber },
    RepresentativeNotMember(MarkNumber),
    RepresentativeNotLowest { representative: MarkNumber, lowest: MarkNumber },
    OverlappingGroups(MarkNumber),
    SelfRelationship(MarkNumber),
    EmptyDescription(MarkNumber),
}

impl fmt::Display for IdentificationViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdentificationViolation::UnknownMark { context, mark } => write!(f, "unknown mark {mark} in {context}"),
            IdentificationViolation::DuplicateEnrichedMark(m) => write!(f, "mark {m} enriched more than once"),
            IdentificationViolation::EmptyGroup(m) => write!(f, "group {m} has no members"),
            IdentificationViolation::DuplicateGroupMember { group, mark } => {
                write!(f, "group {group} lists mark {mark} twice")
            }
            IdentificationViolation::RepresentativeNotMember(m) => write!(f, "representative {m} is not a member of its group"),
            IdentificationViolation::RepresentativeNotLowest { representative, lowest } => {
                write!(f, "representative not lowest: {representative} but group contains {lowest}")
            }
            IdentificationViolation::OverlappingGroups(m) => write!(f, "overlapping groups share mark {m}"),
            IdentificationViolation::SelfRelationship(m) => write!(f, "relationship from mark {m} to itself"),
            IdentificationViolation::EmptyDescription(m) => write!(f, "mark {m} has an empty semanticDescription"),
        }
    }
}

/// Checks that need no mark map: group shape, disjointness, self-loops.
fn structural_violations(r: &IdentificationResult) -> Vec<IdentificationViolation> {
    let mut out = Vec::new();
    let mut enriched = BTreeSet::new();
    for m in &r.enriched_marks {
        if !enriched.insert(m.mark_number) {
            out.push(IdentificationViolation::DuplicateEnrichedMark(m.mark_number));
        }
        if m.semantic_description.trim().is_empty() {
            out.push(IdentificationViolation::EmptyDescription(m.mark_number));
        }
    }
    let mut owner: BTreeMap<MarkNumber, MarkNumber> = BTreeMap::new();
    for g in &r.groups {
        let rep = g.representative_mark;
        let Some(&lowest) = g.member_marks.iter().min() else {
            out.push(IdentificationViolation::EmptyGroup(rep));
            continue;
        };
        let mut members = BTreeSet::new();
        for &m in &g.member_marks {
            if !members.insert(m) {
                out.push(IdentificationViolation::DuplicateGroupMember { group: rep, mark: m });
            }
        }
        if !members.contains(&rep) {
            out.push(IdentificationViolation::RepresentativeNotMember(rep));
        } else if lowest != rep {
            out.push(IdentificationViolation::RepresentativeNotLowest { representative: rep, lowest });
        }
        for m in members {
            if owner.insert(m, rep).is_some() {
                out.push(IdentificationViolation::OverlappingGroups(m));
            }
        }
    }
    for rel in &r.relationships {
        if rel.from_mark == rel.to_mark {
            out.push(IdentificationViolation::SelfRelationship(rel.from_mark));
        }
    }
    out
}

/// Validates a model identification against the numbered marks it was
/// produced for. Empty report means valid.
pub fn validate_identification(r: &IdentificationResult, marks: &[NumberedMark]) -> Vec<IdentificationViolation> {
    let known: BTreeSet<MarkNumber> = marks.iter().map(|m| m.mark_number).collect();
    let mut out = Vec::new();
    let mut check = |context: &'static str, mark: MarkNumber| {
        if !known.contains(&mark) {
            out.push(IdentificationViolation::UnknownMark { context, mark });
        }
    };
    for m in &r.enriched_marks {
        check("enrichedMarks", m.mark_number);
        for &rel in &m.related_marks {
            check("relatedMarks", rel);
        }
    }
    for rel in &r.relationships {
        check("relationships", rel.from_mark);
        check("relationships", rel.to_mark);
    }
    for g in &r.groups {
        check("groups", g.representative_mark);
        for &m in &g.member_marks {
            check("groups", m);
        }
    }
    out.extend(structural_violations(r));
    out
}

/// Collapses groups into single entities and keeps every ungrouped enriched
/// mark as its own entity. Output is sorted by entity id.
pub fn consolidate_entities(r: &IdentificationResult) -> Result<Vec<Entity>, MarkError> {
    if let Some(v) = structural_violations(r).first() {
        return Err(MarkError::InvalidIdentification(format!("{v}")));
    }

    let mut owner: BTreeMap<MarkNumber, MarkNumber> = BTreeMap::new();
    let mut entities: BTreeMap<MarkNumber, Entity> = BTreeMap::new();
    for g in &r.groups {
        let mut members = g.member_marks.clone();
        members.sort();
        for &m in &members {
            owner.insert(m, g.representative_mark);
        }
        entities.insert(
            g.representative_mark,
            Entity {
                entity_id: g.representative_mark,
                role: g.group_role,
                label: g.group_label.clone(),
                member_marks: members,
                related_entities: Vec::new(),
            },
        );
    }
    for m in &r.enriched_marks {
        if owner.contains_key(&m.mark_number) {
            continue;
        }
        owner.insert(m.mark_number, m.mark_number);
        entities.insert(
            m.mark_number,
            Entity {
                entity_id: m.mark_number,
                role: m.semantic_role,
                label: m.semantic_description.clone(),
                member_marks: alloc::vec![m.mark_number],
                related_entities: Vec::new(),
            },
        );
    }

    let mut adjacency: BTreeMap<MarkNumber, BTreeSet<MarkNumber>> = BTreeMap::new();
    let mut link = |a: MarkNumber, b: MarkNumber| {
        if let (Some(&ea), Some(&eb)) = (owner.get(&a), owner.get(&b)) {
            if ea != eb {
                adjacency.entry(ea).or_default().insert(eb);
                adjacency.entry(eb).or_default().insert(ea);
            }
        }
    };
    for m in &r.enriched_marks {
        for &rel in &m.related_marks {
            link(m.mark_number, rel);
        }
    }
    for rel in &r.relationships {
        link(rel.from_mark, rel.to_mark);
    }
    for (id, related) in adjacency {
        if let Some(e) = entities.get_mut(&id) {
            e.related_entities = related.into_iter().collect();
        }
    }
    Ok(entities.into_values().collect())
}

/// Entities resolved from a list of `[N]` references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution<'a> {
    pub entities: Vec<&'a Entity>,
    pub unknown: Vec<String>,
}

impl<'a> Resolution<'a> {
    pub fn into_result(self) -> Result<Vec<&'a Entity>, Vec<MarkError>> {
        if self.unknown.is_empty() {
            Ok(self.entities)
        } else {
            Err(self.unknown.into_iter().map(MarkError::UnknownMarkReference).collect())
        }
    }
}

/// Maps each reference to the entity containing that mark. Duplicates
/// collapse; unknown or malformed references are reported.
pub fn resolve_element_refs<'a>(refs: &[String], entities: &'a [Entity]) -> Resolution<'a> {
    let mut resolved: Vec<&Entity> = Vec::new();
    let mut unknown = Vec::new();
    for r in refs {
        let found = parse_mark_ref(r)
            .map(MarkNumber)
            .and_then(|m| entities.iter().find(|e| e.member_marks.contains(&m)));
        match found {
            Some(e) => {
                if !resolved.iter().any(|x| x.entity_id == e.entity_id) {
                    resolved.push(e);
                }
            }
            None => unknown.push(r.clone()),
        }
    }
    Resolution { entities: resolved, unknown }
}

/// Splits `elements` into references to known marks and dangling ones.
pub fn split_dangling(elements: &[String], known: &BTreeSet<MarkNumber>) -> (Vec<String>, Vec<String>) {
    elements
        .iter()
        .cloned()
        .partition(|e| parse_mark_ref(e).is_some_and(|n| known.contains(&MarkNumber(n))))
}

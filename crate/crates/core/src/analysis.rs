//! The analyze stage's state: the insight ledger and the context an
//! analysis request is built from.
//!
//! The ledger is append-only by id. Cards the model stops mentioning stay;
//! dismissed cards are never brought back; accepted cards never lose their
//! acceptance. These rules hold regardless of what a model returns.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::clarify::ClarificationTurn;
use crate::marks::{Entity, IdentificationResult, MarkNumber, Relationship};
use crate::policy::{id_ordinal, id_type, InsightCard, IssueType, Policy};
use crate::text::parse_mark_ref;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NextAction {
    Continue,
    Test,
}

impl NextAction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "continue" => Some(NextAction::Continue),
            "test" => Some(NextAction::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyzeResponse {
    pub chat: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<String>,
    pub policies: Vec<Policy>,
    pub insights: Vec<InsightCard>,
    pub next_action: NextAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifecycle {
    Active,
    Accepted,
    Dismissed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerEntry {
    pub card: InsightCard,
    pub lifecycle: Lifecycle,
    /// Why a card was dismissed, when the system rather than the user did it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Element references that no longer resolve to a mark.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dangling: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsightAction {
    Accept,
    Dismiss,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown insight {0}")]
    UnknownInsight(String),
    #[error("insight id {id} does not match type {kind}")]
    DuplicateTypePrefixMismatch { id: String, kind: IssueType },
    #[error("insight {0} was dismissed and cannot be accepted")]
    Dismissed(String),
}

/// What a merge did, by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeReport {
    pub updated: Vec<String>,
    pub appended: Vec<String>,
    pub ignored_dismissed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InsightLedger {
    entries: Vec<LedgerEntry>,
}

impl InsightLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.card.id == id)
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut LedgerEntry> {
        self.entries.iter_mut().find(|e| e.card.id == id)
    }

    /// Cards that are not dismissed, in insertion order.
    pub fn visible(&self) -> impl Iterator<Item = &InsightCard> + '_ {
        self.entries.iter().filter(|e| e.lifecycle != Lifecycle::Dismissed).map(|e| &e.card)
    }

    pub fn active_count(&self) -> usize {
        self.visible().count()
    }

    pub fn dismissed_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().filter(|e| e.lifecycle == Lifecycle::Dismissed).map(|e| e.card.id.as_str())
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.card.id.as_str()).collect()
    }

    /// Next free `<type><N>` id.
    pub fn next_id(&self, kind: IssueType) -> String {
        let max = self.entries.iter().filter_map(|e| id_ordinal(&e.card.id, kind)).max().unwrap_or(0);
        format!("{}{}", kind.name(), max + 1)
    }

    /// Merges model output into the ledger. Either every card is merged or,
    /// on a type/prefix mismatch, nothing is.
    pub fn merge_insights(&mut self, incoming: &[InsightCard]) -> Result<MergeReport, LedgerError> {
        for card in incoming {
            let mismatch = id_type(&card.id).is_some_and(|t| t != card.kind)
                || self.get(&card.id).is_some_and(|e| e.card.kind != card.kind);
            if mismatch {
                return Err(LedgerError::DuplicateTypePrefixMismatch { id: card.id.clone(), kind: card.kind });
            }
        }
        let mut report = MergeReport::default();
        for card in incoming {
            match self.get_mut(&card.id) {
                Some(entry) if entry.lifecycle == Lifecycle::Dismissed => {
                    report.ignored_dismissed.push(card.id.clone());
                }
                Some(entry) => {
                    let mut next = card.clone();
                    if entry.lifecycle == Lifecycle::Accepted || next.is_accepted() {
                        entry.lifecycle = Lifecycle::Accepted;
                        next.is_accepted = Some(true);
                    } else {
                        next.is_accepted = None;
                    }
                    entry.card = next;
                    report.updated.push(card.id.clone());
                }
                None => {
                    let mut next = card.clone();
                    let lifecycle = if next.is_accepted() { Lifecycle::Accepted } else { Lifecycle::Active };
                    if lifecycle == Lifecycle::Active {
                        next.is_accepted = None;
                    }
                    self.entries.push(LedgerEntry { card: next, lifecycle, note: None, dangling: Vec::new() });
                    report.appended.push(card.id.clone());
                }
            }
        }
        Ok(report)
    }

    pub fn set_insight_state(&mut self, id: &str, action: InsightAction) -> Result<(), LedgerError> {
        let entry = self.get_mut(id).ok_or_else(|| LedgerError::UnknownInsight(id.to_string()))?;
        match action {
            InsightAction::Accept => {
                if entry.lifecycle == Lifecycle::Dismissed {
                    return Err(LedgerError::Dismissed(id.to_string()));
                }
                entry.lifecycle = Lifecycle::Accepted;
                entry.card.is_accepted = Some(true);
            }
            InsightAction::Dismiss => entry.lifecycle = Lifecycle::Dismissed,
        }
        Ok(())
    }

    /// Dismisses with a recorded reason, e.g. a fix that resolved the card.
    pub fn dismiss_with_note(&mut self, id: &str, note: &str) -> Result<(), LedgerError> {
        self.set_insight_state(id, InsightAction::Dismiss)?;
        if let Some(e) = self.get_mut(id) {
            e.note = Some(note.to_string());
        }
        Ok(())
    }

    /// Replaces the text of visible cards in place, keeping lifecycle. Used
    /// for ripple results, which never add or remove cards.
    pub fn replace_cards(&mut self, cards: &[InsightCard]) {
        for card in cards {
            if let Some(e) = self.get_mut(&card.id) {
                if e.lifecycle != Lifecycle::Dismissed {
                    let accepted = e.card.is_accepted;
                    e.card = card.clone();
                    e.card.is_accepted = accepted;
                }
            }
        }
    }

    /// Recomputes dangling element flags against the current mark set.
    pub fn flag_dangling(&mut self, known: &BTreeSet<MarkNumber>) {
        for e in &mut self.entries {
            e.dangling = e
                .card
                .elements
                .iter()
                .filter(|r| !parse_mark_ref(r).is_some_and(|n| known.contains(&MarkNumber(n))))
                .cloned()
                .collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StageError {
    #[error("no identification available; enter the stage with a sketch first")]
    NoIdentification,
    #[error("the canvas has no identified entities")]
    EmptyCanvas,
}

/// Everything the analysis call sees besides the SoM image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisContext {
    pub scenario: String,
    pub entity_lines: Vec<String>,
    pub relationships: Vec<Relationship>,
    pub policies: Vec<Policy>,
    pub insights: Vec<InsightCard>,
    pub dismissed: Vec<String>,
    pub history: Vec<ClarificationTurn>,
}

pub fn build_analysis_context(
    scenario: &str,
    identification: Option<&IdentificationResult>,
    entities: &[Entity],
    policies: &[Policy],
    ledger: &InsightLedger,
    history: &[ClarificationTurn],
) -> Result<AnalysisContext, StageError> {
    let identification = identification.ok_or(StageError::NoIdentification)?;
    if entities.is_empty() {
        return Err(StageError::EmptyCanvas);
    }
    Ok(AnalysisContext {
        scenario: scenario.to_string(),
        entity_lines: entities.iter().map(Entity::context_line).collect(),
        relationships: identification.relationships.clone(),
        policies: policies.to_vec(),
        insights: ledger.visible().cloned().collect(),
        dismissed: ledger.dismissed_ids().map(str::to_string).collect(),
        history: history.to_vec(),
    })
}

impl AnalysisContext {
    /// The user turn that accompanies the SoM image.
    pub fn user_message(&self, instruction: &str) -> String {
        let mut out = String::new();
        out.push_str("## Canvas Element Map\n");
        for line in &self.entity_lines {
            out.push_str(line);
            out.push('\n');
        }
        if !self.relationships.is_empty() {
            out.push_str("\n## Relationships\n");
            for r in &self.relationships {
                out.push_str(&format!("{} -> {}", r.from_mark.reference(), r.to_mark.reference()));
                if let Some(label) = &r.label {
                    out.push_str(&format!(" ({label})"));
                }
                out.push('\n');
            }
        }
        out.push_str("\n## Current Policies\n");
        out.push_str(&to_json(&self.policies));
        out.push_str("\n\n## Current Insights\n");
        out.push_str(&to_json(&self.insights));
        out.push('\n');
        if !self.dismissed.is_empty() {
            out.push_str(&format!("\nDismissed by user (do not re-raise): {}\n", self.dismissed.join(", ")));
        }
        if !self.history.is_empty() {
            out.push_str("\n## Clarification History\n");
            for t in &self.history {
                out.push_str(&t.transcript_line());
                out.push('\n');
            }
        }
        if !instruction.is_empty() {
            out.push_str("\n## Request\n");
            out.push_str(instruction);
            out.push('\n');
        }
        out
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_else(|_| String::from("[]"))
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lifecycle::Active => "active",
            Lifecycle::Accepted => "accepted",
            Lifecycle::Dismissed => "dismissed",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ConsequenceKind, Rationale};
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn card(id: &str, kind: IssueType) -> InsightCard {
        InsightCard {
            id: id.into(),
            kind,
            heading: "h".into(),
            description: "d".into(),
            elements: vec!["[1]".into()],
            rationale: Rationale::new("a", "b", "c", ConsequenceKind::WhyItMatters),
            is_accepted: None,
            expected_outcome: None,
            relevant_policies: None,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn accepted_survives_merge() {
        let mut l = InsightLedger::new();
        l.merge_insights(&[card("risk1", IssueType::Risk)]).unwrap();
        l.set_insight_state("risk1", InsightAction::Accept).unwrap();
        let mut again = card("risk1", IssueType::Risk);
        again.heading = "new".into();
        l.merge_insights(&[again]).unwrap();
        let e = l.get("risk1").unwrap();
        assert_eq!(e.lifecycle, Lifecycle::Accepted);
        assert_eq!(e.card.is_accepted, Some(true));
        assert_eq!(e.card.heading, "new");
    }

    #[test]
    fn absent_cards_remain() {
        let mut l = InsightLedger::new();
        l.merge_insights(&[card("ambiguity1", IssueType::Ambiguity)]).unwrap();
        l.merge_insights(&[]).unwrap();
        assert_eq!(l.get("ambiguity1").unwrap().lifecycle, Lifecycle::Active);
    }

    #[test]
    fn new_ids_append() {
        let mut l = InsightLedger::new();
        l.merge_insights(&[card("risk1", IssueType::Risk)]).unwrap();
        let r = l.merge_insights(&[card("conflict2", IssueType::Conflict)]).unwrap();
        assert_eq!(r.appended, vec!["conflict2".to_string()]);
        assert_eq!(l.entries()[1].card.id, "conflict2");
    }

    #[test]
    fn dismissed_never_resurrects() {
        let mut l = InsightLedger::new();
        l.merge_insights(&[card("risk1", IssueType::Risk)]).unwrap();
        l.set_insight_state("risk1", InsightAction::Dismiss).unwrap();
        let r = l.merge_insights(&[card("risk1", IssueType::Risk)]).unwrap();
        assert_eq!(r.ignored_dismissed, vec!["risk1".to_string()]);
        assert_eq!(l.get("risk1").unwrap().lifecycle, Lifecycle::Dismissed);
        assert_eq!(l.visible().count(), 0);
    }

    #[test]
    fn prefix_mismatch_rejected_atomically() {
        let mut l = InsightLedger::new();
        let err = l.merge_insights(&[card("risk1", IssueType::Risk), card("risk3", IssueType::Conflict)]);
        assert!(matches!(err, Err(LedgerError::DuplicateTypePrefixMismatch { .. })));
        assert!(l.is_empty());
    }

    #[test]
    fn unknown_insight() {
        let mut l = InsightLedger::new();
        assert_eq!(l.set_insight_state("risk9", InsightAction::Accept), Err(LedgerError::UnknownInsight("risk9".into())));
    }

    #[test]
    fn next_id_skips_used() {
        let mut l = InsightLedger::new();
        l.merge_insights(&[card("vignette1", IssueType::Vignette), card("vignette4", IssueType::Vignette)]).unwrap();
        assert_eq!(l.next_id(IssueType::Vignette), "vignette5");
        assert_eq!(l.next_id(IssueType::Risk), "risk1");
    }

    #[test]
    fn context_requires_identification() {
        let l = InsightLedger::new();
        assert_eq!(build_analysis_context("s", None, &[], &[], &l, &[]), Err(StageError::NoIdentification));
        let id = IdentificationResult::default();
        assert_eq!(build_analysis_context("s", Some(&id), &[], &[], &l, &[]), Err(StageError::EmptyCanvas));
    }
}

//! The workflow steps. Each runs against a working copy of one session;
//! the service decides whether the copy is kept.

use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::json;

use sbac_core::analysis::{build_analysis_context, InsightAction, InsightLedger, NextAction};
use sbac_core::clarify::{card_context, route, ClarificationTurn, ClassificationResult, DeepMode, Intent, Route};
use sbac_core::marks::{assign_mark_numbers, consolidate_entities, mark_metadata, split_dangling, validate_identification};
use sbac_core::policy::{policy_number_set, validate_insight_set, validate_policy_set, PolicyField};
use sbac_core::prompt::{render_prompt, PromptContext};
use sbac_core::ripple::{
    apply_edit, insight_ripple_request, is_candidate, phase2_required, policy_ripple_request, reference_oracle,
    rename_collision, rename_insights, settle_insight, validate_insight_ripple, validate_policy_ripple, EditType,
    PolicyEdit, RippleResult,
};
use sbac_core::schema::{
    parse_analyze, parse_classification, parse_decomposition, parse_deep_resolution, parse_identification,
    parse_insight_ripple, parse_policy_ripple, parse_sketch_sync, parse_vignettes,
};
use sbac_core::sketch::{apply_events, validate_events, SketchProposal};
use sbac_core::vignette::{realization_payload, run_selection, validate_realization, validate_schemas};
use sbac_core::{
    CallKind, Entity, IdentificationResult, InsightCard, IssueType, MarkNumber, Policy, PromptTemplate,
};

use crate::error::{Result, ServiceError};
use crate::gateway::{ChatRequest, Gateway, Image, TransportError};
use crate::session::{Pipeline, SessionState, Shadow, Stage, TestDiagnostics};

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

fn known_marks(state: &SessionState) -> BTreeSet<MarkNumber> {
    state.mark_map.iter().map(|m| m.mark_number).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyzeView {
    pub chat: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<String>,
    pub policies: Vec<Policy>,
    pub insights: Vec<InsightCard>,
    pub next_action: NextAction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClarifyView {
    pub intent: Intent,
    pub response: String,
    pub dismissed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<String>,
    pub shadow: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketch_proposal: Option<SketchProposal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RippleView {
    pub edit_type: EditType,
    pub has_ripple: bool,
    pub summary: String,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision: Option<String>,
    pub policies: Vec<Policy>,
    pub updated_insights: Vec<String>,
}

/// One request's worth of work on a session.
pub struct Turn<'a> {
    pub gw: &'a Gateway,
    pub state: &'a mut SessionState,
}

/// Outcome of a call with one re-ask: a value, or the last rejection.
type Asked<T> = std::result::Result<T, String>;

impl Turn<'_> {
    fn call(&mut self, req: &ChatRequest) -> std::result::Result<String, TransportError> {
        let id = self.state.session_id.clone();
        self.gw.invoke(&id, &mut self.state.call_log, req)
    }

    /// Sends `req`; if `check` rejects the reply, sends it once more with
    /// the rejection attached.
    fn ask<T>(
        &mut self,
        req: &ChatRequest,
        check: impl Fn(&str, &SessionState) -> Asked<T>,
    ) -> std::result::Result<Asked<T>, TransportError> {
        let first = self.call(req)?;
        match check(&first, self.state) {
            Ok(v) => Ok(Ok(v)),
            Err(e) => {
                tracing::info!(kind = %req.kind, error = %e, "re-asking after rejected response");
                let second = self.call(&req.reask(&e))?;
                Ok(check(&second, self.state))
            }
        }
    }

    fn require_stage(&self, allowed: &[Stage]) -> Result<()> {
        if allowed.contains(&self.state.stage) {
            Ok(())
        } else {
            Err(ServiceError::WrongStage(self.state.stage))
        }
    }

    // Sketch and identification

    pub fn put_sketch(&mut self, shapes: Vec<sbac_core::marks::RawShape>) -> Result<Vec<sbac_core::marks::NumberedMark>> {
        let marks = assign_mark_numbers(&shapes)?;
        self.state.sketch_snapshot = shapes;
        self.state.mark_map = marks.clone();
        self.state.stale = self.state.identification.is_some();
        Ok(marks)
    }

    pub fn identify(&mut self, raw: Image, numbered: Image) -> Result<IdentificationResult> {
        if self.state.sketch_snapshot.is_empty() {
            return Err(ServiceError::InvalidInput("the sketch is empty".into()));
        }
        let marks = assign_mark_numbers(&self.state.sketch_snapshot)?;
        let kind =
            if self.state.identification.is_some() { CallKind::Reidentification } else { CallKind::MarkIdentification };
        let metadata = serde_json::to_string_pretty(&mark_metadata(&marks, &self.state.sketch_snapshot)).unwrap_or_default();
        let req = ChatRequest::rendered(kind, &PromptContext::new())?
            .image(raw)
            .image(numbered)
            .text(format!("## Mark Metadata\n{metadata}"));
        let checked = self.ask(&req, |raw, _| {
            let r = parse_identification(raw).map_err(|e| e.to_string())?;
            let v = validate_identification(&r, &marks);
            if !v.is_empty() {
                return Err(join(&v));
            }
            let entities = consolidate_entities(&r).map_err(|e| e.to_string())?;
            Ok((r, entities))
        })?;
        let (result, entities) = checked.map_err(ServiceError::IdentificationInvalid)?;
        self.apply_identification(marks, result.clone(), entities);
        Ok(result)
    }

    fn apply_identification(
        &mut self,
        marks: Vec<sbac_core::marks::NumberedMark>,
        result: IdentificationResult,
        entities: Vec<Entity>,
    ) {
        let known: BTreeSet<MarkNumber> = marks.iter().map(|m| m.mark_number).collect();
        self.state.mark_map = marks;
        self.state.identification = Some(result);
        self.state.entities = entities;
        self.state.stale = false;
        let mut notes = Vec::new();
        for p in &mut self.state.policies {
            let (kept, dangling) = split_dangling(&p.elements, &known);
            if !dangling.is_empty() {
                notes.push(format!("{}: removed element references {} after re-identification", p.policy_number, dangling.join(", ")));
                p.elements = kept;
            }
        }
        self.state.audit.extend(notes);
        self.state.insight_ledger.flag_dangling(&known);
        self.state.vignettes.flag_dangling(&known);
    }

    pub fn enter_stage(&mut self, target: Stage, raw: Image, numbered: Image) -> Result<IdentificationResult> {
        let from = self.state.stage;
        if !from.can_enter(target) {
            return Err(ServiceError::IllegalTransition { from, to: target });
        }
        let result = self.identify(raw, numbered)?;
        self.state.stage = target;
        if target == Stage::Test {
            self.run_test()?;
        }
        Ok(result)
    }

    // Analysis

    pub fn analyze(&mut self, som: Image, message: Option<&str>) -> Result<AnalyzeView> {
        self.require_stage(&[Stage::Analyze])?;
        let s = &*self.state;
        let ctx = build_analysis_context(
            &s.scenario_context,
            s.identification.as_ref(),
            &s.entities,
            &s.policies,
            &s.insight_ledger,
            &s.clarification_history,
        )?;
        let system = render_prompt(PromptTemplate::CiAnalysis, &PromptContext::new().with("SCENARIO_CONTEXT", s.scenario_context.as_str()))?;
        let req = ChatRequest::new(CallKind::CiAnalysis, system).image(som).text(ctx.user_message(message.unwrap_or("")));
        let checked = self.ask(&req, |raw, st| {
            let r = parse_analyze(raw).map_err(|e| e.to_string())?;
            let known = known_marks(st);
            let mut v = validate_policy_set(&r.policies, &known);
            v.extend(validate_insight_set(&r.insights, &known, &policy_number_set(&r.policies)));
            if !v.is_empty() {
                return Err(join(&v));
            }
            if r.insights.iter().any(|c| c.kind == IssueType::Vignette) {
                return Err("analysis must not return vignette cards".into());
            }
            st.insight_ledger.clone().merge_insights(&r.insights).map_err(|e| e.to_string())?;
            Ok(r)
        })?;
        let r = checked.map_err(ServiceError::AnalysisUnavailable)?;
        self.state.policies = r.policies;
        self.state.insight_ledger.merge_insights(&r.insights)?;
        self.state.last_next_action = Some(r.next_action);
        Ok(AnalyzeView {
            chat: r.chat,
            generate: r.generate,
            policies: self.state.policies.clone(),
            insights: self.state.insight_ledger.visible().cloned().collect(),
            next_action: r.next_action,
        })
    }

    // Cards

    fn find_card(&self, id: &str) -> Result<(bool, InsightCard)> {
        for (is_vignette, ledger) in [(false, &self.state.insight_ledger), (true, &self.state.vignettes)] {
            if let Some(e) = ledger.get(id) {
                if e.lifecycle == sbac_core::analysis::Lifecycle::Dismissed {
                    return Err(ServiceError::Ledger(sbac_core::analysis::LedgerError::Dismissed(id.to_string())));
                }
                return Ok((is_vignette, e.card.clone()));
            }
        }
        Err(ServiceError::Ledger(sbac_core::analysis::LedgerError::UnknownInsight(id.to_string())))
    }

    fn ledger_for(&mut self, id: &str) -> &mut InsightLedger {
        if self.state.vignettes.get(id).is_some() {
            &mut self.state.vignettes
        } else {
            &mut self.state.insight_ledger
        }
    }

    pub fn set_insight(&mut self, id: &str, action: InsightAction) -> Result<()> {
        self.ledger_for(id).set_insight_state(id, action)?;
        Ok(())
    }

    fn merge_by_type(&mut self, cards: &[InsightCard]) -> Result<()> {
        let (vignettes, others): (Vec<InsightCard>, Vec<InsightCard>) =
            cards.iter().cloned().partition(|c| c.kind == IssueType::Vignette);
        self.state.insight_ledger.merge_insights(&others)?;
        self.state.vignettes.merge_insights(&vignettes)?;
        Ok(())
    }

    pub fn clarify(&mut self, card_id: &str, message: &str) -> Result<ClarifyView> {
        self.require_stage(&[Stage::Analyze, Stage::Test])?;
        if message.trim().is_empty() {
            return Err(ServiceError::InvalidInput("message is empty".into()));
        }
        let (_, card) = self.find_card(card_id)?;
        let stage = self.state.stage.name();
        let ctx = card_context(&card, stage, &self.state.policies);
        let req = ChatRequest::rendered(CallKind::IntentClassification, &ctx)?.text(message);
        let raw = self.call(&req)?;
        let result = parse_classification(&raw).unwrap_or_else(|e| {
            tracing::info!(error = %e, "classification unparseable, treating as unclassified");
            ClassificationResult::unclassified()
        });
        let mut view = ClarifyView {
            intent: result.intent,
            response: result.response.clone(),
            dismissed: false,
            resolution: None,
            shadow: false,
            sketch_proposal: None,
            note: None,
        };
        let mode = match route(&result) {
            Route::Terminal { dismiss } => {
                if dismiss {
                    self.set_insight(card_id, InsightAction::Dismiss)?;
                    view.dismissed = true;
                }
                self.push_turn(card_id, message, result.intent, &result.response);
                return Ok(view);
            }
            Route::Deep(mode) => mode,
        };

        let mut ctx = ctx.with("INTENT", mode.name());
        ctx.set("CANVAS_ELEMENT_MAP", self.state.entities.iter().map(Entity::context_line).collect::<Vec<_>>().join("\n"));
        let all: Vec<InsightCard> =
            self.state.insight_ledger.visible().chain(self.state.vignettes.visible()).cloned().collect();
        ctx.set("ALL_INSIGHTS", serde_json::to_string_pretty(&all).unwrap_or_default());
        let req = ChatRequest::rendered(CallKind::DeepResolution, &ctx)?.text(message);
        let checked = self.ask(&req, |raw, st| {
            let r = parse_deep_resolution(raw).map_err(|e| e.to_string())?;
            let known = known_marks(st);
            let mut v = validate_policy_set(&r.policies, &known);
            v.extend(validate_insight_set(&r.insights, &known, &policy_number_set(&r.policies)));
            if !v.is_empty() {
                return Err(join(&v));
            }
            Ok(r)
        })?;
        let deep = checked.map_err(ServiceError::ClarifyUnavailable)?;
        self.push_turn(card_id, message, result.intent, &deep.chat);
        view.resolution = Some(deep.chat.clone());

        if mode == DeepMode::Explore {
            self.state.shadow = Some(Shadow {
                card_id: card_id.to_string(),
                chat: deep.chat,
                policies: deep.policies,
                insights: deep.insights,
            });
            view.shadow = true;
            return Ok(view);
        }

        self.state.policies = deep.policies.clone();
        self.merge_by_type(&deep.insights)?;
        if deep.omits(card_id) {
            self.ledger_for(card_id).dismiss_with_note(card_id, "resolved by fix")?;
            view.dismissed = true;
        }
        if let Some(directive) = deep.generate.clone() {
            match self.sketch_sync(&directive, &deep.proposed_actions) {
                Ok(p) => {
                    self.state.pending_sketch_proposal = Some(p.clone());
                    view.sketch_proposal = Some(p);
                }
                Err(note) => {
                    tracing::info!(%note, "sketch proposal dropped");
                    self.state.audit.push(format!("sketch proposal dropped: {note}"));
                    view.note = Some(note);
                }
            }
        }
        Ok(view)
    }

    fn push_turn(&mut self, card_id: &str, message: &str, intent: Intent, response: &str) {
        self.state.clarification_history.push(ClarificationTurn {
            card_id: card_id.to_string(),
            message: message.to_string(),
            intent,
            response: response.to_string(),
        });
    }

    /// Best effort: any failure drops the proposal with a note.
    fn sketch_sync(&mut self, directive: &str, actions: &[String]) -> std::result::Result<SketchProposal, String> {
        let req = ChatRequest::rendered(CallKind::SketchSync, &PromptContext::new())
            .map_err(|e| e.to_string())?
            .text(
                serde_json::to_string_pretty(&json!({
                    "intent": directive,
                    "proposedActions": actions,
                    "canvas": self.state.sketch_snapshot,
                }))
                .unwrap_or_default(),
            );
        let raw = self.call(&req).map_err(|e| e.to_string())?;
        let r = parse_sketch_sync(&raw).map_err(|e| e.to_string())?;
        let v = validate_events(&r.events, &self.state.sketch_snapshot);
        if !v.is_empty() {
            return Err(join(&v));
        }
        Ok(SketchProposal { directive: directive.to_string(), proposed_actions: actions.to_vec(), strategy: r.strategy, events: r.events })
    }

    pub fn resolve_sketch_proposal(&mut self, accept: bool) -> Result<Vec<sbac_core::marks::NumberedMark>> {
        let p = self.state.pending_sketch_proposal.take().ok_or(ServiceError::NothingPending("sketch proposal"))?;
        if accept {
            let shapes = apply_events(&self.state.sketch_snapshot, &p.events);
            return self.put_sketch(shapes);
        }
        Ok(self.state.mark_map.clone())
    }

    pub fn resolve_shadow(&mut self, accept: bool) -> Result<()> {
        let shadow = self.state.shadow.take().ok_or(ServiceError::NothingPending("explore proposal"))?;
        if accept {
            self.state.policies = shadow.policies;
            self.merge_by_type(&shadow.insights)?;
        }
        Ok(())
    }

    // Edits

    pub fn edit_policy(&mut self, policy_number: &str, field: &str, value: &str) -> Result<RippleView> {
        self.require_stage(&[Stage::Analyze, Stage::Test])?;
        let field = PolicyField::parse(field).ok_or_else(|| ServiceError::InvalidInput(format!("unknown field {field:?}")))?;
        let original = self.state.policies.clone();
        let target = original
            .iter()
            .find(|p| p.policy_number == policy_number)
            .ok_or_else(|| sbac_core::ripple::RippleError::UnknownPolicy(policy_number.to_string()))?;
        let edit = PolicyEdit {
            policy_number: policy_number.to_string(),
            field,
            old_value: target.field(field).to_string(),
            new_value: value.to_string(),
        };
        let kind = edit.edit_type()?;
        let edited = apply_edit(&original, &edit)?;
        let collision = if kind.is_rename() { rename_collision(&edit, &original) } else { None };
        if let Some(c) = &collision {
            self.state.audit.push(format!("rename collision: {c}"));
        }

        if kind == EditType::TextOnly {
            let r = reference_oracle(&edit, &original)?;
            self.state.policies = r.policies;
            return Ok(RippleView {
                edit_type: kind,
                has_ripple: false,
                summary: r.summary,
                degraded: false,
                collision,
                policies: self.state.policies.clone(),
                updated_insights: Vec::new(),
            });
        }

        let (phase1, mut degraded) = self.propagate_policies(&edit, kind, &original, &edited);
        self.state.policies = phase1.policies.clone();

        let mut cards: Vec<InsightCard> = self.state.insight_ledger.visible().cloned().collect();
        cards.extend(self.state.vignettes.visible().cloned());
        let mut updated = Vec::new();
        if phase2_required(&phase1, cards.len()) {
            let (settled, fell_back) = self.propagate_insights(&edit, kind, &phase1, &cards);
            degraded |= fell_back;
            for (before, after) in cards.iter().zip(&settled) {
                if before != after {
                    updated.push(after.id.clone());
                }
            }
            let (vignettes, others): (Vec<InsightCard>, Vec<InsightCard>) =
                settled.into_iter().partition(|c| c.kind == IssueType::Vignette);
            self.state.insight_ledger.replace_cards(&others);
            self.state.vignettes.replace_cards(&vignettes);
        }
        Ok(RippleView {
            edit_type: kind,
            has_ripple: phase1.has_ripple,
            summary: phase1.summary,
            degraded,
            collision,
            policies: self.state.policies.clone(),
            updated_insights: updated,
        })
    }

    /// Phase 1. The flag is set when the result is a fallback.
    fn propagate_policies(
        &mut self,
        edit: &PolicyEdit,
        kind: EditType,
        original: &[Policy],
        edited: &[Policy],
    ) -> (RippleResult, bool) {
        let oracle = kind.is_rename().then(|| reference_oracle(edit, original).ok()).flatten();
        let fallback = |why: String, audit: &mut Vec<String>| {
            audit.push(format!("policy propagation fell back: {why}"));
            match &oracle {
                Some(o) => o.clone(),
                None => RippleResult { has_ripple: false, summary: format!("Applied the edit to {} only", edit.policy_number), policies: edited.to_vec() },
            }
        };
        let req = match ChatRequest::rendered(CallKind::PolicyPropagation, &PromptContext::new()) {
            Ok(r) => r.text(policy_ripple_request(edit, kind, original)),
            Err(e) => return (fallback(e.to_string(), &mut self.state.audit), true),
        };
        let returned = match self.call(&req) {
            Ok(raw) => parse_policy_ripple(&raw).map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        };
        let returned = returned.and_then(|r| {
            let v = validate_policy_ripple(original, &r.policies);
            if v.is_empty() {
                Ok(r)
            } else {
                Err(join(&v))
            }
        });
        let r = match returned {
            Ok(r) => r,
            Err(why) => return (fallback(why, &mut self.state.audit), true),
        };
        if let Some(o) = oracle {
            if r.policies != o.policies {
                self.state.audit.push(format!("policy propagation diverged from the rename oracle; kept the oracle result ({})", o.summary));
            }
            return (o, false);
        }
        let from_model = r.policies.iter().find(|p| p.policy_number == edit.policy_number);
        let mut policies = edited.to_vec();
        if let (Some(m), Some(p)) = (from_model, policies.iter_mut().find(|p| p.policy_number == edit.policy_number)) {
            p.description = m.description.clone();
            p.explanation = m.explanation.clone();
        }
        (RippleResult { has_ripple: r.has_ripple, summary: r.summary, policies }, false)
    }

    /// Phase 2. Settled cards in input order; the flag is set on fallback.
    fn propagate_insights(
        &mut self,
        edit: &PolicyEdit,
        kind: EditType,
        phase1: &RippleResult,
        cards: &[InsightCard],
    ) -> (Vec<InsightCard>, bool) {
        let oracle = kind.is_rename().then(|| rename_insights(edit, cards));
        let fallback = |why: String, audit: &mut Vec<String>| {
            audit.push(format!("insight propagation fell back: {why}"));
            match &oracle {
                Some(o) => o.insights.clone(),
                None => cards.to_vec(),
            }
        };
        let req = match ChatRequest::rendered(CallKind::InsightPropagation, &PromptContext::new()) {
            Ok(r) => r.text(insight_ripple_request(edit, kind, &phase1.summary, &phase1.policies, cards)),
            Err(e) => return (fallback(e.to_string(), &mut self.state.audit), true),
        };
        let returned = match self.call(&req) {
            Ok(raw) => parse_insight_ripple(&raw).map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        };
        let returned = returned.and_then(|r| {
            let v = validate_insight_ripple(cards, &r.insights);
            if v.is_empty() {
                Ok(r)
            } else {
                Err(join(&v))
            }
        });
        let r = match returned {
            Ok(r) => r,
            Err(why) => return (fallback(why, &mut self.state.audit), true),
        };
        if let Some(o) = oracle {
            if r.insights != o.insights {
                self.state.audit.push("insight propagation diverged from the rename oracle; kept the oracle result".into());
            }
            return (o.insights, false);
        }
        let Some(edited) = phase1.policies.iter().find(|p| p.policy_number == edit.policy_number) else {
            return (cards.to_vec(), false);
        };
        let settled = cards
            .iter()
            .zip(&r.insights)
            .map(|(before, after)| {
                if is_candidate(before, edited) {
                    settle_insight(before, after, &phase1.summary)
                } else {
                    before.clone()
                }
            })
            .collect();
        (settled, false)
    }

    // Test

    pub fn run_test(&mut self) -> Result<Vec<InsightCard>> {
        self.require_stage(&[Stage::Test])?;
        if self.state.policies.is_empty() {
            return Err(ServiceError::TestUnavailable("there are no policies to test".into()));
        }
        let k = self.state.settings.vignette_k;
        let mut failures = Vec::new();
        let mut schemas_seen = None;
        let mut selection_seen = None;

        let entity_lines: Vec<String> = self.state.entities.iter().map(Entity::context_line).collect();
        let decomposition = ChatRequest::rendered(CallKind::FactorDecomposition, &PromptContext::new())?.text(
            serde_json::to_string_pretty(&json!({
                "scenarioContext": self.state.scenario_context,
                "canvasElements": entity_lines,
                "policies": self.state.policies,
            }))
            .unwrap_or_default(),
        );
        let schemas = match self.call(&decomposition) {
            Ok(raw) => parse_decomposition(&raw).map_err(|e| format!("decomposition: {e}")).and_then(|s| {
                let v = validate_schemas(&s, &self.state.policies, &self.state.entities);
                if v.is_empty() {
                    Ok(s)
                } else {
                    Err(format!("decomposition: {}", join(&v)))
                }
            }),
            Err(e) => Err(format!("decomposition: {e}")),
        };

        let mut realized = None;
        match schemas {
            Err(e) => failures.push(e),
            Ok(schemas) => {
                let selection = run_selection(&schemas, k);
                if selection.selected.is_empty() {
                    failures.push("selection produced no candidates".into());
                } else {
                    let payload = realization_payload(&selection.selected, &schemas);
                    let req = ChatRequest::rendered(CallKind::StoryRealization, &PromptContext::new())?.text(
                        serde_json::to_string_pretty(&json!({
                            "scenarioContext": self.state.scenario_context,
                            "candidates": payload["candidates"],
                        }))
                        .unwrap_or_default(),
                    );
                    let selected = selection.selected.clone();
                    match self.ask(&req, |raw, st| {
                        let cards = renumber(parse_vignettes(raw).map_err(|e| e.to_string())?);
                        let mut v: Vec<String> = validate_realization(&selected, &cards).iter().map(|v| v.to_string()).collect();
                        v.extend(card_violations(&cards, st));
                        if v.is_empty() {
                            Ok(cards)
                        } else {
                            Err(v.join("; "))
                        }
                    }) {
                        Ok(Ok(cards)) => realized = Some(cards),
                        Ok(Err(e)) => failures.push(format!("realization: {e}")),
                        Err(e) => failures.push(format!("realization: {e}")),
                    }
                    selection_seen = Some(selection);
                }
                schemas_seen = Some(schemas);
            }
        }

        let (cards, pipeline) = match realized {
            Some(cards) => (cards, Pipeline::Decomposition),
            None => (self.fallback_vignettes()?, Pipeline::Fallback),
        };
        self.state.vignettes = InsightLedger::new();
        self.state.vignettes.merge_insights(&cards)?;
        self.state.vignettes.flag_dangling(&known_marks(self.state));
        self.state.diagnostics = Some(TestDiagnostics { pipeline, failures, schemas: schemas_seen, selection: selection_seen });
        Ok(cards)
    }

    fn fallback_vignettes(&mut self) -> Result<Vec<InsightCard>> {
        let system = render_prompt(PromptTemplate::MonolithicVignettes, &PromptContext::new())?;
        let req = ChatRequest::new(CallKind::StoryRealization, system).text(
            serde_json::to_string_pretty(&json!({
                "scenarioContext": self.state.scenario_context,
                "policies": self.state.policies,
            }))
            .unwrap_or_default(),
        );
        let checked = self.ask(&req, |raw, st| {
            let cards = renumber(parse_vignettes(raw).map_err(|e| e.to_string())?);
            if cards.is_empty() {
                return Err("no vignettes returned".into());
            }
            let v = card_violations(&cards, st);
            if v.is_empty() {
                Ok(cards)
            } else {
                Err(v.join("; "))
            }
        })?;
        checked.map_err(ServiceError::TestUnavailable)
    }
}

fn renumber(cards: Vec<InsightCard>) -> Vec<InsightCard> {
    cards
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.id = format!("vignette{}", i + 1);
            c.is_accepted = None;
            c
        })
        .collect()
}

fn card_violations(cards: &[InsightCard], st: &SessionState) -> Vec<String> {
    let mut out: Vec<String> = cards.iter().filter(|c| c.kind != IssueType::Vignette).map(|c| format!("{} is not typed vignette", c.id)).collect();
    out.extend(validate_insight_set(cards, &known_marks(st), &policy_number_set(&st.policies)).iter().map(|v| v.to_string()));
    out
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use sbac_core::analysis::{InsightAction, InsightLedger, NextAction};
use sbac_core::clarify::ClarificationTurn;
use sbac_core::marks::{NumberedMark, RawShape};
use sbac_core::sketch::SketchProposal;
use sbac_core::vignette::{PolicySchema, SelectionDiagnostics};
use sbac_core::{CallKind, Entity, IdentificationResult, InsightCard, ModelTier, Policy};

use crate::gateway::CallRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Specify,
    Analyze,
    Test,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Specify => "specify",
            Stage::Analyze => "analyze",
            Stage::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Stage::Specify, Stage::Analyze, Stage::Test].into_iter().find(|t| t.name() == s)
    }

    pub fn can_enter(self, target: Stage) -> bool {
        matches!(
            (self, target),
            (Stage::Specify, Stage::Analyze) | (Stage::Analyze, Stage::Test) | (Stage::Test, Stage::Analyze)
        )
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Settings {
    pub vignette_k: usize,
}

/// An explore resolution held aside until the user applies or drops it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Shadow {
    pub card_id: String,
    pub chat: String,
    pub policies: Vec<Policy>,
    pub insights: Vec<InsightCard>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Decomposition,
    Fallback,
}

/// What the last test run did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestDiagnostics {
    pub pipeline: Pipeline,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schemas: Option<Vec<PolicySchema>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionDiagnostics>,
}

/// A mutating request as it was received. Images are kept by digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum Op {
    #[serde(rename_all = "camelCase")]
    Create { session_id: String, scenario_context: String, vignette_k: usize },
    PutSketch { shapes: Vec<RawShape> },
    Identify { raw: String, numbered: String },
    Stage { target: Stage, raw: String, numbered: String },
    Analyze {
        som: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    Clarify { insight_id: String, message: String },
    #[serde(rename_all = "camelCase")]
    SetInsight { insight_id: String, action: InsightAction },
    #[serde(rename_all = "camelCase")]
    EditPolicy { policy_number: String, field: String, value: String },
    Test,
    SketchProposal { accept: bool },
    Shadow { accept: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionState {
    pub session_id: String,
    pub stage: Stage,
    pub scenario_context: String,
    pub settings: Settings,
    pub sketch_snapshot: Vec<RawShape>,
    pub mark_map: Vec<NumberedMark>,
    pub identification: Option<IdentificationResult>,
    pub entities: Vec<Entity>,
    pub policies: Vec<Policy>,
    pub insight_ledger: InsightLedger,
    pub vignettes: InsightLedger,
    pub shadow: Option<Shadow>,
    pub pending_sketch_proposal: Option<SketchProposal>,
    pub clarification_history: Vec<ClarificationTurn>,
    pub call_log: Vec<CallRecord>,
    /// Sketch changed since the last identification.
    pub stale: bool,
    pub last_next_action: Option<NextAction>,
    pub diagnostics: Option<TestDiagnostics>,
    /// System-side changes the user did not ask for directly.
    pub audit: Vec<String>,
    pub journal: Vec<Op>,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, scenario_context: impl Into<String>, vignette_k: usize) -> Self {
        Self {
            session_id: session_id.into(),
            stage: Stage::Specify,
            scenario_context: scenario_context.into(),
            settings: Settings { vignette_k },
            sketch_snapshot: Vec::new(),
            mark_map: Vec::new(),
            identification: None,
            entities: Vec::new(),
            policies: Vec::new(),
            insight_ledger: InsightLedger::new(),
            vignettes: InsightLedger::new(),
            shadow: None,
            pending_sketch_proposal: None,
            clarification_history: Vec::new(),
            call_log: Vec::new(),
            stale: false,
            last_next_action: None,
            diagnostics: None,
            audit: Vec::new(),
            journal: Vec::new(),
        }
    }

    pub fn budget(&self) -> CallBudget {
        call_budget(&self.call_log)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CallBudget {
    pub count: usize,
    pub by_kind: BTreeMap<CallKind, usize>,
    pub by_tier: BTreeMap<ModelTier, usize>,
}

pub fn call_budget(log: &[CallRecord]) -> CallBudget {
    let mut by_kind = BTreeMap::new();
    let mut by_tier = BTreeMap::new();
    for r in log {
        *by_kind.entry(r.kind).or_insert(0) += 1;
        *by_tier.entry(r.tier).or_insert(0) += 1;
    }
    CallBudget { count: log.len(), by_kind, by_tier }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GuidanceCard {
    pub title: &'static str,
    pub prompt: &'static str,
}

/// Fixed prompts shown while the user sketches.
pub const GUIDANCE_DECK: [GuidanceCard; 4] = [
    GuidanceCard { title: "What", prompt: "Which resources need protecting?" },
    GuidanceCard { title: "Who", prompt: "Which people or roles are involved?" },
    GuidanceCard { title: "Actions", prompt: "What should each of them be able to do?" },
    GuidanceCard { title: "When", prompt: "Under which conditions does that apply?" },
];

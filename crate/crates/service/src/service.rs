use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use sbac_core::analysis::InsightAction;
use sbac_core::marks::{NumberedMark, RawShape};
use sbac_core::{IdentificationResult, InsightCard};

use crate::config::ServiceConfig;
use crate::engine::{AnalyzeView, ClarifyView, RippleView, Turn};
use crate::error::{Result, ServiceError};
use crate::gateway::{Gateway, Image, ImagePurpose, TransportError};
use crate::session::{CallBudget, Op, SessionState, Stage, TestDiagnostics};
use crate::store::{MemoryStore, Store};
use crate::transport::{fixtures_from_log, Fixture, ReplayTransport};

pub const ARCHIVE_VERSION: u32 = 1;

/// Everything needed to rebuild a session offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Archive {
    pub version: u32,
    pub state: SessionState,
    pub fixtures: Vec<Fixture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<TestDiagnostics>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("journal does not start with session creation")]
    NoCreate,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("replayed state differs from the archived state")]
    Diverged { replayed: Box<SessionState> },
    #[error(transparent)]
    Service(#[from] ServiceError),
}

pub struct Service {
    store: Arc<dyn Store>,
    gateway: Gateway,
    config: ServiceConfig,
    locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
}

impl Service {
    pub fn new(store: Arc<dyn Store>, gateway: Gateway, config: ServiceConfig) -> Self {
        Self { store, gateway, config, locks: Mutex::new(HashMap::new()) }
    }

    pub fn in_memory(gateway: Gateway) -> Self {
        Self::new(Arc::new(MemoryStore::new()), gateway, ServiceConfig::default())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn lock(&self, id: &str) -> Arc<RwLock<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    pub fn create_session(&self, scenario_context: &str) -> Result<SessionState> {
        self.create_with_id(&uuid::Uuid::new_v4().simple().to_string(), scenario_context, self.config.vignette_k)
    }

    fn create_with_id(&self, id: &str, scenario_context: &str, vignette_k: usize) -> Result<SessionState> {
        let mut state = SessionState::new(id, scenario_context, vignette_k);
        state.journal.push(Op::Create {
            session_id: id.to_string(),
            scenario_context: scenario_context.to_string(),
            vignette_k,
        });
        self.store.save(&state)?;
        Ok(state)
    }

    pub fn get(&self, id: &str) -> Result<SessionState> {
        let lock = self.lock(id);
        let _read = lock.read().unwrap();
        self.store.load(id)?.ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Runs `f` on a copy of the session. Success keeps the copy. Failure
    /// keeps only the model calls that were made, so they stay accounted.
    fn mutate<T>(&self, id: &str, op: Op, f: impl FnOnce(&mut Turn<'_>) -> Result<T>) -> Result<T> {
        let lock = self.lock(id);
        let _guard = lock.try_write().map_err(|_| ServiceError::Busy(id.to_string()))?;
        let original = self.store.load(id)?.ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        let mut work = original.clone();
        let out = f(&mut Turn { gw: &self.gateway, state: &mut work });
        match out {
            Ok(v) => {
                work.journal.push(op);
                self.store.save(&work)?;
                Ok(v)
            }
            Err(e) => {
                if work.call_log.len() > original.call_log.len() {
                    let mut kept = original;
                    kept.call_log = work.call_log;
                    kept.journal.push(op);
                    self.store.save(&kept)?;
                }
                Err(e)
            }
        }
    }

    pub fn put_sketch(&self, id: &str, shapes: Vec<RawShape>) -> Result<Vec<NumberedMark>> {
        self.mutate(id, Op::PutSketch { shapes: shapes.clone() }, |t| t.put_sketch(shapes))
    }

    pub fn identify(&self, id: &str, raw: Image, numbered: Image) -> Result<IdentificationResult> {
        let op = Op::Identify { raw: raw.digest.clone(), numbered: numbered.digest.clone() };
        self.mutate(id, op, |t| t.identify(raw, numbered))
    }

    pub fn enter_stage(&self, id: &str, target: Stage, raw: Image, numbered: Image) -> Result<IdentificationResult> {
        let op = Op::Stage { target, raw: raw.digest.clone(), numbered: numbered.digest.clone() };
        self.mutate(id, op, |t| t.enter_stage(target, raw, numbered))
    }

    pub fn analyze(&self, id: &str, som: Image, message: Option<&str>) -> Result<AnalyzeView> {
        let op = Op::Analyze { som: som.digest.clone(), message: message.map(str::to_string) };
        self.mutate(id, op, |t| t.analyze(som, message))
    }

    pub fn clarify(&self, id: &str, insight_id: &str, message: &str) -> Result<ClarifyView> {
        let op = Op::Clarify { insight_id: insight_id.to_string(), message: message.to_string() };
        self.mutate(id, op, |t| t.clarify(insight_id, message))
    }

    pub fn set_insight(&self, id: &str, insight_id: &str, action: InsightAction) -> Result<()> {
        let op = Op::SetInsight { insight_id: insight_id.to_string(), action };
        self.mutate(id, op, |t| t.set_insight(insight_id, action))
    }

    pub fn edit_policy(&self, id: &str, policy_number: &str, field: &str, value: &str) -> Result<RippleView> {
        let op = Op::EditPolicy { policy_number: policy_number.to_string(), field: field.to_string(), value: value.to_string() };
        self.mutate(id, op, |t| t.edit_policy(policy_number, field, value))
    }

    pub fn run_test(&self, id: &str) -> Result<Vec<InsightCard>> {
        self.mutate(id, Op::Test, |t| t.run_test())
    }

    pub fn resolve_sketch_proposal(&self, id: &str, accept: bool) -> Result<Vec<NumberedMark>> {
        self.mutate(id, Op::SketchProposal { accept }, |t| t.resolve_sketch_proposal(accept))
    }

    pub fn resolve_shadow(&self, id: &str, accept: bool) -> Result<()> {
        self.mutate(id, Op::Shadow { accept }, |t| t.resolve_shadow(accept))
    }

    pub fn budget(&self, id: &str) -> Result<CallBudget> {
        Ok(self.get(id)?.budget())
    }

    pub fn export(&self, id: &str) -> Result<Archive> {
        let state = self.get(id)?;
        Ok(Archive {
            version: ARCHIVE_VERSION,
            fixtures: fixtures_from_log(&state.call_log),
            diagnostics: state.diagnostics.clone(),
            state,
        })
    }

    /// Applies one journaled request. Images are supplied by digest.
    pub fn apply_op(&self, id: &str, op: &Op) -> Result<()> {
        let img = |p, d: &String| Image::by_digest(p, d.clone());
        match op {
            Op::Create { .. } => Ok(()),
            Op::PutSketch { shapes } => self.put_sketch(id, shapes.clone()).map(drop),
            Op::Identify { raw, numbered } => {
                self.identify(id, img(ImagePurpose::Unannotated, raw), img(ImagePurpose::Numbered, numbered)).map(drop)
            }
            Op::Stage { target, raw, numbered } => self
                .enter_stage(id, *target, img(ImagePurpose::Unannotated, raw), img(ImagePurpose::Numbered, numbered))
                .map(drop),
            Op::Analyze { som, message } => self.analyze(id, img(ImagePurpose::Som, som), message.as_deref()).map(drop),
            Op::Clarify { insight_id, message } => self.clarify(id, insight_id, message).map(drop),
            Op::SetInsight { insight_id, action } => self.set_insight(id, insight_id, *action),
            Op::EditPolicy { policy_number, field, value } => self.edit_policy(id, policy_number, field, value).map(drop),
            Op::Test => self.run_test(id).map(drop),
            Op::SketchProposal { accept } => self.resolve_sketch_proposal(id, *accept).map(drop),
            Op::Shadow { accept } => self.resolve_shadow(id, *accept),
        }
    }
}

/// Re-drives an archived session against its own fixtures and checks that
/// the result is the archived state, byte for byte.
pub fn replay(archive: &Archive) -> Result<SessionState, ReplayError> {
    if archive.version != ARCHIVE_VERSION {
        return Err(ReplayError::Version(archive.version));
    }
    let Some(Op::Create { session_id, scenario_context, vignette_k }) = archive.state.journal.first() else {
        return Err(ReplayError::NoCreate);
    };
    let transport = Arc::new(ReplayTransport::single(session_id, archive.fixtures.clone()));
    let svc = Service::in_memory(Gateway::new(transport.clone()));
    svc.create_with_id(session_id, scenario_context, *vignette_k)?;
    for op in &archive.state.journal[1..] {
        if let Err(e) = svc.apply_op(session_id, op) {
            tracing::debug!(error = %e, "replayed request failed as recorded");
        }
    }
    if let Some(e) = transport.first_error() {
        return Err(ReplayError::Transport(e));
    }
    let replayed = svc.get(session_id)?;
    let a = serde_json::to_string(&replayed).expect("state serializes");
    let b = serde_json::to_string(&archive.state).expect("state serializes");
    if a != b {
        return Err(ReplayError::Diverged { replayed: Box::new(replayed) });
    }
    Ok(replayed)
}

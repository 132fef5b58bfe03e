//! Transports: scripted responses for tests, fixture replay, recording, and
//! an OpenAI-compatible chat-completions client.

use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sbac_core::CallKind;

use crate::config::LlmConfig;
use crate::gateway::{CallRecord, CallSite, ChatRequest, Part, Reply, Transport, TransportError};

/// One recorded call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fixture {
    pub kind: CallKind,
    pub index: usize,
    pub request_digest: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl Fixture {
    pub fn from_record(index: usize, r: &CallRecord) -> Self {
        Self {
            kind: r.kind,
            index,
            request_digest: r.request_digest.clone(),
            response: r.response.clone(),
            timestamp: Some(r.timestamp),
            latency_ms: Some(r.latency_ms),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{:04}-{}.json", self.index, self.kind)
    }
}

pub fn fixtures_from_log(log: &[CallRecord]) -> Vec<Fixture> {
    log.iter().enumerate().map(|(i, r)| Fixture::from_record(i, r)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FixtureIoError + '_ {
    move |source| FixtureIoError::Io { path: path.to_path_buf(), source }
}

/// Loads `dir/<session>/*.json`, sorted by index within each session.
pub fn load_fixture_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Fixture>>, FixtureIoError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let session = entry.file_name().to_string_lossy().into_owned();
        let mut fixtures = Vec::new();
        for f in std::fs::read_dir(&path).map_err(io_err(&path))? {
            let f = f.map_err(io_err(&path))?.path();
            if f.extension().is_some_and(|e| e == "json") {
                let raw = std::fs::read_to_string(&f).map_err(io_err(&f))?;
                let fx: Fixture =
                    serde_json::from_str(&raw).map_err(|source| FixtureIoError::Json { path: f.clone(), source })?;
                fixtures.push(fx);
            }
        }
        fixtures.sort_by_key(|f| f.index);
        out.insert(session, fixtures);
    }
    Ok(out)
}

/// Programmed responses, served in order regardless of session.
#[derive(Default)]
pub struct ScriptedTransport {
    queue: Mutex<VecDeque<(Option<CallKind>, Result<String, TransportError>)>>,
    seen: Mutex<Vec<CallKind>>,
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a response that must be consumed by a call of `kind`.
    pub fn expect(&self, kind: CallKind, response: impl Into<String>) -> &Self {
        self.queue.lock().unwrap().push_back((Some(kind), Ok(response.into())));
        self
    }

    /// Queues a response for whatever call comes next.
    pub fn respond(&self, response: impl Into<String>) -> &Self {
        self.queue.lock().unwrap().push_back((None, Ok(response.into())));
        self
    }

    pub fn fail(&self, kind: CallKind, err: TransportError) -> &Self {
        self.queue.lock().unwrap().push_back((Some(kind), Err(err)));
        self
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    /// Kinds of every request received, including failed ones.
    pub fn seen(&self) -> Vec<CallKind> {
        self.seen.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, _site: &CallSite<'_>, req: &ChatRequest) -> Result<Reply, TransportError> {
        self.seen.lock().unwrap().push(req.kind);
        let (kind, result) = self
            .queue
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| TransportError::Script(format!("script exhausted at {}", req.kind)))?;
        if let Some(k) = kind {
            if k != req.kind {
                return Err(TransportError::Script(format!("expected a {k} call, got {}", req.kind)));
            }
        }
        result.map(Reply::text)
    }
}

/// Serves recorded fixtures by (session, call index), checking kind and
/// request digest.
pub struct ReplayTransport {
    sessions: BTreeMap<String, Vec<Fixture>>,
    first_error: Mutex<Option<TransportError>>,
}

impl ReplayTransport {
    pub fn new(sessions: BTreeMap<String, Vec<Fixture>>) -> Self {
        Self { sessions, first_error: Mutex::new(None) }
    }

    pub fn single(session_id: &str, fixtures: Vec<Fixture>) -> Self {
        Self::new(BTreeMap::from([(session_id.to_string(), fixtures)]))
    }

    pub fn from_dir(dir: &Path) -> Result<Self, FixtureIoError> {
        Ok(Self::new(load_fixture_dir(dir)?))
    }

    /// The first lookup failure seen, if any.
    pub fn first_error(&self) -> Option<TransportError> {
        self.first_error.lock().unwrap().clone()
    }

    fn lookup(&self, site: &CallSite<'_>, req: &ChatRequest) -> Result<Reply, TransportError> {
        let fx = self
            .sessions
            .get(site.session_id)
            .and_then(|f| f.get(site.index))
            .ok_or(TransportError::NoFixture { kind: req.kind, index: site.index })?;
        if fx.index != site.index {
            return Err(TransportError::FixtureMismatch {
                index: site.index,
                expected: format!("index {}", site.index),
                found: format!("index {}", fx.index),
            });
        }
        if fx.kind != req.kind {
            return Err(TransportError::FixtureMismatch {
                index: site.index,
                expected: format!("kind {}", fx.kind),
                found: format!("kind {}", req.kind),
            });
        }
        if fx.request_digest != site.digest {
            return Err(TransportError::FixtureMismatch {
                index: site.index,
                expected: format!("digest {}", fx.request_digest),
                found: format!("digest {}", site.digest),
            });
        }
        Ok(Reply { text: fx.response.clone(), timestamp: fx.timestamp, latency_ms: fx.latency_ms })
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, site: &CallSite<'_>, req: &ChatRequest) -> Result<Reply, TransportError> {
        let out = self.lookup(site, req);
        if let Err(e) = &out {
            self.first_error.lock().unwrap().get_or_insert_with(|| e.clone());
        }
        out
    }
}

/// Forwards to an inner transport and writes every successful call to
/// `dir/<session>/<index>-<kind>.json`.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    dir: PathBuf,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into() }
    }
}

impl Transport for RecordingTransport {
    fn complete(&self, site: &CallSite<'_>, req: &ChatRequest) -> Result<Reply, TransportError> {
        let started = Instant::now();
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let mut reply = self.inner.complete(site, req)?;
        reply.timestamp.get_or_insert(timestamp);
        reply.latency_ms.get_or_insert(started.elapsed().as_millis() as u64);
        let fx = Fixture {
            kind: req.kind,
            index: site.index,
            request_digest: site.digest.to_string(),
            response: reply.text.clone(),
            timestamp: reply.timestamp,
            latency_ms: reply.latency_ms,
        };
        let dir = self.dir.join(site.session_id);
        let written = std::fs::create_dir_all(&dir).and_then(|_| {
            std::fs::write(dir.join(fx.file_name()), serde_json::to_vec_pretty(&fx).unwrap_or_default())
        });
        if let Err(e) = written {
            tracing::error!(error = %e, "failed to write fixture");
        }
        Ok(reply)
    }
}

/// OpenAI-compatible chat completions over HTTP.
pub struct LiveTransport {
    config: LlmConfig,
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn body(&self, req: &ChatRequest) -> Result<serde_json::Value, TransportError> {
        let mut content = Vec::new();
        for part in &req.user_turns {
            match part {
                Part::Text(t) => content.push(json!({ "type": "text", "text": t })),
                Part::Image(img) => {
                    if img.bytes.is_empty() {
                        return Err(TransportError::InvalidRequest(format!("{:?} image has no bytes", img.purpose)));
                    }
                    let data = base64::engine::general_purpose::STANDARD.encode(&img.bytes);
                    content.push(json!({ "type": "image_url", "image_url": { "url": format!("data:image/png;base64,{data}") } }));
                }
            }
        }
        let mut body = json!({
            "model": self.config.model(req.tier()),
            "messages": [
                { "role": "system", "content": req.system_prompt },
                { "role": "user", "content": content },
            ],
            "response_format": { "type": "json_object" },
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        Ok(body)
    }
}

impl Transport for LiveTransport {
    fn complete(&self, _site: &CallSite<'_>, req: &ChatRequest) -> Result<Reply, TransportError> {
        let body = self.body(req)?;
        let resp = self
            .agent
            .post(&self.url())
            .set("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Status(401 | 403, r) => TransportError::Auth(r.status_text().to_string()),
                ureq::Error::Status(code, r) => TransportError::Network(format!("HTTP {code} {}", r.status_text())),
                ureq::Error::Transport(t) if t.kind() == ureq::ErrorKind::Io && t.to_string().contains("timed out") => {
                    TransportError::Timeout
                }
                ureq::Error::Transport(t) => TransportError::Network(t.to_string()),
            })?;
        let value: serde_json::Value = resp.into_json().map_err(|e| TransportError::Network(e.to_string()))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| TransportError::Network("response has no choices[0].message.content".into()))?;
        Ok(Reply::text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;

    fn fx(kind: CallKind, index: usize, digest: &str) -> Fixture {
        Fixture {
            kind,
            index,
            request_digest: digest.into(),
            response: "{}".into(),
            timestamp: Some(7),
            latency_ms: Some(3),
        }
    }

    #[test]
    fn replay_checks_kind_and_digest() {
        let req = ChatRequest::new(CallKind::CiAnalysis, "p");
        let t = ReplayTransport::single("s1", vec![fx(CallKind::CiAnalysis, 0, &req.digest())]);
        let g = Gateway::new(Arc::new(t));
        let mut log = Vec::new();
        assert_eq!(g.invoke("s1", &mut log, &req).unwrap(), "{}");
        assert_eq!((log[0].timestamp, log[0].latency_ms), (7, 3));
        assert!(matches!(g.invoke("s1", &mut log, &req), Err(TransportError::NoFixture { index: 1, .. })));
        assert!(matches!(g.invoke("s2", &mut Vec::new(), &req), Err(TransportError::NoFixture { .. })));
    }

    #[test]
    fn out_of_order_is_a_mismatch() {
        let a = ChatRequest::new(CallKind::MarkIdentification, "p");
        let b = ChatRequest::new(CallKind::CiAnalysis, "q");
        let t = Arc::new(ReplayTransport::single(
            "s",
            vec![fx(CallKind::MarkIdentification, 0, &a.digest()), fx(CallKind::CiAnalysis, 1, &b.digest())],
        ));
        let g = Gateway::new(t.clone());
        let err = g.invoke("s", &mut Vec::new(), &b).unwrap_err();
        assert!(matches!(err, TransportError::FixtureMismatch { index: 0, .. }), "{err}");
        assert_eq!(t.first_error(), Some(err));
    }

    #[test]
    fn changed_request_is_a_mismatch() {
        let a = ChatRequest::new(CallKind::CiAnalysis, "p");
        let t = ReplayTransport::single("s", vec![fx(CallKind::CiAnalysis, 0, &a.digest())]);
        let g = Gateway::new(Arc::new(t));
        let err = g.invoke("s", &mut Vec::new(), &a.clone().text("extra")).unwrap_err();
        assert!(err.to_string().contains("digest"));
    }

    #[test]
    fn scripted_kind_guard() {
        let t = ScriptedTransport::new();
        t.expect(CallKind::CiAnalysis, "x");
        let g = Gateway::new(Arc::new(t));
        let err = g.invoke("s", &mut Vec::new(), &ChatRequest::new(CallKind::SketchSync, "p")).unwrap_err();
        assert!(matches!(err, TransportError::Script(_)));
    }

    #[test]
    fn record_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let script = Arc::new(ScriptedTransport::new());
        script.respond("one").respond("two");
        let g = Gateway::new(Arc::new(RecordingTransport::new(script, dir.path())));
        let mut log = Vec::new();
        g.invoke("abc", &mut log, &ChatRequest::new(CallKind::MarkIdentification, "p")).unwrap();
        g.invoke("abc", &mut log, &ChatRequest::new(CallKind::CiAnalysis, "q")).unwrap();
        let loaded = load_fixture_dir(dir.path()).unwrap();
        assert_eq!(loaded["abc"], fixtures_from_log(&log));
        assert!(dir.path().join("abc/0001-ci_analysis.json").exists());
    }

    #[test]
    fn live_body_shape() {
        let cfg = LlmConfig {
            endpoint: "http://localhost:1/v1".into(),
            api_key: "k".into(),
            model_frontier: "big".into(),
            model_fast: "small".into(),
            temperature: Some(0.0),
            timeout: std::time::Duration::from_secs(1),
        };
        let t = LiveTransport::new(cfg);
        assert_eq!(t.url(), "http://localhost:1/v1/chat/completions");
        let body = t.body(&ChatRequest::new(CallKind::IntentClassification, "sys").text("hi")).unwrap();
        assert_eq!(body["model"], "small");
        assert_eq!(body["messages"][1]["content"][0]["text"], "hi");
        assert_eq!(body["temperature"], 0.0);
    }
}

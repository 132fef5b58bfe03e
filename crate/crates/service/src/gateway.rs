//! The single path every model call takes: request shape checks, tier
//! routing, transport dispatch with a bounded retry, and the call log.

use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use sbac_core::prompt::{render_prompt, PromptContext, PromptError};
use sbac_core::schema::SchemaId;
use sbac_core::{CallKind, ModelTier};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImagePurpose {
    Unannotated,
    Numbered,
    Som,
    Viewport,
}

impl ImagePurpose {
    fn allowed_on(self, kind: CallKind) -> bool {
        match kind {
            CallKind::MarkIdentification | CallKind::Reidentification => {
                matches!(self, ImagePurpose::Unannotated | ImagePurpose::Numbered)
            }
            CallKind::CiAnalysis => self == ImagePurpose::Som,
            CallKind::SketchSync => self == ImagePurpose::Viewport,
            _ => false,
        }
    }
}

/// A PNG attached to a request. Only the digest takes part in request
/// identity, so a replayed request can carry the digest without the bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub purpose: ImagePurpose,
    pub digest: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl Image {
    pub fn png(purpose: ImagePurpose, bytes: Vec<u8>) -> Result<Self, TransportError> {
        if !bytes.starts_with(&PNG_SIGNATURE) {
            return Err(TransportError::InvalidRequest(format!("{purpose:?} image is not a PNG")));
        }
        Ok(Self { purpose, digest: sha256_hex(&bytes), bytes })
    }

    /// An image known only by digest, as stored in a journal.
    pub fn by_digest(purpose: ImagePurpose, digest: impl Into<String>) -> Self {
        Self { purpose, digest: digest.into(), bytes: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image(Image),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub kind: CallKind,
    pub system_prompt: String,
    pub user_turns: Vec<Part>,
    pub schema_id: SchemaId,
}

impl ChatRequest {
    pub fn new(kind: CallKind, system_prompt: impl Into<String>) -> Self {
        Self { kind, system_prompt: system_prompt.into(), user_turns: Vec::new(), schema_id: SchemaId::for_call(kind) }
    }

    /// Renders the kind's default template.
    pub fn rendered(kind: CallKind, ctx: &PromptContext) -> Result<Self, PromptError> {
        Ok(Self::new(kind, render_prompt(kind.template(), ctx)?))
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.user_turns.push(Part::Text(text.into()));
        self
    }

    pub fn image(mut self, image: Image) -> Self {
        self.user_turns.push(Part::Image(image));
        self
    }

    /// The same request with the parse failure appended, for one re-ask.
    pub fn reask(&self, error: &impl std::fmt::Display) -> Self {
        self.clone().text(format!(
            "Your previous response was rejected: {error}. Respond again with JSON that satisfies the required format."
        ))
    }

    pub fn tier(&self) -> ModelTier {
        self.kind.tier()
    }

    pub fn check(&self) -> Result<(), TransportError> {
        for part in &self.user_turns {
            if let Part::Image(img) = part {
                if !img.purpose.allowed_on(self.kind) {
                    return Err(TransportError::InvalidRequest(format!(
                        "{:?} image not accepted by {}",
                        img.purpose, self.kind
                    )));
                }
            }
        }
        Ok(())
    }

    /// sha256 over a canonical rendering of kind, prompt and parts.
    pub fn digest(&self) -> String {
        let parts: Vec<serde_json::Value> = self
            .user_turns
            .iter()
            .map(|p| match p {
                Part::Text(t) => json!({ "text": t }),
                Part::Image(i) => json!({ "image": { "purpose": i.purpose, "digest": i.digest } }),
            })
            .collect();
        let canonical = json!({
            "kind": self.kind,
            "schema": self.schema_id.name(),
            "system": self.system_prompt,
            "parts": parts,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CallRecord {
    pub kind: CallKind,
    pub tier: ModelTier,
    pub request_digest: String,
    pub response: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("model call timed out")]
    Timeout,
    #[error("no fixture for {kind} at call {index}")]
    NoFixture { kind: CallKind, index: usize },
    #[error("fixture mismatch at call {index}: expected {expected}, found {found}")]
    FixtureMismatch { index: usize, expected: String, found: String },
    #[error("scripted transport: {0}")]
    Script(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Network(_) | TransportError::Timeout)
    }
}

/// Where in a session a call sits.
#[derive(Debug, Clone, Copy)]
pub struct CallSite<'a> {
    pub session_id: &'a str,
    /// Position the call will take in the session's call log.
    pub index: usize,
    pub digest: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    /// Set by transports that replay recorded calls.
    pub timestamp: Option<u64>,
    pub latency_ms: Option<u64>,
}

impl Reply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), timestamp: None, latency_ms: None }
    }
}

pub trait Transport: Send + Sync {
    fn complete(&self, site: &CallSite<'_>, req: &ChatRequest) -> Result<Reply, TransportError>;
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn system_clock() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Clone)]
pub struct Gateway {
    transport: Arc<dyn Transport>,
    retries: u32,
    clock: Clock,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("retries", &self.retries).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self { transport, retries: 1, clock: Arc::new(system_clock) }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Sends one request and returns the raw response text. A record is
    /// appended to `log` only when a response comes back.
    pub fn invoke(&self, session_id: &str, log: &mut Vec<CallRecord>, req: &ChatRequest) -> Result<String, TransportError> {
        req.check()?;
        let digest = req.digest();
        let site = CallSite { session_id, index: log.len(), digest: &digest };
        let mut attempt = 0;
        let started = Instant::now();
        let timestamp = (self.clock)();
        let reply = loop {
            match self.transport.complete(&site, req) {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    tracing::warn!(kind = %req.kind, error = %e, "retrying model call");
                }
                Err(e) => return Err(e),
            }
        };
        let latency_ms = reply.latency_ms.unwrap_or_else(|| started.elapsed().as_millis() as u64);
        log.push(CallRecord {
            kind: req.kind,
            tier: req.tier(),
            request_digest: digest,
            response: reply.text.clone(),
            timestamp: reply.timestamp.unwrap_or(timestamp),
            latency_ms,
        });
        Ok(reply.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky(Mutex<Vec<Result<Reply, TransportError>>>);

    impl Transport for Flaky {
        fn complete(&self, _: &CallSite<'_>, _: &ChatRequest) -> Result<Reply, TransportError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn gw(script: Vec<Result<Reply, TransportError>>) -> Gateway {
        Gateway::new(Arc::new(Flaky(Mutex::new(script)))).with_clock(Arc::new(|| 42))
    }

    #[test]
    fn one_retry_on_network() {
        let g = gw(vec![Err(TransportError::Network("reset".into())), Ok(Reply::text("not json"))]);
        let mut log = Vec::new();
        let out = g.invoke("s", &mut log, &ChatRequest::new(CallKind::IntentClassification, "p")).unwrap();
        assert_eq!(out, "not json");
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].tier, ModelTier::Fast);
        assert_eq!(log[0].timestamp, 42);
    }

    #[test]
    fn retry_budget_is_bounded() {
        let g = gw(vec![Err(TransportError::Timeout), Err(TransportError::Timeout), Ok(Reply::text("x"))]);
        let mut log = Vec::new();
        let err = g.invoke("s", &mut log, &ChatRequest::new(CallKind::CiAnalysis, "p")).unwrap_err();
        assert_eq!(err, TransportError::Timeout);
        assert!(log.is_empty());
    }

    #[test]
    fn auth_is_not_retried() {
        let g = gw(vec![Err(TransportError::Auth("bad key".into())), Ok(Reply::text("x"))]);
        let mut log = Vec::new();
        assert!(matches!(
            g.invoke("s", &mut log, &ChatRequest::new(CallKind::CiAnalysis, "p")),
            Err(TransportError::Auth(_))
        ));
    }

    #[test]
    fn images_only_where_accepted() {
        let png = [PNG_SIGNATURE.as_slice(), b"rest"].concat();
        let som = Image::png(ImagePurpose::Som, png.clone()).unwrap();
        assert!(ChatRequest::new(CallKind::CiAnalysis, "p").image(som.clone()).check().is_ok());
        assert!(ChatRequest::new(CallKind::DeepResolution, "p").image(som.clone()).check().is_err());
        let raw = Image::png(ImagePurpose::Unannotated, png).unwrap();
        assert!(ChatRequest::new(CallKind::CiAnalysis, "p").image(raw.clone()).check().is_err());
        assert!(ChatRequest::new(CallKind::Reidentification, "p").image(raw).check().is_ok());
        assert!(Image::png(ImagePurpose::Som, b"GIF89a".to_vec()).is_err());
    }

    #[test]
    fn digest_ignores_bytes_but_not_identity() {
        let png = [PNG_SIGNATURE.as_slice(), b"rest"].concat();
        let full = Image::png(ImagePurpose::Som, png).unwrap();
        let bare = Image::by_digest(ImagePurpose::Som, full.digest.clone());
        let a = ChatRequest::new(CallKind::CiAnalysis, "p").text("t").image(full);
        let b = ChatRequest::new(CallKind::CiAnalysis, "p").text("t").image(bare);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), ChatRequest::new(CallKind::CiAnalysis, "p").text("u").digest());
    }
}

//! Session service for sketch-based access control authoring: the model
//! gateway and its transports, the per-session workflow, persistence,
//! export/replay and the HTTP API.

pub mod config;
pub mod engine;
pub mod error;
pub mod gateway;
pub mod http;
pub mod oracle;
pub mod service;
pub mod session;
pub mod store;
pub mod transport;

pub use error::{Result, ServiceError};
pub use gateway::{CallRecord, ChatRequest, Gateway, Image, ImagePurpose, Transport, TransportError};
pub use service::{replay, Archive, ReplayError, Service};
pub use session::{SessionState, Stage};

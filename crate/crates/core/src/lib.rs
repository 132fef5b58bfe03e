//! Core vocabulary and deterministic machinery for sketch-based access
//! control authoring.
//!
//! Everything in this crate is pure: no IO, no clocks, no network. Model
//! calls are represented only by the prompts they are rendered from and the
//! strict parsers their responses go through; the orchestration that
//! actually talks to a model lives in the `sbac` service crate.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod analysis;
pub mod clarify;
pub mod marks;
pub mod policy;
pub mod prompt;
pub mod ripple;
pub mod schema;
pub mod sketch;
pub mod text;
pub mod vignette;

pub use marks::{Entity, IdentificationResult, MarkNumber, SemanticRole};
pub use policy::{ExpectedOutcome, InsightCard, IssueType, Policy, Rationale};
pub use prompt::{CallKind, ModelTier, PromptTemplate};

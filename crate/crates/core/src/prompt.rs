//! Call kinds, model tiers and the prompt templates they render from.
//!
//! Templates are plain text assets under `prompts/`. Placeholders are
//! `{{NAME}}`. Conditional sections sit on their own lines:
//!
//! ```text
//! {{#when CARD_LABEL=ambiguity}}
//! ...kept only when CARD_LABEL is "ambiguity"
//! {{/when}}
//! {{#unless CARD_LABEL=ambiguity|conflict}}
//! ...kept when CARD_LABEL is neither
//! {{/unless}}
//! ```
//!
//! Marker lines are dropped from the output. Substituted values are inserted
//! verbatim and never re-scanned.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTier {
    Frontier,
    Fast,
}

impl ModelTier {
    pub fn name(self) -> &'static str {
        match self {
            ModelTier::Frontier => "frontier",
            ModelTier::Fast => "fast",
        }
    }
}

/// The ten model calls a session can make.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    MarkIdentification,
    CiAnalysis,
    IntentClassification,
    DeepResolution,
    SketchSync,
    PolicyPropagation,
    InsightPropagation,
    Reidentification,
    FactorDecomposition,
    StoryRealization,
}

impl CallKind {
    pub const ALL: [CallKind; 10] = [
        CallKind::MarkIdentification,
        CallKind::CiAnalysis,
        CallKind::IntentClassification,
        CallKind::DeepResolution,
        CallKind::SketchSync,
        CallKind::PolicyPropagation,
        CallKind::InsightPropagation,
        CallKind::Reidentification,
        CallKind::FactorDecomposition,
        CallKind::StoryRealization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CallKind::MarkIdentification => "mark_identification",
            CallKind::CiAnalysis => "ci_analysis",
            CallKind::IntentClassification => "intent_classification",
            CallKind::DeepResolution => "deep_resolution",
            CallKind::SketchSync => "sketch_sync",
            CallKind::PolicyPropagation => "policy_propagation",
            CallKind::InsightPropagation => "insight_propagation",
            CallKind::Reidentification => "reidentification",
            CallKind::FactorDecomposition => "factor_decomposition",
            CallKind::StoryRealization => "story_realization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn tier(self) -> ModelTier {
        match self {
            CallKind::IntentClassification | CallKind::PolicyPropagation | CallKind::InsightPropagation => {
                ModelTier::Fast
            }
            _ => ModelTier::Frontier,
        }
    }

    /// Template a call of this kind renders from by default.
    pub fn template(self) -> PromptTemplate {
        match self {
            CallKind::MarkIdentification | CallKind::Reidentification => PromptTemplate::MarkIdentification,
            CallKind::CiAnalysis => PromptTemplate::CiAnalysis,
            CallKind::IntentClassification => PromptTemplate::IntentClassification,
            CallKind::DeepResolution => PromptTemplate::DeepResolution,
            CallKind::SketchSync => PromptTemplate::SketchSync,
            CallKind::PolicyPropagation => PromptTemplate::PolicyPropagation,
            CallKind::InsightPropagation => PromptTemplate::InsightPropagation,
            CallKind::FactorDecomposition => PromptTemplate::FactorDecomposition,
            CallKind::StoryRealization => PromptTemplate::StoryRealization,
        }
    }

    /// Whether requests of this kind may carry image parts.
    pub fn accepts_images(self) -> bool {
        matches!(
            self,
            CallKind::MarkIdentification | CallKind::Reidentification | CallKind::CiAnalysis | CallKind::SketchSync
        )
    }
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    MarkIdentification,
    CiAnalysis,
    IntentClassification,
    DeepResolution,
    SketchSync,
    PolicyPropagation,
    InsightPropagation,
    FactorDecomposition,
    StoryRealization,
    MonolithicVignettes,
}

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 10] = [
        PromptTemplate::MarkIdentification,
        PromptTemplate::CiAnalysis,
        PromptTemplate::IntentClassification,
        PromptTemplate::DeepResolution,
        PromptTemplate::SketchSync,
        PromptTemplate::PolicyPropagation,
        PromptTemplate::InsightPropagation,
        PromptTemplate::FactorDecomposition,
        PromptTemplate::StoryRealization,
        PromptTemplate::MonolithicVignettes,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptTemplate::MarkIdentification => "mark_identification.txt",
            PromptTemplate::CiAnalysis => "ci_analysis.txt",
            PromptTemplate::IntentClassification => "intent_classification.txt",
            PromptTemplate::DeepResolution => "deep_resolution.txt",
            PromptTemplate::SketchSync => "sketch_sync.txt",
            PromptTemplate::PolicyPropagation => "policy_propagation.txt",
            PromptTemplate::InsightPropagation => "insight_propagation.txt",
            PromptTemplate::FactorDecomposition => "factor_decomposition.txt",
            PromptTemplate::StoryRealization => "story_realization.txt",
            PromptTemplate::MonolithicVignettes => "monolithic_vignettes.txt",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            PromptTemplate::MarkIdentification => include_str!("../prompts/mark_identification.txt"),
            PromptTemplate::CiAnalysis => include_str!("../prompts/ci_analysis.txt"),
            PromptTemplate::IntentClassification => include_str!("../prompts/intent_classification.txt"),
            PromptTemplate::DeepResolution => include_str!("../prompts/deep_resolution.txt"),
            PromptTemplate::SketchSync => include_str!("../prompts/sketch_sync.txt"),
            PromptTemplate::PolicyPropagation => include_str!("../prompts/policy_propagation.txt"),
            PromptTemplate::InsightPropagation => include_str!("../prompts/insight_propagation.txt"),
            PromptTemplate::FactorDecomposition => include_str!("../prompts/factor_decomposition.txt"),
            PromptTemplate::StoryRealization => include_str!("../prompts/story_realization.txt"),
            PromptTemplate::MonolithicVignettes => include_str!("../prompts/monolithic_vignettes.txt"),
        }
    }

    /// Every name the template refers to, in placeholders or conditions.
    pub fn placeholders(self) -> BTreeSet<&'static str> {
        let mut out = BTreeSet::new();
        for token in tokens(self.source()) {
            match token {
                Token::Var(name) => {
                    out.insert(name);
                }
                Token::Open(name) => {
                    out.insert(name);
                }
                Token::Close => {}
            }
        }
        out
    }
}

/// Named substitution values for one render.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    values: BTreeMap<String, String>,
}

impl PromptContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.values.insert(name.to_string(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing placeholder {0}")]
    MissingPlaceholder(String),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
}

enum Token<'a> {
    Var(&'a str),
    Open(&'a str),
    Close,
}

fn tokens(src: &str) -> impl Iterator<Item = Token<'_>> {
    let mut rest = src;
    core::iter::from_fn(move || loop {
        let start = rest.find("{{")?;
        let after = &rest[start + 2..];
        let end = after.find("}}")?;
        let inner = &after[..end];
        rest = &after[end + 2..];
        if let Some(t) = classify(inner) {
            return Some(t);
        }
    })
}

fn classify(inner: &str) -> Option<Token<'_>> {
    if let Some(cond) = inner.strip_prefix("#when ") {
        let (name, _) = cond.split_once('=')?;
        Some(Token::Open(name))
    } else if let Some(cond) = inner.strip_prefix("#unless ") {
        let (name, _) = cond.split_once('=')?;
        Some(Token::Open(name))
    } else if inner == "/when" || inner == "/unless" {
        Some(Token::Close)
    } else if !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_') {
        Some(Token::Var(inner))
    } else {
        None
    }
}

/// Parses a whole-line block marker.
fn block_marker(line: &str) -> Option<Result<(bool, &str, Vec<&str>), ()>> {
    let inner = line.trim().strip_prefix("{{")?.strip_suffix("}}")?;
    if inner == "/when" || inner == "/unless" {
        return Some(Err(()));
    }
    let (negate, cond) = if let Some(c) = inner.strip_prefix("#when ") {
        (false, c)
    } else {
        let c = inner.strip_prefix("#unless ")?;
        (true, c)
    };
    let (name, values) = cond.split_once('=')?;
    Some(Ok((negate, name, values.split('|').collect())))
}

/// Renders a template. Fails if any name the template mentions is absent
/// from `ctx`.
pub fn render_prompt(template: PromptTemplate, ctx: &PromptContext) -> Result<String, PromptError> {
    render_source(template.source(), ctx)
}

/// Renders an arbitrary template string with the same rules as
/// [`render_prompt`].
pub fn render_source(src: &str, ctx: &PromptContext) -> Result<String, PromptError> {
    for token in tokens(src) {
        let name = match token {
            Token::Var(n) | Token::Open(n) => n,
            Token::Close => continue,
        };
        if ctx.get(name).is_none() {
            return Err(PromptError::MissingPlaceholder(name.to_string()));
        }
    }

    let mut out = String::with_capacity(src.len());
    let mut stack: Vec<bool> = Vec::new();
    for line in src.split_inclusive('\n') {
        match block_marker(line.trim_end_matches('\n')) {
            Some(Ok((negate, name, values))) => {
                let value = ctx.get(name).unwrap_or("");
                let hit = values.contains(&value);
                stack.push(hit != negate);
                continue;
            }
            Some(Err(())) => {
                if stack.pop().is_none() {
                    return Err(PromptError::MalformedTemplate("unmatched block close".into()));
                }
                continue;
            }
            None => {}
        }
        if stack.iter().all(|k| *k) {
            substitute_line(line, ctx, &mut out);
        }
    }
    if !stack.is_empty() {
        return Err(PromptError::MalformedTemplate("unclosed block".into()));
    }
    Ok(out)
}

fn substitute_line(line: &str, ctx: &PromptContext, out: &mut String) {
    let mut rest = line;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let inner = &after[..end];
        match classify(inner) {
            Some(Token::Var(name)) => {
                out.push_str(&rest[..start]);
                out.push_str(ctx.get(name).unwrap_or(""));
            }
            _ => out.push_str(&rest[..start + 2 + end + 2]),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
}

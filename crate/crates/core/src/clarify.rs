//! Clarify turns: intent classification results, routing, and the deep
//! resolution a fix or explore produces.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::{render_rationale, InsightCard, Policy};
use crate::prompt::PromptContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Understand,
    Correct,
    Fix,
    Explore,
    Unclassified,
}

impl Intent {
    pub const ALL: [Intent; 5] = [Intent::Understand, Intent::Correct, Intent::Fix, Intent::Explore, Intent::Unclassified];

    pub fn name(self) -> &'static str {
        match self {
            Intent::Understand => "understand",
            Intent::Correct => "correct",
            Intent::Fix => "fix",
            Intent::Explore => "explore",
            Intent::Unclassified => "unclassified",
        }
    }

    /// Parses one of the four intents a classifier may return.
    pub fn parse_model(s: &str) -> Option<Self> {
        match s {
            "understand" => Some(Intent::Understand),
            "correct" => Some(Intent::Correct),
            "fix" => Some(Intent::Fix),
            "explore" => Some(Intent::Explore),
            _ => None,
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassificationResult {
    pub intent: Intent,
    pub response: String,
    pub dismiss_insight: bool,
}

impl ClassificationResult {
    /// Dismissal is only honored on a correct intent.
    pub fn new(intent: Intent, response: impl Into<String>, dismiss_insight: bool) -> Self {
        ClassificationResult { intent, response: response.into(), dismiss_insight: dismiss_insight && intent == Intent::Correct }
    }

    pub fn unclassified() -> Self {
        ClassificationResult::new(Intent::Unclassified, "", false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeepMode {
    Fix,
    Explore,
}

impl DeepMode {
    pub fn name(self) -> &'static str {
        match self {
            DeepMode::Fix => "fix",
            DeepMode::Explore => "explore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Answered by the classifier; nothing else runs.
    Terminal { dismiss: bool },
    /// A frontier resolution follows.
    Deep(DeepMode),
}

pub fn route(result: &ClassificationResult) -> Route {
    match result.intent {
        Intent::Understand => Route::Terminal { dismiss: false },
        Intent::Correct => Route::Terminal { dismiss: result.dismiss_insight },
        Intent::Fix | Intent::Unclassified => Route::Deep(DeepMode::Fix),
        Intent::Explore => Route::Deep(DeepMode::Explore),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeepResolution {
    pub chat: String,
    pub policies: Vec<Policy>,
    pub insights: Vec<InsightCard>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<String>,
    #[serde(default)]
    pub proposed_actions: Vec<String>,
}

impl DeepResolution {
    pub fn omits(&self, card_id: &str) -> bool {
        self.insights.iter().all(|c| c.id != card_id)
    }
}

/// One clarify exchange, kept for later analysis requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClarificationTurn {
    pub card_id: String,
    pub message: String,
    pub intent: Intent,
    pub response: String,
}

impl ClarificationTurn {
    pub fn transcript_line(&self) -> String {
        alloc::format!("[{}] user ({}): {} | assistant: {}", self.card_id, self.intent, self.message, self.response)
    }
}

/// Placeholder values describing one card and the current policies.
pub fn card_context(card: &InsightCard, stage: &str, policies: &[Policy]) -> PromptContext {
    let expected = card.expected_outcome.map(|o| o.name().to_string()).unwrap_or_else(|| "n/a".into());
    let relevant = card.relevant_policies.as_ref().map(|p| p.join(", ")).unwrap_or_else(|| "n/a".into());
    PromptContext::new()
        .with("CARD_LABEL", card.kind.name())
        .with("STAGE_TYPE", stage)
        .with("CARD_ID", card.id.as_str())
        .with("CARD_HEADING", card.heading.as_str())
        .with("CARD_DESCRIPTION", card.description.as_str())
        .with("CARD_RATIONALE", render_rationale(&card.rationale).unwrap_or_default())
        .with("CARD_EXPECTED_OUTCOME", expected)
        .with("CARD_RELEVANT_POLICIES", relevant)
        .with("CURRENT_POLICIES", serde_json::to_string_pretty(policies).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_table() {
        let r = |i| route(&ClassificationResult::new(i, "", true));
        assert_eq!(r(Intent::Understand), Route::Terminal { dismiss: false });
        assert_eq!(r(Intent::Correct), Route::Terminal { dismiss: true });
        assert_eq!(r(Intent::Fix), Route::Deep(DeepMode::Fix));
        assert_eq!(r(Intent::Explore), Route::Deep(DeepMode::Explore));
        assert_eq!(r(Intent::Unclassified), Route::Deep(DeepMode::Fix));
    }

    #[test]
    fn dismiss_only_on_correct() {
        assert!(!ClassificationResult::new(Intent::Fix, "", true).dismiss_insight);
        assert!(ClassificationResult::new(Intent::Correct, "", true).dismiss_insight);
    }

    #[test]
    fn unknown_model_intent() {
        assert_eq!(Intent::parse_model("ponder"), None);
        assert_eq!(Intent::parse_model("unclassified"), None);
    }
}

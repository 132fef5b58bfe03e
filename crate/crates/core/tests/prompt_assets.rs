use std::collections::BTreeMap;
use std::path::PathBuf;

use sbac_core::prompt::{render_prompt, PromptContext, PromptError};
use sbac_core::{CallKind, ModelTier, PromptTemplate};
use sha2::{Digest, Sha256};

fn prompts_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("prompts")
}

fn full_context(t: PromptTemplate) -> PromptContext {
    let mut ctx = PromptContext::new();
    for name in t.placeholders() {
        ctx.set(name, format!("<{name}>"));
    }
    ctx
}

#[test]
fn manifest_matches_assets() {
    let raw = std::fs::read_to_string(prompts_dir().join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let listed: BTreeMap<String, String> = serde_json::from_value(manifest["templates"].clone()).unwrap();
    assert_eq!(listed.len(), PromptTemplate::ALL.len());
    for t in PromptTemplate::ALL {
        let bytes = std::fs::read(prompts_dir().join(t.file_name())).unwrap();
        assert_eq!(bytes, t.source().as_bytes(), "{} differs from the embedded copy", t.file_name());
        let digest = hex::encode(Sha256::digest(&bytes));
        assert_eq!(listed.get(t.file_name()), Some(&digest), "checksum drift in {}", t.file_name());
    }
}

#[test]
fn tier_table() {
    let fast = [CallKind::IntentClassification, CallKind::PolicyPropagation, CallKind::InsightPropagation];
    for k in CallKind::ALL {
        let want = if fast.contains(&k) { ModelTier::Fast } else { ModelTier::Frontier };
        assert_eq!(k.tier(), want, "{}", k.name());
    }
}

#[test]
fn every_template_renders_completely() {
    for t in PromptTemplate::ALL {
        let mut ctx = full_context(t);
        ctx.set("CARD_LABEL", "risk");
        ctx.set("INTENT", "fix");
        let out = render_prompt(t, &ctx).unwrap();
        assert!(!out.contains("{{"), "{} left a placeholder", t.file_name());
    }
}

#[test]
fn ambiguity_guidance_block() {
    let t = PromptTemplate::IntentClassification;
    let ctx = full_context(t).with("CARD_LABEL", "ambiguity");
    let out = render_prompt(t, &ctx).unwrap();
    assert!(out.contains("This is an **ambiguity**"));
    assert!(!out.contains("This is a **test vignette**"));
    assert!(!out.contains("Consider whether the user's response"));

    let ctx = full_context(t).with("CARD_LABEL", "risk");
    let out = render_prompt(t, &ctx).unwrap();
    assert!(!out.contains("This is an **ambiguity**"));
    assert!(out.contains("Consider whether the user's response"));
}

#[test]
fn missing_heading() {
    let t = PromptTemplate::IntentClassification;
    let mut ctx = PromptContext::new();
    for name in t.placeholders().into_iter().filter(|n| *n != "CARD_HEADING") {
        ctx.set(name, "x");
    }
    assert_eq!(render_prompt(t, &ctx), Err(PromptError::MissingPlaceholder("CARD_HEADING".into())));
}

#[test]
fn rendering_is_pure() {
    for t in PromptTemplate::ALL {
        let ctx = full_context(t).with("CARD_LABEL", "vignette").with("INTENT", "explore");
        assert_eq!(render_prompt(t, &ctx), render_prompt(t, &ctx));
    }
}

#[test]
fn values_are_not_rescanned() {
    let t = PromptTemplate::CiAnalysis;
    let ctx = PromptContext::new().with("SCENARIO_CONTEXT", "{{CARD_HEADING}}");
    let out = render_prompt(t, &ctx).unwrap();
    assert!(out.contains("{{CARD_HEADING}}"));
}

mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::*;
use sbac::transport::ScriptedTransport;
use sbac::{Gateway, Service};
use sbac_core::CallKind;

const BOUNDARY: &str = "sbac-test-boundary";

struct Api {
    router: Router,
    script: Arc<ScriptedTransport>,
}

enum Part<'a> {
    Text(&'a str, &'a str),
    File(&'a str, Vec<u8>),
}

fn multipart(parts: &[Part<'_>]) -> Vec<u8> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match p {
            Part::Text(name, value) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes());
            }
            Part::File(name, bytes) => {
                body.extend_from_slice(
                    format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\nContent-Type: image/png\r\n\r\n")
                        .as_bytes(),
                );
                body.extend_from_slice(bytes);
                body.extend_from_slice(b"\r\n");
            }
        }
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

impl Api {
    fn new() -> Self {
        let script = Arc::new(ScriptedTransport::new());
        let svc = Arc::new(Service::in_memory(Gateway::new(script.clone())));
        Self { router: sbac::http::router(svc), script }
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Value) {
        let res = self.router.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, body)
    }

    async fn json(&self, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        self.send(req).await
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.send(Request::builder().uri(uri).body(Body::empty()).unwrap()).await
    }

    async fn form(&self, uri: &str, parts: &[Part<'_>]) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(Method::POST)
            .uri(uri)
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(multipart(parts)))
            .unwrap();
        self.send(req).await
    }

    async fn stage(&self, id: &str, target: &str) -> (StatusCode, Value) {
        self.form(
            &format!("/sessions/{id}/stage"),
            &[Part::Text("target", target), Part::File("raw", png("raw")), Part::File("numbered", png("numbered"))],
        )
        .await
    }
}

#[tokio::test]
async fn full_session_over_http() {
    let api = Api::new();
    let (status, guidance) = api.get("/guidance").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(guidance.as_array().unwrap().len(), 4);

    let (status, created) = api.json(Method::POST, "/sessions", json!({ "scenarioContext": SCENARIO })).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["sessionId"].as_str().unwrap().to_string();
    assert_eq!(created["stage"], "specify");

    let (status, marks) = api.json(Method::PUT, &format!("/sessions/{id}/sketch"), json!({ "shapes": shapes() })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(marks["marks"].as_array().unwrap().len(), 7);

    api.script.expect(CallKind::MarkIdentification, identification());
    let (status, staged) = api.stage(&id, "analyze").await;
    assert_eq!(status, StatusCode::OK, "{staged}");
    assert_eq!(staged["stage"], "analyze");
    assert_eq!(staged["entities"].as_array().unwrap().len(), 7);

    let (status, entities) = api.get(&format!("/sessions/{id}/entities")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(entities, staged["entities"]);

    api.script.expect(CallKind::CiAnalysis, analysis());
    let (status, analyzed) = api
        .form(&format!("/sessions/{id}/analyze"), &[Part::File("som", png("som")), Part::Text("message", "go")])
        .await;
    assert_eq!(status, StatusCode::OK, "{analyzed}");

    let (status, session) = api.get(&format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session["policies"].as_array().unwrap().len(), 3);

    api.script.expect(CallKind::IntentClassification, classification("understand", false));
    let (status, clarified) =
        api.json(Method::POST, &format!("/sessions/{id}/insights/risk1/clarify"), json!({ "message": "why?" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(clarified["intent"], "understand");

    let (status, _) = api.json(Method::POST, &format!("/sessions/{id}/insights/ambiguity1/accept"), json!({})).await;
    assert_eq!(status, StatusCode::NO_CONTENT);

    let (status, edited) = api
        .json(Method::PATCH, &format!("/sessions/{id}/policies/policy1"), json!({ "field": "explanation", "value": "Arrow" }))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(edited["editType"], "text_only");

    api.script.expect(CallKind::Reidentification, identification());
    api.script.expect(CallKind::FactorDecomposition, decomposition().to_string());
    api.script.expect(CallKind::StoryRealization, realization(6));
    let (status, staged) = api.stage(&id, "test").await;
    assert_eq!(status, StatusCode::OK, "{staged}");
    assert!(!staged["vignettes"].as_array().unwrap().is_empty());

    let (status, budget) = api.get(&format!("/sessions/{id}/budget")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(budget["count"], 6);

    let (status, archive) = api.get(&format!("/sessions/{id}/export")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(archive["fixtures"].as_array().unwrap().len(), 6);
    let archive: sbac::Archive = serde_json::from_value(archive).unwrap();
    sbac::replay(&archive).unwrap();
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let api = Api::new();
    let (status, body) = api.get("/sessions/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());

    let (_, created) = api.json(Method::POST, "/sessions", json!({ "scenarioContext": SCENARIO })).await;
    let id = created["sessionId"].as_str().unwrap().to_string();

    let (status, _) = api.stage(&id, "test").await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = api.form(&format!("/sessions/{id}/analyze"), &[Part::File("som", png("som"))]).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = api
        .form(&format!("/sessions/{id}/stage"), &[Part::Text("target", "analyze"), Part::File("raw", b"not a png".to_vec())])
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = api.json(Method::POST, &format!("/sessions/{id}/shadow"), json!({ "accept": true })).await;
    assert_eq!(status, StatusCode::CONFLICT);

    api.json(Method::PUT, &format!("/sessions/{id}/sketch"), json!({ "shapes": shapes() })).await;
    api.script.expect(CallKind::MarkIdentification, "{}");
    api.script.expect(CallKind::MarkIdentification, "{}");
    let (status, body) = api.stage(&id, "analyze").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    api.script.expect(CallKind::MarkIdentification, identification());
    api.stage(&id, "analyze").await;
    let (status, _) = api
        .json(Method::PATCH, &format!("/sessions/{id}/policies/policy9"), json!({ "field": "subject", "value": "x" }))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = api.form(&format!("/sessions/{id}/analyze"), &[Part::File("som", png("som"))]).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);

    api.script.expect(CallKind::CiAnalysis, "{}");
    api.script.expect(CallKind::CiAnalysis, "{}");
    let (status, _) = api.form(&format!("/sessions/{id}/analyze"), &[Part::File("som", png("som"))]).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

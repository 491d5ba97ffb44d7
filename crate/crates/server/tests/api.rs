mod common;

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use denial_core::llm::{GenerationRequest, GenerationResult, LlmError, LlmGateway, MockGateway};
use denial_core::taxonomy::Catalog;

use common::spawn;

struct SlowGateway(MockGateway);

impl LlmGateway for SlowGateway {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, LlmError> {
        std::thread::sleep(Duration::from_millis(400));
        self.0.generate(request)
    }

    fn backend_id(&self) -> String {
        "slow".into()
    }
}

fn concluded_session(server: &common::TestServer) -> String {
    let id = server.create_session("evolution_denier");
    for technique in ["magnified_minority", "demand_for_certainty", "quote_mining"] {
        let (status, body) = server.post(
            &format!("/api/sessions/{id}/identify"),
            json!({ "technique_id": technique }),
        );
        assert_eq!(status, 200, "{body}");
    }
    id
}

#[test]
fn health_and_catalog() {
    let server = spawn(None, false);
    let (status, body) = server.get_json("/api/health");
    assert_eq!(status, 200);
    assert_eq!(body["llm_backend"], "mock");
    let (_, catalog) = server.get_json("/api/catalog");
    assert_eq!(catalog["categories"].as_array().unwrap().len(), 5);
}

#[test]
fn personas_are_projected() {
    let server = spawn(None, false);
    let (status, body) = server.get_json("/api/personas");
    assert_eq!(status, 200);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 3);
    for p in list {
        let keys: Vec<&str> = p.as_object().unwrap().keys().map(String::as_str).collect();
        for key in ["id", "display_name", "topic"] {
            assert!(keys.contains(&key), "{keys:?}");
        }
        assert!(!keys.contains(&"templates") && !keys.contains(&"belief_params"));
        let reveals = p["id"] == "flat_earther";
        assert_eq!(
            keys.contains(&"assigned_techniques"),
            reveals,
            "{}",
            p["id"]
        );
    }
}

#[test]
fn create_session_contract() {
    let server = spawn(None, false);
    let (status, body) = server.post("/api/sessions", json!({ "persona_id": "evolution_denier" }));
    assert_eq!(status, 201);
    assert!(body["opening_line"]
        .as_str()
        .unwrap()
        .starts_with("Evolution is just a theory"));
    assert_eq!(body["status"], "active");
    assert_eq!(body["turns"].as_array().unwrap().len(), 1);
    let (status, body) = server.post("/api/sessions", json!({ "persona_id": "nobody" }));
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, body) = server.post_raw("/api/sessions", "{not json");
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "validation");
}

#[test]
fn internal_state_hidden_without_debug_flag() {
    let server = spawn(None, false);
    let id = server.create_session("climate_denier");
    let (status, reply) = server.post(
        &format!("/api/sessions/{id}/messages"),
        json!({ "text": "Actually, that is not true." }),
    );
    assert_eq!(status, 200);
    let (_, session) = server.get(&format!("/api/sessions/{id}"));
    let (_, structured) = server.get(&format!("/api/sessions/{id}/transcript?format=structured"));
    for text in [reply.to_string(), session, structured] {
        for hidden in ["belief", "technique_used", "last_technique", "\"mode\""] {
            assert!(!text.contains(hidden), "{hidden} leaked in {text}");
        }
    }
}

#[test]
fn debug_flag_reveals_state() {
    let server = spawn(None, true);
    let id = server.create_session("climate_denier");
    let (_, reply) = server.post(
        &format!("/api/sessions/{id}/messages"),
        json!({ "text": "Actually, that is not true." }),
    );
    assert!((reply["debug"]["belief"].as_f64().unwrap() - 0.85).abs() < 1e-9);
    assert_eq!(reply["debug"]["mode"], "defensive");
    let (_, session) = server.get_json(&format!("/api/sessions/{id}"));
    assert!(session["turns"][0]["technique_used"].is_string());
}

#[test]
fn message_and_identify_scoring() {
    let server = spawn(None, false);
    let chat = server.create_session("climate_denier");
    let flag = server.create_session("climate_denier");
    let (_, a) = server.post(
        &format!("/api/sessions/{chat}/messages"),
        json!({ "text": "That is cherry picking." }),
    );
    let (_, b) = server.post(
        &format!("/api/sessions/{flag}/identify"),
        json!({ "technique_id": "cherry_picked_data" }),
    );
    assert_eq!(a["newly_identified"], "cherry_picked_data");
    assert_eq!(a["score"], b["score"]);
    assert!(b["text"]
        .as_str()
        .unwrap()
        .starts_with("You got me — that was"));
    let (status, _) = server.post(
        &format!("/api/sessions/{flag}/identify"),
        json!({ "technique_id": "no_such_thing" }),
    );
    assert_eq!(status, 404);
    let (status, body) = server.post(
        &format!("/api/sessions/{chat}/messages"),
        json!({ "text": "  " }),
    );
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "validation");
}

#[test]
fn concluded_session_is_gone_and_replays_events() {
    let server = spawn(None, false);
    let id = concluded_session(&server);
    let (status, body) = server.post(
        &format!("/api/sessions/{id}/messages"),
        json!({ "text": "hi" }),
    );
    assert_eq!(status, 410);
    assert_eq!(body["error"]["code"], "session_closed");
    let mut events = server.open_events(&id);
    assert!(events.head.contains("text/event-stream"));
    assert!(events.wait_for("event: concluded", Duration::from_secs(2)));
    let text = events.received.clone();
    let success = text.find("event: success").expect("success replayed");
    assert!(success < text.find("event: concluded").unwrap());
}

#[test]
fn abandon_then_closed() {
    let server = spawn(None, false);
    let id = server.create_session("flat_earther");
    let (status, body) = server.post(&format!("/api/sessions/{id}/abandon"), json!({}));
    assert_eq!(status, 200);
    assert_eq!(body["status"], "abandoned");
    let (status, _) = server.post(&format!("/api/sessions/{id}/abandon"), json!({}));
    assert_eq!(status, 410);
}

#[test]
fn transcript_formats() {
    let server = spawn(None, false);
    let id = server.create_session("evolution_denier");
    server.post(
        &format!("/api/sessions/{id}/messages"),
        json!({ "text": "hello" }),
    );
    let (status, text) = server.get(&format!("/api/sessions/{id}/transcript?format=text"));
    assert_eq!(status, 200);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(
        lines[0].starts_with("Bot: ") && lines[1] == "User: hello" && lines[2].starts_with("Bot: ")
    );
    let (status, doc) =
        server.get_json(&format!("/api/sessions/{id}/transcript?format=structured"));
    assert_eq!(status, 200);
    assert_eq!(doc["turns"].as_array().unwrap().len(), 3);
    assert_eq!(doc["score_trajectory"], json!([0, 1]));
    let (status, _) = server.get(&format!("/api/sessions/{id}/transcript?format=pdf"));
    assert_eq!(status, 400);
    let (status, _) = server.get("/api/sessions/missing/transcript");
    assert_eq!(status, 404);
}

#[test]
fn questionnaire_flow() {
    let server = spawn(None, false);
    let (_, scales) = server.get_json("/api/questionnaire");
    assert_eq!(scales["placeholder"], true);
    let item = scales["items"][0]["id"].as_str().unwrap().to_string();

    let open = server.create_session("evolution_denier");
    let (status, _) = server.post(
        &format!("/api/sessions/{open}/questionnaire"),
        json!({ "scores": { &item: 4 } }),
    );
    assert_eq!(status, 400);

    let a = concluded_session(&server);
    let b = concluded_session(&server);
    for id in [&a, &b] {
        let (status, body) = server.post(
            &format!("/api/sessions/{id}/questionnaire"),
            json!({ "scores": { &item: 4 } }),
        );
        assert_eq!(status, 201, "{body}");
    }
    let (status, body) = server.post(
        &format!("/api/sessions/{a}/questionnaire"),
        json!({ "scores": { &item: 4 } }),
    );
    assert_eq!(status, 409);
    assert_eq!(body["error"]["code"], "conflict");
    let c = concluded_session(&server);
    for bad in [json!(8), json!(0), json!(-3)] {
        let (status, _) = server.post(
            &format!("/api/sessions/{c}/questionnaire"),
            json!({ "scores": { &item: bad } }),
        );
        assert_eq!(status, 400);
    }
    let (_, stats) = server.get_json("/api/personas/evolution_denier/questionnaire-stats");
    assert_eq!(stats["responses"], 2);
    assert_eq!(stats["items"][&item], json!({ "mean": 4.0, "count": 2 }));
    let (status, _) = server.get_json("/api/personas/nobody/questionnaire-stats");
    assert_eq!(status, 404);
}

#[test]
fn list_sessions_filters() {
    let server = spawn(None, false);
    let done = concluded_session(&server);
    server.create_session("evolution_denier");
    server.create_session("climate_denier");
    let (_, all) = server.get_json("/api/sessions");
    assert_eq!(all.as_array().unwrap().len(), 3);
    let (_, concluded) = server.get_json("/api/sessions?status=concluded");
    let ids: Vec<&Value> = concluded
        .as_array()
        .unwrap()
        .iter()
        .map(|s| &s["id"])
        .collect();
    assert_eq!(ids, [&json!(done)]);
    let (_, climate) = server.get_json("/api/sessions?persona_id=climate_denier");
    assert_eq!(climate.as_array().unwrap().len(), 1);
    let (status, _) = server.get_json("/api/sessions?status=bogus");
    assert_eq!(status, 400);
}

#[test]
fn concurrent_turns_on_one_session_are_rejected() {
    let catalog = Arc::new(Catalog::shipped());
    let server = Arc::new(spawn(
        Some(Arc::new(SlowGateway(MockGateway::new(catalog)))),
        false,
    ));
    let id = server.create_session("evolution_denier");
    let handles: Vec<_> = (0..2)
        .map(|_| {
            let server = server.clone();
            let id = id.clone();
            std::thread::spawn(move || {
                server.post(
                    &format!("/api/sessions/{id}/messages"),
                    json!({ "text": "hello" }),
                )
            })
        })
        .collect();
    let mut results: Vec<(u16, Value)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    results.sort_by_key(|r| r.0);
    assert_eq!(results[0].0, 200);
    assert_eq!(results[1].0, 409);
    assert_eq!(results[1].1["error"]["code"], "session_busy");
    // Distinct sessions do not block each other.
    let other = server.create_session("climate_denier");
    let (status, _) = server.post(
        &format!("/api/sessions/{other}/messages"),
        json!({ "text": "hi" }),
    );
    assert_eq!(status, 200);
}

#[test]
fn upstream_failure_is_502_and_retryable() {
    let catalog = Arc::new(Catalog::shipped());
    let server = spawn(
        Some(Arc::new(MockGateway::with_script(
            catalog,
            Vec::<String>::new(),
        ))),
        false,
    );
    let id = server.create_session("evolution_denier");
    let (status, body) = server.post(
        &format!("/api/sessions/{id}/messages"),
        json!({ "text": "hello" }),
    );
    assert_eq!(status, 502);
    assert_eq!(body["error"]["code"], "upstream");
    let (_, session) = server.get_json(&format!("/api/sessions/{id}"));
    assert_eq!(session["turns"].as_array().unwrap().len(), 1);
}

mod common;

use candor_core::engine::ScenarioKind;
use candor_core::transcript::Transcript;
use candor_service::{ServiceConfig, StorageKind};
use common::{get_json, post_json, request, serve, Mirror};

fn mark(seed: Option<u64>) -> serde_json::Value {
    serde_json::json!({
        "first_name": "Mark",
        "pronouns": "he/him",
        "topic": "machine learning",
        "seed": seed,
    })
}

#[tokio::test]
async fn registration_returns_the_brief() {
    let s = serve(ServiceConfig::for_tests()).await;
    let (status, body) = post_json(s.addr, "/api/sessions", &mark(Some(4))).await;
    assert_eq!(status, 201);
    assert_eq!(body["schema_version"], 1);
    assert!(body["brief"]["background"].as_str().unwrap().contains("machine learning"));
    assert!(!body["brief"]["instruction"].as_str().unwrap().is_empty());
    assert!(!body["character_name"].as_str().unwrap().is_empty());
    assert_eq!(body["seed"], 4);
}

#[tokio::test]
async fn same_profile_and_seed_give_the_same_brief_and_character() {
    let s = serve(ServiceConfig::for_tests()).await;
    let (_, a) = post_json(s.addr, "/api/sessions", &mark(Some(77))).await;
    let (_, b) = post_json(s.addr, "/api/sessions", &mark(Some(77))).await;
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(a["brief"], b["brief"]);
    assert_eq!(a["character_name"], b["character_name"]);
}

#[tokio::test]
async fn missing_topic_names_the_field() {
    let s = serve(ServiceConfig::for_tests()).await;
    let body = serde_json::json!({"first_name": "Mark", "pronouns": "he/him"});
    let (status, err) = post_json(s.addr, "/api/sessions", &body).await;
    assert_eq!(status, 422);
    assert_eq!(err["code"], "invalid_profile");
    assert_eq!(err["field"], "topic");
}

#[tokio::test]
async fn seed_override_wins_over_the_request() {
    let config = ServiceConfig {
        seed_override: Some(5),
        ..ServiceConfig::for_tests()
    };
    let s = serve(config).await;
    let (_, body) = post_json(s.addr, "/api/sessions", &mark(Some(99))).await;
    assert_eq!(body["seed"], 5);
}

#[tokio::test]
async fn summary_and_unknown_session() {
    let s = serve(ServiceConfig::for_tests()).await;
    let id = s.create(1).await;
    let (status, summary) = get_json(s.addr, &format!("/api/sessions/{id}")).await;
    assert_eq!(status, 200);
    assert_eq!(summary["phase"], "briefed");
    assert_eq!(summary["last_event_id"], 0);
    assert_eq!(summary["turns_unopened"], 10);
    assert_eq!(summary["completed"], false);

    let (status, err) = get_json(s.addr, "/api/sessions/nope").await;
    assert_eq!(status, 404);
    assert_eq!(err["code"], "unknown_session");
    let (status, _) = get_json(s.addr, "/api/sessions/nope/transcript").await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn transcript_is_json_only() {
    let s = serve(ServiceConfig::for_tests()).await;
    let id = s.create(1).await;
    let path = format!("/api/sessions/{id}/transcript");
    let (status, _) = request(s.addr, "GET", &path, &[("accept", "text/csv")], None).await;
    assert_eq!(status, 406);
    let (status, body) = request(s.addr, "GET", &path, &[("accept", "application/json")], None).await;
    assert_eq!(status, 200);
    let t = Transcript::from_json(&body).unwrap();
    assert!(t.turns.is_empty());
}

#[tokio::test]
async fn completed_session_transcript_structure_and_round_trip() {
    let s = serve(ServiceConfig::for_tests()).await;
    let id = s.create(12).await;
    let mut ws = s.connect(&id).await.unwrap();
    let mut mirror = Mirror::new(s.initial(&id));
    mirror.replay(&mut ws).await;
    while let Some(cmd) = mirror.next_command(true) {
        mirror.act(&mut ws, cmd).await;
    }
    assert!(mirror.state.is_complete());

    let (status, body) = request(s.addr, "GET", &format!("/api/sessions/{id}/transcript"), &[], None).await;
    assert_eq!(status, 200);
    let t = Transcript::from_json(&body).unwrap();
    assert!(t.completed);
    assert_eq!(t.turns.len(), 10);
    assert!(t.turns[..2].iter().all(|turn| turn.kind().is_none()));
    for kind in ScenarioKind::ALL {
        assert_eq!(t.turns.iter().filter(|turn| turn.kind() == Some(kind)).count(), 2);
    }
    assert_eq!(t.to_json(), body, "export -> import -> export is byte-identical");

    let (_, redacted) = request(s.addr, "GET", &format!("/api/sessions/{id}/transcript?redact=true"), &[], None).await;
    assert!(!redacted.contains("Mark"));
    assert!(redacted.contains("[redacted]"));
}

#[tokio::test]
async fn probes() {
    let s = serve(ServiceConfig::for_tests()).await;
    assert_eq!(request(s.addr, "GET", "/healthz", &[], None).await, (200, "ok".to_string()));
    assert_eq!(request(s.addr, "GET", "/readyz", &[], None).await, (200, "ready".to_string()));
}

#[tokio::test]
async fn file_storage_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        storage: StorageKind::File,
        storage_path: dir.path().to_path_buf(),
        ..ServiceConfig::for_tests()
    };
    let id = {
        let s = serve(config.clone()).await;
        let id = s.create(3).await;
        let mut ws = s.connect(&id).await.unwrap();
        let mut mirror = Mirror::new(s.initial(&id));
        mirror.replay(&mut ws).await;
        for _ in 0..3 {
            let cmd = mirror.next_command(false).unwrap();
            mirror.act(&mut ws, cmd).await;
        }
        id
    };
    let s = serve(config).await;
    let (status, summary) = get_json(s.addr, &format!("/api/sessions/{id}")).await;
    assert_eq!(status, 200);
    assert_eq!(summary["current_turn"], 3);
    assert!(summary["last_event_id"].as_u64().unwrap() >= 5);
}

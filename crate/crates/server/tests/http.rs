use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use ska_core::testkit::{self, StudyShape};
use ska_core::{RoundPhase, Store, StudyConfig, Workbench};
use ska_server::{router, AppState};

const ADMIN: &str = "admin-secret";
const BOOK: &str = include_str!("../../../fixtures/sample-book.md");

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn app_with(wb: Workbench) -> (Router, AppState) {
    let state = AppState::new(wb, None, ADMIN.into());
    (router(state.clone()), state)
}

fn char_span(body: &str, needle: &str, nth: usize) -> (usize, usize) {
    let byte = body.match_indices(needle).nth(nth).unwrap().0;
    let start = body[..byte].chars().count();
    (start, start + needle.chars().count())
}

/// Ingests the fixture and registers three qualified annotators.
async fn study(app: &Router) -> String {
    let (s, tb) = call(
        app,
        "POST",
        "/textbooks",
        Some(ADMIN),
        Some(json!({"id": "book", "text": BOOK, "min_section_chars": 0})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{tb}");
    assert_eq!(tb["section_count"], 5);
    let (s, _) = call(
        app,
        "PUT",
        "/qualification-test",
        Some(ADMIN),
        Some(json!({"section_id": "book.ch1.s1", "gold": ["inverted index", "postings list"]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    for id in ["ann", "bob", "cyd"] {
        let (s, _) = call(
            app,
            "POST",
            "/annotators",
            Some(ADMIN),
            Some(json!({"id": id, "token": format!("{id}-secret")})),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED);
        let (s, out) = call(
            app,
            "POST",
            &format!("/annotators/{id}/qualification"),
            Some(&format!("{id}-secret")),
            Some(json!({"surfaces": ["Inverted index", "postings list"]})),
        )
        .await;
        assert_eq!((s, out["passed"].clone()), (StatusCode::OK, json!(true)));
    }
    let (s, round) = call(
        app,
        "POST",
        "/rounds",
        Some(ADMIN),
        Some(
            json!({"chapter_id": "book.ch1", "participants": ["ann", "bob", "cyd"], "lead": "ann"}),
        ),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{round}");
    round["id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn healthz_reports_build_info() {
    let (app, _) = app_with(Workbench::new(StudyConfig::default()));
    let (s, body) = call(&app, "GET", "/healthz", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], ska_core::VERSION);
}

#[tokio::test]
async fn whole_round_over_http() {
    let (app, state) = app_with(Workbench::new(StudyConfig::default()));
    let round = study(&app).await;
    let (_, tb) = call(&app, "GET", "/textbooks/book", None, None).await;
    let s1 = tb["chapters"][0]["sections"][0]["body"]
        .as_str()
        .unwrap()
        .to_owned();

    let ann = |needle: &str, nth: usize| {
        let (start, end) = char_span(&s1, needle, nth);
        json!({"section_id": "book.ch1.s1", "start": start, "end": end})
    };
    let sets = [
        (
            "ann",
            vec![ann("inverted index", 0), ann("postings list", 0)],
        ),
        ("bob", vec![ann("Inverted Index", 0)]),
        (
            "cyd",
            vec![ann("inverted index", 0), ann("postings list", 0)],
        ),
    ];
    for (who, items) in sets {
        let (s, body) = call(
            &app,
            "POST",
            &format!("/rounds/{round}/submit/annotating"),
            Some(&format!("{who}-secret")),
            Some(json!({ "items": items })),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{body}");
    }
    let (_, status) = call(&app, "GET", &format!("/rounds/{round}"), None, None).await;
    assert_eq!(status["phase"], "missed_review");

    // Wrong phase surfaces as 409 with the phase error body.
    let (s, body) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/submit/annotating"),
        Some("ann-secret"),
        Some(json!({"items": []})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "phase");
    assert_eq!(body["error"]["details"]["actual"], "missed_review");

    let (s, file) = call(
        &app,
        "GET",
        &format!("/rounds/{round}/review/bob"),
        None,
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(file.as_array().unwrap().len(), 1);
    assert_eq!(file[0]["concept"], "postings list");

    let (start, end) = char_span(&s1, "postings list", 1);
    let decision = json!({
        "section_id": "book.ch1.s1",
        "concept": "postings list",
        "verdict": {"accept_with_span": {"start": start, "end": end}},
    });
    let (s, _) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/review/bob"),
        Some("ann-secret"),
        Some(decision.clone()),
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, delta) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/review/bob"),
        Some("bob-secret"),
        Some(decision),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{delta}");
    assert_eq!(delta["created"]["phase"], "missed_review");

    for who in ["ann", "bob", "cyd"] {
        let (s, _) = call(
            &app,
            "POST",
            &format!("/rounds/{round}/submit/missed-review"),
            Some(&format!("{who}-secret")),
            Some(json!({})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, cases) = call(
        &app,
        "GET",
        &format!("/rounds/{round}/disagreements"),
        None,
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!(cases.as_array().unwrap().is_empty());

    let (s, report) = call(
        &app,
        "GET",
        &format!("/rounds/{round}/agreement?phase=before"),
        None,
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["full_consensus_fraction"], 1.0);
    // The number served equals the library value for the same state.
    let direct = state
        .snapshot()
        .await
        .agreement_report(
            &round.as_str().into(),
            ska_core::ReportPhase::BeforeDiscussion,
        )
        .unwrap();
    assert_eq!(report, serde_json::to_value(&direct).unwrap());

    let (s, body) = call(
        &app,
        "GET",
        &format!("/rounds/{round}/agreement?phase=after"),
        None,
        None,
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"]["details"]["annotator"], "ann");

    let (s, _) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/resolutions"),
        Some("bob-secret"),
        Some(json!({})),
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/resolutions"),
        Some("ann-secret"),
        Some(json!({})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, closed) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/close"),
        Some("ann-secret"),
        Some(json!({"changes": [{"add": {"text": "Tag data structures", "examples": []}}]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{closed}");
    assert_eq!(closed["round"]["phase"], "closed");
    assert_eq!(closed["added_rules"], json!(["R1"]));

    let (_, v0) = call(&app, "GET", "/codebook?as_of_round=0", None, None).await;
    assert!(v0["rules"].as_array().unwrap().is_empty());
    let (_, v1) = call(&app, "GET", "/codebook?as_of_round=1", None, None).await;
    assert_eq!(v1["rules"][0]["id"], "R1");
    let (s, _) = call(&app, "GET", "/codebook?as_of_round=x", None, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, csv) = call(&app, "GET", "/stats/table?format=csv", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(csv.as_str().unwrap().starts_with("grams,"));
    let (_, table) = call(&app, "GET", "/stats/table", None, None).await;
    assert_eq!(table["occurrences_after"]["total"], 2);

    let (s, doc) = call(&app, "GET", "/export?include_text=false", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(doc["textbooks"][0]["chapters"][0]["sections"][0]
        .get("body")
        .is_none());
    let (_, full) = call(&app, "GET", "/export", None, None).await;

    let (fresh, _) = app_with(Workbench::new(StudyConfig::default()));
    let (s, _) = call(
        &fresh,
        "POST",
        "/import",
        Some("ann-secret"),
        Some(full.clone()),
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, summary) = call(&fresh, "POST", "/import", Some(ADMIN), Some(full.clone())).await;
    assert_eq!(s, StatusCode::OK, "{summary}");
    assert_eq!(summary["annotations"], 6);
    let (_, again) = call(&fresh, "GET", "/export", None, None).await;
    assert_eq!(again, full);
}

#[tokio::test]
async fn error_statuses() {
    let (app, _) = app_with(Workbench::new(StudyConfig::default()));
    let round = study(&app).await;
    let cases: Vec<(&str, String, Option<&str>, Option<Value>, StatusCode)> = vec![
        (
            "POST",
            "/textbooks".into(),
            None,
            Some(json!({"text": BOOK})),
            StatusCode::FORBIDDEN,
        ),
        (
            "POST",
            "/textbooks".into(),
            Some(ADMIN),
            Some(json!({"id": "book", "text": BOOK})),
            StatusCode::CONFLICT,
        ),
        (
            "POST",
            "/textbooks".into(),
            Some(ADMIN),
            Some(json!({"id": "x", "text": ""})),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "POST",
            "/textbooks".into(),
            Some(ADMIN),
            Some(json!({"nonsense": 1})),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "GET",
            "/textbooks/none".into(),
            None,
            None,
            StatusCode::NOT_FOUND,
        ),
        (
            "GET",
            "/rounds/r9".into(),
            None,
            None,
            StatusCode::NOT_FOUND,
        ),
        (
            "POST",
            format!("/rounds/{round}/submit/annotating"),
            Some("no-such-token"),
            Some(json!({})),
            StatusCode::FORBIDDEN,
        ),
        (
            "POST",
            format!("/rounds/{round}/submit/sideways"),
            Some("ann-secret"),
            Some(json!({})),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "POST",
            format!("/rounds/{round}/submit/annotating"),
            Some("ann-secret"),
            Some(json!({"items": [{"section_id": "book.ch1.s1", "start": 0, "end": 100000}]})),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "POST",
            format!("/rounds/{round}/submit/annotating"),
            Some("ann-secret"),
            Some(json!({"expected_version": 7, "items": []})),
            StatusCode::CONFLICT,
        ),
        (
            "POST",
            "/rounds".into(),
            Some(ADMIN),
            Some(json!({"chapter_id": "book.ch2", "participants": ["ann", "bob"]})),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "GET",
            format!("/rounds/{round}/agreement?phase=during"),
            None,
            None,
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "GET",
            "/stats/table".into(),
            None,
            None,
            StatusCode::CONFLICT,
        ),
        (
            "GET",
            "/export?include_text=maybe".into(),
            None,
            None,
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            "POST",
            "/import".into(),
            Some(ADMIN),
            Some(json!({"format_version": "ska-corpus/99"})),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
    ];
    for (method, uri, token, body, expected) in cases {
        let (s, out) = call(&app, method, &uri, token, body).await;
        assert_eq!(s, expected, "{method} {uri}: {out}");
        if !s.is_success() {
            assert!(out["error"]["message"].is_string(), "{method} {uri}: {out}");
        }
    }
    // Annotators that never qualified cannot be put on a round.
    call(
        &app,
        "POST",
        "/annotators",
        Some(ADMIN),
        Some(json!({"id": "dan"})),
    )
    .await;
    let (s, _) = call(
        &app,
        "POST",
        "/rounds",
        Some(ADMIN),
        Some(json!({"chapter_id": "book.ch2", "participants": ["ann", "bob", "dan"]})),
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn issued_tokens_authenticate() {
    let (app, _) = app_with(Workbench::new(StudyConfig::default()));
    call(
        &app,
        "POST",
        "/textbooks",
        Some(ADMIN),
        Some(json!({"id": "book", "text": BOOK})),
    )
    .await;
    call(
        &app,
        "PUT",
        "/qualification-test",
        Some(ADMIN),
        Some(json!({"section_id": "book.ch1.s1", "gold": ["inverted index"]})),
    )
    .await;
    let (_, created) = call(
        &app,
        "POST",
        "/annotators",
        Some(ADMIN),
        Some(json!({"id": "eve"})),
    )
    .await;
    let token = created["token"].as_str().unwrap().to_owned();
    assert_eq!(token.len(), 32);
    let (s, _) = call(
        &app,
        "POST",
        "/annotators/eve/qualification",
        Some("wrong-token"),
        Some(json!({"surfaces": []})),
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, out) = call(
        &app,
        "POST",
        "/annotators/eve/qualification",
        Some(&token),
        Some(json!({"surfaces": ["inverted index"]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["score"], 1.0);
    let (_, list) = call(&app, "GET", "/annotators", None, None).await;
    assert!(
        list.to_string().find(&token).is_none(),
        "tokens are never listed"
    );
}

/// Every mutation route, as (path suffix, actor, body). `{round}` is substituted.
fn mutations(lead: &str) -> Vec<(RoundPhase, &'static str, String, Value)> {
    vec![
        (
            RoundPhase::Annotating,
            "submit/annotating",
            "bob".into(),
            json!({"items": []}),
        ),
        (
            RoundPhase::MissedReview,
            "submit/missed_review",
            "bob".into(),
            json!({"items": []}),
        ),
        (
            RoundPhase::Discussion,
            "submit/discussion",
            lead.into(),
            json!({"items": []}),
        ),
        (
            RoundPhase::CodebookUpdate,
            "submit/codebook_update",
            lead.into(),
            json!({"items": []}),
        ),
        (
            RoundPhase::MissedReview,
            "review/bob",
            "bob".into(),
            json!({"section_id": "x", "concept": "nothing", "verdict": "reject"}),
        ),
        (
            RoundPhase::Discussion,
            "resolutions",
            lead.into(),
            json!({"items": []}),
        ),
        (
            RoundPhase::CodebookUpdate,
            "close",
            lead.into(),
            json!({"changes": []}),
        ),
    ]
}

#[tokio::test]
async fn every_mutation_is_guarded_in_every_phase() {
    for (i, phase) in RoundPhase::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let shape = StudyShape {
            chapters: 1,
            ..StudyShape::default()
        };
        let mut wb = testkit::setup(&mut rng, &shape);
        let chapter = wb.textbooks()[0].chapters[0].id.clone();
        let round = testkit::drive_round(&mut rng, &mut wb, &chapter, &shape, phase);
        let lead = wb.round(&round).unwrap().lead.to_string();
        let token = |who: &str| {
            let idx = testkit::ANNOTATORS.iter().position(|a| *a == who).unwrap();
            format!("token-{who}-{idx:04}")
        };
        for (target, suffix, who, body) in mutations(&lead) {
            let (app, state) = app_with(wb.clone());
            let before = state.snapshot().await;
            let (s, out) = call(
                &app,
                "POST",
                &format!("/rounds/{round}/{suffix}"),
                Some(&token(&who)),
                Some(body),
            )
            .await;
            let after = state.snapshot().await;
            if target == phase {
                // Allowed in this phase; the bogus review item is rejected on content, not phase.
                if suffix.starts_with("review/") {
                    assert_eq!(
                        s,
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "{phase} {suffix}: {out}"
                    );
                    assert_eq!(before, after);
                } else {
                    assert!(s.is_success(), "{phase} {suffix}: {out}");
                }
            } else {
                assert_eq!(s, StatusCode::CONFLICT, "{phase} {suffix}: {out}");
                assert_eq!(before, after, "{phase} {suffix} changed state");
            }
        }
    }
}

#[tokio::test]
async fn concurrent_submissions_with_the_same_version_linearize() {
    let (app, state) = app_with(Workbench::new(StudyConfig::default()));
    let round = study(&app).await;
    let uri = format!("/rounds/{round}/submit/annotating");
    let body = json!({"expected_version": 0, "items": []});
    let (a, b) = tokio::join!(
        call(&app, "POST", &uri, Some("ann-secret"), Some(body.clone())),
        call(&app, "POST", &uri, Some("bob-secret"), Some(body.clone())),
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    assert_eq!(
        state
            .snapshot()
            .await
            .round(&round.as_str().into())
            .unwrap()
            .version(),
        1
    );
}

#[tokio::test]
async fn mutations_reach_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::new(dir.path().join("study.json"));
    let state = AppState::new(
        Workbench::new(StudyConfig::default()),
        Some(store.clone()),
        ADMIN.into(),
    );
    let app = router(state.clone());
    let round = study(&app).await;
    call(
        &app,
        "POST",
        &format!("/rounds/{round}/submit/annotating"),
        Some("cyd-secret"),
        Some(json!({})),
    )
    .await;
    let on_disk = store.load().unwrap();
    assert_eq!(on_disk, state.snapshot().await);
    assert_eq!(
        on_disk.authenticate("cyd-secret").map(|a| a.as_str()),
        Some("cyd")
    );

    // A failed mutation writes nothing.
    let bytes = std::fs::read(store.path()).unwrap();
    let (s, _) = call(
        &app,
        "POST",
        &format!("/rounds/{round}/submit/annotating"),
        Some("cyd-secret"),
        Some(json!({})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(std::fs::read(store.path()).unwrap(), bytes);
}

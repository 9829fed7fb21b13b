//! Endpoint × role sweep against the committed allow/deny table.

use axum::http::{Method, StatusCode};
use consent_testkit::fixtures::fixture;
use serde_json::{json, Value};

use super::*;

pub const ROLES: [&str; 6] = ["none", "subject", "other_subject", "staff", "admin", "agent"];

pub fn committed_matrix() -> Vec<(String, Vec<String>)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/authz_matrix.csv");
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[1..], ROLES);
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            (cells[0].to_owned(), cells[1..].iter().map(|c| c.to_string()).collect())
        })
        .collect()
}

/// Fixture with subject A (phone-bound, consented, with a study id) and
/// subject B (the "other subject", with their own consent).
struct Scene {
    h: Harness,
    token_a: String,
    token_b: String,
    study_id: String,
}

async fn scene() -> Scene {
    let h = Harness::new();
    let (a, b) = (fixture(0), fixture(1));
    let token_a = h.login(&a.phone).await;
    let token_b = h.login(&b.phone).await;
    assert_eq!(h.post("/consents", Some(&token_a), full_body(&a, &["research", "education"])).await.0, StatusCode::CREATED);
    assert_eq!(h.post("/consents", Some(&token_b), full_body(&b, &["research"])).await.0, StatusCode::CREATED);
    let (_, v) = h
        .post("/study-ids", Some(STAFF_KEY), json!({ "national_id": a.national_id, "baby_id": "B-0001" }))
        .await;
    let study_id = v["study_id"].as_str().unwrap().to_owned();
    Scene {
        h,
        token_a,
        token_b,
        study_id,
    }
}

/// Outcome class of one request: "allow" (2xx), "deny" (401/403), or the status otherwise.
pub fn classify(s: StatusCode) -> String {
    if s.is_success() {
        "allow".into()
    } else if s == StatusCode::UNAUTHORIZED || s == StatusCode::FORBIDDEN {
        "deny".into()
    } else {
        format!("unexpected {s}")
    }
}

async fn probe(endpoint: &str, role: &str) -> String {
    let sc = scene().await;
    let h = &sc.h;
    let token: Option<&str> = match role {
        "none" => None,
        "subject" => Some(&sc.token_a),
        "other_subject" => Some(&sc.token_b),
        "staff" => Some(STAFF_KEY),
        "admin" => Some(ADMIN_KEY),
        "agent" => Some(AGENT_KEY),
        r => panic!("unknown role {r}"),
    };
    let a = fixture(0);
    let nid = a.national_id.clone();
    let (method, uri, body): (Method, String, Option<Value>) = match endpoint {
        "POST /otp" => (Method::POST, "/otp".into(), Some(json!({ "phone": fixture(5).phone }))),
        "POST /otp/verify" => {
            let phone = fixture(6).phone;
            let (_, ch) = h.post("/otp", None, json!({ "phone": phone })).await;
            let code = h.inbox.latest_code(&phone).unwrap();
            (
                Method::POST,
                "/otp/verify".into(),
                Some(json!({ "challenge_id": ch["challenge_id"], "code": code })),
            )
        }
        "POST /consents" => (Method::POST, "/consents".into(), Some(full_body(&a, &["research"]))),
        "GET /consents" => (Method::GET, format!("/consents?national_id={nid}"), None),
        "POST /consents/{index}/withdraw" => (
            Method::POST,
            "/consents/0/withdraw".into(),
            Some(json!({ "national_id": nid, "purposes": ["education"], "attested": true })),
        ),
        "GET /verify" => (Method::GET, format!("/verify?national_id={nid}"), None),
        "POST /study-ids" => (
            Method::POST,
            "/study-ids".into(),
            Some(json!({ "national_id": nid, "baby_id": "B-0002" })),
        ),
        "GET /media-gate" => (Method::GET, format!("/media-gate?study_id={}", sc.study_id), None),
        "GET /stats" => (Method::GET, "/stats".into(), None),
        "POST /providers" => (Method::POST, "/providers".into(), Some(json!({ "staff": "midwife-b", "enabled": true }))),
        "GET /health" => (Method::GET, "/health".into(), None),
        "GET /app" => (Method::GET, "/app".into(), None),
        e => panic!("endpoint {e} has no probe"),
    };
    let (status, _) = h.raw(method, &uri, token, body).await;
    classify(status)
}

/// Runs the sweep; returns the deviations as `(endpoint, role, expected, observed)`.
pub async fn sweep() -> (usize, Vec<(String, String, String, String)>) {
    let mut cells = 0;
    let mut deviations = Vec::new();
    for (endpoint, expected) in committed_matrix() {
        for (role, want) in ROLES.iter().zip(expected) {
            cells += 1;
            let got = probe(&endpoint, role).await;
            if got != want {
                deviations.push((endpoint.clone(), role.to_string(), want, got));
            }
        }
    }
    (cells, deviations)
}

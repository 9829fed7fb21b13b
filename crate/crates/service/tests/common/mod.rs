#![allow(dead_code)]

pub mod authz;

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use consent_core::identity::TestInbox;
use consent_core::secrets::InstallSecret;
use consent_core::vault::PiiFields;
use consent_core::{GasSchedule, TestClock};
use consent_service::config::{Credential, ServiceConfig};
use consent_service::AppState;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const STAFF_KEY: &str = "staff-key-midwife-a-0001";
pub const STAFF_B_KEY: &str = "staff-key-midwife-b-0002";
pub const ADMIN_KEY: &str = "admin-key-registry-00003";
pub const AGENT_KEY: &str = "agent-key-uploader-00004";
/// 2024-01-01 08:00 UTC, a Monday.
pub const START: u64 = 1_704_096_000;

pub fn config() -> ServiceConfig {
    let cred = |name: &str, key: &str| Credential {
        name: name.into(),
        key: key.into(),
    };
    ServiceConfig {
        staff: vec![cred("midwife-a", STAFF_KEY), cred("midwife-b", STAFF_B_KEY)],
        admin: vec![cred("registry", ADMIN_KEY)],
        agent: vec![cred("uploader", AGENT_KEY)],
        ..ServiceConfig::default()
    }
}

pub fn secret() -> InstallSecret {
    InstallSecret::from_bytes([42; 32])
}

pub struct Harness {
    pub state: Arc<AppState>,
    pub app: Router,
    pub clock: Arc<TestClock>,
    pub inbox: Arc<TestInbox>,
}

impl Harness {
    pub fn new() -> Self {
        Self::with_config(config())
    }

    pub fn with_config(cfg: ServiceConfig) -> Self {
        let clock = Arc::new(TestClock::fixed(START));
        let inbox = Arc::new(TestInbox::in_memory());
        let state = AppState::in_memory(cfg, secret(), GasSchedule::newborntime_v1(), clock.clone(), inbox.clone()).unwrap();
        Self::from_state(state, clock, inbox)
    }

    /// Persistent chain and vault under `dir`; request log at `dir/requests.jsonl`.
    pub fn on_disk(dir: &Path) -> Self {
        let clock = Arc::new(TestClock::fixed(START));
        let inbox = Arc::new(TestInbox::in_memory());
        let mut cfg = config();
        cfg.request_log = Some(dir.join("requests.jsonl"));
        let chain = consent_core::ConsentChain::open(
            &dir.join("chain.bin"),
            cfg.owner_address(),
            clock.clone(),
            GasSchedule::newborntime_v1(),
        )
        .unwrap();
        let vault = consent_core::vault::Vault::open(&dir.join("vault"), secret().vault_master_key(), clock.clone()).unwrap();
        let otp = consent_core::identity::OtpService::new(clock.clone(), inbox.clone(), Default::default());
        let request_log = consent_service::reqlog::RequestLog::file(&dir.join("requests.jsonl")).unwrap();
        let state = AppState::new(consent_service::state::Parts {
            config: cfg,
            chain,
            vault,
            otp,
            secret: secret(),
            clock: clock.clone(),
            request_log,
        })
        .unwrap();
        Self::from_state(state, clock, inbox)
    }

    fn from_state(state: Arc<AppState>, clock: Arc<TestClock>, inbox: Arc<TestInbox>) -> Self {
        let app = consent_service::router(state.clone());
        Self {
            state,
            app,
            clock,
            inbox,
        }
    }

    pub async fn raw(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(serde_json::to_vec(&b).unwrap())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, token, body).await;
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, v)
    }

    pub async fn get(&self, uri: &str, token: Option<&str>) -> (StatusCode, Value) {
        self.call(Method::GET, uri, token, None).await
    }

    pub async fn post(&self, uri: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, token, Some(body)).await
    }

    /// Runs the phone verification flow and returns the session token.
    pub async fn login(&self, phone: &str) -> String {
        let (s, ch) = self.post("/otp", None, json!({ "phone": phone })).await;
        assert_eq!(s, StatusCode::OK, "{ch}");
        let code = self.inbox.latest_code(phone).unwrap();
        let (s, sess) = self
            .post("/otp/verify", None, json!({ "challenge_id": ch["challenge_id"], "code": code }))
            .await;
        assert_eq!(s, StatusCode::OK, "{sess}");
        sess["token"].as_str().unwrap().to_owned()
    }

    pub fn blocks(&self) -> usize {
        self.state.snapshot().blocks.len()
    }
}

pub fn full_body(p: &PiiFields, purposes: &[&str]) -> Value {
    json!({
        "national_id": p.national_id,
        "mother_name": p.mother_name,
        "phone": p.phone,
        "purposes": purposes,
        "profile": "full",
        "source": "digital",
    })
}

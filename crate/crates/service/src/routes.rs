use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{middleware, Json, Router};
use chrono::NaiveDate;
use consent_core::contract::{
    CallOutcome, ConsentRecord, ConsentSource, ContractCall, ContractError, ContractState, Profile, Purpose, PurposeSet, PurposeStatus,
    NOT_AUTHORIZED_MESSAGE,
};
use consent_core::etl::{build_stats, export_stats, ExportFormat, TimeRange};
use consent_core::identity::{baby_id, STUDY_ID_PREFIX};
use consent_core::vault::{AccessRole, PiiFields, SubjectKey};
use consent_core::Address;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::auth::{Principal, Role};
use crate::config::{portal_address, staff_address};
use crate::error::ApiError;
use crate::reqlog::{log_requests, GasUsed};
use crate::state::AppState;

const SUBJECT_OR_STAFF: &[Role] = &[Role::Subject, Role::Staff, Role::Admin];
const STAFF: &[Role] = &[Role::Staff, Role::Admin];

pub fn router(state: Arc<AppState>) -> Router {
    let app = match &state.static_dir {
        Some(dir) => Router::new().nest_service("/app", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => Router::new()
            .route("/app", get(placeholder))
            .route("/app/", get(placeholder)),
    };
    Router::new()
        .route("/health", get(health))
        .route("/otp", post(request_otp))
        .route("/otp/verify", post(verify_otp))
        .route("/consents", post(submit_consent).get(list_consents))
        .route("/consents/{index}/withdraw", post(withdraw_consent))
        .route("/verify", get(verify_subject))
        .route("/study-ids", post(create_study_id))
        .route("/media-gate", get(media_gate))
        .route("/stats", get(stats))
        .route("/providers", post(set_provider))
        .merge(app)
        .layer(middleware::from_fn_with_state(state.clone(), log_requests))
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let body = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

fn with_gas(status: StatusCode, body: impl Serialize, gas: u64) -> Response {
    let mut resp = (status, Json(body)).into_response();
    resp.extensions_mut().insert(GasUsed(gas));
    resp
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn non_empty<'a>(v: Option<&'a String>, field: &'static str) -> Result<&'a str, ApiError> {
    match v.map(|s| s.trim()) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(ApiError::bad_request("missing_field", format!("{field} is required"))),
    }
}

fn purpose_set(list: &[Purpose]) -> PurposeSet {
    list.iter().copied().collect()
}

/// On-chain sender for a principal's consent operations.
fn caller_address(p: &Principal) -> Address {
    match p {
        Principal::Subject { .. } => portal_address(),
        Principal::Staff { address, .. } | Principal::Admin { address, .. } => *address,
        Principal::Agent { name } => Address::from_label(&format!("agent:{name}")),
    }
}

impl AppState {
    fn subjects_for_phone(&self, phone: &str) -> Vec<SubjectKey> {
        self.vault.subjects_for_phone(&self.deriver.phone_tag(phone))
    }

    /// The subject a phone session acts for: the named one if it belongs to
    /// the phone, or the phone's only subject.
    fn own_subject(&self, phone: &str, national_id: Option<&str>) -> Result<SubjectKey, ApiError> {
        let mine = self.subjects_for_phone(phone);
        match national_id {
            Some(id) => {
                let sk = self.deriver.derive(id.trim());
                if mine.contains(&sk) {
                    Ok(sk)
                } else {
                    Err(ApiError::forbidden("not_your_subject", "subject is not bound to this session"))
                }
            }
            None => match mine.as_slice() {
                [one] => Ok(*one),
                [] => Err(ApiError::not_found("no_subject", "no consent is registered for this phone")),
                _ => Err(ApiError::bad_request("ambiguous_subject", "national_id is required")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentView {
    pub record_index: u64,
    pub mother_id: String,
    pub purposes: BTreeMap<Purpose, PurposeStatus>,
    pub given_at: u64,
    pub withdrawn_at: Option<u64>,
    pub study_id: Option<String>,
    pub profile: Profile,
    pub source: ConsentSource,
}

impl ConsentView {
    pub fn new(index: usize, r: &ConsentRecord) -> Self {
        Self {
            record_index: index as u64,
            mother_id: r.mother_id.clone(),
            purposes: Purpose::ALL.iter().filter_map(|p| r.status.get(*p).map(|s| (*p, s))).collect(),
            given_at: r.timestamp,
            withdrawn_at: r.withdrawn_at,
            study_id: r.latest_study_id().map(|s| s.value.clone()),
            profile: r.profile,
            source: r.source,
        }
    }
}

fn views(records: &[ConsentRecord]) -> Vec<ConsentView> {
    records.iter().enumerate().map(|(i, r)| ConsentView::new(i, r)).collect()
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snap = s.snapshot();
    let head = snap.blocks.last().map(|b| hex::encode(b.block_hash)).unwrap_or_default();
    Json(serde_json::json!({ "status": "ok", "blocks": snap.blocks.len(), "head": head }))
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>Consent portal</title><p>No web bundle is installed. Set static_dir in the service config.</p>\n")
}

#[derive(Deserialize)]
struct OtpRequest {
    phone: String,
}

async fn request_otp(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: OtpRequest = parse_body(&body)?;
    let issued = blocking(move || Ok(s.otp.request_otp(req.phone.trim())?)).await?;
    Ok(Json(issued).into_response())
}

#[derive(Deserialize)]
struct OtpVerifyRequest {
    challenge_id: String,
    code: String,
}

async fn verify_otp(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: OtpVerifyRequest = parse_body(&body)?;
    let verified = s.otp.verify_otp(&req.challenge_id, req.code.trim())?;
    let session = s.auth.issue(&verified.phone, s.now());
    Ok(Json(session).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitRequest {
    national_id: Option<String>,
    #[serde(default)]
    purposes: Vec<Purpose>,
    profile: Option<Profile>,
    source: Option<ConsentSource>,
    mother_name: Option<String>,
    phone: Option<String>,
}

#[derive(Serialize)]
struct SubmitResponse {
    record_index: u64,
    first_for_subject: bool,
    mother_id: String,
    block_index: Option<u64>,
    gas_used: u64,
}

async fn submit_consent(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let who = s.auth.require(&headers, s.now(), SUBJECT_OR_STAFF)?;
    let req: SubmitRequest = parse_body(&body)?;
    let source = req.source.unwrap_or(ConsentSource::Digital);
    let profile = req.profile.unwrap_or(Profile::Full);
    if source == ConsentSource::Paper && who.role() == Role::Subject {
        return Err(ApiError::forbidden("paper_requires_staff", "paper-signed consents are entered by staff"));
    }
    let purposes = purpose_set(&req.purposes);
    if purposes.is_empty() {
        return Err(ApiError::bad_request("empty_purposes", "at least one purpose is required"));
    }
    let national_id = non_empty(req.national_id.as_ref(), "national_id")?.to_owned();
    let sk = s.deriver.derive(&national_id);

    // Phone that the subject record gets bound to, if any.
    let bind_phone = match &who {
        Principal::Subject { phone } => {
            if req.phone.as_deref().is_some_and(|p| p.trim() != phone) {
                return Err(ApiError::forbidden("phone_mismatch", "phone must match the verified session"));
            }
            let tag = s.deriver.phone_tag(phone);
            if s.vault.get_entry(&sk).and_then(|e| e.phone_tag).is_some_and(|t| t != tag) {
                return Err(ApiError::forbidden("not_your_subject", "subject is bound to another phone"));
            }
            Some(phone.clone())
        }
        _ => req.phone.as_deref().map(str::trim).filter(|p| !p.is_empty()).map(str::to_owned),
    };
    let pii = match profile {
        Profile::Full => Some(PiiFields {
            mother_name: non_empty(req.mother_name.as_ref(), "mother_name")?.to_owned(),
            national_id,
            phone: bind_phone.clone().ok_or_else(|| ApiError::bad_request("missing_field", "phone is required"))?,
        }),
        Profile::Minimal => {
            if req.mother_name.is_some() || (req.phone.is_some() && who.role() != Role::Subject) {
                return Err(ApiError::bad_request("unexpected_pii", "minimal records carry no personal data"));
            }
            None
        }
    };
    let caller = caller_address(&who);
    let is_subject = who.role() == Role::Subject;

    let st = s.clone();
    let (sub, mother_id) = blocking(move || {
        st.mutate(|chain| {
            if st.vault.is_erased(&sk) {
                return Err(ApiError::new(StatusCode::GONE, "subject_erased", "subject data has been erased"));
            }
            // Checked before sealing so a denied call creates no key material.
            if !chain.state().is_authorized(&caller) {
                return Err(ContractError::Unauthorized(NOT_AUTHORIZED_MESSAGE).into());
            }
            let mother_id = st.pseudonyms.mother_id(&sk).0;
            let envelopes = pii.as_ref().map(|p| st.vault.seal_pii(&sk, p)).transpose()?;
            let call = ContractCall::SubmitConsent {
                subject_key: sk,
                mother_id: mother_id.clone(),
                purposes,
                profile,
                source,
                envelopes,
            };
            let sub = chain.transact(caller, &call)?;
            if let Some(phone) = &bind_phone {
                match st.vault.bind_phone(&sk, st.deriver.phone_tag(phone)) {
                    Ok(()) => {}
                    Err(e) if !is_subject => log::warn!("phone binding skipped: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            Ok((sub, mother_id))
        })
    })
    .await?;
    let CallOutcome::ConsentStored {
        record_index,
        first_for_subject,
    } = sub.execution.outcome
    else {
        return Err(ApiError::internal("unexpected outcome for submit"));
    };
    let gas = sub.gas().gas_used;
    let body = SubmitResponse {
        record_index,
        first_for_subject,
        mother_id,
        block_index: sub.receipt.map(|r| r.block_index),
        gas_used: gas,
    };
    Ok(with_gas(StatusCode::CREATED, body, gas))
}

async fn list_consents(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let Principal::Subject { phone } = s.auth.require(&headers, s.now(), &[Role::Subject])? else {
        unreachable!("role checked");
    };
    let subjects = match q.get("national_id") {
        Some(id) => vec![s.own_subject(&phone, Some(id))?],
        None => s.subjects_for_phone(&phone),
    };
    let snap = s.snapshot();
    let mut records = Vec::new();
    for sk in &subjects {
        let (recs, _) = snap.state.query_consent(&portal_address(), sk, &s.schedule)?;
        records.extend(views(&recs));
    }
    Ok(with_gas(StatusCode::OK, serde_json::json!({ "records": records }), 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurposeSummary {
    Granted,
    Revoked,
    None,
}

fn summarize(records: &[ConsentRecord]) -> BTreeMap<Purpose, PurposeSummary> {
    Purpose::ALL
        .iter()
        .map(|p| {
            let statuses: Vec<_> = records.iter().filter_map(|r| r.status.get(*p)).collect();
            let s = if statuses.contains(&PurposeStatus::Granted) {
                PurposeSummary::Granted
            } else if statuses.is_empty() {
                PurposeSummary::None
            } else {
                PurposeSummary::Revoked
            };
            (*p, s)
        })
        .collect()
}

async fn verify_subject(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let who = s.auth.require(&headers, s.now(), STAFF)?;
    let id = non_empty(q.get("national_id"), "national_id")?;
    let include_pii = matches!(q.get("include_pii").map(String::as_str), Some("true" | "1"));
    let sk = s.deriver.derive(id);
    let snap = s.snapshot();
    let (records, _) = snap.state.query_consent(&caller_address(&who), &sk, &s.schedule)?;
    let mut body = serde_json::json!({
        "active": records.iter().any(|r| r.status.any_granted()),
        "purposes": summarize(&records),
        "records": views(&records),
    });
    if include_pii {
        let role = if who.role() == Role::Admin {
            AccessRole::Owner
        } else {
            AccessRole::AuthorizedProvider
        };
        let latest = records.iter().rev().find_map(|r| r.envelopes.clone());
        let st = s.clone();
        let pii = blocking(move || match latest {
            Some(envs) => Ok(Some(st.vault.open_pii(role, &sk, &envs)?)),
            None if st.vault.is_erased(&sk) => Err(consent_core::vault::VaultError::SubjectErased.into()),
            None => Ok(None),
        })
        .await?;
        body["pii"] = serde_json::to_value(pii).map_err(ApiError::internal)?;
    }
    Ok(with_gas(StatusCode::OK, body, 0))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WithdrawRequest {
    national_id: Option<String>,
    purposes: Option<Vec<Purpose>>,
    attested: Option<bool>,
}

async fn withdraw_consent(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(index): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let who = s.auth.require(&headers, s.now(), SUBJECT_OR_STAFF)?;
    let index: u64 = index
        .parse()
        .map_err(|_| ApiError::not_found("no_such_record", "record index must be a number"))?;
    let req: WithdrawRequest = parse_body(&body)?;
    let sk = match &who {
        Principal::Subject { phone } => s.own_subject(phone, req.national_id.as_deref())?,
        _ => {
            if req.attested != Some(true) {
                return Err(ApiError::forbidden("attestation_required", "staff withdrawals must be attested"));
            }
            s.deriver.derive(non_empty(req.national_id.as_ref(), "national_id")?)
        }
    };
    let caller = caller_address(&who);
    let requested = req.purposes.as_deref().map(purpose_set);
    let st = s.clone();
    let (sub, view, erasure) = blocking(move || {
        st.mutate(|chain| {
            let record = chain
                .state()
                .records(&sk)
                .get(index as usize)
                .ok_or_else(|| ApiError::not_found("no_such_record", format!("no record {index}")))?;
            let purposes = requested.unwrap_or_else(|| record.status.granted_set());
            if purposes.is_empty() {
                return Err(ContractError::AlreadyWithdrawn.into());
            }
            let sub = chain.transact(
                caller,
                &ContractCall::WithdrawConsent {
                    subject_key: sk,
                    record_index: index,
                    purposes,
                },
            )?;
            let CallOutcome::ConsentWithdrawn {
                subject_fully_revoked, ..
            } = sub.execution.outcome
            else {
                return Err(ApiError::internal("unexpected outcome for withdraw"));
            };
            if subject_fully_revoked && st.vault.get_entry(&sk).is_some_and(|e| !e.erased) {
                st.vault.erase_subject(&sk)?;
            }
            let view = ConsentView::new(index as usize, &chain.state().records(&sk)[index as usize]);
            Ok((sub, view, subject_fully_revoked))
        })
    })
    .await?;
    let gas = sub.gas().gas_used;
    let body = serde_json::json!({ "record": view, "erasure": erasure, "gas_used": gas });
    Ok(with_gas(StatusCode::OK, body, gas))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyIdRequest {
    national_id: Option<String>,
    baby_id: Option<String>,
}

#[derive(Serialize)]
struct StudyIdResponse {
    study_id: String,
    mother_id: String,
    baby_id: String,
    record_index: u64,
    next_baby_id: String,
    gas_used: u64,
}

/// Next sequential baby id for a subject, after the highest one registered.
pub fn next_baby_id(state: &ContractState, sk: &SubjectKey) -> String {
    let highest = state
        .study_ids
        .values()
        .filter(|r| r.subject_key == *sk)
        .filter_map(|r| r.baby_id.strip_prefix("B-").and_then(|n| n.parse::<u32>().ok()))
        .max()
        .unwrap_or(0);
    baby_id(highest + 1)
}

async fn create_study_id(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let who = s.auth.require(&headers, s.now(), STAFF)?;
    let req: StudyIdRequest = parse_body(&body)?;
    // An explicit baby id makes retries idempotent; without one the next free id is taken.
    let baby = match req.baby_id.as_deref().map(str::trim) {
        Some("") => return Err(ApiError::bad_request("missing_baby_id", "baby_id is empty")),
        b => b.map(str::to_owned),
    };
    let sk = s.deriver.derive(non_empty(req.national_id.as_ref(), "national_id")?);
    let mother = s.pseudonyms.mother_id(&sk);
    let caller = caller_address(&who);
    let st = s.clone();
    let (status, body, gas) = blocking(move || {
        st.mutate(|chain| {
            let baby = baby.unwrap_or_else(|| next_baby_id(chain.state(), &sk));
            let id = st.pseudonyms.study_id(&mother.0, &baby)?;
            let sub = chain.transact(
                caller,
                &ContractCall::CreateStudyId {
                    subject_key: sk,
                    study_id: id.clone(),
                },
            )?;
            let status = match sub.execution.outcome {
                CallOutcome::StudyIdCreated { .. } => StatusCode::CREATED,
                CallOutcome::StudyIdExisting { .. } => StatusCode::OK,
                _ => return Err(ApiError::internal("unexpected outcome for study id")),
            };
            let state = chain.state();
            let record_index = state.study(&id.value).map(|r| r.record_index).unwrap_or_default();
            let gas = sub.gas().gas_used;
            let body = StudyIdResponse {
                study_id: id.value.clone(),
                mother_id: id.mother_id.clone(),
                baby_id: id.baby_id.clone(),
                record_index,
                next_baby_id: next_baby_id(state, &sk),
                gas_used: gas,
            };
            Ok((status, body, gas))
        })
    })
    .await?;
    Ok(with_gas(status, body, gas))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub study_id: String,
    pub allowed: bool,
    pub checked_at: u64,
}

async fn media_gate(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    s.auth.require(&headers, s.now(), &[Role::Agent])?;
    let id = non_empty(q.get("study_id"), "study_id")?;
    if !id.starts_with(STUDY_ID_PREFIX) {
        return Err(ApiError::not_found("unknown_study_id", "no such study id"));
    }
    let snap = s.snapshot();
    let reg = snap
        .state
        .study(id)
        .ok_or_else(|| ApiError::not_found("unknown_study_id", "no such study id"))?;
    let allowed = snap
        .state
        .records(&reg.subject_key)
        .get(reg.record_index as usize)
        .is_some_and(|r| r.status.get(Purpose::Research) == Some(PurposeStatus::Granted));
    let decision = GateDecision {
        study_id: id.to_owned(),
        allowed,
        checked_at: s.now(),
    };
    Ok(with_gas(StatusCode::OK, decision, 0))
}

fn parse_date(q: &HashMap<String, String>, key: &str) -> Result<Option<NaiveDate>, ApiError> {
    q.get(key)
        .filter(|v| !v.is_empty())
        .map(|v| {
            NaiveDate::parse_from_str(v, "%Y-%m-%d")
                .map_err(|_| ApiError::bad_request("invalid_date", format!("{key} must be YYYY-MM-DD")))
        })
        .transpose()
}

async fn stats(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    s.auth.require(&headers, s.now(), &[Role::Admin])?;
    let range = TimeRange::new(parse_date(&q, "from")?, parse_date(&q, "to")?);
    if let (Some(f), Some(t)) = (range.from, range.to) {
        if f > t {
            return Err(ApiError::bad_request("invalid_range", "from is after to"));
        }
    }
    let snap = s.snapshot();
    let stats = build_stats(&snap.blocks, range).map_err(ApiError::internal)?;
    let bytes = export_stats(&stats, ExportFormat::Json).map_err(ApiError::internal)?;
    let mut resp = ([(header::CONTENT_TYPE, "application/json")], bytes).into_response();
    resp.extensions_mut().insert(GasUsed(0));
    Ok(resp)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderRequest {
    staff: String,
    enabled: bool,
}

async fn set_provider(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let who = s.auth.require(&headers, s.now(), &[Role::Admin])?;
    let req: ProviderRequest = parse_body(&body)?;
    if !s.auth.staff_names().any(|n| n == req.staff) {
        return Err(ApiError::not_found("unknown_staff", "no staff member with that name"));
    }
    let provider = staff_address(&req.staff);
    let caller = caller_address(&who);
    let st = s.clone();
    let enabled = req.enabled;
    let sub = blocking(move || {
        st.mutate(|chain| Ok(chain.transact(caller, &ContractCall::SetAuthorizedProvider { provider, enabled })?))
    })
    .await?;
    let gas = sub.gas().gas_used;
    let body = serde_json::json!({ "staff": req.staff, "address": provider, "enabled": enabled, "gas_used": gas });
    Ok(with_gas(StatusCode::OK, body, gas))
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use consent_core::bench::BenchError;
use consent_core::contract::ContractError;
use consent_core::engine::ChainError;
use consent_core::etl::EtlError;
use consent_core::gas::GasError;
use consent_core::identity::{OtpError, PseudonymError};
use consent_core::ledger::LedgerError;
use consent_core::secrets::SecretError;
use consent_core::vault::VaultError;
use serde::Serialize;
use thiserror::Error;

/// Startup and command-line failures.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Secret(#[from] SecretError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Etl(#[from] EtlError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("http: {0}")]
    Http(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Error body sent to clients: `{"error": code, "detail": text}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: &'static str,
    pub detail: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    detail: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    pub fn bad_request(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, detail)
    }

    pub fn unauthenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", "a valid session or API key is required")
    }

    pub fn forbidden(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, error, detail)
    }

    pub fn not_found(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, error, detail)
    }

    pub fn internal(detail: impl std::fmt::Display) -> Self {
        log::error!("internal error: {detail}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            error: self.error,
            detail: &self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ContractError> for ApiError {
    fn from(e: ContractError) -> Self {
        let detail = e.to_string();
        match e {
            ContractError::Unauthorized(_) => Self::forbidden("unauthorized", detail),
            ContractError::EmptyPurposes => Self::bad_request("empty_purposes", detail),
            ContractError::MissingEnvelopes | ContractError::UnexpectedEnvelopes | ContractError::EmptyMotherId => {
                Self::bad_request("invalid_request", detail)
            }
            ContractError::NoSuchRecord { .. } => Self::not_found("no_such_record", detail),
            ContractError::AlreadyWithdrawn => Self::new(StatusCode::CONFLICT, "already_withdrawn", detail),
            ContractError::ConsentInvalid => Self::forbidden("consent_invalid", detail),
            ContractError::InvalidStudyId(_) => Self::bad_request("invalid_study_id", detail),
            ContractError::StudyIdCollision(_) => Self::new(StatusCode::CONFLICT, "study_id_collision", detail),
            ContractError::AlreadyDeployed | ContractError::NotDeployed | ContractError::Gas(_) => Self::internal(detail),
        }
    }
}

impl From<ChainError> for ApiError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::Contract(c) => c.into(),
            other => Self::internal(other),
        }
    }
}

impl From<VaultError> for ApiError {
    fn from(e: VaultError) -> Self {
        let detail = e.to_string();
        match e {
            VaultError::SubjectErased => Self::new(StatusCode::GONE, "subject_erased", detail),
            VaultError::EmptyField(_) | VaultError::FieldTooLong { .. } | VaultError::InvalidField(_) => {
                Self::bad_request("invalid_pii", detail)
            }
            VaultError::Unauthorized => Self::forbidden("unauthorized", detail),
            VaultError::PhoneConflict => Self::forbidden("phone_conflict", detail),
            VaultError::UnknownSubject => Self::not_found("unknown_subject", detail),
            other => Self::internal(other),
        }
    }
}

impl From<OtpError> for ApiError {
    fn from(e: OtpError) -> Self {
        let detail = e.to_string();
        let code = e.code();
        match e {
            OtpError::InvalidPhone => Self::bad_request(code, detail),
            OtpError::RateLimited { .. } => Self::new(StatusCode::TOO_MANY_REQUESTS, code, detail),
            OtpError::Dispatch(_) => Self::new(StatusCode::BAD_GATEWAY, code, detail),
            _ => Self::new(StatusCode::UNAUTHORIZED, code, detail),
        }
    }
}

impl From<PseudonymError> for ApiError {
    fn from(e: PseudonymError) -> Self {
        Self::bad_request("empty_id", e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(ApiError::from(OtpError::Expired).status, StatusCode::UNAUTHORIZED);
        assert_eq!(ApiError::from(OtpError::Expired).error, "expired");
        assert_eq!(
            ApiError::from(OtpError::RateLimited { retry_after: 5 }).status,
            StatusCode::TOO_MANY_REQUESTS
        );
        assert_eq!(ApiError::from(ContractError::AlreadyWithdrawn).status, StatusCode::CONFLICT);
        assert_eq!(ApiError::from(ContractError::ConsentInvalid).error, "consent_invalid");
        assert_eq!(ApiError::from(VaultError::SubjectErased).status, StatusCode::GONE);
    }
}

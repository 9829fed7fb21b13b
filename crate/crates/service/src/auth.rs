use std::collections::HashMap;
use std::sync::Mutex;

use axum::http::{header, HeaderMap};
use consent_core::Address;
use rand::RngCore;
use serde::Serialize;
use subtle::ConstantTimeEq;

use crate::config::{staff_address, Credential, ServiceConfig};
use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Subject,
    Staff,
    Admin,
    Agent,
}

/// Authenticated caller of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    /// Holder of a phone-verified session.
    Subject { phone: String },
    Staff { name: String, address: Address },
    /// Contract owner.
    Admin { name: String, address: Address },
    Agent { name: String },
}

impl Principal {
    pub fn role(&self) -> Role {
        match self {
            Principal::Subject { .. } => Role::Subject,
            Principal::Staff { .. } => Role::Staff,
            Principal::Admin { .. } => Role::Admin,
            Principal::Agent { .. } => Role::Agent,
        }
    }
}

#[derive(Debug, Clone)]
struct Session {
    phone: String,
    expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IssuedSession {
    pub token: String,
    pub role: Role,
    pub expires_at: u64,
}

/// Bearer-token authentication over phone sessions and configured API keys.
pub struct Authenticator {
    sessions: Mutex<HashMap<String, Session>>,
    session_ttl: u64,
    staff: Vec<Credential>,
    admin: Vec<Credential>,
    agent: Vec<Credential>,
    owner: Address,
}

fn key_matches(a: &str, b: &str) -> bool {
    a.len() == b.len() && bool::from(a.as_bytes().ct_eq(b.as_bytes()))
}

impl Authenticator {
    pub fn new(config: &ServiceConfig) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            session_ttl: config.session_ttl_secs,
            staff: config.staff.clone(),
            admin: config.admin.clone(),
            agent: config.agent.clone(),
            owner: config.owner_address(),
        }
    }

    pub fn issue(&self, phone: &str, now: u64) -> IssuedSession {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        let expires_at = now + self.session_ttl;
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        sessions.retain(|_, s| s.expires_at > now);
        sessions.insert(
            token.clone(),
            Session {
                phone: phone.to_owned(),
                expires_at,
            },
        );
        IssuedSession {
            token,
            role: Role::Subject,
            expires_at,
        }
    }

    /// Resolves the bearer token, if any. Unknown or expired tokens yield `None`.
    pub fn resolve(&self, headers: &HeaderMap, now: u64) -> Option<Principal> {
        let token = headers
            .get(header::AUTHORIZATION)?
            .to_str()
            .ok()?
            .strip_prefix("Bearer ")?
            .trim();
        {
            let mut sessions = self.sessions.lock().expect("session table poisoned");
            if let Some(s) = sessions.get(token) {
                if s.expires_at > now {
                    return Some(Principal::Subject { phone: s.phone.clone() });
                }
                sessions.remove(token);
                return None;
            }
        }
        if let Some(c) = self.staff.iter().find(|c| key_matches(&c.key, token)) {
            return Some(Principal::Staff {
                name: c.name.clone(),
                address: staff_address(&c.name),
            });
        }
        if let Some(c) = self.admin.iter().find(|c| key_matches(&c.key, token)) {
            return Some(Principal::Admin {
                name: c.name.clone(),
                address: self.owner,
            });
        }
        self.agent
            .iter()
            .find(|c| key_matches(&c.key, token))
            .map(|c| Principal::Agent { name: c.name.clone() })
    }

    /// Resolves and checks the role in one step: 401 without credentials, 403 for a wrong role.
    pub fn require(&self, headers: &HeaderMap, now: u64, allowed: &[Role]) -> Result<Principal, ApiError> {
        let p = self.resolve(headers, now).ok_or_else(ApiError::unauthenticated)?;
        if allowed.contains(&p.role()) {
            Ok(p)
        } else {
            Err(ApiError::forbidden("forbidden", "role may not call this endpoint"))
        }
    }

    pub fn staff_names(&self) -> impl Iterator<Item = &str> {
        self.staff.iter().map(|c| c.name.as_str())
    }
}

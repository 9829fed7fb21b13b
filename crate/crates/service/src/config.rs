use std::path::{Path, PathBuf};

use consent_core::Address;
use serde::Deserialize;

use crate::error::ServiceError;

/// A named API credential for staff, administrators or upload agents.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Credential {
    pub name: String,
    pub key: String,
}

/// Service settings loaded from TOML.
///
/// ```toml
/// owner = "hospital-admin"
/// session_ttl_secs = 900
/// otp_inbox = "otp_inbox.tsv"
/// request_log = "requests.jsonl"
/// static_dir = "webui/dist"
///
/// [[staff]]
/// name = "midwife-a"
/// key = "..."
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Label whose address owns the contract.
    #[serde(default = "default_owner")]
    pub owner: String,
    #[serde(default = "default_session_ttl")]
    pub session_ttl_secs: u64,
    /// Test inbox file for one-time codes. Codes are only logged when unset.
    #[serde(default)]
    pub otp_inbox: Option<PathBuf>,
    /// JSON-lines request log. Written to stdout when unset.
    #[serde(default)]
    pub request_log: Option<PathBuf>,
    /// Directory served under `/app`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub staff: Vec<Credential>,
    #[serde(default)]
    pub admin: Vec<Credential>,
    #[serde(default)]
    pub agent: Vec<Credential>,
}

fn default_owner() -> String {
    "consent-owner".into()
}

fn default_session_ttl() -> u64 {
    900
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            owner: default_owner(),
            session_ttl_secs: default_session_ttl(),
            otp_inbox: None,
            request_log: None,
            static_dir: None,
            staff: Vec::new(),
            admin: Vec::new(),
            agent: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.otp_inbox, &mut cfg.request_log, &mut cfg.static_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ServiceError> {
        let all: Vec<&Credential> = self.staff.iter().chain(&self.admin).chain(&self.agent).collect();
        for (i, c) in all.iter().enumerate() {
            if c.key.len() < 16 {
                return Err(ServiceError::Config(format!("key for {:?} is shorter than 16 characters", c.name)));
            }
            if all[..i].iter().any(|o| o.key == c.key) {
                return Err(ServiceError::Config(format!("key for {:?} is reused", c.name)));
            }
        }
        for (i, s) in self.staff.iter().enumerate() {
            if self.staff[..i].iter().any(|o| o.name == s.name) {
                return Err(ServiceError::Config(format!("duplicate staff name {:?}", s.name)));
            }
        }
        Ok(())
    }

    pub fn owner_address(&self) -> Address {
        Address::from_label(&self.owner)
    }
}

/// On-chain identity of a staff member.
pub fn staff_address(name: &str) -> Address {
    Address::from_label(&format!("staff:{name}"))
}

/// Provider identity the service uses when acting for a verified subject.
pub fn portal_address() -> Address {
    Address::from_label("portal")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_credentials_and_defaults() {
        let cfg = ServiceConfig::parse(
            r#"
            [[staff]]
            name = "m1"
            key = "0123456789abcdef0"
            [[agent]]
            name = "uploader"
            key = "fedcba98765432100"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.owner, "consent-owner");
        assert_eq!(cfg.session_ttl_secs, 900);
        assert_eq!(cfg.staff[0].name, "m1");
        assert_eq!(cfg.agent.len(), 1);
    }

    #[test]
    fn rejects_short_and_reused_keys() {
        assert!(ServiceConfig::parse("[[staff]]\nname='a'\nkey='short'\n").is_err());
        let reused = "[[staff]]\nname='a'\nkey='0123456789abcdef'\n[[admin]]\nname='b'\nkey='0123456789abcdef'\n";
        assert!(ServiceConfig::parse(reused).is_err());
        assert!(ServiceConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svc.toml");
        std::fs::write(&path, "otp_inbox = 'inbox.tsv'\nrequest_log = '/abs/log'\n").unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(cfg.otp_inbox.unwrap(), dir.path().join("inbox.tsv"));
        assert_eq!(cfg.request_log.unwrap(), PathBuf::from("/abs/log"));
    }
}

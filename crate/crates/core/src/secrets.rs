//! Install-specific secret material.
//!
//! One 32-byte install secret is supplied through the environment or a key
//! file; every other key (vault master key, subject-key salt, pseudonym key)
//! is derived from it with HKDF-SHA256 under a distinct label.

use std::fmt;
use std::path::Path;

use hkdf::Hkdf;
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

pub const MASTER_KEY_ENV: &str = "CONSENT_MASTER_KEY";

#[derive(Debug, Error)]
pub enum SecretError {
    #[error("secret must be 64 hex characters (32 bytes)")]
    BadFormat,
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("reading key file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct InstallSecret([u8; 32]);

impl fmt::Debug for InstallSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InstallSecret(..)")
    }
}

impl InstallSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, SecretError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out).map_err(|_| SecretError::BadFormat)?;
        Ok(Self(out))
    }

    pub fn from_env() -> Result<Self, SecretError> {
        let v = std::env::var(MASTER_KEY_ENV).map_err(|_| SecretError::MissingEnv(MASTER_KEY_ENV))?;
        Self::from_hex(&v)
    }

    pub fn from_file(path: &Path) -> Result<Self, SecretError> {
        Self::from_hex(&std::fs::read_to_string(path)?)
    }

    pub fn generate() -> Self {
        let mut out = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut out);
        Self(out)
    }

    pub fn derive(&self, label: &str) -> [u8; 32] {
        let hk = Hkdf::<Sha256>::new(Some(b"consent-ledger/v1"), &self.0);
        let mut out = [0u8; 32];
        hk.expand(label.as_bytes(), &mut out)
            .expect("32 bytes is a valid HKDF output length");
        out
    }

    pub fn vault_master_key(&self) -> [u8; 32] {
        self.derive("vault-master-key")
    }

    pub fn subject_salt(&self) -> [u8; 32] {
        self.derive("subject-key-salt")
    }

    pub fn pseudonym_key(&self) -> [u8; 32] {
        self.derive("pseudonym-key")
    }
}

use std::fmt;

use data_encoding::BASE32_NOPAD;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::vault::SubjectKey;

type HmacSha256 = Hmac<Sha256>;

pub const MOTHER_ID_PREFIX: &str = "M-";
pub const STUDY_ID_PREFIX: &str = "NBT-";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PseudonymError {
    #[error("mother id and baby id must both be non-empty")]
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotherId(pub String);

impl fmt::Display for MotherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StudyId {
    pub value: String,
    pub mother_id: String,
    pub baby_id: String,
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

/// Sequential baby id for the `n`-th child registered to a mother (1-based).
pub fn baby_id(n: u32) -> String {
    format!("B-{n:04}")
}

/// Keyed-hash pseudonym generator for Mother IDs and Study IDs.
#[derive(Clone)]
pub struct Pseudonymizer {
    key: Zeroizing<[u8; 32]>,
}

impl fmt::Debug for Pseudonymizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Pseudonymizer(..)")
    }
}

impl Pseudonymizer {
    pub fn new(key: [u8; 32]) -> Self {
        Self {
            key: Zeroizing::new(key),
        }
    }

    /// Eight base32 characters (40 bits) of HMAC-SHA256 over a
    /// domain-separated, length-prefixed message.
    fn tag(&self, domain: &str, parts: &[&[u8]]) -> String {
        let mut mac = HmacSha256::new_from_slice(&*self.key).expect("any key length");
        mac.update(domain.as_bytes());
        for p in parts {
            mac.update(&(p.len() as u32).to_be_bytes());
            mac.update(p);
        }
        let digest = mac.finalize().into_bytes();
        BASE32_NOPAD.encode(&digest[..5])
    }

    pub fn mother_id(&self, subject: &SubjectKey) -> MotherId {
        MotherId(format!("{MOTHER_ID_PREFIX}{}", self.tag("mother", &[subject.as_bytes()])))
    }

    /// Ordered combination: `(a, b)` and `(b, a)` give different ids.
    pub fn study_id(&self, mother_id: &str, baby_id: &str) -> Result<StudyId, PseudonymError> {
        let (m, b) = (mother_id.trim(), baby_id.trim());
        if m.is_empty() || b.is_empty() {
            return Err(PseudonymError::EmptyId);
        }
        Ok(StudyId {
            value: format!("{STUDY_ID_PREFIX}{}", self.tag("study", &[m.as_bytes(), b.as_bytes()])),
            mother_id: m.to_owned(),
            baby_id: b.to_owned(),
        })
    }
}

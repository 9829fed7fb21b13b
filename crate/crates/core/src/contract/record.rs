use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::identity::StudyId;
use crate::vault::{PiiEnvelopes, SubjectKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Research,
    Education,
}

impl Purpose {
    pub const ALL: [Purpose; 2] = [Purpose::Research, Purpose::Education];

    fn bit(self) -> u8 {
        match self {
            Purpose::Research => 0b01,
            Purpose::Education => 0b10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Purpose::Research => "research",
            Purpose::Education => "education",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Purpose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "research" => Ok(Purpose::Research),
            "education" => Ok(Purpose::Education),
            other => Err(format!("unknown purpose {other:?}")),
        }
    }
}

/// Set of purposes packed into one byte.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PurposeSet(u8);

impl PurposeSet {
    pub const EMPTY: PurposeSet = PurposeSet(0);
    pub const ALL: PurposeSet = PurposeSet(0b11);

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::ALL.0 == 0).then_some(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, p: Purpose) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn insert(&mut self, p: Purpose) {
        self.0 |= p.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Purpose> {
        Purpose::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl FromIterator<Purpose> for PurposeSet {
    fn from_iter<I: IntoIterator<Item = Purpose>>(iter: I) -> Self {
        let mut s = PurposeSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl fmt::Debug for PurposeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for PurposeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for PurposeSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<Purpose>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurposeStatus {
    Granted,
    Revoked,
}

/// Per-purpose status of one record. Purposes never listed are absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StatusMap {
    pub research: Option<PurposeStatus>,
    pub education: Option<PurposeStatus>,
}

impl StatusMap {
    pub fn granted(purposes: PurposeSet) -> Self {
        let mut m = StatusMap::default();
        for p in purposes.iter() {
            m.set(p, PurposeStatus::Granted);
        }
        m
    }

    pub fn get(&self, p: Purpose) -> Option<PurposeStatus> {
        match p {
            Purpose::Research => self.research,
            Purpose::Education => self.education,
        }
    }

    pub fn set(&mut self, p: Purpose, s: PurposeStatus) {
        match p {
            Purpose::Research => self.research = Some(s),
            Purpose::Education => self.education = Some(s),
        }
    }

    pub fn granted_set(&self) -> PurposeSet {
        Purpose::ALL
            .into_iter()
            .filter(|p| self.get(*p) == Some(PurposeStatus::Granted))
            .collect()
    }

    pub fn any_granted(&self) -> bool {
        !self.granted_set().is_empty()
    }

    fn encode(&self) -> u8 {
        let code = |s: Option<PurposeStatus>| match s {
            None => 0u8,
            Some(PurposeStatus::Granted) => 1,
            Some(PurposeStatus::Revoked) => 2,
        };
        code(self.research) | (code(self.education) << 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    Minimal,
}

impl Profile {
    pub fn code(self) -> u8 {
        match self {
            Profile::Full => 0,
            Profile::Minimal => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, DecodeError> {
        match c {
            0 => Ok(Profile::Full),
            1 => Ok(Profile::Minimal),
            other => Err(DecodeError::Invalid(format!("profile {other}"))),
        }
    }
}

/// How the consent reached the system. Metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentSource {
    Digital,
    Paper,
}

impl ConsentSource {
    pub fn code(self) -> u8 {
        match self {
            ConsentSource::Digital => 0,
            ConsentSource::Paper => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, DecodeError> {
        match c {
            0 => Ok(ConsentSource::Digital),
            1 => Ok(ConsentSource::Paper),
            other => Err(DecodeError::Invalid(format!("source {other}"))),
        }
    }
}

/// One on-ledger consent record. PII is only ever present as ciphertext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsentRecord {
    pub patient: Address,
    pub healthcare_provider: Address,
    pub status: StatusMap,
    pub envelopes: Option<PiiEnvelopes>,
    pub timestamp: u64,
    pub withdrawn_at: Option<u64>,
    pub study_ids: Vec<StudyId>,
    pub subject_key: SubjectKey,
    pub mother_id: String,
    pub profile: Profile,
    pub source: ConsentSource,
}

impl ConsentRecord {
    pub fn latest_study_id(&self) -> Option<&StudyId> {
        self.study_ids.last()
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.fixed(self.patient.as_bytes())
            .fixed(self.healthcare_provider.as_bytes())
            .u8(self.status.encode())
            .u64(self.timestamp)
            .u64(self.withdrawn_at.unwrap_or(0))
            .fixed(self.subject_key.as_bytes())
            .str(&self.mother_id)
            .u8(self.profile.code())
            .u8(self.source.code());
        match &self.envelopes {
            Some(envs) => {
                e.u8(1);
                envs.encode(e);
            }
            None => {
                e.u8(0);
            }
        }
        e.u32(self.study_ids.len() as u32);
        for s in &self.study_ids {
            e.str(&s.value).str(&s.mother_id).str(&s.baby_id);
        }
    }
}

pub(crate) fn decode_purposes(d: &mut Decoder<'_>) -> Result<PurposeSet, DecodeError> {
    let bits = d.u8()?;
    PurposeSet::from_bits(bits).ok_or_else(|| DecodeError::Invalid(format!("purpose bits {bits:#04b}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purpose_set_bits() {
        let s: PurposeSet = [Purpose::Education].into_iter().collect();
        assert!(s.contains(Purpose::Education) && !s.contains(Purpose::Research));
        assert_eq!(PurposeSet::from_bits(0b100), None);
        assert_eq!(PurposeSet::ALL.len(), 2);
        assert_eq!(serde_json::to_string(&PurposeSet::ALL).unwrap(), r#"["research","education"]"#);
    }

    #[test]
    fn status_map_tracks_grants() {
        let mut m = StatusMap::granted(PurposeSet::ALL);
        assert!(m.any_granted());
        m.set(Purpose::Research, PurposeStatus::Revoked);
        assert_eq!(m.granted_set(), [Purpose::Education].into_iter().collect());
        m.set(Purpose::Education, PurposeStatus::Revoked);
        assert!(!m.any_granted());
    }
}

//! Consent contract state machine.
//!
//! Preconditions gate every call; only when all of them hold does the call
//! mutate state and emit events. A failed call leaves the state untouched.
//!
//! Access: the owner and authorized providers may call any consent
//! operation; only the owner may change the provider set.

mod call;
mod record;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use call::ContractCall;
pub use record::{ConsentRecord, ConsentSource, Profile, Purpose, PurposeSet, PurposeStatus, StatusMap};

use crate::address::{sha256, Address, Hash32};
use crate::codec::Encoder;
use crate::gas::{meter, GasError, GasReceipt, GasSchedule, OpDescriptor, OpKind};
use crate::identity::StudyId;
use crate::ledger::{EventName, PendingEvent};
use crate::vault::SubjectKey;

pub const ONLY_OWNER_MESSAGE: &str = "Only the contract owner can call this function";
pub const NOT_AUTHORIZED_MESSAGE: &str = "Caller is not an authorized healthcare provider";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContractError {
    #[error("{0}")]
    Unauthorized(&'static str),
    #[error("at least one purpose is required")]
    EmptyPurposes,
    #[error("full-profile records need all three envelopes")]
    MissingEnvelopes,
    #[error("minimal-profile records carry no envelopes")]
    UnexpectedEnvelopes,
    #[error("mother id is empty")]
    EmptyMotherId,
    #[error("no record {index} for subject")]
    NoSuchRecord { index: u64 },
    #[error("none of the listed purposes is currently granted")]
    AlreadyWithdrawn,
    #[error("no valid consent for subject")]
    ConsentInvalid,
    #[error("study id does not belong to this subject: {0}")]
    InvalidStudyId(String),
    #[error("study id {0} is already registered to a different pair")]
    StudyIdCollision(String),
    #[error("contract already deployed")]
    AlreadyDeployed,
    #[error("contract not deployed")]
    NotDeployed,
    #[error(transparent)]
    Gas(#[from] GasError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallOutcome {
    Deployed { owner: Address },
    ConsentStored { record_index: u64, first_for_subject: bool },
    ConsentWithdrawn {
        record_index: u64,
        revoked: PurposeSet,
        /// Every purpose of every record of the subject is now revoked.
        subject_fully_revoked: bool,
    },
    StudyIdCreated { study_id: StudyId, record_index: u64 },
    /// The pair was already registered; nothing changed.
    StudyIdExisting { study_id: StudyId },
    ProviderUpdated { provider: Address, enabled: bool },
}

impl CallOutcome {
    /// Whether the call changed state (and so belongs on the ledger).
    pub fn mutated(&self) -> bool {
        !matches!(self, CallOutcome::StudyIdExisting { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub outcome: CallOutcome,
    pub events: Vec<PendingEvent>,
    pub gas: GasReceipt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyRegistration {
    pub mother_id: String,
    pub baby_id: String,
    pub subject_key: SubjectKey,
    pub record_index: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContractState {
    pub owner: Option<Address>,
    pub authorized_providers: BTreeSet<Address>,
    pub patient_consents: BTreeMap<SubjectKey, Vec<ConsentRecord>>,
    pub patients: BTreeSet<SubjectKey>,
    pub study_ids: BTreeMap<String, StudyRegistration>,
}

impl ContractState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self, subject: &SubjectKey) -> &[ConsentRecord] {
        self.patient_consents.get(subject).map_or(&[], Vec::as_slice)
    }

    pub fn is_authorized(&self, caller: &Address) -> bool {
        self.owner.as_ref() == Some(caller) || self.authorized_providers.contains(caller)
    }

    fn require_authorized(&self, caller: &Address) -> Result<(), ContractError> {
        if self.owner.is_none() {
            return Err(ContractError::NotDeployed);
        }
        if self.is_authorized(caller) {
            Ok(())
        } else {
            Err(ContractError::Unauthorized(NOT_AUTHORIZED_MESSAGE))
        }
    }

    fn require_owner(&self, caller: &Address) -> Result<(), ContractError> {
        match self.owner {
            None => Err(ContractError::NotDeployed),
            Some(o) if o == *caller => Ok(()),
            Some(_) => Err(ContractError::Unauthorized(ONLY_OWNER_MESSAGE)),
        }
    }

    /// Any record of the subject with some purpose currently granted.
    pub fn has_valid_consent(&self, subject: &SubjectKey) -> bool {
        self.records(subject).iter().any(|r| r.status.any_granted())
    }

    pub fn study(&self, study_id: &str) -> Option<&StudyRegistration> {
        self.study_ids.get(study_id)
    }

    /// Read-only lookup. Costs no gas.
    pub fn query_consent(
        &self,
        caller: &Address,
        subject: &SubjectKey,
        schedule: &GasSchedule,
    ) -> Result<(Vec<ConsentRecord>, GasReceipt), ContractError> {
        self.require_authorized(caller)?;
        let gas = meter(schedule, &OpDescriptor::query())?;
        Ok((self.records(subject).to_vec(), gas))
    }

    pub fn execute(
        &mut self,
        caller: Address,
        call: &ContractCall,
        timestamp: u64,
        schedule: &GasSchedule,
    ) -> Result<Execution, ContractError> {
        match call {
            ContractCall::Deploy => {
                if self.owner.is_some() {
                    return Err(ContractError::AlreadyDeployed);
                }
                let gas = meter(schedule, &OpDescriptor::deploy())?;
                self.owner = Some(caller);
                Ok(Execution {
                    outcome: CallOutcome::Deployed { owner: caller },
                    events: Vec::new(),
                    gas,
                })
            }
            ContractCall::SubmitConsent {
                subject_key,
                mother_id,
                purposes,
                profile,
                source,
                envelopes,
            } => {
                self.require_authorized(&caller)?;
                if purposes.is_empty() {
                    return Err(ContractError::EmptyPurposes);
                }
                match (profile, envelopes) {
                    (Profile::Full, None) => return Err(ContractError::MissingEnvelopes),
                    (Profile::Minimal, Some(_)) => return Err(ContractError::UnexpectedEnvelopes),
                    _ => {}
                }
                if mother_id.trim().is_empty() {
                    return Err(ContractError::EmptyMotherId);
                }
                let first = self.records(subject_key).is_empty();
                let mut desc = OpDescriptor::add(first, *profile);
                if let Some(envs) = envelopes {
                    desc.envelope_words = envs.storage_words();
                }
                let gas = meter(schedule, &desc)?;

                let patient = Address::from_digest_low(subject_key.as_bytes());
                let list = self.patient_consents.entry(*subject_key).or_default();
                let record_index = list.len() as u64;
                list.push(ConsentRecord {
                    patient,
                    healthcare_provider: caller,
                    status: StatusMap::granted(*purposes),
                    envelopes: envelopes.clone(),
                    timestamp,
                    withdrawn_at: None,
                    study_ids: Vec::new(),
                    subject_key: *subject_key,
                    mother_id: mother_id.clone(),
                    profile: *profile,
                    source: *source,
                });
                self.patients.insert(*subject_key);

                let events = vec![
                    PendingEvent::new(EventName::ConsentGiven)
                        .indexed("subject_key", subject_key.0)
                        .data("record_index", record_index.to_be_bytes())
                        .data("purposes", [purposes.bits()])
                        .data("profile", [profile.code()])
                        .data("source", [source.code()])
                        .data("mother_id", mother_id.as_bytes())
                        .data("provider", caller.as_bytes().as_slice()),
                    consent_changed(patient, caller, true, timestamp),
                ];
                Ok(Execution {
                    outcome: CallOutcome::ConsentStored {
                        record_index,
                        first_for_subject: first,
                    },
                    events,
                    gas,
                })
            }
            ContractCall::WithdrawConsent {
                subject_key,
                record_index,
                purposes,
            } => {
                self.require_authorized(&caller)?;
                let records = self.records(subject_key);
                let position = *record_index;
                if position >= records.len() as u64 {
                    return Err(ContractError::NoSuchRecord { index: position });
                }
                let record = &records[position as usize];
                let revoked: PurposeSet = purposes
                    .iter()
                    .filter(|p| record.status.get(*p) == Some(PurposeStatus::Granted))
                    .collect();
                if revoked.is_empty() {
                    return Err(ContractError::AlreadyWithdrawn);
                }
                let gas = meter(schedule, &OpDescriptor::revoke(position))?;

                let list = self.patient_consents.get_mut(subject_key).expect("checked above");
                let record = &mut list[position as usize];
                for p in revoked.iter() {
                    record.status.set(p, PurposeStatus::Revoked);
                }
                record.withdrawn_at = Some(timestamp);
                let patient = record.patient;
                let remaining = record.status.granted_set();
                let subject_fully_revoked = !list.iter().any(|r| r.status.any_granted());

                let events = vec![
                    PendingEvent::new(EventName::ConsentWithdrawn)
                        .indexed("subject_key", subject_key.0)
                        .data("record_index", position.to_be_bytes())
                        .data("purposes", [revoked.bits()])
                        .data("remaining", [remaining.bits()])
                        .data("provider", caller.as_bytes().as_slice()),
                    consent_changed(patient, caller, false, timestamp),
                ];
                Ok(Execution {
                    outcome: CallOutcome::ConsentWithdrawn {
                        record_index: position,
                        revoked,
                        subject_fully_revoked,
                    },
                    events,
                    gas,
                })
            }
            ContractCall::CreateStudyId { subject_key, study_id } => {
                self.require_authorized(&caller)?;
                let records = self.records(subject_key);
                let Some(record_index) = records.iter().rposition(|r| r.status.any_granted()) else {
                    return Err(ContractError::ConsentInvalid);
                };
                let record = &records[record_index];
                if study_id.mother_id != record.mother_id {
                    return Err(ContractError::InvalidStudyId(format!(
                        "mother id {} does not match subject",
                        study_id.mother_id
                    )));
                }
                if study_id.baby_id.trim().is_empty() {
                    return Err(ContractError::InvalidStudyId("empty baby id".into()));
                }
                let existing = self
                    .study_ids
                    .iter()
                    .find(|(_, r)| r.mother_id == study_id.mother_id && r.baby_id == study_id.baby_id);
                if let Some((value, reg)) = existing {
                    return Ok(Execution {
                        outcome: CallOutcome::StudyIdExisting {
                            study_id: StudyId {
                                value: value.clone(),
                                mother_id: reg.mother_id.clone(),
                                baby_id: reg.baby_id.clone(),
                            },
                        },
                        events: Vec::new(),
                        gas: GasReceipt::zero(OpKind::CreateStudyId, schedule),
                    });
                }
                if self.study_ids.contains_key(&study_id.value) {
                    return Err(ContractError::StudyIdCollision(study_id.value.clone()));
                }
                let gas = meter(schedule, &OpDescriptor::create_study_id())?;
                let record_index = record_index as u64;
                self.study_ids.insert(
                    study_id.value.clone(),
                    StudyRegistration {
                        mother_id: study_id.mother_id.clone(),
                        baby_id: study_id.baby_id.clone(),
                        subject_key: *subject_key,
                        record_index,
                    },
                );
                self.patient_consents.get_mut(subject_key).expect("has records")[record_index as usize]
                    .study_ids
                    .push(study_id.clone());
                let events = vec![PendingEvent::new(EventName::StudyIdCreated)
                    .indexed("subject_key", subject_key.0)
                    .data("study_id", study_id.value.as_bytes())
                    .data("mother_id", study_id.mother_id.as_bytes())
                    .data("baby_id", study_id.baby_id.as_bytes())
                    .data("record_index", record_index.to_be_bytes())];
                Ok(Execution {
                    outcome: CallOutcome::StudyIdCreated {
                        study_id: study_id.clone(),
                        record_index,
                    },
                    events,
                    gas,
                })
            }
            ContractCall::SetAuthorizedProvider { provider, enabled } => {
                self.require_owner(&caller)?;
                let present = self.authorized_providers.contains(provider);
                let gas = meter(schedule, &OpDescriptor::set_provider(*enabled && !present))?;
                if *enabled {
                    self.authorized_providers.insert(*provider);
                } else {
                    self.authorized_providers.remove(provider);
                }
                Ok(Execution {
                    outcome: CallOutcome::ProviderUpdated {
                        provider: *provider,
                        enabled: *enabled,
                    },
                    events: Vec::new(),
                    gas,
                })
            }
        }
    }

    /// Canonical encoding of the whole state.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match &self.owner {
            Some(o) => e.u8(1).fixed(o.as_bytes()),
            None => e.u8(0),
        };
        e.u32(self.authorized_providers.len() as u32);
        for p in &self.authorized_providers {
            e.fixed(p.as_bytes());
        }
        e.u32(self.patient_consents.len() as u32);
        for (k, records) in &self.patient_consents {
            e.fixed(k.as_bytes()).u32(records.len() as u32);
            for r in records {
                r.encode(&mut e);
            }
        }
        e.u32(self.patients.len() as u32);
        for k in &self.patients {
            e.fixed(k.as_bytes());
        }
        e.u32(self.study_ids.len() as u32);
        for (v, r) in &self.study_ids {
            e.str(v)
                .str(&r.mother_id)
                .str(&r.baby_id)
                .fixed(r.subject_key.as_bytes())
                .u64(r.record_index);
        }
        e.finish()
    }

    pub fn state_root(&self) -> Hash32 {
        sha256(&self.encode())
    }
}

fn consent_changed(patient: Address, provider: Address, given: bool, timestamp: u64) -> PendingEvent {
    PendingEvent::new(EventName::ConsentChanged)
        .indexed("patient", patient.to_word())
        .indexed("healthcareProvider", provider.to_word())
        .data("isConsentGiven", [u8::from(given)])
        .data("timestamp", timestamp.to_be_bytes())
}

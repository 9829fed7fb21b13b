//! Contract-call payload encoding.
//!
//! `tag(1) ‖ field ‖ field ‖ …` where every field is a 4-byte big-endian
//! length followed by its bytes. Integers inside fields are big-endian.
//! See `docs/FORMATS.md` for the per-call field list.

use crate::address::Address;
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::identity::StudyId;
use crate::vault::{PiiEnvelopes, SubjectKey};

use super::record::{decode_purposes, ConsentSource, Profile, PurposeSet};

const TAG_DEPLOY: u8 = 0x01;
const TAG_SUBMIT: u8 = 0x02;
const TAG_WITHDRAW: u8 = 0x03;
const TAG_STUDY_ID: u8 = 0x04;
const TAG_SET_PROVIDER: u8 = 0x05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractCall {
    /// Genesis call; the sender becomes the owner.
    Deploy,
    SubmitConsent {
        subject_key: SubjectKey,
        mother_id: String,
        purposes: PurposeSet,
        profile: Profile,
        source: ConsentSource,
        envelopes: Option<PiiEnvelopes>,
    },
    WithdrawConsent {
        subject_key: SubjectKey,
        record_index: u64,
        purposes: PurposeSet,
    },
    CreateStudyId {
        subject_key: SubjectKey,
        study_id: StudyId,
    },
    SetAuthorizedProvider {
        provider: Address,
        enabled: bool,
    },
}

impl ContractCall {
    pub fn name(&self) -> &'static str {
        match self {
            ContractCall::Deploy => "deploy",
            ContractCall::SubmitConsent { .. } => "submit_consent",
            ContractCall::WithdrawConsent { .. } => "withdraw_consent",
            ContractCall::CreateStudyId { .. } => "create_study_id",
            ContractCall::SetAuthorizedProvider { .. } => "set_authorized_provider",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            ContractCall::Deploy => {
                e.u8(TAG_DEPLOY);
            }
            ContractCall::SubmitConsent {
                subject_key,
                mother_id,
                purposes,
                profile,
                source,
                envelopes,
            } => {
                e.u8(TAG_SUBMIT)
                    .bytes(subject_key.as_bytes())
                    .str(mother_id)
                    .bytes(&[purposes.bits()])
                    .bytes(&[profile.code()])
                    .bytes(&[source.code()]);
                if let Some(envs) = envelopes {
                    envs.encode(&mut e);
                }
            }
            ContractCall::WithdrawConsent {
                subject_key,
                record_index,
                purposes,
            } => {
                e.u8(TAG_WITHDRAW)
                    .bytes(subject_key.as_bytes())
                    .bytes(&record_index.to_be_bytes())
                    .bytes(&[purposes.bits()]);
            }
            ContractCall::CreateStudyId { subject_key, study_id } => {
                e.u8(TAG_STUDY_ID)
                    .bytes(subject_key.as_bytes())
                    .str(&study_id.value)
                    .str(&study_id.mother_id)
                    .str(&study_id.baby_id);
            }
            ContractCall::SetAuthorizedProvider { provider, enabled } => {
                e.u8(TAG_SET_PROVIDER)
                    .bytes(provider.as_bytes())
                    .bytes(&[u8::from(*enabled)]);
            }
        }
        e.finish()
    }

    /// Decodes exactly one call; trailing bytes are an error.
    pub fn decode(payload: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(payload);
        let call = match d.u8()? {
            TAG_DEPLOY => ContractCall::Deploy,
            TAG_SUBMIT => {
                let subject_key = SubjectKey(fixed_field::<32>(&mut d)?);
                let mother_id = d.string()?;
                let purposes = decode_purposes(&mut Decoder::new(&fixed_field::<1>(&mut d)?))?;
                let profile = Profile::from_code(fixed_field::<1>(&mut d)?[0])?;
                let source = ConsentSource::from_code(fixed_field::<1>(&mut d)?[0])?;
                let envelopes = if d.is_empty() {
                    None
                } else {
                    Some(PiiEnvelopes::decode(&mut d)?)
                };
                ContractCall::SubmitConsent {
                    subject_key,
                    mother_id,
                    purposes,
                    profile,
                    source,
                    envelopes,
                }
            }
            TAG_WITHDRAW => ContractCall::WithdrawConsent {
                subject_key: SubjectKey(fixed_field::<32>(&mut d)?),
                record_index: u64::from_be_bytes(fixed_field::<8>(&mut d)?),
                purposes: decode_purposes(&mut Decoder::new(&fixed_field::<1>(&mut d)?))?,
            },
            TAG_STUDY_ID => ContractCall::CreateStudyId {
                subject_key: SubjectKey(fixed_field::<32>(&mut d)?),
                study_id: StudyId {
                    value: d.string()?,
                    mother_id: d.string()?,
                    baby_id: d.string()?,
                },
            },
            TAG_SET_PROVIDER => ContractCall::SetAuthorizedProvider {
                provider: Address(fixed_field::<20>(&mut d)?),
                enabled: Decoder::new(&fixed_field::<1>(&mut d)?).bool()?,
            },
            other => return Err(DecodeError::Invalid(format!("unknown call tag {other:#04x}"))),
        };
        d.finish()?;
        Ok(call)
    }
}

fn fixed_field<const N: usize>(d: &mut Decoder<'_>) -> Result<[u8; N], DecodeError> {
    let b = d.bytes()?;
    b.try_into()
        .map_err(|_| DecodeError::Invalid(format!("field of {} bytes, expected {N}", b.len())))
}

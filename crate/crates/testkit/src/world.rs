//! Randomized operation sequences driven against a real chain and vault.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use consent_core::address::Address;
use consent_core::clock::TestClock;
use consent_core::contract::{CallOutcome, ConsentSource, ContractCall, Profile, PurposeSet};
use consent_core::engine::{ConsentChain, Submitted};
use consent_core::gas::GasSchedule;
use consent_core::identity::{baby_id, Pseudonymizer};
use consent_core::secrets::InstallSecret;
use consent_core::vault::{PiiFields, SubjectKey, SubjectKeyDeriver, Vault};

use crate::fixtures::fixtures;

/// Monday 2024-01-01 08:00:00 UTC.
pub const START: u64 = 1_704_096_000 + 8 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Caller {
    Owner,
    Provider,
    Outsider,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Submit {
        caller: Caller,
        subject: usize,
        purposes: PurposeSet,
        profile: Profile,
        source: ConsentSource,
    },
    Withdraw {
        caller: Caller,
        subject: usize,
        record: u64,
        purposes: PurposeSet,
    },
    StudyId {
        caller: Caller,
        subject: usize,
        baby: u32,
    },
    SetProvider {
        caller: Caller,
        enabled: bool,
    },
    Commit,
    Advance {
        secs: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Step {
    pub op: Op,
    /// `Ok(None)` for ops that make no call (commit, clock advance).
    pub outcome: Result<Option<Submitted>, String>,
}

pub struct World {
    pub chain: ConsentChain,
    pub vault: Vault,
    pub clock: Arc<TestClock>,
    pub deriver: SubjectKeyDeriver,
    pub pseudonyms: Pseudonymizer,
    pub owner: Address,
    pub provider: Address,
    pub outsider: Address,
    pub people: Vec<PiiFields>,
    pub subjects: Vec<SubjectKey>,
}

fn secret() -> InstallSecret {
    InstallSecret::from_bytes([0x5a; 32])
}

impl World {
    pub fn in_memory(n_subjects: usize) -> Self {
        let clock = Arc::new(TestClock::new(START, 0));
        let owner = Address::from_label("world-owner");
        let chain = ConsentChain::create_in_memory(owner, clock.clone(), GasSchedule::newborntime_v1()).unwrap();
        let vault = Vault::in_memory(secret().vault_master_key(), clock.clone());
        Self::assemble(chain, vault, clock, owner, n_subjects)
    }

    /// Chain at `dir/chain.bin`, vault under `dir/vault`.
    pub fn on_disk(dir: &Path, n_subjects: usize) -> Self {
        let clock = Arc::new(TestClock::new(START, 0));
        let owner = Address::from_label("world-owner");
        let chain = ConsentChain::open(
            &dir.join("chain.bin"),
            owner,
            clock.clone(),
            GasSchedule::newborntime_v1(),
        )
        .unwrap();
        let vault = Vault::open(&dir.join("vault"), secret().vault_master_key(), clock.clone()).unwrap();
        Self::assemble(chain, vault, clock, owner, n_subjects)
    }

    fn assemble(chain: ConsentChain, vault: Vault, clock: Arc<TestClock>, owner: Address, n: usize) -> Self {
        let s = secret();
        let deriver = SubjectKeyDeriver::new(s.subject_salt());
        let people = fixtures(n);
        let subjects = people.iter().map(|p| deriver.derive(&p.national_id)).collect();
        let mut w = Self {
            chain,
            vault,
            clock,
            deriver,
            pseudonyms: Pseudonymizer::new(s.pseudonym_key()),
            owner,
            provider: Address::from_label("world-provider"),
            outsider: Address::from_label("world-outsider"),
            people,
            subjects,
        };
        let enable = ContractCall::SetAuthorizedProvider {
            provider: w.provider,
            enabled: true,
        };
        w.chain.transact(owner, &enable).unwrap();
        w
    }

    pub fn address(&self, c: Caller) -> Address {
        match c {
            Caller::Owner => self.owner,
            Caller::Provider => self.provider,
            Caller::Outsider => self.outsider,
        }
    }

    pub fn apply(&mut self, op: &Op) -> Step {
        let outcome = self.apply_inner(op);
        Step { op: op.clone(), outcome }
    }

    fn apply_inner(&mut self, op: &Op) -> Result<Option<Submitted>, String> {
        let call = match op {
            Op::Commit => {
                self.chain.commit().map_err(|e| e.to_string())?;
                return Ok(None);
            }
            Op::Advance { secs } => {
                self.clock.advance(*secs);
                return Ok(None);
            }
            Op::Submit {
                subject,
                purposes,
                profile,
                source,
                ..
            } => {
                let sk = self.subjects[*subject];
                let envelopes = match profile {
                    Profile::Full => Some(
                        self.vault
                            .seal_pii(&sk, &self.people[*subject])
                            .map_err(|e| e.to_string())?,
                    ),
                    Profile::Minimal => None,
                };
                ContractCall::SubmitConsent {
                    subject_key: sk,
                    mother_id: self.pseudonyms.mother_id(&sk).0,
                    purposes: *purposes,
                    profile: *profile,
                    source: *source,
                    envelopes,
                }
            }
            Op::Withdraw {
                subject,
                record,
                purposes,
                ..
            } => ContractCall::WithdrawConsent {
                subject_key: self.subjects[*subject],
                record_index: *record,
                purposes: *purposes,
            },
            Op::StudyId { subject, baby, .. } => {
                let sk = self.subjects[*subject];
                let mother = self.pseudonyms.mother_id(&sk).0;
                ContractCall::CreateStudyId {
                    subject_key: sk,
                    study_id: self.pseudonyms.study_id(&mother, &baby_id(*baby)).map_err(|e| e.to_string())?,
                }
            }
            Op::SetProvider { enabled, .. } => ContractCall::SetAuthorizedProvider {
                provider: self.provider,
                enabled: *enabled,
            },
        };
        let caller = match op {
            Op::Submit { caller, .. }
            | Op::Withdraw { caller, .. }
            | Op::StudyId { caller, .. }
            | Op::SetProvider { caller, .. } => self.address(*caller),
            Op::Commit | Op::Advance { .. } => unreachable!(),
        };
        let submitted = self.chain.submit(caller, &call).map_err(|e| e.to_string())?;
        if let CallOutcome::ConsentWithdrawn {
            subject_fully_revoked: true,
            ..
        } = submitted.execution.outcome
        {
            if let ContractCall::WithdrawConsent { subject_key, .. } = call {
                // Minimal-only subjects never had a vault entry.
                let _ = self.vault.erase_subject(&subject_key);
            }
        }
        Ok(Some(submitted))
    }

    pub fn run(&mut self, ops: &[Op]) -> Vec<Step> {
        let steps = ops.iter().map(|op| self.apply(op)).collect();
        self.chain.commit().unwrap();
        steps
    }

    pub fn now(&self) -> u64 {
        self.clock.peek()
    }
}

fn random_purposes<R: Rng>(rng: &mut R) -> PurposeSet {
    PurposeSet::from_bits(rng.gen_range(1..=3)).unwrap()
}

fn random_caller<R: Rng>(rng: &mut R) -> Caller {
    match rng.gen_range(0..20) {
        0..=8 => Caller::Owner,
        9..=17 => Caller::Provider,
        _ => Caller::Outsider,
    }
}

/// A random operation mix over `n_subjects` subjects. Clock advances range
/// from minutes to a few days so histories span several weeks.
pub fn random_ops<R: Rng>(rng: &mut R, len: usize, n_subjects: usize) -> Vec<Op> {
    (0..len)
        .map(|_| {
            let subject = rng.gen_range(0..n_subjects);
            match rng.gen_range(0..100) {
                0..=34 => Op::Submit {
                    caller: random_caller(rng),
                    subject,
                    purposes: random_purposes(rng),
                    profile: if rng.gen_bool(0.6) { Profile::Full } else { Profile::Minimal },
                    source: if rng.gen_bool(0.7) {
                        ConsentSource::Digital
                    } else {
                        ConsentSource::Paper
                    },
                },
                35..=59 => Op::Withdraw {
                    caller: random_caller(rng),
                    subject,
                    record: rng.gen_range(0..4),
                    purposes: random_purposes(rng),
                },
                60..=71 => Op::StudyId {
                    caller: random_caller(rng),
                    subject,
                    baby: rng.gen_range(1..=3),
                },
                72..=74 => Op::SetProvider {
                    caller: if rng.gen_bool(0.8) { Caller::Owner } else { Caller::Provider },
                    enabled: rng.gen_bool(0.7),
                },
                75..=86 => Op::Commit,
                _ => Op::Advance {
                    secs: match rng.gen_range(0..3) {
                        0 => rng.gen_range(60..3_600),
                        1 => rng.gen_range(3_600..86_400),
                        _ => rng.gen_range(86_400..4 * 86_400),
                    },
                },
            }
        })
        .collect()
}

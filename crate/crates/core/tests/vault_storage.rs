use std::path::Path;
use std::sync::Arc;

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};

use consent_core::clock::TestClock;
use consent_core::secrets::InstallSecret;
use consent_core::vault::{AccessRole, PiiEnvelopes, SubjectKey, SubjectKeyDeriver, Vault, VaultError};
use consent_testkit::fixtures::{fixture, needles, scan, scan_dir};

fn master() -> [u8; 32] {
    InstallSecret::from_bytes([9; 32]).vault_master_key()
}

fn open(dir: &Path) -> Vault {
    Vault::open(dir, master(), Arc::new(TestClock::new(1_700_000_000, 1))).unwrap()
}

/// Unwraps a stored key slot with the master key, independently of the vault.
fn unwrap(subject: &SubjectKey, slot: &[u8]) -> [u8; 32] {
    let cipher = Aes256Gcm::new_from_slice(&master()).unwrap();
    let mut aad = b"wrap:".to_vec();
    aad.extend_from_slice(&subject.0);
    let pt = cipher
        .decrypt(
            Nonce::from_slice(&slot[..12]),
            Payload {
                msg: &slot[12..],
                aad: &aad,
            },
        )
        .unwrap();
    pt.try_into().unwrap()
}

fn try_open_with(key: &[u8; 32], subject: &SubjectKey, envs: &PiiEnvelopes) -> bool {
    let cipher = Aes256Gcm::new_from_slice(key).unwrap();
    envs.iter().any(|e| {
        let mut aad = subject.0.to_vec();
        aad.push(e.field.tag());
        let mut msg = e.ciphertext.clone();
        msg.extend_from_slice(&e.auth_tag);
        cipher
            .decrypt(Nonce::from_slice(&e.nonce), Payload { msg: &msg, aad: &aad })
            .is_ok()
    })
}

fn all_bytes(dir: &Path) -> Vec<u8> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        out.extend(std::fs::read(e.unwrap().path()).unwrap());
    }
    out
}

#[test]
fn erased_key_material_is_gone_from_storage() {
    let dir = tempfile::tempdir().unwrap();
    let vault = open(dir.path());
    let deriver = SubjectKeyDeriver::new([3; 32]);
    let people: Vec<_> = (0..4).map(fixture).collect();
    let subjects: Vec<SubjectKey> = people.iter().map(|p| deriver.derive(&p.national_id)).collect();
    let envs: Vec<PiiEnvelopes> = subjects
        .iter()
        .zip(&people)
        .map(|(s, p)| vault.seal_pii(s, p).unwrap())
        .collect();

    let wrapped: Vec<Vec<u8>> = subjects
        .iter()
        .map(|s| vault.get_entry(s).unwrap().data_key_wrapped.unwrap())
        .collect();
    let raw: Vec<[u8; 32]> = subjects.iter().zip(&wrapped).map(|(s, w)| unwrap(s, w)).collect();
    assert!(try_open_with(&raw[1], &subjects[1], &envs[1]));

    let before = all_bytes(dir.path());
    assert!(!scan_windows(&before, &wrapped[1]).is_empty(), "oracle sanity: key present before erase");

    vault.erase_subject(&subjects[1]).unwrap();
    drop(vault);

    let after = all_bytes(dir.path());
    assert!(scan_windows(&after, &wrapped[1]).is_empty());
    assert!(scan_windows(&after, &raw[1]).is_empty());
    for other in [0, 2, 3] {
        assert!(!scan_windows(&after, &wrapped[other]).is_empty(), "subject {other} keeps its key");
    }

    // Nothing left in the system opens the erased subject's envelopes.
    for key in [&raw[0], &raw[2], &raw[3], &master()] {
        assert!(!try_open_with(key, &subjects[1], &envs[1]));
    }

    let reopened = open(dir.path());
    assert!(reopened.is_erased(&subjects[1]));
    assert!(matches!(
        reopened.open_pii(AccessRole::Owner, &subjects[1], &envs[1]),
        Err(VaultError::SubjectErased)
    ));
    assert_eq!(reopened.open_pii(AccessRole::Owner, &subjects[2], &envs[2]).unwrap(), people[2]);
}

/// Offsets where any 12-byte window of `needle` occurs in `hay`.
fn scan_windows(hay: &[u8], needle: &[u8]) -> Vec<usize> {
    let mut hits = Vec::new();
    for w in needle.windows(12) {
        if w.iter().all(|b| *b == 0) {
            continue;
        }
        hits.extend(hay.windows(12).enumerate().filter(|(_, h)| *h == w).map(|(i, _)| i));
    }
    hits
}

#[test]
fn no_plaintext_at_rest() {
    let dir = tempfile::tempdir().unwrap();
    let vault = open(dir.path());
    let deriver = SubjectKeyDeriver::new([3; 32]);
    let people: Vec<_> = (0..20).map(fixture).collect();
    for p in &people {
        let sk = deriver.derive(&p.national_id);
        let envs = vault.seal_pii(&sk, p).unwrap();
        vault.bind_phone(&sk, deriver.phone_tag(&p.phone)).unwrap();
        vault.open_pii(AccessRole::AuthorizedProvider, &sk, &envs).unwrap();
        let _ = vault.open_pii(AccessRole::Anonymous, &sk, &envs);
        for e in envs.iter() {
            assert!(scan(&e.to_bytes(), &needles(std::slice::from_ref(p))).is_empty());
        }
    }
    assert_eq!(scan_dir(dir.path(), &needles(&people)).unwrap(), vec![]);
    let log = vault.access_log().join("\n");
    assert!(scan(log.as_bytes(), &needles(&people)).is_empty());
}

#[test]
fn index_replay_restores_entries() {
    let dir = tempfile::tempdir().unwrap();
    let deriver = SubjectKeyDeriver::new([3; 32]);
    let p = fixture(0);
    let sk = deriver.derive(&p.national_id);
    let envs = {
        let v = open(dir.path());
        v.seal_pii(&sk, &p).unwrap()
    };
    let v = open(dir.path());
    assert_eq!(v.open_pii(AccessRole::Owner, &sk, &envs).unwrap(), p);
    let again = v.seal_pii(&sk, &p).unwrap();
    assert_eq!(v.open_pii(AccessRole::Owner, &sk, &again).unwrap(), p);
}

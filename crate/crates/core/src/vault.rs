//! Off-chain PII vault with per-subject data keys.
//!
//! Each subject gets a random AES-256-GCM data key on first use. The data key
//! is stored only in wrapped form (encrypted under the install master key) in
//! a fixed-slot key file. The on-chain record holds ciphertext envelopes;
//! erasing a subject overwrites its key slot with zeros, after which those
//! envelopes can no longer be decrypted by anything left in the system.
//!
//! Storage layout under the vault directory:
//!
//! * `keys.bin`: fixed 60-byte slots, `nonce(12) ‖ wrapped key(32) ‖ tag(16)`.
//! * `index.log`: append-only, one tab-separated line per entry event.
//! * `access.log`: audit line for every `open_pii` attempt.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::address::{sha256, Hash32};
use crate::clock::Clock;
use crate::codec::{DecodeError, Decoder, Encoder};

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
const KEY_SLOT_LEN: usize = NONCE_LEN + 32 + TAG_LEN;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("subject data has been erased")]
    SubjectErased,
    #[error("field {0} is empty")]
    EmptyField(PiiField),
    #[error("field {field} is {len} bytes, limit is {limit}")]
    FieldTooLong {
        field: PiiField,
        len: usize,
        limit: usize,
    },
    #[error("field {0} contains a NUL byte")]
    InvalidField(PiiField),
    #[error("authentication failure while decrypting")]
    AuthFailure,
    #[error("caller role is not allowed to decrypt PII")]
    Unauthorized,
    #[error("unknown subject")]
    UnknownSubject,
    #[error("subject is bound to a different phone number")]
    PhoneConflict,
    #[error("vault storage is corrupt: {0}")]
    Corrupt(String),
    #[error("vault io: {0}")]
    Io(#[from] std::io::Error),
}

/// Keyed hash of a national identifier; the on-ledger index for a person.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubjectKey(pub Hash32);

impl SubjectKey {
    pub fn as_bytes(&self) -> &Hash32 {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Short, non-reversible label for audit lines.
    pub fn short(&self) -> String {
        hex::encode(&sha256(&self.0)[..4])
    }
}

impl fmt::Debug for SubjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubjectKey({}..)", &self.to_hex()[..12])
    }
}

impl FromStr for SubjectKey {
    type Err = VaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)
            .map_err(|_| VaultError::Corrupt(format!("bad subject key {s:?}")))?;
        Ok(Self(out))
    }
}

/// Derives subject keys as HMAC-SHA256(salt, national id).
#[derive(Clone)]
pub struct SubjectKeyDeriver {
    salt: Zeroizing<[u8; 32]>,
}

impl SubjectKeyDeriver {
    pub fn new(salt: [u8; 32]) -> Self {
        Self {
            salt: Zeroizing::new(salt),
        }
    }

    pub fn derive(&self, national_id: &str) -> SubjectKey {
        SubjectKey(self.keyed(b"subject", national_id.trim().as_bytes()))
    }

    /// Keyed hash of a phone number, used to bind sessions to subjects
    /// without storing the number.
    pub fn phone_tag(&self, phone: &str) -> Hash32 {
        self.keyed(b"phone", phone.trim().as_bytes())
    }

    fn keyed(&self, domain: &[u8], msg: &[u8]) -> Hash32 {
        let mut mac = <HmacSha256 as Mac>::new_from_slice(&*self.salt).expect("any key length");
        mac.update(domain);
        mac.update(&[0]);
        mac.update(msg);
        mac.finalize().into_bytes().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiField {
    MotherName,
    NationalId,
    Phone,
}

impl PiiField {
    pub const ALL: [PiiField; 3] = [PiiField::MotherName, PiiField::NationalId, PiiField::Phone];

    pub fn tag(self) -> u8 {
        match self {
            PiiField::MotherName => 1,
            PiiField::NationalId => 2,
            PiiField::Phone => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(PiiField::MotherName),
            2 => Some(PiiField::NationalId),
            3 => Some(PiiField::Phone),
            _ => None,
        }
    }

    /// Plaintexts are zero-padded to this width before encryption so every
    /// envelope of a field has the same on-chain size.
    pub fn padded_len(self) -> usize {
        match self {
            PiiField::MotherName => 64,
            PiiField::NationalId => 16,
            PiiField::Phone => 16,
        }
    }
}

impl fmt::Display for PiiField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PiiField::MotherName => "mother_name",
            PiiField::NationalId => "national_id",
            PiiField::Phone => "phone",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiFields {
    pub mother_name: String,
    pub national_id: String,
    pub phone: String,
}

impl PiiFields {
    fn get(&self, field: PiiField) -> &str {
        match field {
            PiiField::MotherName => &self.mother_name,
            PiiField::NationalId => &self.national_id,
            PiiField::Phone => &self.phone,
        }
    }
}

/// AEAD ciphertext of one PII field.
#[derive(Clone, PartialEq, Eq)]
pub struct CiphertextEnvelope {
    pub field: PiiField,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub auth_tag: [u8; TAG_LEN],
}

impl fmt::Debug for CiphertextEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CiphertextEnvelope")
            .field("field", &self.field)
            .field("len", &self.ciphertext.len())
            .finish()
    }
}

impl CiphertextEnvelope {
    /// `field tag(1) ‖ nonce(12) ‖ ciphertext ‖ auth tag(16)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + NONCE_LEN + self.ciphertext.len() + TAG_LEN);
        out.push(self.field.tag());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < 1 + NONCE_LEN + TAG_LEN {
            return Err(DecodeError::Invalid("envelope too short".into()));
        }
        let field = PiiField::from_tag(bytes[0])
            .ok_or_else(|| DecodeError::Invalid(format!("envelope field tag {}", bytes[0])))?;
        let ct_end = bytes.len() - TAG_LEN;
        Ok(Self {
            field,
            nonce: bytes[1..1 + NONCE_LEN].try_into().expect("12 bytes"),
            ciphertext: bytes[1 + NONCE_LEN..ct_end].to_vec(),
            auth_tag: bytes[ct_end..].try_into().expect("16 bytes"),
        })
    }

    /// Number of 32-byte storage words the serialized envelope occupies.
    pub fn storage_words(&self) -> u64 {
        let len = 1 + NONCE_LEN + self.ciphertext.len() + TAG_LEN;
        len.div_ceil(32) as u64
    }
}

/// The three envelopes of a full-profile record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiiEnvelopes {
    pub mother_name: CiphertextEnvelope,
    pub national_id: CiphertextEnvelope,
    pub phone: CiphertextEnvelope,
}

impl PiiEnvelopes {
    pub fn iter(&self) -> impl Iterator<Item = &CiphertextEnvelope> {
        [&self.mother_name, &self.national_id, &self.phone].into_iter()
    }

    pub fn storage_words(&self) -> u64 {
        self.iter().map(CiphertextEnvelope::storage_words).sum()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        for env in self.iter() {
            enc.bytes(&env.to_bytes());
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let mut next = |expected: PiiField| -> Result<CiphertextEnvelope, DecodeError> {
            let env = CiphertextEnvelope::from_bytes(dec.bytes()?)?;
            if env.field != expected {
                return Err(DecodeError::Invalid(format!(
                    "envelope slot {expected} holds {}",
                    env.field
                )));
            }
            Ok(env)
        };
        Ok(Self {
            mother_name: next(PiiField::MotherName)?,
            national_id: next(PiiField::NationalId)?,
            phone: next(PiiField::Phone)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessRole {
    Owner,
    AuthorizedProvider,
    Subject,
    Anonymous,
}

impl AccessRole {
    fn may_decrypt(self) -> bool {
        matches!(self, AccessRole::Owner | AccessRole::AuthorizedProvider)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaultEntry {
    pub subject_key: SubjectKey,
    pub data_key_wrapped: Option<Vec<u8>>,
    pub erased: bool,
    pub created_at: u64,
    pub erased_at: Option<u64>,
    pub phone_tag: Option<Hash32>,
    slot: Option<u64>,
}

impl VaultEntry {
    fn digest(&self) -> Hash32 {
        let mut e = Encoder::new();
        e.fixed(&self.subject_key.0)
            .u64(self.created_at)
            .u64(self.erased_at.unwrap_or(0));
        sha256(e.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErasureProof {
    pub subject_key: String,
    pub erased_at: u64,
    pub entry_digest: String,
}

struct Storage {
    dir: PathBuf,
    keys: File,
    index: File,
    access: File,
}

impl Storage {
    fn write_slot(&mut self, slot: u64, bytes: &[u8; KEY_SLOT_LEN]) -> std::io::Result<()> {
        self.keys.seek(SeekFrom::Start(slot * KEY_SLOT_LEN as u64))?;
        self.keys.write_all(bytes)?;
        self.keys.sync_data()
    }

    fn append_index(&mut self, line: &str) -> std::io::Result<()> {
        writeln!(self.index, "{line}")?;
        self.index.sync_data()
    }
}

pub struct Vault {
    master: Zeroizing<[u8; 32]>,
    clock: Arc<dyn Clock>,
    entries: RwLock<HashMap<SubjectKey, Arc<Mutex<VaultEntry>>>>,
    storage: Option<Mutex<Storage>>,
    next_slot: Mutex<u64>,
    access_log: Mutex<Vec<String>>,
}

impl fmt::Debug for Vault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vault")
            .field("entries", &self.entries.read().map(|e| e.len()).unwrap_or(0))
            .field("persistent", &self.storage.is_some())
            .finish()
    }
}

impl Vault {
    pub fn in_memory(master_key: [u8; 32], clock: Arc<dyn Clock>) -> Self {
        Self {
            master: Zeroizing::new(master_key),
            clock,
            entries: RwLock::new(HashMap::new()),
            storage: None,
            next_slot: Mutex::new(0),
            access_log: Mutex::new(Vec::new()),
        }
    }

    /// Opens (or creates) a vault directory and replays its index.
    pub fn open(dir: &Path, master_key: [u8; 32], clock: Arc<dyn Clock>) -> Result<Self, VaultError> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str, append: bool| {
            OpenOptions::new()
                .create(true)
                .read(true)
                .append(append)
                .write(!append)
                .truncate(false)
                .open(dir.join(name))
        };
        let mut keys = open("keys.bin", false)?;
        let index = open("index.log", true)?;
        let access = open("access.log", true)?;

        let mut key_bytes = Vec::new();
        keys.read_to_end(&mut key_bytes)?;
        let mut entries: HashMap<SubjectKey, VaultEntry> = HashMap::new();
        let mut next_slot = (key_bytes.len() / KEY_SLOT_LEN) as u64;

        for line in BufReader::new(File::open(dir.join("index.log"))?).lines() {
            let line = line?;
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = || VaultError::Corrupt(format!("index line {line:?}"));
            let subject: SubjectKey = parts.get(1).ok_or_else(bad)?.parse()?;
            let num = |i: usize| -> Result<u64, VaultError> {
                parts.get(i).and_then(|s| s.parse().ok()).ok_or_else(bad)
            };
            match parts[0] {
                "entry" => {
                    entries.insert(
                        subject,
                        VaultEntry {
                            subject_key: subject,
                            data_key_wrapped: None,
                            erased: false,
                            created_at: num(2)?,
                            erased_at: None,
                            phone_tag: None,
                            slot: None,
                        },
                    );
                }
                "key" => {
                    let slot = num(2)?;
                    let entry = entries.get_mut(&subject).ok_or_else(bad)?;
                    let start = slot as usize * KEY_SLOT_LEN;
                    let bytes = key_bytes.get(start..start + KEY_SLOT_LEN).ok_or_else(bad)?;
                    entry.slot = Some(slot);
                    entry.data_key_wrapped = Some(bytes.to_vec());
                    next_slot = next_slot.max(slot + 1);
                }
                "bind" => {
                    let mut tag = [0u8; 32];
                    hex::decode_to_slice(parts.get(2).ok_or_else(bad)?, &mut tag).map_err(|_| bad())?;
                    entries.get_mut(&subject).ok_or_else(bad)?.phone_tag = Some(tag);
                }
                "erase" => {
                    let at = num(2)?;
                    let entry = entries.get_mut(&subject).ok_or_else(bad)?;
                    entry.erased = true;
                    entry.erased_at = Some(at);
                    entry.data_key_wrapped = None;
                }
                _ => return Err(bad()),
            }
        }

        let storage = Storage {
            dir: dir.to_path_buf(),
            keys,
            index,
            access,
        };
        Ok(Self {
            master: Zeroizing::new(master_key),
            clock,
            entries: RwLock::new(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
                    .collect(),
            ),
            storage: Some(Mutex::new(storage)),
            next_slot: Mutex::new(next_slot),
            access_log: Mutex::new(Vec::new()),
        })
    }

    pub fn storage_dir(&self) -> Option<PathBuf> {
        self.storage
            .as_ref()
            .map(|s| s.lock().expect("vault storage lock").dir.clone())
    }

    fn entry(&self, subject: &SubjectKey) -> Option<Arc<Mutex<VaultEntry>>> {
        self.entries
            .read()
            .expect("vault entries lock")
            .get(subject)
            .cloned()
    }

    fn entry_or_create(&self, subject: &SubjectKey) -> Result<Arc<Mutex<VaultEntry>>, VaultError> {
        if let Some(e) = self.entry(subject) {
            return Ok(e);
        }
        let mut map = self.entries.write().expect("vault entries lock");
        if let Some(e) = map.get(subject) {
            return Ok(e.clone());
        }
        let created_at = self.clock.now();
        self.with_storage(|s| s.append_index(&format!("entry\t{}\t{created_at}", subject.to_hex())))?;
        let entry = Arc::new(Mutex::new(VaultEntry {
            subject_key: *subject,
            data_key_wrapped: None,
            erased: false,
            created_at,
            erased_at: None,
            phone_tag: None,
            slot: None,
        }));
        map.insert(*subject, entry.clone());
        Ok(entry)
    }

    fn with_storage<T>(
        &self,
        f: impl FnOnce(&mut Storage) -> std::io::Result<T>,
    ) -> Result<Option<T>, VaultError> {
        match &self.storage {
            Some(s) => Ok(Some(f(&mut s.lock().expect("vault storage lock"))?)),
            None => Ok(None),
        }
    }

    pub fn get_entry(&self, subject: &SubjectKey) -> Option<VaultEntry> {
        self.entry(subject).map(|e| e.lock().expect("vault entry lock").clone())
    }

    pub fn is_erased(&self, subject: &SubjectKey) -> bool {
        self.get_entry(subject).is_some_and(|e| e.erased)
    }

    /// Binds a subject to a phone tag. The first binding wins; a different tag
    /// later is a conflict.
    pub fn bind_phone(&self, subject: &SubjectKey, phone_tag: Hash32) -> Result<(), VaultError> {
        let entry = self.entry_or_create(subject)?;
        let mut entry = entry.lock().expect("vault entry lock");
        match entry.phone_tag {
            Some(existing) if existing == phone_tag => Ok(()),
            Some(_) => Err(VaultError::PhoneConflict),
            None => {
                self.with_storage(|s| {
                    s.append_index(&format!("bind\t{}\t{}", subject.to_hex(), hex::encode(phone_tag)))
                })?;
                entry.phone_tag = Some(phone_tag);
                Ok(())
            }
        }
    }

    pub fn subjects_for_phone(&self, phone_tag: &Hash32) -> Vec<SubjectKey> {
        let map = self.entries.read().expect("vault entries lock");
        let mut out: Vec<SubjectKey> = map
            .iter()
            .filter(|(_, e)| e.lock().expect("vault entry lock").phone_tag.as_ref() == Some(phone_tag))
            .map(|(k, _)| *k)
            .collect();
        out.sort();
        out
    }

    fn master_cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new_from_slice(&*self.master).expect("32-byte key")
    }

    fn wrap_key(&self, subject: &SubjectKey, data_key: &[u8; 32]) -> [u8; KEY_SLOT_LEN] {
        let mut nonce = [0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut nonce);
        let ct = self
            .master_cipher()
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: data_key,
                    aad: &wrap_aad(subject),
                },
            )
            .expect("AES-GCM encryption of 32 bytes cannot fail");
        let mut slot = [0u8; KEY_SLOT_LEN];
        slot[..NONCE_LEN].copy_from_slice(&nonce);
        slot[NONCE_LEN..].copy_from_slice(&ct);
        slot
    }

    fn unwrap_key(&self, subject: &SubjectKey, wrapped: &[u8]) -> Result<Zeroizing<[u8; 32]>, VaultError> {
        if wrapped.len() != KEY_SLOT_LEN {
            return Err(VaultError::Corrupt("wrapped key length".into()));
        }
        let pt = self
            .master_cipher()
            .decrypt(
                Nonce::from_slice(&wrapped[..NONCE_LEN]),
                Payload {
                    msg: &wrapped[NONCE_LEN..],
                    aad: &wrap_aad(subject),
                },
            )
            .map_err(|_| VaultError::AuthFailure)?;
        let mut key = Zeroizing::new([0u8; 32]);
        key.copy_from_slice(&pt);
        Ok(key)
    }

    fn data_key(&self, entry: &mut VaultEntry) -> Result<Zeroizing<[u8; 32]>, VaultError> {
        if entry.erased {
            return Err(VaultError::SubjectErased);
        }
        if let Some(wrapped) = &entry.data_key_wrapped {
            return self.unwrap_key(&entry.subject_key, wrapped);
        }
        let mut key = Zeroizing::new([0u8; 32]);
        rand::thread_rng().fill_bytes(&mut *key);
        let wrapped = self.wrap_key(&entry.subject_key, &key);
        let slot = {
            let mut next = self.next_slot.lock().expect("slot lock");
            let slot = *next;
            *next += 1;
            slot
        };
        self.with_storage(|s| {
            s.write_slot(slot, &wrapped)?;
            s.append_index(&format!("key\t{}\t{slot}", entry.subject_key.to_hex()))
        })?;
        entry.slot = Some(slot);
        entry.data_key_wrapped = Some(wrapped.to_vec());
        Ok(key)
    }

    /// Encrypts the three PII fields under the subject's data key.
    pub fn seal_pii(&self, subject: &SubjectKey, fields: &PiiFields) -> Result<PiiEnvelopes, VaultError> {
        let mut padded = Vec::with_capacity(3);
        for field in PiiField::ALL {
            padded.push(pad_field(field, fields.get(field))?);
        }
        if self.is_erased(subject) {
            return Err(VaultError::SubjectErased);
        }
        let entry = self.entry_or_create(subject)?;
        let mut entry = entry.lock().expect("vault entry lock");
        let key = self.data_key(&mut entry)?;
        let cipher = Aes256Gcm::new_from_slice(&*key).expect("32-byte key");
        let mut envs = PiiField::ALL
            .into_iter()
            .zip(padded)
            .map(|(field, pt)| seal_one(&cipher, subject, field, &pt));
        Ok(PiiEnvelopes {
            mother_name: envs.next().expect("three fields"),
            national_id: envs.next().expect("three fields"),
            phone: envs.next().expect("three fields"),
        })
    }

    pub fn open_pii(
        &self,
        role: AccessRole,
        subject: &SubjectKey,
        envelopes: &PiiEnvelopes,
    ) -> Result<PiiFields, VaultError> {
        let result = self.open_inner(role, subject, envelopes);
        let outcome = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("denied:{}", error_code(e)),
        };
        self.log_access(role, subject, &outcome)?;
        result
    }

    fn open_inner(
        &self,
        role: AccessRole,
        subject: &SubjectKey,
        envelopes: &PiiEnvelopes,
    ) -> Result<PiiFields, VaultError> {
        if !role.may_decrypt() {
            return Err(VaultError::Unauthorized);
        }
        let entry = self.entry(subject).ok_or(VaultError::UnknownSubject)?;
        let entry = entry.lock().expect("vault entry lock");
        if entry.erased {
            return Err(VaultError::SubjectErased);
        }
        let wrapped = entry.data_key_wrapped.as_ref().ok_or(VaultError::AuthFailure)?;
        let key = self.unwrap_key(subject, wrapped)?;
        let cipher = Aes256Gcm::new_from_slice(&*key).expect("32-byte key");
        Ok(PiiFields {
            mother_name: open_one(&cipher, subject, &envelopes.mother_name)?,
            national_id: open_one(&cipher, subject, &envelopes.national_id)?,
            phone: open_one(&cipher, subject, &envelopes.phone)?,
        })
    }

    fn log_access(&self, role: AccessRole, subject: &SubjectKey, outcome: &str) -> Result<(), VaultError> {
        let line = format!(
            "{}\topen_pii\t{}\t{}\t{}",
            self.clock.now(),
            serde_json::to_value(role)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            subject.short(),
            outcome
        );
        self.with_storage(|s| {
            writeln!(s.access, "{line}")?;
            s.access.flush()
        })?;
        log::info!(target: "vault", "{line}");
        self.access_log.lock().expect("access log lock").push(line);
        Ok(())
    }

    pub fn access_log(&self) -> Vec<String> {
        self.access_log.lock().expect("access log lock").clone()
    }

    /// Destroys the subject's data key. Idempotent: repeat calls return the
    /// original proof.
    pub fn erase_subject(&self, subject: &SubjectKey) -> Result<ErasureProof, VaultError> {
        let entry = self.entry(subject).ok_or(VaultError::UnknownSubject)?;
        let mut entry = entry.lock().expect("vault entry lock");
        if !entry.erased {
            let at = self.clock.now();
            let slot = entry.slot;
            if let Some(wrapped) = entry.data_key_wrapped.as_mut() {
                wrapped.iter_mut().for_each(|b| *b = 0);
            }
            entry.data_key_wrapped = None;
            entry.erased = true;
            entry.erased_at = Some(at);
            let digest = entry.digest();
            self.with_storage(|s| {
                if let Some(slot) = slot {
                    s.write_slot(slot, &[0u8; KEY_SLOT_LEN])?;
                }
                s.append_index(&format!("erase\t{}\t{at}\t{}", subject.to_hex(), hex::encode(digest)))
            })?;
        }
        Ok(ErasureProof {
            subject_key: subject.to_hex(),
            erased_at: entry.erased_at.expect("erased entries carry a timestamp"),
            entry_digest: hex::encode(entry.digest()),
        })
    }
}

fn wrap_aad(subject: &SubjectKey) -> Vec<u8> {
    let mut aad = b"wrap:".to_vec();
    aad.extend_from_slice(&subject.0);
    aad
}

fn field_aad(subject: &SubjectKey, field: PiiField) -> Vec<u8> {
    let mut aad = subject.0.to_vec();
    aad.push(field.tag());
    aad
}

fn pad_field(field: PiiField, value: &str) -> Result<Vec<u8>, VaultError> {
    let bytes = value.trim().as_bytes();
    if bytes.is_empty() {
        return Err(VaultError::EmptyField(field));
    }
    if bytes.contains(&0) {
        return Err(VaultError::InvalidField(field));
    }
    let limit = field.padded_len();
    if bytes.len() > limit {
        return Err(VaultError::FieldTooLong {
            field,
            len: bytes.len(),
            limit,
        });
    }
    let mut out = bytes.to_vec();
    out.resize(limit, 0);
    Ok(out)
}

fn seal_one(cipher: &Aes256Gcm, subject: &SubjectKey, field: PiiField, pt: &[u8]) -> CiphertextEnvelope {
    let mut nonce = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut nonce);
    let mut ct = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: pt,
                aad: &field_aad(subject, field),
            },
        )
        .expect("AES-GCM encryption cannot fail for short inputs");
    let tag_start = ct.len() - TAG_LEN;
    let auth_tag: [u8; TAG_LEN] = ct[tag_start..].try_into().expect("16 bytes");
    ct.truncate(tag_start);
    CiphertextEnvelope {
        field,
        nonce,
        ciphertext: ct,
        auth_tag,
    }
}

fn open_one(cipher: &Aes256Gcm, subject: &SubjectKey, env: &CiphertextEnvelope) -> Result<String, VaultError> {
    let mut msg = env.ciphertext.clone();
    msg.extend_from_slice(&env.auth_tag);
    let pt = Zeroizing::new(
        cipher
            .decrypt(
                Nonce::from_slice(&env.nonce),
                Payload {
                    msg: &msg,
                    aad: &field_aad(subject, env.field),
                },
            )
            .map_err(|_| VaultError::AuthFailure)?,
    );
    let end = pt.iter().rposition(|b| *b != 0).map_or(0, |i| i + 1);
    String::from_utf8(pt[..end].to_vec()).map_err(|_| VaultError::AuthFailure)
}

pub fn error_code(e: &VaultError) -> &'static str {
    match e {
        VaultError::SubjectErased => "subject_erased",
        VaultError::EmptyField(_) => "empty_field",
        VaultError::FieldTooLong { .. } => "field_too_long",
        VaultError::InvalidField(_) => "invalid_field",
        VaultError::AuthFailure => "auth_failure",
        VaultError::Unauthorized => "unauthorized",
        VaultError::UnknownSubject => "unknown_subject",
        VaultError::PhoneConflict => "phone_conflict",
        VaultError::Corrupt(_) => "corrupt",
        VaultError::Io(_) => "io",
    }
}

use std::fmt;

use serde::Serialize;

use crate::address::{sha256, Address, Hash32};
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::contract::ContractCall;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: Address,
    pub recipient: Address,
    pub payload: Vec<u8>,
    pub nonce: u64,
    pub submitted_at: u64,
}

impl Transaction {
    pub fn call(&self) -> Result<ContractCall, DecodeError> {
        ContractCall::decode(&self.payload)
    }

    fn encode(&self, e: &mut Encoder) {
        e.fixed(self.sender.as_bytes())
            .fixed(self.recipient.as_bytes())
            .bytes(&self.payload)
            .u64(self.nonce)
            .u64(self.submitted_at);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            sender: Address(d.fixed()?),
            recipient: Address(d.fixed()?),
            payload: d.bytes()?.to_vec(),
            nonce: d.u64()?,
            submitted_at: d.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventName {
    ConsentGiven,
    ConsentChanged,
    ConsentWithdrawn,
    #[serde(rename = "StudyIDCreated")]
    StudyIdCreated,
}

impl EventName {
    pub fn code(self) -> u8 {
        match self {
            EventName::ConsentGiven => 1,
            EventName::ConsentChanged => 2,
            EventName::ConsentWithdrawn => 3,
            EventName::StudyIdCreated => 4,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, DecodeError> {
        match c {
            1 => Ok(EventName::ConsentGiven),
            2 => Ok(EventName::ConsentChanged),
            3 => Ok(EventName::ConsentWithdrawn),
            4 => Ok(EventName::StudyIdCreated),
            other => Err(DecodeError::Invalid(format!("event code {other}"))),
        }
    }
}

impl fmt::Display for EventName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventName::ConsentGiven => "ConsentGiven",
            EventName::ConsentChanged => "ConsentChanged",
            EventName::ConsentWithdrawn => "ConsentWithdrawn",
            EventName::StudyIdCreated => "StudyIDCreated",
        })
    }
}

/// Event as produced by contract execution, before it is placed in a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingEvent {
    pub name: EventName,
    pub indexed: Vec<(String, Hash32)>,
    pub data: Vec<(String, Vec<u8>)>,
}

impl PendingEvent {
    pub fn new(name: EventName) -> Self {
        Self {
            name,
            indexed: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn indexed(mut self, field: &str, value: Hash32) -> Self {
        self.indexed.push((field.to_owned(), value));
        self
    }

    pub fn data(mut self, field: &str, value: impl Into<Vec<u8>>) -> Self {
        self.data.push((field.to_owned(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub name: EventName,
    pub indexed: Vec<(String, Hash32)>,
    pub data: Vec<(String, Vec<u8>)>,
    pub block_index: u64,
    pub tx_index: u32,
    /// Position of the event within its transaction.
    pub log_index: u32,
    pub timestamp: u64,
}

impl Event {
    pub fn indexed_value(&self, field: &str) -> Option<&Hash32> {
        self.indexed.iter().find(|(k, _)| k == field).map(|(_, v)| v)
    }

    pub fn data_value(&self, field: &str) -> Option<&[u8]> {
        self.data.iter().find(|(k, _)| k == field).map(|(_, v)| v.as_slice())
    }

    pub fn data_u64(&self, field: &str) -> Option<u64> {
        self.data_value(field)
            .and_then(|b| b.try_into().ok())
            .map(u64::from_be_bytes)
    }

    pub fn data_u8(&self, field: &str) -> Option<u8> {
        self.data_value(field).filter(|b| b.len() == 1).map(|b| b[0])
    }

    pub fn data_str(&self, field: &str) -> Option<&str> {
        self.data_value(field).and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn as_pending(&self) -> PendingEvent {
        PendingEvent {
            name: self.name,
            indexed: self.indexed.clone(),
            data: self.data.clone(),
        }
    }

    /// Chain-wide ordering key.
    pub fn position(&self) -> (u64, u32, u32) {
        (self.block_index, self.tx_index, self.log_index)
    }

    fn encode(&self, e: &mut Encoder) {
        e.u8(self.name.code()).u32(self.indexed.len() as u32);
        for (k, v) in &self.indexed {
            e.str(k).fixed(v);
        }
        e.u32(self.data.len() as u32);
        for (k, v) in &self.data {
            e.str(k).bytes(v);
        }
        e.u64(self.block_index)
            .u32(self.tx_index)
            .u32(self.log_index)
            .u64(self.timestamp);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let name = EventName::from_code(d.u8()?)?;
        let n = d.u32()? as usize;
        let mut indexed = Vec::with_capacity(n.min(16));
        for _ in 0..n {
            indexed.push((d.string()?, d.fixed()?));
        }
        let n = d.u32()? as usize;
        let mut data = Vec::with_capacity(n.min(16));
        for _ in 0..n {
            data.push((d.string()?, d.bytes()?.to_vec()));
        }
        Ok(Self {
            name,
            indexed,
            data,
            block_index: d.u64()?,
            tx_index: d.u32()?,
            log_index: d.u32()?,
            timestamp: d.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Hash32,
    pub timestamp: u64,
    pub transactions: Vec<Transaction>,
    pub events: Vec<Event>,
    pub state_root: Hash32,
    pub block_hash: Hash32,
}

impl Block {
    /// Canonical bytes of every field except `block_hash`.
    pub fn header_and_body_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.index).fixed(&self.prev_hash).u64(self.timestamp);
        e.u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            tx.encode(&mut e);
        }
        e.u32(self.events.len() as u32);
        for ev in &self.events {
            ev.encode(&mut e);
        }
        e.fixed(&self.state_root);
        e.finish()
    }

    pub fn compute_hash(&self) -> Hash32 {
        sha256(&self.header_and_body_bytes())
    }

    /// Full record body: canonical fields followed by the stored hash.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_and_body_bytes();
        out.extend_from_slice(&self.block_hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let index = d.u64()?;
        let prev_hash = d.fixed()?;
        let timestamp = d.u64()?;
        let n = d.u32()? as usize;
        let mut transactions = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            transactions.push(Transaction::decode(&mut d)?);
        }
        let n = d.u32()? as usize;
        let mut events = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            events.push(Event::decode(&mut d)?);
        }
        let state_root = d.fixed()?;
        let block_hash = d.fixed()?;
        d.finish()?;
        Ok(Self {
            index,
            prev_hash,
            timestamp,
            transactions,
            events,
            state_root,
            block_hash,
        })
    }
}

impl AsRef<Block> for Block {
    fn as_ref(&self) -> &Block {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TxReceipt {
    pub block_index: u64,
    pub tx_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerificationReport {
    Ok { blocks: u64, head: String },
    Corrupt { first_bad_index: u64, reason: String },
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, VerificationReport::Ok { .. })
    }

    pub fn first_bad_index(&self) -> Option<u64> {
        match self {
            VerificationReport::Ok { .. } => None,
            VerificationReport::Corrupt { first_bad_index, .. } => Some(*first_bad_index),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventFilter {
    pub name: Option<EventName>,
    /// `(field, value)`: matches events whose indexed field equals value.
    pub indexed_field_equals: Option<(String, Hash32)>,
    /// Inclusive block index range.
    pub block_range: Option<(u64, u64)>,
}

impl EventFilter {
    pub fn named(name: EventName) -> Self {
        Self {
            name: Some(name),
            ..Self::default()
        }
    }

    pub fn with_indexed(mut self, field: &str, value: Hash32) -> Self {
        self.indexed_field_equals = Some((field.to_owned(), value));
        self
    }

    pub fn with_blocks(mut self, from: u64, to: u64) -> Self {
        self.block_range = Some((from, to));
        self
    }

    pub fn matches(&self, ev: &Event) -> bool {
        self.name.is_none_or(|n| n == ev.name)
            && self
                .indexed_field_equals
                .as_ref()
                .is_none_or(|(k, v)| ev.indexed_value(k) == Some(v))
            && self
                .block_range
                .is_none_or(|(lo, hi)| (lo..=hi).contains(&ev.block_index))
    }
}

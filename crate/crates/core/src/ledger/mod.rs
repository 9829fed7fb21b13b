//! Append-only, hash-chained block store.
//!
//! Each block commits to its predecessor through `prev_hash`; the genesis
//! block links to 32 zero bytes. Blocks are persisted as
//! `len(4, big-endian) ‖ block bytes` records, and a `<chain>.head` sidecar
//! holds the lowercase hex hash of the newest block so that truncation at a
//! record boundary is detectable too.

mod types;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use types::{
    Block, Event, EventFilter, EventName, PendingEvent, Transaction, TxReceipt, VerificationReport,
};

use crate::address::{Address, Hash32, ZERO_HASH};
use crate::clock::Clock;
use crate::codec::DecodeError;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("payload is not a well-formed contract call: {0}")]
    MalformedPayload(DecodeError),
    #[error("nonce gap for {sender}: expected {expected}, got {got}")]
    NonceGap {
        sender: Address,
        expected: u64,
        got: u64,
    },
    #[error("nothing to seal")]
    NothingToSeal,
    #[error("chain is corrupt at block {first_bad_index}: {reason}")]
    Corrupt { first_bad_index: u64, reason: String },
    #[error("chain io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn head_path(chain: &Path) -> PathBuf {
    let mut s = chain.as_os_str().to_owned();
    s.push(".head");
    PathBuf::from(s)
}

#[derive(Debug)]
struct PendingBlock {
    timestamp: u64,
    transactions: Vec<Transaction>,
    events: Vec<Event>,
}

#[derive(Debug)]
struct ChainFile {
    path: PathBuf,
    file: File,
}

impl ChainFile {
    fn append(&mut self, block: &Block) -> std::io::Result<()> {
        let body = block.to_bytes();
        let mut record = Vec::with_capacity(4 + body.len());
        record.extend_from_slice(&(body.len() as u32).to_be_bytes());
        record.extend_from_slice(&body);
        self.file.write_all(&record)?;
        self.file.sync_data()?;
        let head = head_path(&self.path);
        let tmp = head.with_extension("head.tmp");
        std::fs::write(&tmp, format!("{}\n", hex::encode(block.block_hash)))?;
        std::fs::rename(tmp, head)
    }
}

pub struct Ledger {
    blocks: Vec<Arc<Block>>,
    pending: Option<PendingBlock>,
    next_nonce: HashMap<Address, u64>,
    clock: Arc<dyn Clock>,
    file: Option<ChainFile>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("blocks", &self.blocks.len())
            .field("pending", &self.pending.as_ref().map(|p| p.transactions.len()))
            .field("path", &self.file.as_ref().map(|f| &f.path))
            .finish()
    }
}

impl Ledger {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            blocks: Vec::new(),
            pending: None,
            next_nonce: HashMap::new(),
            clock,
            file: None,
        }
    }

    /// Opens a chain file, creating it if absent. An existing chain must
    /// verify cleanly.
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, LedgerError> {
        let blocks = if path.exists() {
            let bytes = std::fs::read(path)?;
            let head = read_head(path)?;
            let (blocks, report) = verify_bytes(&bytes, head.as_ref());
            if let VerificationReport::Corrupt { first_bad_index, reason } = report {
                return Err(LedgerError::Corrupt { first_bad_index, reason });
            }
            blocks
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut ledger = Self::in_memory(clock);
        for b in blocks {
            ledger.note_nonces(&b);
            ledger.blocks.push(Arc::new(b));
        }
        ledger.file = Some(ChainFile {
            path: path.to_path_buf(),
            file,
        });
        Ok(ledger)
    }

    fn note_nonces(&mut self, block: &Block) {
        for tx in &block.transactions {
            self.next_nonce.insert(tx.sender, tx.nonce + 1);
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|f| f.path.as_path())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    /// Cheap immutable copy of the sealed prefix.
    pub fn snapshot(&self) -> Vec<Arc<Block>> {
        self.blocks.clone()
    }

    pub fn head_hash(&self) -> Hash32 {
        self.blocks.last().map_or(ZERO_HASH, |b| b.block_hash)
    }

    pub fn next_nonce(&self, sender: &Address) -> u64 {
        self.next_nonce.get(sender).copied().unwrap_or(0)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.as_ref().map_or(0, |p| p.transactions.len())
    }

    /// Timestamp of the open block, opening one if necessary. Block
    /// timestamps never decrease.
    pub fn open_block_timestamp(&mut self) -> u64 {
        let floor = self.blocks.last().map_or(0, |b| b.timestamp);
        let clock = &self.clock;
        self.pending
            .get_or_insert_with(|| PendingBlock {
                timestamp: clock.now().max(floor),
                transactions: Vec::new(),
                events: Vec::new(),
            })
            .timestamp
    }

    /// Drops an open block that never received a transaction.
    pub fn discard_empty_pending(&mut self) {
        if self.pending.as_ref().is_some_and(|p| p.transactions.is_empty()) {
            self.pending = None;
        }
    }

    pub fn append_transaction(&mut self, tx: Transaction) -> Result<TxReceipt, LedgerError> {
        self.append_with_events(tx, Vec::new())
    }

    /// Queues a transaction and the events its execution emitted.
    pub fn append_with_events(
        &mut self,
        tx: Transaction,
        events: Vec<PendingEvent>,
    ) -> Result<TxReceipt, LedgerError> {
        tx.call().map_err(LedgerError::MalformedPayload)?;
        let expected = self.next_nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(LedgerError::NonceGap {
                sender: tx.sender,
                expected,
                got: tx.nonce,
            });
        }
        let block_index = self.blocks.len() as u64;
        let timestamp = self.open_block_timestamp();
        let pending = self.pending.as_mut().expect("opened above");
        let tx_index = pending.transactions.len() as u32;
        self.next_nonce.insert(tx.sender, tx.nonce + 1);
        pending.transactions.push(tx);
        pending
            .events
            .extend(events.into_iter().enumerate().map(|(i, e)| Event {
                name: e.name,
                indexed: e.indexed,
                data: e.data,
                block_index,
                tx_index,
                log_index: i as u32,
                timestamp,
            }));
        Ok(TxReceipt { block_index, tx_index })
    }

    /// Seals the open block. The block is on disk before this returns.
    pub fn seal_block(&mut self, state_root: Hash32, allow_empty: bool) -> Result<Arc<Block>, LedgerError> {
        if self.pending_len() == 0 && !allow_empty {
            return Err(LedgerError::NothingToSeal);
        }
        self.open_block_timestamp();
        let pending = self.pending.take().expect("opened above");
        let mut block = Block {
            index: self.blocks.len() as u64,
            prev_hash: self.head_hash(),
            timestamp: pending.timestamp,
            transactions: pending.transactions,
            events: pending.events,
            state_root,
            block_hash: ZERO_HASH,
        };
        block.block_hash = block.compute_hash();
        if let Some(file) = self.file.as_mut() {
            if let Err(e) = file.append(&block) {
                // Nothing was sealed; restore the queue so the caller may retry.
                for tx in &block.transactions {
                    self.next_nonce.insert(tx.sender, tx.nonce + 1);
                }
                self.pending = Some(PendingBlock {
                    timestamp: block.timestamp,
                    transactions: block.transactions,
                    events: block.events,
                });
                return Err(e.into());
            }
        }
        let block = Arc::new(block);
        self.blocks.push(block.clone());
        Ok(block)
    }

    /// Re-verifies the persisted chain (or the in-memory blocks when there
    /// is no file).
    pub fn verify_chain(&self) -> VerificationReport {
        match &self.file {
            Some(f) => verify_chain_file(&f.path).unwrap_or_else(|e| VerificationReport::Corrupt {
                first_bad_index: 0,
                reason: format!("unreadable chain file: {e}"),
            }),
            None => verify_blocks(self.blocks.iter().map(|b| b.as_ref())),
        }
    }

    pub fn get_events(&self, filter: &EventFilter) -> Vec<Event> {
        events_matching(&self.blocks, filter)
    }
}

pub fn events_matching(blocks: &[Arc<Block>], filter: &EventFilter) -> Vec<Event> {
    let blocks: &[Arc<Block>] = match filter.block_range {
        Some((lo, hi)) => {
            let lo = (lo as usize).min(blocks.len());
            let hi = (hi as usize).saturating_add(1).min(blocks.len()).max(lo);
            &blocks[lo..hi]
        }
        None => blocks,
    };
    blocks
        .iter()
        .flat_map(|b| b.events.iter())
        .filter(|e| filter.matches(e))
        .cloned()
        .collect()
}

fn read_head(path: &Path) -> std::io::Result<Option<Hash32>> {
    match std::fs::read_to_string(head_path(path)) {
        Ok(s) => {
            let mut out = [0u8; 32];
            Ok(hex::decode_to_slice(s.trim(), &mut out).ok().map(|_| out))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

/// Reads and verifies a chain file plus its head sidecar.
pub fn verify_chain_file(path: &Path) -> std::io::Result<VerificationReport> {
    let bytes = std::fs::read(path)?;
    let head = read_head(path)?;
    Ok(verify_bytes(&bytes, head.as_ref()).1)
}

/// Verifies chain file bytes, anchored to `head` when given.
pub fn verify_chain_bytes(bytes: &[u8], head: Option<&Hash32>) -> VerificationReport {
    verify_bytes(bytes, head).1
}

/// Decodes the blocks of a chain file, stopping at the first bad record.
pub fn read_chain_file(path: &Path) -> Result<Vec<Block>, LedgerError> {
    let bytes = std::fs::read(path)?;
    let head = read_head(path)?;
    match verify_bytes(&bytes, head.as_ref()) {
        (blocks, VerificationReport::Ok { .. }) => Ok(blocks),
        (_, VerificationReport::Corrupt { first_bad_index, reason }) => {
            Err(LedgerError::Corrupt { first_bad_index, reason })
        }
    }
}

fn check_block(block: &Block, expected_index: u64, prev: Option<&Block>) -> Result<(), String> {
    if block.index != expected_index {
        return Err(format!("index {} in position {expected_index}", block.index));
    }
    if block.compute_hash() != block.block_hash {
        return Err("block hash does not match contents".into());
    }
    let want_prev = prev.map_or(ZERO_HASH, |p| p.block_hash);
    if block.prev_hash != want_prev {
        return Err("prev_hash does not link to previous block".into());
    }
    if prev.is_some_and(|p| p.timestamp > block.timestamp) {
        return Err("timestamp decreases".into());
    }
    for tx in &block.transactions {
        tx.call().map_err(|e| format!("malformed payload: {e}"))?;
    }
    for ev in &block.events {
        if ev.block_index != block.index
            || ev.timestamp != block.timestamp
            || ev.tx_index as usize >= block.transactions.len()
        {
            return Err("event position inconsistent with block".into());
        }
    }
    Ok(())
}

/// Verifies an in-memory sequence of blocks.
pub fn verify_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> VerificationReport {
    let mut prev: Option<&Block> = None;
    let mut count = 0u64;
    for (i, b) in blocks.into_iter().enumerate() {
        if let Err(reason) = check_block(b, i as u64, prev) {
            return VerificationReport::Corrupt {
                first_bad_index: i as u64,
                reason,
            };
        }
        prev = Some(b);
        count += 1;
    }
    VerificationReport::Ok {
        blocks: count,
        head: hex::encode(prev.map_or(ZERO_HASH, |b| b.block_hash)),
    }
}

fn verify_bytes(bytes: &[u8], head: Option<&Hash32>) -> (Vec<Block>, VerificationReport) {
    let mut blocks: Vec<Block> = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let index = blocks.len() as u64;
        let corrupt = |reason: String| VerificationReport::Corrupt {
            first_bad_index: index,
            reason,
        };
        let Some(len_bytes) = bytes.get(pos..pos + 4) else {
            return (blocks, corrupt("truncated record length".into()));
        };
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            return (blocks, corrupt("truncated record body".into()));
        };
        let block = match Block::from_bytes(body) {
            Ok(b) => b,
            Err(e) => return (blocks, corrupt(format!("undecodable block: {e}"))),
        };
        if let Err(reason) = check_block(&block, index, blocks.last()) {
            return (blocks, corrupt(reason));
        }
        blocks.push(block);
        pos += 4 + len;
    }
    if let Some(head) = head {
        let last = blocks.last().map_or(ZERO_HASH, |b| b.block_hash);
        if *head != last {
            let report = match blocks.iter().position(|b| b.block_hash == *head) {
                Some(k) => VerificationReport::Corrupt {
                    first_bad_index: k as u64 + 1,
                    reason: "chain is shorter or longer than its head anchor".into(),
                },
                None => VerificationReport::Corrupt {
                    first_bad_index: blocks.len() as u64,
                    reason: "head anchor matches no block".into(),
                },
            };
            return (blocks, report);
        }
    }
    let report = VerificationReport::Ok {
        blocks: blocks.len() as u64,
        head: hex::encode(blocks.last().map_or(ZERO_HASH, |b| b.block_hash)),
    };
    (blocks, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::TestClock;
    use crate::contract::ContractCall;

    fn ledger() -> Ledger {
        Ledger::in_memory(Arc::new(TestClock::new(1_700_000_000, 1)))
    }

    fn tx(sender: Address, nonce: u64) -> Transaction {
        Transaction {
            sender,
            recipient: Address::from_label("contract"),
            payload: ContractCall::SetAuthorizedProvider {
                provider: Address::from_label("p"),
                enabled: true,
            }
            .encode(),
            nonce,
            submitted_at: 1_700_000_000,
        }
    }

    #[test]
    fn first_tx_lands_at_genesis_position() {
        let mut l = ledger();
        let r = l.append_transaction(tx(Address::from_label("a"), 0)).unwrap();
        assert_eq!((r.block_index, r.tx_index), (0, 0));
    }

    #[test]
    fn duplicate_nonce_is_a_gap() {
        let mut l = ledger();
        let a = Address::from_label("a");
        l.append_transaction(tx(a, 0)).unwrap();
        assert!(matches!(
            l.append_transaction(tx(a, 0)),
            Err(LedgerError::NonceGap { expected: 1, got: 0, .. })
        ));
        assert!(matches!(l.append_transaction(tx(a, 5)), Err(LedgerError::NonceGap { .. })));
    }

    #[test]
    fn malformed_payload_rejected() {
        let mut l = ledger();
        let mut t = tx(Address::from_label("a"), 0);
        t.payload = vec![0xff, 1, 2];
        assert!(matches!(l.append_transaction(t), Err(LedgerError::MalformedPayload(_))));
        assert_eq!(l.next_nonce(&Address::from_label("a")), 0);
    }

    #[test]
    fn seal_links_to_previous() {
        let mut l = ledger();
        let a = Address::from_label("a");
        l.append_transaction(tx(a, 0)).unwrap();
        let b0 = l.seal_block(ZERO_HASH, false).unwrap();
        assert_eq!(b0.prev_hash, ZERO_HASH);
        l.append_transaction(tx(a, 1)).unwrap();
        let b1 = l.seal_block(ZERO_HASH, false).unwrap();
        assert_eq!(b1.index, 1);
        assert_eq!(b1.prev_hash, b0.block_hash);
    }

    #[test]
    fn nothing_to_seal() {
        let mut l = ledger();
        assert!(matches!(l.seal_block(ZERO_HASH, false), Err(LedgerError::NothingToSeal)));
        let b = l.seal_block(ZERO_HASH, true).unwrap();
        assert!(b.transactions.is_empty());
    }

    #[test]
    fn in_memory_verification_flags_mutation() {
        let mut l = ledger();
        let a = Address::from_label("a");
        for n in 0..5 {
            l.append_transaction(tx(a, n)).unwrap();
            l.seal_block(ZERO_HASH, false).unwrap();
        }
        assert!(l.verify_chain().is_ok());
        let mut blocks: Vec<Block> = l.blocks().iter().map(|b| (**b).clone()).collect();
        blocks[3].timestamp += 1;
        assert_eq!(verify_blocks(&blocks).first_bad_index(), Some(3));
    }

    #[test]
    fn event_filter_by_range() {
        let mut l = ledger();
        let a = Address::from_label("a");
        for n in 0..3 {
            l.append_with_events(tx(a, n), vec![PendingEvent::new(EventName::ConsentGiven)])
                .unwrap();
            l.seal_block(ZERO_HASH, false).unwrap();
        }
        let evs = l.get_events(&EventFilter::default().with_blocks(1, 5));
        assert_eq!(evs.iter().map(|e| e.block_index).collect::<Vec<_>>(), vec![1, 2]);
        assert!(l.get_events(&EventFilter::default().with_blocks(7, 9)).is_empty());
    }
}

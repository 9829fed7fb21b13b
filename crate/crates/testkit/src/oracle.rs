//! Reference computations that share no code paths with the crate under
//! test: a chain-file parser with its own cursor, an event-log reducer and a
//! brute-force statistics recount.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use sha2::{Digest, Sha256};

use consent_core::contract::{ContractState, Purpose, PurposeSet, PurposeStatus};
use consent_core::etl::{ConsentStats, PurposeTotals, RecordRow, TimeRange, TrendPoint, WeekdayCount};
use consent_core::ledger::{Block, Event, EventName};

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("need {n} bytes at {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn int(&mut self, n: usize) -> Result<u64, String> {
        Ok(self.take(n)?.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b)))
    }

    fn lp(&mut self) -> Result<&'a [u8], String> {
        let n = self.int(4)? as usize;
        self.take(n)
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTx {
    pub sender: [u8; 20],
    pub recipient: [u8; 20],
    pub payload: Vec<u8>,
    pub nonce: u64,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub code: u8,
    pub indexed: Vec<(String, [u8; 32])>,
    pub data: Vec<(String, Vec<u8>)>,
    pub block: u64,
    pub tx: u32,
    pub log: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBlock {
    pub index: u64,
    pub prev_hash: [u8; 32],
    pub timestamp: u64,
    pub txs: Vec<RawTx>,
    pub events: Vec<RawEvent>,
    pub state_root: [u8; 32],
    pub stored_hash: [u8; 32],
    /// SHA-256 over the record body minus its trailing 32 hash bytes.
    pub recomputed_hash: [u8; 32],
    /// Byte range of the whole record (length prefix included) in the file.
    pub span: (usize, usize),
}

fn parse_block(body: &[u8]) -> Result<RawBlock, String> {
    let mut c = Cursor { buf: body, pos: 0 };
    let index = c.int(8)?;
    let prev_hash = c.arr()?;
    let timestamp = c.int(8)?;
    let n_tx = c.int(4)?;
    let mut txs = Vec::new();
    for _ in 0..n_tx {
        txs.push(RawTx {
            sender: c.arr()?,
            recipient: c.arr()?,
            payload: c.lp()?.to_vec(),
            nonce: c.int(8)?,
            submitted_at: c.int(8)?,
        });
    }
    let n_ev = c.int(4)?;
    let mut events = Vec::new();
    for _ in 0..n_ev {
        let code = c.int(1)? as u8;
        let mut indexed = Vec::new();
        for _ in 0..c.int(4)? {
            let k = String::from_utf8(c.lp()?.to_vec()).map_err(|e| e.to_string())?;
            indexed.push((k, c.arr()?));
        }
        let mut data = Vec::new();
        for _ in 0..c.int(4)? {
            let k = String::from_utf8(c.lp()?.to_vec()).map_err(|e| e.to_string())?;
            data.push((k, c.lp()?.to_vec()));
        }
        events.push(RawEvent {
            code,
            indexed,
            data,
            block: c.int(8)?,
            tx: c.int(4)? as u32,
            log: c.int(4)? as u32,
            timestamp: c.int(8)?,
        });
    }
    let state_root = c.arr()?;
    let hashed_len = c.pos;
    let stored_hash = c.arr()?;
    if c.pos != body.len() {
        return Err(format!("{} trailing bytes", body.len() - c.pos));
    }
    Ok(RawBlock {
        index,
        prev_hash,
        timestamp,
        txs,
        events,
        state_root,
        stored_hash,
        recomputed_hash: Sha256::digest(&body[..hashed_len]).into(),
        span: (0, 0),
    })
}

/// Parses a chain file. Stops at the first record that does not parse and
/// returns what was read so far alongside the error.
pub fn parse_chain(bytes: &[u8]) -> (Vec<RawBlock>, Option<String>) {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let mut blocks = Vec::new();
    while c.pos < bytes.len() {
        let start = c.pos;
        let body = match c.lp() {
            Ok(b) => b,
            Err(e) => {
                let msg = format!("record {}: {e}", blocks.len());
                return (blocks, Some(msg));
            }
        };
        match parse_block(body) {
            Ok(mut b) => {
                b.span = (start, c.pos);
                blocks.push(b);
            }
            Err(e) => {
                let msg = format!("record {}: {e}", blocks.len());
                return (blocks, Some(msg));
            }
        }
    }
    (blocks, None)
}

/// Record boundaries only, without decoding bodies.
pub fn record_spans(bytes: &[u8]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos + 4 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = (pos + 4 + len).min(bytes.len());
        spans.push((pos, end));
        pos = end;
    }
    spans
}

/// Per-record purpose status: `Some(true)` granted, `Some(false)` revoked.
pub type StatusTable = BTreeMap<([u8; 32], u64), [Option<bool>; 2]>;

fn slot(p: Purpose) -> usize {
    match p {
        Purpose::Research => 0,
        Purpose::Education => 1,
    }
}

/// Replays ConsentGiven / ConsentWithdrawn events into a status table.
pub fn reduce_status(events: &[Event]) -> StatusTable {
    let mut t = StatusTable::new();
    for ev in events {
        let key = || {
            (
                *ev.indexed_value("subject_key").expect("subject_key"),
                ev.data_u64("record_index").expect("record_index"),
            )
        };
        let bits = || PurposeSet::from_bits(ev.data_u8("purposes").expect("purposes")).expect("bits");
        match ev.name {
            EventName::ConsentGiven => {
                let mut row = [None; 2];
                for p in bits().iter() {
                    row[slot(p)] = Some(true);
                }
                assert!(t.insert(key(), row).is_none(), "record given twice");
            }
            EventName::ConsentWithdrawn => {
                let row = t.get_mut(&key()).expect("withdrawal of unknown record");
                for p in bits().iter() {
                    assert_eq!(row[slot(p)], Some(true), "revoking a purpose that was not granted");
                    row[slot(p)] = Some(false);
                }
            }
            _ => {}
        }
    }
    t
}

/// The same table read directly from contract state.
pub fn status_from_state(state: &ContractState) -> StatusTable {
    let mut t = StatusTable::new();
    for (k, records) in &state.patient_consents {
        for (i, r) in records.iter().enumerate() {
            let conv = |s: Option<PurposeStatus>| s.map(|s| s == PurposeStatus::Granted);
            t.insert((k.0, i as u64), [conv(r.status.research), conv(r.status.education)]);
        }
    }
    t
}

pub fn all_events<B: AsRef<Block>>(blocks: &[B]) -> Vec<Event> {
    blocks.iter().flat_map(|b| b.as_ref().events.iter().cloned()).collect()
}

/// Checks, per transaction, that each status-changing event is paired with
/// exactly one ConsentChanged of the same direction for the same patient.
pub fn check_audit_pairing<B: AsRef<Block>>(blocks: &[B]) -> Result<usize, String> {
    let mut paired = 0;
    for b in blocks {
        let b = b.as_ref();
        let mut by_tx: BTreeMap<u32, Vec<&Event>> = BTreeMap::new();
        for ev in &b.events {
            by_tx.entry(ev.tx_index).or_default().push(ev);
        }
        for (tx, evs) in by_tx {
            let changes: Vec<&&Event> = evs.iter().filter(|e| e.name == EventName::ConsentChanged).collect();
            let transitions: Vec<&&Event> = evs
                .iter()
                .filter(|e| matches!(e.name, EventName::ConsentGiven | EventName::ConsentWithdrawn))
                .collect();
            if changes.len() != transitions.len() {
                return Err(format!(
                    "block {} tx {tx}: {} transitions, {} ConsentChanged",
                    b.index,
                    transitions.len(),
                    changes.len()
                ));
            }
            for (t, c) in transitions.iter().zip(&changes) {
                let names: Vec<&str> = c
                    .indexed
                    .iter()
                    .map(|(k, _)| k.as_str())
                    .chain(c.data.iter().map(|(k, _)| k.as_str()))
                    .collect();
                if names != ["patient", "healthcareProvider", "isConsentGiven", "timestamp"] {
                    return Err(format!("ConsentChanged fields {names:?}"));
                }
                let given = c.data_u8("isConsentGiven") == Some(1);
                if given != (t.name == EventName::ConsentGiven) {
                    return Err(format!("block {} tx {tx}: direction mismatch", b.index));
                }
                let sk = t.indexed_value("subject_key").unwrap();
                let mut want = [0u8; 32];
                want[12..].copy_from_slice(&sk[12..]);
                if c.indexed_value("patient") != Some(&want) {
                    return Err(format!("block {} tx {tx}: patient mismatch", b.index));
                }
                paired += 1;
            }
        }
    }
    Ok(paired)
}

fn day_of(ts: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + Days::new(ts / 86_400)
}

/// ISO weekday index 0..7 (Monday = 0); 1970-01-01 was a Thursday.
fn weekday_of(ts: u64) -> usize {
    ((ts / 86_400 + 3) % 7) as usize
}

fn in_range(r: &TimeRange, d: NaiveDate) -> bool {
    r.from.is_none_or(|f| f <= d) && r.to.is_none_or(|t| d <= t)
}

fn by_end(r: &TimeRange, d: NaiveDate) -> bool {
    r.to.is_none_or(|t| d <= t)
}

fn same_record(a: &Event, b: &Event) -> bool {
    a.indexed_value("subject_key") == b.indexed_value("subject_key")
        && a.data_u64("record_index") == b.data_u64("record_index")
}

/// Statistics by linear rescans of the flat event list.
pub fn recount_stats<B: AsRef<Block>>(blocks: &[B], range: TimeRange) -> ConsentStats {
    let events = all_events(blocks);
    let given: Vec<&Event> = events
        .iter()
        .filter(|e| e.name == EventName::ConsentGiven && in_range(&range, day_of(e.timestamp)))
        .collect();

    let mut keys: BTreeSet<(NaiveDate, Purpose)> = BTreeSet::new();
    for g in &given {
        for p in Purpose::ALL {
            if g.data_u8("purposes").unwrap() & (1 << slot(p)) != 0 {
                keys.insert((day_of(g.timestamp), p));
            }
        }
    }
    let trend = keys
        .into_iter()
        .map(|(date, purpose)| TrendPoint {
            date,
            purpose,
            count: given
                .iter()
                .filter(|g| day_of(g.timestamp) == date && g.data_u8("purposes").unwrap() & (1 << slot(purpose)) != 0)
                .count() as u64,
        })
        .collect();

    let names = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
    let weekday_distribution = (0..7)
        .map(|d| WeekdayCount {
            iso_weekday: d as u8 + 1,
            weekday: names[d].to_string(),
            count: given.iter().filter(|g| weekday_of(g.timestamp) == d).count() as u64,
        })
        .collect();

    let mut totals = PurposeTotals::default();
    let mut records = Vec::new();
    for g in &given {
        let granted = g.data_u8("purposes").unwrap();
        let mut revoked = 0u8;
        let mut babies = 0u64;
        for e in &events {
            if !same_record(g, e) || !by_end(&range, day_of(e.timestamp)) {
                continue;
            }
            match e.name {
                EventName::ConsentWithdrawn => revoked |= e.data_u8("purposes").unwrap(),
                EventName::StudyIdCreated => babies += 1,
                _ => {}
            }
        }
        let active = granted & !revoked;
        if active & 1 != 0 {
            totals.research += 1;
        }
        if active & 2 != 0 {
            totals.education += 1;
        }
        records.push(RecordRow {
            registration_date: day_of(g.timestamp),
            participants_count: 1 + babies,
            purposes: PurposeSet::from_bits(granted).unwrap(),
            active_purposes: PurposeSet::from_bits(active).unwrap(),
            has_study_id: babies > 0,
        });
    }

    ConsentStats {
        range,
        trend,
        weekday_distribution,
        totals,
        records,
    }
}

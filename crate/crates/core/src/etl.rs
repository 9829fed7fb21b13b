//! Anonymized statistics derived from the event log alone.
//!
//! A "record" is one `ConsentGiven` event. Records count toward the output
//! when their registration date lies inside the range; withdrawals and study
//! ids count when they happened on or before the range end. Dates are UTC
//! calendar days.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::Hash32;
use crate::contract::{Purpose, PurposeSet};
use crate::ledger::{verify_blocks, Block, EventName, VerificationReport};

#[derive(Debug, Error)]
pub enum EtlError {
    #[error("refusing to aggregate a corrupt chain (first bad block {first_bad_index}: {reason})")]
    CorruptChain { first_bad_index: u64, reason: String },
    #[error("unknown export format {0:?}; expected json or csv")]
    UnknownFormat(String),
    #[error("malformed {event} event in block {block}: missing {field}")]
    MalformedEvent {
        event: EventName,
        block: u64,
        field: &'static str,
    },
    #[error("export failed: {0}")]
    Export(String),
}

/// Inclusive range of UTC dates; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl TimeRange {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn new(from: Option<NaiveDate>, to: Option<NaiveDate>) -> Self {
        Self { from, to }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.from.is_none_or(|f| d >= f) && self.to.is_none_or(|t| d <= t)
    }

    pub fn not_after_end(&self, d: NaiveDate) -> bool {
        self.to.is_none_or(|t| d <= t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub date: NaiveDate,
    pub purpose: Purpose,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekdayCount {
    /// ISO-8601, Monday = 1.
    pub iso_weekday: u8,
    pub weekday: String,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurposeTotals {
    pub research: u64,
    pub education: u64,
}

impl PurposeTotals {
    pub fn get(&self, p: Purpose) -> u64 {
        match p {
            Purpose::Research => self.research,
            Purpose::Education => self.education,
        }
    }

    fn bump(&mut self, p: Purpose) {
        match p {
            Purpose::Research => self.research += 1,
            Purpose::Education => self.education += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordRow {
    pub registration_date: NaiveDate,
    /// Mother plus every baby with a study id.
    pub participants_count: u64,
    /// Purposes granted at registration.
    pub purposes: PurposeSet,
    /// Purposes still granted at the range end.
    pub active_purposes: PurposeSet,
    pub has_study_id: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentStats {
    pub range: TimeRange,
    pub trend: Vec<TrendPoint>,
    pub weekday_distribution: Vec<WeekdayCount>,
    pub totals: PurposeTotals,
    pub records: Vec<RecordRow>,
}

pub const WEEKDAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

impl ConsentStats {
    pub fn empty(range: TimeRange) -> Self {
        Self {
            range,
            trend: Vec::new(),
            weekday_distribution: weekday_table([0; 7]),
            totals: PurposeTotals::default(),
            records: Vec::new(),
        }
    }
}

pub fn weekday_table(counts: [u64; 7]) -> Vec<WeekdayCount> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| WeekdayCount {
            iso_weekday: i as u8 + 1,
            weekday: WEEKDAY_NAMES[i].to_owned(),
            count,
        })
        .collect()
}

/// UTC calendar date of a Unix timestamp.
pub fn utc_date(ts: u64) -> NaiveDate {
    DateTime::from_timestamp(ts as i64, 0)
        .map(|d| d.date_naive())
        .unwrap_or(NaiveDate::MAX)
}

struct Tracked {
    date: NaiveDate,
    purposes: PurposeSet,
    active: PurposeSet,
    babies: u64,
}

/// Aggregates a verified chain. Accepts any slice of blocks or block handles.
pub fn build_stats<B: AsRef<Block>>(blocks: &[B], range: TimeRange) -> Result<ConsentStats, EtlError> {
    if let VerificationReport::Corrupt { first_bad_index, reason } = verify_blocks(blocks.iter().map(AsRef::as_ref)) {
        return Err(EtlError::CorruptChain { first_bad_index, reason });
    }
    let mut tracked: BTreeMap<(Hash32, u64), Tracked> = BTreeMap::new();
    let mut order: Vec<(Hash32, u64)> = Vec::new();

    for block in blocks.iter().map(AsRef::as_ref) {
        for ev in &block.events {
            let missing = |field| EtlError::MalformedEvent {
                event: ev.name,
                block: block.index,
                field,
            };
            let date = utc_date(ev.timestamp);
            match ev.name {
                EventName::ConsentGiven => {
                    if !range.contains(date) {
                        continue;
                    }
                    let key = *ev.indexed_value("subject_key").ok_or_else(|| missing("subject_key"))?;
                    let idx = ev.data_u64("record_index").ok_or_else(|| missing("record_index"))?;
                    let purposes = ev
                        .data_u8("purposes")
                        .and_then(PurposeSet::from_bits)
                        .ok_or_else(|| missing("purposes"))?;
                    tracked.insert(
                        (key, idx),
                        Tracked {
                            date,
                            purposes,
                            active: purposes,
                            babies: 0,
                        },
                    );
                    order.push((key, idx));
                }
                EventName::ConsentWithdrawn => {
                    if !range.not_after_end(date) {
                        continue;
                    }
                    let key = *ev.indexed_value("subject_key").ok_or_else(|| missing("subject_key"))?;
                    let idx = ev.data_u64("record_index").ok_or_else(|| missing("record_index"))?;
                    let revoked = ev
                        .data_u8("purposes")
                        .and_then(PurposeSet::from_bits)
                        .ok_or_else(|| missing("purposes"))?;
                    if let Some(t) = tracked.get_mut(&(key, idx)) {
                        t.active = PurposeSet::from_bits(t.active.bits() & !revoked.bits()).unwrap_or_default();
                    }
                }
                EventName::StudyIdCreated => {
                    if !range.not_after_end(date) {
                        continue;
                    }
                    let key = *ev.indexed_value("subject_key").ok_or_else(|| missing("subject_key"))?;
                    let idx = ev.data_u64("record_index").ok_or_else(|| missing("record_index"))?;
                    if let Some(t) = tracked.get_mut(&(key, idx)) {
                        t.babies += 1;
                    }
                }
                EventName::ConsentChanged => {}
            }
        }
    }

    let mut stats = ConsentStats::empty(range);
    let mut trend: BTreeMap<(NaiveDate, Purpose), u64> = BTreeMap::new();
    let mut weekdays = [0u64; 7];
    for key in &order {
        let t = &tracked[key];
        weekdays[t.date.weekday().number_from_monday() as usize - 1] += 1;
        for p in t.purposes.iter() {
            *trend.entry((t.date, p)).or_default() += 1;
        }
        for p in t.active.iter() {
            stats.totals.bump(p);
        }
        stats.records.push(RecordRow {
            registration_date: t.date,
            participants_count: 1 + t.babies,
            purposes: t.purposes,
            active_purposes: t.active,
            has_study_id: t.babies > 0,
        });
    }
    stats.trend = trend
        .into_iter()
        .map(|((date, purpose), count)| TrendPoint { date, purpose, count })
        .collect();
    stats.weekday_distribution = weekday_table(weekdays);
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = EtlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(EtlError::UnknownFormat(other.to_owned())),
        }
    }
}

/// Header rows plus the fixed weekday and totals rows in a CSV export.
pub const CSV_FIXED_LINES: usize = 4 + 7 + 2;

fn purposes_cell(s: PurposeSet) -> String {
    s.iter().map(Purpose::name).collect::<Vec<_>>().join(";")
}

pub fn export_stats(stats: &ConsentStats, format: ExportFormat) -> Result<Vec<u8>, EtlError> {
    match format {
        ExportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(stats).map_err(|e| EtlError::Export(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
            let err = |e: csv::Error| EtlError::Export(e.to_string());
            w.write_record(["section", "date", "purpose", "count"]).map_err(err)?;
            for t in &stats.trend {
                w.write_record(["trend", &t.date.to_string(), t.purpose.name(), &t.count.to_string()])
                    .map_err(err)?;
            }
            w.write_record(["section", "iso_weekday", "weekday", "count"]).map_err(err)?;
            for d in &stats.weekday_distribution {
                w.write_record(["weekday", &d.iso_weekday.to_string(), &d.weekday, &d.count.to_string()])
                    .map_err(err)?;
            }
            w.write_record(["section", "purpose", "active"]).map_err(err)?;
            for p in Purpose::ALL {
                w.write_record(["totals", p.name(), &stats.totals.get(p).to_string()])
                    .map_err(err)?;
            }
            w.write_record([
                "section",
                "registration_date",
                "participants_count",
                "purposes",
                "active_purposes",
                "has_study_id",
            ])
            .map_err(err)?;
            for r in &stats.records {
                w.write_record([
                    "record",
                    &r.registration_date.to_string(),
                    &r.participants_count.to_string(),
                    &purposes_cell(r.purposes),
                    &purposes_cell(r.active_purposes),
                    if r.has_study_id { "true" } else { "false" },
                ])
                .map_err(err)?;
            }
            w.into_inner().map_err(|e| EtlError::Export(e.to_string()))
        }
    }
}

//! Parametric gas schedule and metering.
//!
//! Gas is pure accounting: every operation is priced as a linear combination
//! of schedule parameters, with coefficients taken from an [`OpDescriptor`].
//! Because the model is linear, a schedule can be solved exactly from a set
//! of published totals ([`calibrate`]).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::Profile;
use crate::vault::{PiiField, NONCE_LEN, TAG_LEN};

pub const NEWBORNTIME_V1: &str = "newborntime-v1";
const NEWBORNTIME_V1_TEXT: &str = include_str!("../profiles/newborntime-v1.gas");

/// Relative tolerance used when checking a calibrated schedule against its
/// targets.
pub const CALIBRATION_TOLERANCE: f64 = 0.001;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GasError {
    #[error("unknown operation kind {0:?}")]
    UnknownKind(String),
    #[error("descriptor inconsistent with operation kind: {0}")]
    InvalidDescriptor(String),
    #[error("targets are inconsistent: {0}")]
    Inconsistent(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("profile parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown gas profile {0:?}")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GasParam {
    TxBase,
    SlotWriteCold,
    SlotWriteWarm,
    RecordWrite,
    PerEnvelopeWord,
    EventBase,
    EventPerIndexed,
    ScanPerRecord,
}

impl GasParam {
    pub const ALL: [GasParam; 8] = [
        GasParam::TxBase,
        GasParam::SlotWriteCold,
        GasParam::SlotWriteWarm,
        GasParam::RecordWrite,
        GasParam::PerEnvelopeWord,
        GasParam::EventBase,
        GasParam::EventPerIndexed,
        GasParam::ScanPerRecord,
    ];

    pub fn key(self) -> &'static str {
        match self {
            GasParam::TxBase => "tx_base",
            GasParam::SlotWriteCold => "slot_write_cold",
            GasParam::SlotWriteWarm => "slot_write_warm",
            GasParam::RecordWrite => "record_write",
            GasParam::PerEnvelopeWord => "per_envelope_word",
            GasParam::EventBase => "event_base",
            GasParam::EventPerIndexed => "event_per_indexed",
            GasParam::ScanPerRecord => "scan_per_record",
        }
    }

    fn index(self) -> usize {
        GasParam::ALL.iter().position(|p| *p == self).expect("listed")
    }
}

impl FromStr for GasParam {
    type Err = GasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GasParam::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| GasError::InvalidSchedule(format!("unknown parameter {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub profile_name: String,
    pub tx_base: u64,
    pub slot_write_cold: u64,
    pub slot_write_warm: u64,
    /// Fixed storage cost of materializing one consent record.
    pub record_write: u64,
    pub per_envelope_word: u64,
    pub event_base: u64,
    pub event_per_indexed: u64,
    pub scan_per_record: u64,
}

impl GasSchedule {
    /// EVM-flavoured starting point for calibration.
    pub fn reference() -> Self {
        Self {
            profile_name: "reference".into(),
            tx_base: 21_000,
            slot_write_cold: 20_000,
            slot_write_warm: 5_000,
            record_write: 0,
            per_envelope_word: 0,
            event_base: 375,
            event_per_indexed: 375,
            scan_per_record: 1,
        }
    }

    pub fn newborntime_v1() -> Self {
        Self::parse(NEWBORNTIME_V1_TEXT).expect("shipped profile parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            NEWBORNTIME_V1 => Some(Self::newborntime_v1()),
            "reference" => Some(Self::reference()),
            _ => None,
        }
    }

    /// Looks for `<dir>/<name>.gas` first, then the built-in profiles.
    pub fn load(name: &str, dir: Option<&Path>) -> Result<Self, GasError> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{name}.gas"));
            if let Ok(text) = std::fs::read_to_string(&path) {
                return Self::parse(&text);
            }
        }
        Self::builtin(name).ok_or_else(|| GasError::UnknownProfile(name.to_owned()))
    }

    pub fn get(&self, p: GasParam) -> u64 {
        match p {
            GasParam::TxBase => self.tx_base,
            GasParam::SlotWriteCold => self.slot_write_cold,
            GasParam::SlotWriteWarm => self.slot_write_warm,
            GasParam::RecordWrite => self.record_write,
            GasParam::PerEnvelopeWord => self.per_envelope_word,
            GasParam::EventBase => self.event_base,
            GasParam::EventPerIndexed => self.event_per_indexed,
            GasParam::ScanPerRecord => self.scan_per_record,
        }
    }

    pub fn set(&mut self, p: GasParam, v: u64) {
        let slot = match p {
            GasParam::TxBase => &mut self.tx_base,
            GasParam::SlotWriteCold => &mut self.slot_write_cold,
            GasParam::SlotWriteWarm => &mut self.slot_write_warm,
            GasParam::RecordWrite => &mut self.record_write,
            GasParam::PerEnvelopeWord => &mut self.per_envelope_word,
            GasParam::EventBase => &mut self.event_base,
            GasParam::EventPerIndexed => &mut self.event_per_indexed,
            GasParam::ScanPerRecord => &mut self.scan_per_record,
        };
        *slot = v;
    }

    pub fn validate(&self) -> Result<(), GasError> {
        if self.scan_per_record == 0 {
            return Err(GasError::InvalidSchedule("scan_per_record must be positive".into()));
        }
        if self.profile_name.trim().is_empty() {
            return Err(GasError::InvalidSchedule("empty profile name".into()));
        }
        Ok(())
    }

    /// Parses the `key = value` profile format. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GasError> {
        let mut name = None;
        let mut values: [Option<u64>; 8] = [None; 8];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| GasError::Parse { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "profile_name" {
                name = Some(v.to_owned());
                continue;
            }
            let param: GasParam = k.parse().map_err(|_| err(format!("unknown key {k:?}")))?;
            let n: u64 = v.parse().map_err(|_| err(format!("{k}: not a non-negative integer")))?;
            if values[param.index()].replace(n).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        let missing = |what: &str| GasError::Parse {
            line: 0,
            msg: format!("missing {what}"),
        };
        let mut s = GasSchedule {
            profile_name: name.ok_or_else(|| missing("profile_name"))?,
            ..GasSchedule::reference()
        };
        for p in GasParam::ALL {
            s.set(p, values[p.index()].ok_or_else(|| missing(p.key()))?);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = format!("profile_name = {}\n", self.profile_name);
        for p in GasParam::ALL {
            out.push_str(&format!("{} = {}\n", p.key(), self.get(p)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Deploy,
    Add,
    Query,
    Revoke,
    CreateStudyId,
    SetProvider,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Deploy => "deploy",
            OpKind::Add => "add",
            OpKind::Query => "query",
            OpKind::Revoke => "revoke",
            OpKind::CreateStudyId => "create_study_id",
            OpKind::SetProvider => "set_provider",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = GasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            OpKind::Deploy,
            OpKind::Add,
            OpKind::Query,
            OpKind::Revoke,
            OpKind::CreateStudyId,
            OpKind::SetProvider,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| GasError::UnknownKind(s.to_owned()))
    }
}

/// Storage words occupied by the three envelopes of a full-profile record.
pub fn full_profile_envelope_words() -> u64 {
    PiiField::ALL
        .iter()
        .map(|f| (1 + NONCE_LEN + f.padded_len() + TAG_LEN).div_ceil(32) as u64)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpDescriptor {
    pub kind: OpKind,
    /// First write to a cold bookkeeping slot (first record for a subject,
    /// first enabling of a provider).
    pub first_for_subject: bool,
    pub profile: Profile,
    pub scan_position: u64,
    pub n_envelopes: u64,
    pub envelope_words: u64,
    pub n_events: u64,
    pub n_indexed: u64,
}

impl OpDescriptor {
    fn base(kind: OpKind) -> Self {
        Self {
            kind,
            first_for_subject: false,
            profile: Profile::Minimal,
            scan_position: 0,
            n_envelopes: 0,
            envelope_words: 0,
            n_events: 0,
            n_indexed: 0,
        }
    }

    /// ConsentGiven (1 indexed) plus ConsentChanged (2 indexed).
    pub fn add(first_for_subject: bool, profile: Profile) -> Self {
        let (n_envelopes, envelope_words) = match profile {
            Profile::Full => (3, full_profile_envelope_words()),
            Profile::Minimal => (0, 0),
        };
        Self {
            first_for_subject,
            profile,
            n_envelopes,
            envelope_words,
            n_events: 2,
            n_indexed: 3,
            ..Self::base(OpKind::Add)
        }
    }

    pub fn query() -> Self {
        Self::base(OpKind::Query)
    }

    /// ConsentWithdrawn (1 indexed) plus ConsentChanged (2 indexed).
    pub fn revoke(scan_position: u64) -> Self {
        Self {
            scan_position,
            n_events: 2,
            n_indexed: 3,
            ..Self::base(OpKind::Revoke)
        }
    }

    pub fn create_study_id() -> Self {
        Self {
            n_events: 1,
            n_indexed: 1,
            ..Self::base(OpKind::CreateStudyId)
        }
    }

    pub fn set_provider(new_slot: bool) -> Self {
        Self {
            first_for_subject: new_slot,
            ..Self::base(OpKind::SetProvider)
        }
    }

    pub fn deploy() -> Self {
        Self {
            first_for_subject: true,
            ..Self::base(OpKind::Deploy)
        }
    }

    fn check(&self) -> Result<(), GasError> {
        let bad = |m: &str| Err(GasError::InvalidDescriptor(format!("{}: {m}", self.kind)));
        if self.n_indexed > 4 * self.n_events {
            return bad("more indexed topics than events allow");
        }
        match self.kind {
            OpKind::Query => {
                if self.n_events > 0 || self.envelope_words > 0 || self.first_for_subject {
                    return bad("read-only operations touch no storage and emit nothing");
                }
            }
            OpKind::Add => match self.profile {
                Profile::Minimal if self.n_envelopes > 0 || self.envelope_words > 0 => {
                    return bad("minimal profile carries no envelopes")
                }
                Profile::Full if self.n_envelopes != 3 || self.envelope_words == 0 => {
                    return bad("full profile carries three envelopes")
                }
                _ => {}
            },
            _ => {
                if self.n_envelopes > 0 || self.envelope_words > 0 {
                    return bad("only add stores envelopes");
                }
            }
        }
        if self.kind != OpKind::Revoke && self.scan_position > 0 {
            return bad("scan position only applies to revoke");
        }
        Ok(())
    }

    /// Coefficient of every schedule parameter for this operation.
    pub fn coefficients(&self) -> Result<[u64; 8], GasError> {
        self.check()?;
        let mut c = [0u64; 8];
        let mut add = |p: GasParam, n: u64| c[p.index()] += n;
        let slot = if self.first_for_subject {
            GasParam::SlotWriteCold
        } else {
            GasParam::SlotWriteWarm
        };
        match self.kind {
            OpKind::Query => return Ok(c),
            OpKind::Deploy => {
                add(GasParam::TxBase, 1);
                add(GasParam::SlotWriteCold, 1);
            }
            OpKind::Add => {
                add(GasParam::TxBase, 1);
                add(slot, 1);
                add(GasParam::RecordWrite, 1);
                add(GasParam::PerEnvelopeWord, self.envelope_words);
            }
            OpKind::Revoke => {
                add(GasParam::TxBase, 1);
                add(GasParam::SlotWriteWarm, 1);
                add(GasParam::ScanPerRecord, self.scan_position + 1);
            }
            OpKind::CreateStudyId => {
                add(GasParam::TxBase, 1);
                add(GasParam::SlotWriteCold, 2);
            }
            OpKind::SetProvider => {
                add(GasParam::TxBase, 1);
                add(slot, 1);
            }
        }
        add(GasParam::EventBase, self.n_events);
        add(GasParam::EventPerIndexed, self.n_indexed);
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasReceipt {
    pub op_name: String,
    pub gas_used: u64,
    pub schedule: String,
    pub breakdown: Vec<(String, u64)>,
}

impl GasReceipt {
    pub fn zero(op: OpKind, schedule: &GasSchedule) -> Self {
        Self {
            op_name: op.name().into(),
            gas_used: 0,
            schedule: schedule.profile_name.clone(),
            breakdown: Vec::new(),
        }
    }
}

pub fn meter(schedule: &GasSchedule, desc: &OpDescriptor) -> Result<GasReceipt, GasError> {
    let coeffs = desc.coefficients()?;
    let breakdown: Vec<(String, u64)> = GasParam::ALL
        .into_iter()
        .zip(coeffs)
        .filter(|(_, c)| *c > 0)
        .map(|(p, c)| (p.key().to_owned(), c * schedule.get(p)))
        .collect();
    Ok(GasReceipt {
        op_name: desc.kind.name().into(),
        gas_used: breakdown.iter().map(|(_, u)| u).sum(),
        schedule: schedule.profile_name.clone(),
        breakdown,
    })
}

/// Parameters solved by [`calibrate`]; the others keep their reference values.
pub const DEFAULT_FREE_PARAMS: [GasParam; 5] = [
    GasParam::TxBase,
    GasParam::SlotWriteCold,
    GasParam::RecordWrite,
    GasParam::PerEnvelopeWord,
    GasParam::ScanPerRecord,
];

pub fn calibrate(targets: &[(OpDescriptor, u64)]) -> Result<GasSchedule, GasError> {
    let mut base = GasSchedule::reference();
    base.profile_name = "calibrated".into();
    calibrate_with(&base, &DEFAULT_FREE_PARAMS, targets, CALIBRATION_TOLERANCE)
}

/// Solves the free parameters of `base` from `(descriptor, gas)` targets.
///
/// Targets are consumed in order: each one that is linearly independent of
/// the previous ones must hold exactly; the rest only have to agree
/// within `rel_tol` (zero targets must match exactly). Free parameters no
/// target constrains keep their value from `base`.
pub fn calibrate_with(
    base: &GasSchedule,
    free: &[GasParam],
    targets: &[(OpDescriptor, u64)],
    rel_tol: f64,
) -> Result<GasSchedule, GasError> {
    type Q = Ratio<i128>;
    let n = free.len();
    // Reduced row echelon rows: (coefficients over free params, rhs, pivot column).
    let mut pivots: Vec<(Vec<Q>, Q, usize)> = Vec::new();

    for (desc, gas) in targets {
        let coeffs = desc.coefficients()?;
        let mut fixed = 0i128;
        for p in GasParam::ALL {
            if !free.contains(&p) {
                fixed += coeffs[p.index()] as i128 * base.get(p) as i128;
            }
        }
        let mut row: Vec<Q> = free
            .iter()
            .map(|p| Q::from_integer(coeffs[p.index()] as i128))
            .collect();
        let mut rhs = Q::from_integer(*gas as i128 - fixed);
        for (prow, prhs, pcol) in &pivots {
            let f = row[*pcol];
            if f != Q::from_integer(0) {
                for j in 0..n {
                    row[j] -= f * prow[j];
                }
                rhs -= f * *prhs;
            }
        }
        let Some(col) = row.iter().position(|v| *v != Q::from_integer(0)) else {
            continue;
        };
        let lead = row[col];
        row.iter_mut().for_each(|v| *v /= lead);
        rhs /= lead;
        for (prow, prhs, _) in pivots.iter_mut() {
            let f = prow[col];
            if f != Q::from_integer(0) {
                for j in 0..n {
                    prow[j] -= f * row[j];
                }
                *prhs -= f * rhs;
            }
        }
        pivots.push((row, rhs, col));
    }

    let mut out = base.clone();
    for (row, rhs, col) in &pivots {
        let mut value = *rhs;
        for (j, p) in free.iter().enumerate() {
            if j != *col && !pivots.iter().any(|(_, _, c)| *c == j) {
                value -= row[j] * Q::from_integer(base.get(*p) as i128);
            }
        }
        let rounded = value.round().to_integer();
        if rounded < 0 {
            return Err(GasError::Inconsistent(format!(
                "{} would be negative ({rounded})",
                free[*col].key()
            )));
        }
        out.set(free[*col], rounded as u64);
    }
    out.validate().map_err(|e| GasError::Inconsistent(e.to_string()))?;

    for (desc, gas) in targets {
        let got = meter(&out, desc)?.gas_used;
        let ok = if *gas == 0 {
            got == 0
        } else {
            (got as f64 - *gas as f64).abs() / *gas as f64 <= rel_tol
        };
        if !ok {
            return Err(GasError::Inconsistent(format!(
                "{} target {gas} cannot be met (model gives {got})",
                desc.kind
            )));
        }
    }
    Ok(out)
}

/// Published per-operation gas figures: add (first, then subsequent, full
/// profile), query, and revoke at scan positions 0 through 4.
pub fn per_operation_targets() -> Vec<(OpDescriptor, u64)> {
    let mut t = vec![(OpDescriptor::add(true, Profile::Full), 175_719)];
    t.extend((0..4).map(|_| (OpDescriptor::add(false, Profile::Full), 160_719)));
    t.push((OpDescriptor::query(), 0));
    for (i, g) in [37_035, 41_601, 46_167, 50_733, 55_299].into_iter().enumerate() {
        t.push((OpDescriptor::revoke(i as u64), g));
    }
    t
}

/// Published full-versus-minimal comparison for a subsequent add.
pub fn minimization_targets() -> Vec<(OpDescriptor, u64)> {
    vec![
        (OpDescriptor::add(false, Profile::Full), 160_747),
        (OpDescriptor::add(false, Profile::Minimal), 102_437),
    ]
}

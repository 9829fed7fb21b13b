//! Benchmark harness: gas per operation, batch scalability and the
//! minimal-versus-full record comparison.
//!
//! Gas columns are deterministic. Wall times are measured and reported only.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::address::Address;
use crate::clock::TestClock;
use crate::contract::{ConsentSource, ContractCall, Profile, PurposeSet};
use crate::engine::{ChainError, ConsentChain};
use crate::gas::GasSchedule;
use crate::identity::Pseudonymizer;
use crate::secrets::InstallSecret;
use crate::vault::{PiiFields, SubjectKey, SubjectKeyDeriver, Vault, VaultError};

pub const DEFAULT_GAS_ITERATIONS: usize = 5;
pub const DEFAULT_BATCH_SIZES: [usize; 4] = [10, 50, 100, 500];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error("csv output: {0}")]
    Io(#[from] std::io::Error),
}

/// A fresh in-memory chain plus vault, driven by the owner account.
pub struct BenchStack {
    pub chain: ConsentChain,
    pub vault: Vault,
    deriver: SubjectKeyDeriver,
    pseudonyms: Pseudonymizer,
    caller: Address,
}

impl BenchStack {
    pub fn new(schedule: &GasSchedule) -> Result<Self, BenchError> {
        let secret = InstallSecret::from_bytes([7u8; 32]);
        let clock = Arc::new(TestClock::new(1_700_000_000, 1));
        let owner = Address::from_label("bench-owner");
        Ok(Self {
            chain: ConsentChain::create_in_memory(owner, clock.clone(), schedule.clone())?,
            vault: Vault::in_memory(secret.vault_master_key(), clock),
            deriver: SubjectKeyDeriver::new(secret.subject_salt()),
            pseudonyms: Pseudonymizer::new(secret.pseudonym_key()),
            caller: owner,
        })
    }

    pub fn subject(&self, national_id: &str) -> SubjectKey {
        self.deriver.derive(national_id)
    }

    /// Submits one consent in its own block and returns its gas.
    pub fn add(&mut self, subject: &SubjectKey, profile: Profile) -> Result<u64, BenchError> {
        let envelopes = match profile {
            Profile::Full => Some(self.vault.seal_pii(
                subject,
                &PiiFields {
                    mother_name: "Bench Mother".into(),
                    national_id: "00000000000".into(),
                    phone: "+4700000000".into(),
                },
            )?),
            Profile::Minimal => None,
        };
        let call = ContractCall::SubmitConsent {
            subject_key: *subject,
            mother_id: self.pseudonyms.mother_id(subject).0,
            purposes: PurposeSet::ALL,
            profile,
            source: ConsentSource::Digital,
            envelopes,
        };
        Ok(self.chain.transact(self.caller, &call)?.gas().gas_used)
    }

    pub fn query(&self, subject: &SubjectKey) -> Result<u64, BenchError> {
        Ok(self.chain.query(&self.caller, subject)?.1.gas_used)
    }

    pub fn revoke(&mut self, subject: &SubjectKey, record_index: u64) -> Result<u64, BenchError> {
        let call = ContractCall::WithdrawConsent {
            subject_key: *subject,
            record_index,
            purposes: PurposeSet::ALL,
        };
        Ok(self.chain.transact(self.caller, &call)?.gas().gas_used)
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GasRow {
    /// `add_first`, `add`, `query` or `revoke`.
    pub op: &'static str,
    /// Iteration for adds and queries; scan position for revokes.
    pub position: u64,
    pub gas: u64,
    pub wall_ms: f64,
}

/// One first add, `iterations` further adds, one query and `iterations`
/// revokes at scan positions `0..iterations`, all for one subject.
pub fn run_gas_bench(schedule: &GasSchedule, iterations: usize) -> Result<Vec<GasRow>, BenchError> {
    let mut stack = BenchStack::new(schedule)?;
    let subject = stack.subject("bench-subject");
    let mut rows = Vec::with_capacity(2 * iterations + 2);
    let t = Instant::now();
    let gas = stack.add(&subject, Profile::Full)?;
    rows.push(GasRow {
        op: "add_first",
        position: 0,
        gas,
        wall_ms: elapsed_ms(t),
    });
    for i in 0..iterations {
        let t = Instant::now();
        let gas = stack.add(&subject, Profile::Full)?;
        rows.push(GasRow {
            op: "add",
            position: i as u64 + 1,
            gas,
            wall_ms: elapsed_ms(t),
        });
    }
    let t = Instant::now();
    let gas = stack.query(&subject)?;
    rows.push(GasRow {
        op: "query",
        position: 0,
        gas,
        wall_ms: elapsed_ms(t),
    });
    for i in 0..iterations as u64 {
        let t = Instant::now();
        let gas = stack.revoke(&subject, i)?;
        rows.push(GasRow {
            op: "revoke",
            position: i,
            gas,
            wall_ms: elapsed_ms(t),
        });
    }
    Ok(rows)
}

/// Progress within one batch: after `records_done` adds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalePoint {
    pub n: usize,
    pub records_done: usize,
    pub cumulative_gas: u64,
    pub cumulative_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub n: usize,
    pub total_gas: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaleResult {
    pub rows: Vec<ScaleRow>,
    pub series: Vec<ScalePoint>,
}

/// Runs each batch on a fresh stack. One untimed full add seeds the subject
/// first, so every measured add is a subsequent add.
pub fn run_scalability(schedule: &GasSchedule, batch_sizes: &[usize]) -> Result<ScaleResult, BenchError> {
    let mut out = ScaleResult::default();
    for &n in batch_sizes {
        let mut stack = BenchStack::new(schedule)?;
        let subject = stack.subject("bench-subject");
        stack.add(&subject, Profile::Full)?;
        let start = Instant::now();
        let mut total = 0u64;
        for k in 1..=n {
            total += stack.add(&subject, Profile::Full)?;
            out.series.push(ScalePoint {
                n,
                records_done: k,
                cumulative_gas: total,
                cumulative_ms: elapsed_ms(start),
            });
        }
        out.rows.push(ScaleRow {
            n,
            total_gas: total,
            wall_ms: elapsed_ms(start),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MinimizationResult {
    pub full_gas: u64,
    pub minimal_gas: u64,
    pub saving: i64,
}

/// Compares a subsequent full add with a subsequent minimal add.
pub fn run_minimization(schedule: &GasSchedule) -> Result<MinimizationResult, BenchError> {
    let mut stack = BenchStack::new(schedule)?;
    let subject = stack.subject("bench-subject");
    stack.add(&subject, Profile::Full)?;
    let full_gas = stack.add(&subject, Profile::Full)?;
    let minimal_gas = stack.add(&subject, Profile::Minimal)?;
    Ok(MinimizationResult {
        full_gas,
        minimal_gas,
        saving: full_gas as i64 - minimal_gas as i64,
    })
}

pub fn write_gas_csv<W: Write>(w: W, rows: &[GasRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per measured add; the row with `records_done == n` is the batch total.
pub fn write_scale_csv<W: Write>(w: W, result: &ScaleResult) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(w);
    for p in &result.series {
        w.serialize(p).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_minimization_csv<W: Write>(w: W, r: &MinimizationResult) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["record", "gas"]).map_err(csv_io)?;
    w.write_record(["full", &r.full_gas.to_string()]).map_err(csv_io)?;
    w.write_record(["minimal", &r.minimal_gas.to_string()]).map_err(csv_io)?;
    w.write_record(["saving", &r.saving.to_string()]).map_err(csv_io)?;
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gas_bench_shape() {
        let rows = run_gas_bench(&GasSchedule::newborntime_v1(), 3).unwrap();
        let ops: Vec<_> = rows.iter().map(|r| r.op).collect();
        assert_eq!(ops, ["add_first", "add", "add", "add", "query", "revoke", "revoke", "revoke"]);
    }

    #[test]
    fn scale_series_is_cumulative() {
        let r = run_scalability(&GasSchedule::newborntime_v1(), &[3, 2]).unwrap();
        assert_eq!(r.series.len(), 5);
        assert_eq!(r.rows.iter().map(|x| x.n).collect::<Vec<_>>(), [3, 2]);
        for w in r.series.windows(2).filter(|w| w[0].n == w[1].n) {
            assert!(w[1].cumulative_ms >= w[0].cumulative_ms);
            assert!(w[1].cumulative_gas > w[0].cumulative_gas);
        }
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_scale_csv(&mut buf, &run_scalability(&GasSchedule::newborntime_v1(), &[1]).unwrap()).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("n,records_done,cumulative_gas,cumulative_ms\n"));
    }
}

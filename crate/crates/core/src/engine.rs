//! Contract state bound to a ledger.
//!
//! Every state-changing call becomes one transaction in the open block;
//! `commit` seals it together with the post-block state root. Reopening a
//! chain file replays every transaction from genesis and cross-checks the
//! recorded events and state roots.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::address::{sha256, Address};
use crate::clock::Clock;
use crate::contract::{ContractCall, ContractError, ContractState, Execution};
use crate::gas::{GasReceipt, GasSchedule};
use crate::ledger::{Block, Ledger, LedgerError, PendingEvent, Transaction, TxReceipt, VerificationReport};
use crate::vault::SubjectKey;
use crate::contract::ConsentRecord;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("replay diverged at block {block}: {reason}")]
    ReplayMismatch { block: u64, reason: String },
    #[error("chain was deployed by {found}, not {expected}")]
    OwnerMismatch { expected: Address, found: Address },
}

/// Result of a successful call.
#[derive(Debug, Clone)]
pub struct Submitted {
    pub execution: Execution,
    /// `None` when the call changed nothing and was not recorded.
    pub receipt: Option<TxReceipt>,
}

impl Submitted {
    pub fn gas(&self) -> &GasReceipt {
        &self.execution.gas
    }
}

#[derive(Debug)]
pub struct ConsentChain {
    ledger: Ledger,
    state: ContractState,
    schedule: GasSchedule,
    owner: Address,
    contract: Address,
}

fn contract_address(owner: &Address) -> Address {
    let mut buf = b"contract\0".to_vec();
    buf.extend_from_slice(owner.as_bytes());
    Address::from_digest_low(&sha256(&buf))
}

impl ConsentChain {
    pub fn create_in_memory(owner: Address, clock: Arc<dyn Clock>, schedule: GasSchedule) -> Result<Self, ChainError> {
        let mut chain = Self {
            ledger: Ledger::in_memory(clock),
            state: ContractState::new(),
            schedule,
            owner,
            contract: contract_address(&owner),
        };
        chain.genesis()?;
        Ok(chain)
    }

    /// Opens (or creates) a chain file. Existing chains are replayed in full.
    pub fn open(path: &Path, owner: Address, clock: Arc<dyn Clock>, schedule: GasSchedule) -> Result<Self, ChainError> {
        let ledger = Ledger::open(path, clock)?;
        let fresh = ledger.is_empty();
        let mut chain = Self {
            ledger,
            state: ContractState::new(),
            schedule,
            owner,
            contract: contract_address(&owner),
        };
        if fresh {
            chain.genesis()?;
        } else {
            chain.state = replay(chain.ledger.blocks().iter().map(|b| b.as_ref()), &chain.schedule)?;
            let found = chain.state.owner.unwrap_or(Address::ZERO);
            if found != owner {
                return Err(ChainError::OwnerMismatch { expected: owner, found });
            }
        }
        Ok(chain)
    }

    fn genesis(&mut self) -> Result<(), ChainError> {
        self.submit(self.owner, &ContractCall::Deploy)?;
        self.commit()?;
        Ok(())
    }

    pub fn owner(&self) -> Address {
        self.owner
    }

    pub fn contract_address(&self) -> Address {
        self.contract
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn schedule(&self) -> &GasSchedule {
        &self.schedule
    }

    pub fn blocks(&self) -> Vec<Arc<Block>> {
        self.ledger.snapshot()
    }

    pub fn verify(&self) -> VerificationReport {
        self.ledger.verify_chain()
    }

    /// Executes a call and queues it as a transaction in the open block.
    /// A failed call leaves both the state and the ledger untouched.
    pub fn submit(&mut self, caller: Address, call: &ContractCall) -> Result<Submitted, ChainError> {
        let timestamp = self.ledger.open_block_timestamp();
        let execution = match self.state.execute(caller, call, timestamp, &self.schedule) {
            Ok(ex) => ex,
            Err(e) => {
                self.ledger.discard_empty_pending();
                return Err(e.into());
            }
        };
        if !execution.outcome.mutated() {
            self.ledger.discard_empty_pending();
            return Ok(Submitted { execution, receipt: None });
        }
        let tx = Transaction {
            sender: caller,
            recipient: self.contract,
            payload: call.encode(),
            nonce: self.ledger.next_nonce(&caller),
            submitted_at: timestamp,
        };
        let receipt = self.ledger.append_with_events(tx, execution.events.clone())?;
        Ok(Submitted {
            execution,
            receipt: Some(receipt),
        })
    }

    /// Seals the open block if it holds any transaction.
    pub fn commit(&mut self) -> Result<Option<Arc<Block>>, ChainError> {
        if self.ledger.pending_len() == 0 {
            self.ledger.discard_empty_pending();
            return Ok(None);
        }
        Ok(Some(self.ledger.seal_block(self.state.state_root(), false)?))
    }

    /// `submit` followed by `commit`: one block per call.
    pub fn transact(&mut self, caller: Address, call: &ContractCall) -> Result<Submitted, ChainError> {
        let submitted = self.submit(caller, call)?;
        self.commit()?;
        Ok(submitted)
    }

    pub fn query(&self, caller: &Address, subject: &SubjectKey) -> Result<(Vec<ConsentRecord>, GasReceipt), ChainError> {
        Ok(self.state.query_consent(caller, subject, &self.schedule)?)
    }
}

/// Rebuilds contract state from blocks, checking that every transaction
/// reproduces the recorded events and every block its state root.
pub fn replay<'a>(blocks: impl IntoIterator<Item = &'a Block>, schedule: &GasSchedule) -> Result<ContractState, ChainError> {
    let mut state = ContractState::new();
    for block in blocks {
        let mismatch = |reason: String| ChainError::ReplayMismatch {
            block: block.index,
            reason,
        };
        let mut recorded = block.events.iter().peekable();
        for (i, tx) in block.transactions.iter().enumerate() {
            let call = tx.call().map_err(|e| mismatch(format!("tx {i}: {e}")))?;
            let ex = state
                .execute(tx.sender, &call, block.timestamp, schedule)
                .map_err(|e| mismatch(format!("tx {i} failed on replay: {e}")))?;
            let mut got: Vec<PendingEvent> = Vec::new();
            while let Some(ev) = recorded.next_if(|ev| ev.tx_index as usize == i) {
                got.push(ev.as_pending());
            }
            if got != ex.events {
                return Err(mismatch(format!("tx {i} events differ")));
            }
        }
        if recorded.next().is_some() {
            return Err(mismatch("events without a transaction".into()));
        }
        if state.state_root() != block.state_root {
            return Err(mismatch("state root differs".into()));
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::TestClock;
    use crate::contract::{ConsentSource, Profile, PurposeSet};

    fn chain() -> ConsentChain {
        ConsentChain::create_in_memory(
            Address::from_label("owner"),
            Arc::new(TestClock::new(1_700_000_000, 1)),
            GasSchedule::newborntime_v1(),
        )
        .unwrap()
    }

    fn submit_minimal(n: u8) -> ContractCall {
        ContractCall::SubmitConsent {
            subject_key: SubjectKey([n; 32]),
            mother_id: "M-TESTTEST".into(),
            purposes: PurposeSet::ALL,
            profile: Profile::Minimal,
            source: ConsentSource::Digital,
            envelopes: None,
        }
    }

    #[test]
    fn genesis_is_deploy_block() {
        let c = chain();
        let blocks = c.blocks();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].transactions[0].call().unwrap(), ContractCall::Deploy);
        assert_eq!(c.state().owner, Some(c.owner()));
        assert!(c.verify().is_ok());
    }

    #[test]
    fn failed_calls_leave_no_trace() {
        let mut c = chain();
        let before = c.blocks().len();
        let err = c.transact(Address::from_label("stranger"), &submit_minimal(1)).unwrap_err();
        assert!(matches!(err, ChainError::Contract(ContractError::Unauthorized(_))));
        assert_eq!(c.blocks().len(), before);
        assert_eq!(c.ledger().pending_len(), 0);
    }

    #[test]
    fn record_timestamp_is_block_timestamp() {
        let mut c = chain();
        let owner = c.owner();
        c.transact(owner, &submit_minimal(1)).unwrap();
        let block = c.blocks().last().unwrap().clone();
        assert_eq!(c.state().records(&SubjectKey([1; 32]))[0].timestamp, block.timestamp);
        assert!(block.events.iter().all(|e| e.timestamp == block.timestamp));
    }

    #[test]
    fn replay_reproduces_state() {
        let mut c = chain();
        let owner = c.owner();
        for n in 0..4 {
            c.submit(owner, &submit_minimal(n)).unwrap();
        }
        c.commit().unwrap();
        c.transact(owner, &submit_minimal(1)).unwrap();
        let blocks = c.blocks();
        let state = replay(blocks.iter().map(|b| b.as_ref()), c.schedule()).unwrap();
        assert_eq!(state, *c.state());
    }

    #[test]
    fn reopen_replays_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        let owner = Address::from_label("owner");
        let clock: Arc<dyn Clock> = Arc::new(TestClock::new(1_700_000_000, 1));
        let root = {
            let mut c = ConsentChain::open(&path, owner, clock.clone(), GasSchedule::newborntime_v1()).unwrap();
            c.transact(owner, &submit_minimal(3)).unwrap();
            c.state().state_root()
        };
        let c = ConsentChain::open(&path, owner, clock.clone(), GasSchedule::newborntime_v1()).unwrap();
        assert_eq!(c.state().state_root(), root);
        assert_eq!(c.blocks().len(), 2);
        let other = ConsentChain::open(&path, Address::from_label("x"), clock, GasSchedule::newborntime_v1());
        assert!(matches!(other, Err(ChainError::OwnerMismatch { .. })));
    }
}

//! Consent ledger core: a hash-chained block store, the consent contract
//! state machine with its gas model, the encrypted PII vault, subject
//! identity helpers, statistics export and the benchmark harness.

pub mod address;
pub mod bench;
pub mod clock;
pub mod codec;
pub mod contract;
pub mod engine;
pub mod etl;
pub mod gas;
pub mod identity;
pub mod ledger;
pub mod secrets;
pub mod vault;

pub use address::{Address, Hash32};
pub use clock::{Clock, SystemClock, TestClock};
pub use engine::{ChainError, ConsentChain, Submitted};
pub use gas::{GasReceipt, GasSchedule};

//! Test support shared by the core integration tests and the acceptance
//! suite: PII fixtures with a byte scanner, a randomized scenario driver and
//! oracles that recompute results without going through the code under test.

pub mod fixtures;
pub mod oracle;
pub mod world;

use std::path::Path;
use std::sync::Arc;

use consent_core::address::Address;
use consent_core::clock::TestClock;
use consent_core::contract::ContractCall;
use consent_core::ledger::{
    head_path, verify_chain_file, EventFilter, EventName, Ledger, PendingEvent, Transaction, VerificationReport,
};
use consent_testkit::oracle::{parse_chain, record_spans};
use proptest::prelude::*;

fn clock() -> Arc<TestClock> {
    Arc::new(TestClock::new(1_700_000_000, 1))
}

fn tx(sender: Address, nonce: u64, tag: u8) -> Transaction {
    Transaction {
        sender,
        recipient: Address::from_label("contract"),
        payload: ContractCall::SetAuthorizedProvider {
            provider: Address([tag; 20]),
            enabled: tag.is_multiple_of(2),
        }
        .encode(),
        nonce,
        submitted_at: 1_700_000_000 + nonce,
    }
}

/// `n_blocks` blocks of `per_block` transactions, with one event per tx.
fn build(path: &Path, n_blocks: usize, per_block: usize) -> Ledger {
    let mut l = Ledger::open(path, clock()).unwrap();
    let a = Address::from_label("alice");
    let mut nonce = 0u64;
    for b in 0..n_blocks {
        for _ in 0..per_block {
            let ev = PendingEvent::new(EventName::ConsentChanged)
                .indexed("patient", a.to_word())
                .data("n", nonce.to_be_bytes());
            l.append_with_events(tx(a, nonce, nonce as u8), vec![ev]).unwrap();
            nonce += 1;
        }
        l.seal_block([b as u8; 32], true).unwrap();
    }
    l
}

#[test]
fn receipts_follow_submission_order_in_the_persisted_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    let mut l = Ledger::open(&path, clock()).unwrap();
    let senders: Vec<Address> = (0..10).map(|i| Address::from_label(&format!("s{i}"))).collect();
    let receipts: Vec<_> = senders
        .iter()
        .enumerate()
        .map(|(i, s)| l.append_transaction(tx(*s, 0, i as u8)).unwrap())
        .collect();
    l.seal_block([0; 32], false).unwrap();
    for (i, r) in receipts.iter().enumerate() {
        assert_eq!((r.block_index, r.tx_index), (0, i as u32));
    }

    let (blocks, err) = parse_chain(&std::fs::read(&path).unwrap());
    assert_eq!(err, None);
    assert_eq!(blocks.len(), 1);
    let replayed: Vec<[u8; 20]> = blocks[0].txs.iter().map(|t| t.sender).collect();
    assert_eq!(replayed, senders.iter().map(|s| s.0).collect::<Vec<_>>());
    for (i, t) in blocks[0].txs.iter().enumerate() {
        assert_eq!(ContractCall::decode(&t.payload).unwrap(), tx(senders[i], 0, i as u8).call().unwrap());
    }
}

#[test]
fn stored_hashes_match_recomputation_from_raw_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    let l = build(&path, 3, 2);
    let (raw, err) = parse_chain(&std::fs::read(&path).unwrap());
    assert_eq!(err, None);
    assert_eq!(raw.len(), 3);
    let mut prev = [0u8; 32];
    for (i, b) in raw.iter().enumerate() {
        assert_eq!(b.index, i as u64);
        assert_eq!(b.recomputed_hash, b.stored_hash, "block {i}");
        assert_eq!(b.prev_hash, prev);
        assert_eq!(b.stored_hash, l.blocks()[i].block_hash);
        prev = b.stored_hash;
    }
    let head = std::fs::read_to_string(head_path(&path)).unwrap();
    assert_eq!(head.trim(), raw_hex(&prev));
}

fn raw_hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[test]
fn fresh_five_block_chain_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    let l = build(&path, 5, 1);
    assert!(l.verify_chain().is_ok());
    assert!(matches!(verify_chain_file(&path).unwrap(), VerificationReport::Ok { blocks: 5, .. }));
}

#[test]
fn flipped_byte_in_block_three_transactions_is_reported_at_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    build(&path, 5, 2);
    let mut bytes = std::fs::read(&path).unwrap();
    let (start, _) = record_spans(&bytes)[3];
    // len(4) index(8) prev(32) ts(8) ntx(4) sender(20): lands in the first tx recipient
    let off = start + 4 + 8 + 32 + 8 + 4 + 20 + 3;
    bytes[off] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(verify_chain_file(&path).unwrap().first_bad_index(), Some(3));
    assert!(Ledger::open(&path, clock()).is_err());
}

#[test]
fn truncation_mid_block_reports_that_block() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    build(&path, 5, 1);
    let bytes = std::fs::read(&path).unwrap();
    let spans = record_spans(&bytes);
    for (j, (start, end)) in spans.iter().enumerate() {
        for cut in [*start + 2, *start + 4, (*start + *end) / 2, *end - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert_eq!(verify_chain_file(&path).unwrap().first_bad_index(), Some(j as u64), "cut {cut}");
        }
    }
}

#[test]
fn truncation_at_record_boundary_is_caught_by_the_head_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    build(&path, 5, 1);
    let bytes = std::fs::read(&path).unwrap();
    let spans = record_spans(&bytes);
    std::fs::write(&path, &bytes[..spans[3].0]).unwrap();
    assert_eq!(verify_chain_file(&path).unwrap().first_bad_index(), Some(3));
}

#[test]
fn reads_are_prefix_extensions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    let mut l = Ledger::open(&path, clock()).unwrap();
    let a = Address::from_label("a");
    let mut previous = Vec::new();
    for n in 0..6 {
        l.append_transaction(tx(a, n, 1)).unwrap();
        l.seal_block([0; 32], false).unwrap();
        let now = std::fs::read(&path).unwrap();
        assert!(now.starts_with(&previous));
        assert!(now.len() > previous.len());
        previous = now;
    }
}

#[test]
fn replay_with_fixed_clock_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    build(&a, 4, 3);
    build(&b, 4, 3);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn reopened_ledger_continues_nonces() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    drop(build(&path, 2, 2));
    let mut l = Ledger::open(&path, clock()).unwrap();
    let a = Address::from_label("alice");
    assert_eq!(l.next_nonce(&a), 4);
    assert!(l.append_transaction(tx(a, 3, 0)).is_err());
    let r = l.append_transaction(tx(a, 4, 0)).unwrap();
    assert_eq!(r.block_index, 2);
}

#[test]
fn empty_filter_returns_every_event_in_block_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    let l = build(&path, 4, 3);
    let all = l.get_events(&EventFilter::default());
    let concat: Vec<_> = l.blocks().iter().flat_map(|b| b.events.clone()).collect();
    assert_eq!(all, concat);
    assert_eq!(all.len(), 12);
}

fn arb_events() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
    // (event name code, patient label, block break flag)
    proptest::collection::vec((1u8..=4, 0u8..4, 0u8..3), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn get_events_equals_linear_scan(spec in arb_events(), name in 0u8..=4, who in 0u8..5, lo in 0u64..6, span in 0u64..6) {
        let mut l = Ledger::in_memory(clock());
        let s = Address::from_label("s");
        for (i, (code, patient, brk)) in spec.iter().enumerate() {
            let name = match code {
                1 => EventName::ConsentGiven,
                2 => EventName::ConsentChanged,
                3 => EventName::ConsentWithdrawn,
                _ => EventName::StudyIdCreated,
            };
            let ev = PendingEvent::new(name).indexed("patient", [*patient; 32]);
            l.append_with_events(tx(s, i as u64, 0), vec![ev.clone(), ev]).unwrap();
            if *brk == 0 {
                l.seal_block([0; 32], false).unwrap();
            }
        }
        if l.pending_len() > 0 {
            l.seal_block([0; 32], false).unwrap();
        }

        let mut filter = EventFilter::default();
        if name > 0 {
            filter.name = Some(match name {
                1 => EventName::ConsentGiven,
                2 => EventName::ConsentChanged,
                3 => EventName::ConsentWithdrawn,
                _ => EventName::StudyIdCreated,
            });
        }
        if who < 4 {
            filter = filter.with_indexed("patient", [who; 32]);
        }
        if span < 5 {
            filter = filter.with_blocks(lo, lo + span);
        }

        let mut expect = Vec::new();
        for b in l.blocks() {
            for e in &b.events {
                let ok_name = filter.name.is_none_or(|n| n == e.name);
                let ok_who = who >= 4 || e.indexed.iter().any(|(k, v)| k == "patient" && *v == [who; 32]);
                let ok_blk = span >= 5 || (lo <= b.index && b.index <= lo + span);
                if ok_name && ok_who && ok_blk {
                    expect.push(e.clone());
                }
            }
        }
        prop_assert_eq!(l.get_events(&filter), expect);
    }
}

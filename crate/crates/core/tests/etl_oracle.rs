use chrono::NaiveDate;
use consent_core::contract::{ConsentSource, Profile, Purpose, PurposeSet, PurposeStatus};
use consent_core::etl::{build_stats, export_stats, ConsentStats, EtlError, ExportFormat, TimeRange, CSV_FIXED_LINES};
use consent_core::ledger::Block;
use consent_testkit::fixtures::{needles, scan};
use consent_testkit::oracle::recount_stats;
use consent_testkit::world::{random_ops, Caller, Op, World};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn research() -> PurposeSet {
    [Purpose::Research].into_iter().collect()
}

#[test]
fn three_monday_grants_and_a_tuesday_withdrawal() {
    let mut w = World::in_memory(3);
    for s in 0..3 {
        w.apply(&Op::Submit {
            caller: Caller::Provider,
            subject: s,
            purposes: research(),
            profile: Profile::Minimal,
            source: ConsentSource::Digital,
        });
    }
    w.apply(&Op::Commit);
    w.apply(&Op::Advance { secs: 86_400 });
    w.apply(&Op::Withdraw {
        caller: Caller::Provider,
        subject: 1,
        record: 0,
        purposes: research(),
    });
    w.run(&[]);
    let stats = build_stats(&w.chain.blocks(), TimeRange::all()).unwrap();
    assert_eq!(stats.totals.research, 2);
    assert_eq!(stats.totals.education, 0);
    let monday = &stats.weekday_distribution[0];
    assert_eq!((monday.weekday.as_str(), monday.count), ("Mon", 3));
    assert!(stats.weekday_distribution[1..].iter().all(|d| d.count == 0));
    assert_eq!(stats.trend.len(), 1);
    assert_eq!((stats.trend[0].date, stats.trend[0].purpose, stats.trend[0].count), (date(2024, 1, 1), Purpose::Research, 3));

    // Ending the range on Monday hides Tuesday's withdrawal.
    let monday_only = build_stats(&w.chain.blocks(), TimeRange::new(None, Some(date(2024, 1, 1)))).unwrap();
    assert_eq!(monday_only.totals.research, 3);
    // Starting on Tuesday drops the Monday registrations entirely.
    let tuesday_on = build_stats(&w.chain.blocks(), TimeRange::new(Some(date(2024, 1, 2)), None)).unwrap();
    assert_eq!(tuesday_on, ConsentStats::empty(tuesday_on.range));
}

fn random_world(seed: u64, len: usize) -> World {
    let mut w = World::in_memory(8);
    w.run(&random_ops(&mut ChaCha8Rng::seed_from_u64(seed), len, 8));
    w
}

fn random_range(seed: u64) -> TimeRange {
    let base = date(2024, 1, 1);
    let pick = |k: u64| {
        let off = (seed >> k) % 30;
        (off < 24).then(|| base + chrono::Days::new(off))
    };
    let (a, b) = (pick(3), pick(17));
    match (a, b) {
        (Some(x), Some(y)) if x > y => TimeRange::new(Some(y), Some(x)),
        _ => TimeRange::new(a, b),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stats_equal_brute_force_recount(seed in any::<u64>(), len in 1usize..=200) {
        let w = random_world(seed, len);
        let blocks = w.chain.blocks();
        for range in [TimeRange::all(), random_range(seed), random_range(seed.rotate_left(29))] {
            prop_assert_eq!(build_stats(&blocks, range).unwrap(), recount_stats(&blocks, range));
        }
    }

    #[test]
    fn totals_match_contract_state(seed in any::<u64>()) {
        let w = random_world(seed, 150);
        let stats = build_stats(&w.chain.blocks(), TimeRange::all()).unwrap();
        let state = w.chain.state();
        let count = |p: Purpose| {
            state
                .patient_consents
                .values()
                .flatten()
                .filter(|r| r.status.get(p) == Some(PurposeStatus::Granted))
                .count() as u64
        };
        prop_assert_eq!(stats.totals.research, count(Purpose::Research));
        prop_assert_eq!(stats.totals.education, count(Purpose::Education));
        let records: usize = state.patient_consents.values().map(Vec::len).sum();
        prop_assert_eq!(stats.records.len(), records);
    }
}

#[test]
fn exports_round_trip_and_count_rows() {
    let w = random_world(11, 200);
    let stats = build_stats(&w.chain.blocks(), TimeRange::all()).unwrap();
    assert!(!stats.records.is_empty());
    let json = export_stats(&stats, ExportFormat::Json).unwrap();
    let back: ConsentStats = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, stats);

    let csv = export_stats(&stats, ExportFormat::Csv).unwrap();
    let rows = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(csv.as_slice())
        .records()
        .count();
    assert_eq!(rows, stats.trend.len() + stats.records.len() + CSV_FIXED_LINES);
}

#[test]
fn exports_carry_no_identifiers() {
    let w = random_world(23, 200);
    let stats = build_stats(&w.chain.blocks(), TimeRange::all()).unwrap();
    let mut forbidden = needles(&w.people);
    for sk in &w.subjects {
        forbidden.push(sk.to_hex());
        forbidden.push(w.pseudonyms.mother_id(sk).0);
    }
    forbidden.extend(w.chain.state().study_ids.keys().cloned());
    for fmt in [ExportFormat::Json, ExportFormat::Csv] {
        let bytes = export_stats(&stats, fmt).unwrap();
        assert_eq!(scan(&bytes, &forbidden), vec![]);
    }
}

#[test]
fn build_is_byte_stable() {
    let w = random_world(5, 120);
    let blocks = w.chain.blocks();
    let a = export_stats(&build_stats(&blocks, TimeRange::all()).unwrap(), ExportFormat::Json).unwrap();
    let b = export_stats(&build_stats(&blocks, TimeRange::all()).unwrap(), ExportFormat::Json).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corrupt_chain_is_refused() {
    let w = random_world(3, 60);
    let mut blocks: Vec<Block> = w.chain.blocks().iter().map(|b| b.as_ref().clone()).collect();
    blocks[1].timestamp += 1;
    assert!(matches!(
        build_stats(&blocks, TimeRange::all()),
        Err(EtlError::CorruptChain { first_bad_index: 1, .. })
    ));
}

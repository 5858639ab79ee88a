mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::*;
use tzfuzz_core::coverage::{coverage_of, hash_block, LcsajBlock, TracePacket, SECURE_RANGE};

#[test]
fn hash_matches_reference_fnv() {
    let zero = LcsajBlock {
        base_address: 0,
        conditions: 0,
        condition_count: 0,
    };
    assert_eq!(hash_block(&zero).0, fnv1a64(&[0; 6]));
    assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    let b = LcsajBlock {
        base_address: 0x1000_0040,
        conditions: 0b101,
        condition_count: 3,
    };
    assert_eq!(hash_block(&b), block_id(0x1000_0040, &[true, false, true]));
}

#[test]
fn trace_coverage_equals_cfg_walk() {
    let mut tee = tracing_tee(3);
    let mut calls = 0;
    for tc in random_testcases(0xC0FE, 200, 16) {
        let res = tee.execute_payload(&payload(&tc));
        for rec in &res.per_syscall {
            let cfg = tee.handler_cfg(rec.ordinal).unwrap();
            assert_eq!(coverage_of(&rec.trace), cfg_walk_coverage(cfg, rec));
            calls += 1;
        }
    }
    assert!(calls > 1000);
}

#[test]
fn new_condition_outcome_gives_new_branch() {
    let mut tee = tracing_tee(5);
    let mut seen_conds = BTreeSet::new();
    let mut seen_ids = BTreeSet::new();
    let mut novel_runs = 0;
    for tc in random_testcases(0xED6E, 500, 12) {
        let res = tee.execute_payload(&payload(&tc));
        let conds: BTreeSet<_> = res.per_syscall.iter().flat_map(conditions_taken).collect();
        let ids: BTreeSet<_> = res
            .per_syscall
            .iter()
            .flat_map(|r| coverage_of(&r.trace))
            .collect();
        if !conds.is_subset(&seen_conds) {
            novel_runs += 1;
            assert!(!ids.is_subset(&seen_ids));
        }
        seen_conds.extend(conds);
        seen_ids.extend(ids);
    }
    assert!(novel_runs > 10);
}

#[test]
fn noise_is_present_in_raw_traces() {
    let mut tee = tracing_tee(9);
    let res = tee.execute_payload(&payload(&random_testcases(1, 1, 8)[0]));
    for rec in &res.per_syscall {
        let outside = rec
            .trace
            .iter()
            .filter(|p| !SECURE_RANGE.contains(p.base_address()))
            .count();
        assert!(
            outside * 10 >= rec.trace.len() * 3,
            "{outside} of {}",
            rec.trace.len()
        );
    }
}

fn secure_packet() -> impl Strategy<Value = TracePacket> {
    (0x1000_0000u32..0x1FFF_FFFF, any::<u8>(), 1u8..=8)
        .prop_map(|(a, b, n)| TracePacket::new(a, b, n).unwrap())
}

fn noise() -> impl Strategy<Value = TracePacket> {
    (any::<u32>(), any::<u8>(), 1u8..=8).prop_map(|(a, b, n)| noise_packet(a, b, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn normal_world_packets_never_change_coverage(
        secure in prop::collection::vec(secure_packet(), 1..24),
        extra in prop::collection::vec(noise(), 0..24),
        picks in prop::collection::vec(any::<bool>(), 96),
    ) {
        let min_noise = (secure.len() * 3).div_ceil(7);
        let mut noise: Vec<TracePacket> = extra;
        while noise.len() < min_noise {
            noise.push(noise_packet(noise.len() as u32 * 0x40, 0x5a, 4));
        }
        let mut stream = Vec::new();
        let (mut s, mut n) = (secure.iter(), noise.iter());
        for &p in picks.iter().cycle().take(secure.len() + noise.len()) {
            let next = if p { s.next().or_else(|| n.next()) } else { n.next().or_else(|| s.next()) };
            stream.push(*next.unwrap());
        }
        prop_assert!(noise.len() * 10 >= stream.len() * 3);
        prop_assert_eq!(coverage_of(&stream), coverage_of(&secure));
    }
}

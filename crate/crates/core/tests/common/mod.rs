//! Reference oracles shared by the integration and acceptance tests. They
//! only rely on the public data model, never on the engine's own helpers.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tzfuzz_core::coverage::{BranchId, TracePacket};
use tzfuzz_core::minitee::{HandlerCfg, MiniTee, Node, NodeId, SyscallRecord};
use tzfuzz_core::syscall::{generate_testcase, serialize_payload, TemplateSet, TestCase};

/// Textbook 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn block_id(base: u32, conditions: &[bool]) -> BranchId {
    let packed = conditions
        .iter()
        .enumerate()
        .fold(0u8, |a, (i, &c)| a | (c as u8) << i);
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.push(conditions.len() as u8);
    bytes.push(packed);
    BranchId(fnv1a64(&bytes))
}

fn successor(cfg: &HandlerCfg, node: NodeId, taken: bool) -> NodeId {
    match (&cfg.nodes[node as usize], taken) {
        (Node::Branch { taken: t, .. }, true) => *t,
        (Node::Branch { fallthrough, .. }, false) => *fallthrough,
        (Node::Jump { target }, _) => *target,
        (Node::Loop { next, .. }, true) => *next,
        (Node::Loop { .. }, false) => node,
        (Node::Leaf(_), _) => node,
    }
}

/// Replays the recorded condition outcomes through the handler graph and
/// derives the branch IDs directly. Panics if the path is not a walk of
/// the graph from its entry to a leaf.
pub fn cfg_walk_coverage(cfg: &HandlerCfg, rec: &SyscallRecord) -> BTreeSet<BranchId> {
    let addr = |n: NodeId| cfg.base + 0x10 * n as u32;
    let mut out = BTreeSet::new();
    let mut start = addr(0);
    let mut conds: Vec<bool> = Vec::new();
    let mut expect: NodeId = 0;
    for step in &rec.path {
        assert_eq!(step.node, expect, "{}: path leaves the graph", cfg.name);
        conds.push(step.taken);
        let next = successor(cfg, step.node, step.taken);
        if step.taken || conds.len() == 8 {
            out.insert(block_id(start, &conds));
            start = addr(next);
            conds.clear();
        }
        expect = next;
    }
    let last = rec.path.last().expect("non-empty path");
    assert!(
        matches!(cfg.nodes[last.node as usize], Node::Leaf(_)),
        "{}: path ends inside",
        cfg.name
    );
    assert!(conds.is_empty());
    out
}

/// Distinct (syscall, node, outcome) triples taken by one record.
pub fn conditions_taken(rec: &SyscallRecord) -> impl Iterator<Item = (u16, NodeId, bool)> + '_ {
    rec.path.iter().map(move |s| (rec.ordinal, s.node, s.taken))
}

pub fn random_testcases(seed: u64, n: usize, max_len: usize) -> Vec<TestCase> {
    let t = TemplateSet::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| generate_testcase(&t, &mut rng, max_len))
        .collect()
}

pub fn payload(tc: &TestCase) -> Vec<u8> {
    serialize_payload(tc).expect("generated cases encode")
}

pub fn tracing_tee(seed: u64) -> MiniTee {
    let mut tee = MiniTee::new(seed);
    tee.set_record_paths(true);
    tee
}

/// A normal-world packet outside the secure window.
pub fn noise_packet(addr: u32, bits: u8, count: u8) -> TracePacket {
    let addr = 0x2000_0000 | (addr & 0x0FFF_FFFF);
    TracePacket::new(addr, bits, count.clamp(1, 8)).unwrap()
}

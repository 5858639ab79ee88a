//! Seed storage keyed by state hash, and the two-stage weighted seed
//! selection over it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use fnv::FnvHashSet;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::BranchId;
use crate::minitee::FaultRecord;
use crate::state::StateHash;
use crate::syscall::TestCase;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedNode {
    pub testcase: Arc<TestCase>,
    pub branch_cov: Arc<BTreeSet<BranchId>>,
    pub cov_size: usize,
}

impl SeedNode {
    pub fn new(testcase: Arc<TestCase>, branch_cov: Arc<BTreeSet<BranchId>>) -> Self {
        let cov_size = branch_cov.len();
        Self {
            testcase,
            branch_cov,
            cov_size,
        }
    }
}

pub type SeedMap = BTreeMap<StateHash, Vec<SeedNode>>;
pub type HitMap = BTreeMap<StateHash, u64>;

/// Per-call feedback of one execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallFeedback {
    pub branches: BTreeSet<BranchId>,
    pub state: StateHash,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PreserveOutcome {
    pub new_states: usize,
    pub new_branches: usize,
    pub nodes_added: usize,
}

impl PreserveOutcome {
    pub fn interesting(&self) -> bool {
        self.nodes_added > 0
    }
}

/// Updates the maps with one executed test case.
///
/// A call whose state hash is unseen opens a bucket for that state. A call
/// that covers branches outside `global_cov` adds the test case to the
/// bucket of its state (only when `branch_rule` is set). Each distinct state
/// hash reached by the test case gets one hit.
pub fn preserve(
    testcase: &Arc<TestCase>,
    per_call: &[CallFeedback],
    global_cov: &mut FnvHashSet<BranchId>,
    seedmap: &mut SeedMap,
    hitmap: &mut HitMap,
    branch_rule: bool,
) -> PreserveOutcome {
    let mut outcome = PreserveOutcome::default();
    let mut touched: BTreeSet<StateHash> = BTreeSet::new();
    let mut node: Option<SeedNode> = None;
    let mut make_node = || {
        node.get_or_insert_with(|| {
            let cov: BTreeSet<BranchId> = per_call
                .iter()
                .flat_map(|c| c.branches.iter().copied())
                .collect();
            SeedNode::new(Arc::clone(testcase), Arc::new(cov))
        })
        .clone()
    };

    let mut fresh: BTreeSet<BranchId> = BTreeSet::new();
    for call in per_call {
        let novel: Vec<BranchId> = call
            .branches
            .iter()
            .filter(|b| !global_cov.contains(b))
            .copied()
            .collect();
        let new_state = !seedmap.contains_key(&call.state);
        if new_state {
            seedmap.insert(call.state, vec![make_node()]);
            touched.insert(call.state);
            outcome.new_states += 1;
            outcome.nodes_added += 1;
        }
        if !novel.is_empty() {
            if branch_rule && touched.insert(call.state) {
                seedmap
                    .get_mut(&call.state)
                    .expect("bucket exists")
                    .push(make_node());
                outcome.nodes_added += 1;
            }
            fresh.extend(novel);
        }
    }
    outcome.new_branches = fresh.len();
    global_cov.extend(fresh);

    let distinct: BTreeSet<StateHash> = per_call.iter().map(|c| c.state).collect();
    for s in distinct {
        *hitmap.entry(s).or_insert(0) += 1;
    }
    outcome
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("corpus is empty")]
pub struct EmptyCorpus;

/// Picks a state with probability proportional to `1 / hits`, then a node
/// in its bucket with probability proportional to `cov_size` (uniformly if
/// every node in the bucket has zero coverage).
pub fn select_seed<'a, R: Rng + ?Sized>(
    seedmap: &'a SeedMap,
    hitmap: &HitMap,
    rng: &mut R,
) -> Result<&'a SeedNode, EmptyCorpus> {
    if seedmap.is_empty() {
        return Err(EmptyCorpus);
    }
    let weights: Vec<f64> = state_weights(seedmap, hitmap).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    let mut bucket = seedmap.values().next_back().expect("non-empty");
    for (b, w) in seedmap.values().zip(&weights) {
        if x < *w {
            bucket = b;
            break;
        }
        x -= w;
    }
    pick_in_bucket(bucket, rng).ok_or(EmptyCorpus)
}

/// `1 / hits` per SeedMap key, in key order. Both maps are sorted by state,
/// so one merged pass replaces a lookup per key.
fn state_weights<'a>(seedmap: &'a SeedMap, hitmap: &'a HitMap) -> impl Iterator<Item = f64> + 'a {
    let mut hits = hitmap.iter().peekable();
    seedmap.keys().map(move |s| {
        while hits.next_if(|(h, _)| *h < s).is_some() {}
        let n = hits.next_if(|(h, _)| *h == s).map_or(1, |(_, &n)| n);
        1.0 / n.max(1) as f64
    })
}

/// Incremental form of the state stage of [`select_seed`]: a Fenwick tree
/// over `1 / hits`, so a draw costs O(log states) instead of a full scan.
#[derive(Clone, Debug, Default)]
pub struct StateSampler {
    keys: Vec<StateHash>,
    pos: fnv::FnvHashMap<StateHash, usize>,
    weights: Vec<f64>,
    tree: Vec<f64>,
}

impl StateSampler {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Brings the weight of `state` in line with `hitmap`.
    pub fn update(&mut self, state: StateHash, hitmap: &HitMap) {
        let w = 1.0 / hitmap.get(&state).copied().unwrap_or(1).max(1) as f64;
        let i = match self.pos.get(&state) {
            Some(&i) => i,
            None => {
                self.keys.push(state);
                self.weights.push(0.0);
                self.grow();
                self.pos.insert(state, self.keys.len() - 1);
                self.keys.len() - 1
            }
        };
        let delta = w - self.weights[i];
        self.weights[i] = w;
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    fn grow(&mut self) {
        // Tree index n covers (n - lowbit(n), n]; a fresh slot starts with
        // the sum of its covered range.
        let n = self.keys.len();
        if self.tree.is_empty() {
            self.tree.push(0.0);
        }
        let low = n & n.wrapping_neg();
        let sum: f64 = self.weights[n - low..n - 1].iter().sum();
        self.tree.push(sum);
    }

    pub fn total(&self) -> f64 {
        let mut i = self.keys.len();
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// The state whose cumulative weight interval contains `x`.
    fn find(&self, mut x: f64) -> StateHash {
        let n = self.keys.len();
        let mut idx = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = idx + step;
            if next <= n && self.tree[next] <= x {
                idx = next;
                x -= self.tree[next];
            }
            step >>= 1;
        }
        self.keys[idx.min(n - 1)]
    }

    /// Same distribution as [`select_seed`] for the states registered here.
    pub fn select<'a, R: Rng + ?Sized>(
        &self,
        seedmap: &'a SeedMap,
        rng: &mut R,
    ) -> Result<&'a SeedNode, EmptyCorpus> {
        if self.keys.is_empty() {
            return Err(EmptyCorpus);
        }
        let state = self.find(rng.gen::<f64>() * self.total());
        let bucket = seedmap.get(&state).ok_or(EmptyCorpus)?;
        pick_in_bucket(bucket, rng).ok_or(EmptyCorpus)
    }
}

fn pick_in_bucket<'a, R: Rng + ?Sized>(
    bucket: &'a [SeedNode],
    rng: &mut R,
) -> Option<&'a SeedNode> {
    let total: usize = bucket.iter().map(|n| n.cov_size).sum();
    if bucket.is_empty() {
        return None;
    }
    if total == 0 {
        return bucket.get(rng.gen_range(0..bucket.len()));
    }
    let mut x = rng.gen_range(0..total);
    for n in bucket {
        if x < n.cov_size {
            return Some(n);
        }
        x -= n.cov_size;
    }
    bucket.last()
}

/// Top (innermost) frames of a crash, at most three.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrashId(pub Vec<String>);

impl CrashId {
    pub fn from_frames(frames: &[String]) -> Self {
        CrashId(frames.iter().take(3).cloned().collect())
    }

    /// File-system friendly name.
    pub fn dir_name(&self) -> String {
        self.0
            .iter()
            .map(|f| {
                f.chars()
                    .map(|c| {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            c
                        } else {
                            '-'
                        }
                    })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("__")
    }
}

impl std::fmt::Display for CrashId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join(" <- "))
    }
}

pub fn dedup(fault: &FaultRecord, known: &BTreeSet<CrashId>) -> (CrashId, bool) {
    let id = CrashId::from_frames(&fault.frames);
    let is_new = !known.contains(&id);
    (id, is_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minitee::FaultKind;
    use crate::syscall::Call;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tc(n: u16) -> Arc<TestCase> {
        Arc::new(TestCase::new(vec![Call {
            ordinal: n,
            args: vec![],
        }]))
    }

    fn fb(state: u64, branches: &[u64]) -> CallFeedback {
        CallFeedback {
            branches: branches.iter().map(|&b| BranchId(b)).collect(),
            state: StateHash(state),
        }
    }

    #[test]
    fn new_state_without_new_branches_adds_one_node() {
        let (mut cov, mut sm, mut hm) = (FnvHashSet::default(), SeedMap::new(), HitMap::new());
        cov.insert(BranchId(1));
        let out = preserve(&tc(0), &[fb(5, &[1])], &mut cov, &mut sm, &mut hm, true);
        assert_eq!(out.new_states, 1);
        assert_eq!(sm.len(), 1);
        assert_eq!(sm[&StateHash(5)].len(), 1);
    }

    #[test]
    fn new_branches_under_two_states_fill_two_buckets() {
        let (mut cov, mut sm, mut hm) = (FnvHashSet::default(), SeedMap::new(), HitMap::new());
        preserve(
            &tc(0),
            &[fb(1, &[]), fb(2, &[])],
            &mut cov,
            &mut sm,
            &mut hm,
            true,
        );
        let t = tc(1);
        preserve(
            &t,
            &[fb(1, &[10]), fb(2, &[11])],
            &mut cov,
            &mut sm,
            &mut hm,
            true,
        );
        assert_eq!(sm[&StateHash(1)].len(), 2);
        assert_eq!(sm[&StateHash(2)].len(), 2);
        assert!(Arc::ptr_eq(&sm[&StateHash(1)][1].testcase, &t));
        assert!(Arc::ptr_eq(&sm[&StateHash(2)][1].testcase, &t));
    }

    #[test]
    fn replay_only_bumps_hits() {
        let (mut cov, mut sm, mut hm) = (FnvHashSet::default(), SeedMap::new(), HitMap::new());
        let calls = [fb(1, &[3]), fb(2, &[4]), fb(1, &[3])];
        preserve(&tc(0), &calls, &mut cov, &mut sm, &mut hm, true);
        let before = sm.clone();
        let out = preserve(&tc(0), &calls, &mut cov, &mut sm, &mut hm, true);
        assert!(!out.interesting());
        assert_eq!(sm, before);
        assert_eq!(hm[&StateHash(1)], 2);
        assert_eq!(hm[&StateHash(2)], 2);
    }

    #[test]
    fn branch_rule_off_ignores_new_branches() {
        let (mut cov, mut sm, mut hm) = (FnvHashSet::default(), SeedMap::new(), HitMap::new());
        preserve(&tc(0), &[fb(1, &[])], &mut cov, &mut sm, &mut hm, false);
        let out = preserve(&tc(1), &[fb(1, &[9])], &mut cov, &mut sm, &mut hm, false);
        assert_eq!(out.nodes_added, 0);
        assert_eq!(out.new_branches, 1);
    }

    #[test]
    fn single_node_is_always_selected_and_empty_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sm = SeedMap::new();
        assert_eq!(select_seed(&sm, &HitMap::new(), &mut rng), Err(EmptyCorpus));
        let node = SeedNode::new(tc(3), Arc::new(BTreeSet::new()));
        sm.insert(StateHash(1), vec![node.clone()]);
        for _ in 0..10 {
            assert_eq!(select_seed(&sm, &HitMap::new(), &mut rng).unwrap(), &node);
        }
    }

    #[test]
    fn sampler_matches_hit_weights() {
        let mut sm = SeedMap::new();
        let mut hm = HitMap::new();
        let mut sampler = StateSampler::default();
        for (i, hits) in [1u64, 4, 2, 8, 1, 3, 5].iter().enumerate() {
            let s = StateHash(i as u64 * 7919);
            sm.insert(
                s,
                vec![SeedNode::new(tc(i as u16), Arc::new(BTreeSet::new()))],
            );
            hm.insert(s, 1);
            sampler.update(s, &hm);
            hm.insert(s, *hits);
            sampler.update(s, &hm);
        }
        let expected: f64 = [1.0, 0.25, 0.5, 0.125, 1.0, 1.0 / 3.0, 0.2].iter().sum();
        assert!((sampler.total() - expected).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 60_000;
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts
                .entry(sampler.select(&sm, &mut rng).unwrap().testcase.calls[0].ordinal)
                .or_default() += 1;
        }
        for (i, hits) in [1u64, 4, 2, 8, 1, 3, 5].iter().enumerate() {
            let p = (1.0 / *hits as f64) / expected;
            let got = counts[&(i as u16)] as f64 / n as f64;
            assert!((got - p).abs() < 0.01, "state {i}: {got} vs {p}");
        }
    }

    #[test]
    fn crash_ids_keep_three_frames() {
        let f = |frames: &[&str]| FaultRecord {
            kind: FaultKind::HardFault,
            frames: frames.iter().map(|s| s.to_string()).collect(),
            faulting_call_index: 0,
        };
        let mut known = BTreeSet::new();
        let (a, new_a) = dedup(&f(&["f1", "f2", "f3", "f4"]), &known);
        known.insert(a.clone());
        let (b, new_b) = dedup(&f(&["f1", "f2", "f3", "f9"]), &known);
        assert!(new_a && !new_b);
        assert_eq!(a, b);
        assert_eq!(dedup(&f(&["f1"]), &known).0 .0.len(), 1);
    }
}

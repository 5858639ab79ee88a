use std::borrow::Cow;
use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::regions::StateVarRegion;
use crate::minitee::{HandleKind, HandleSnapshot, SyscallRecord};
use crate::probe::{Probe, ProbeError, RegionRead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateHash(pub u64);

impl StateHash {
    /// Single key used when state feedback is disabled.
    pub const SYNTHETIC: StateHash = StateHash(0);
}

impl fmt::Display for StateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Contributed by a handle kind that has regions but no live handle.
pub const ABSENT_MARKER: u8 = 0xA5;
/// Precedes the region values of each live handle.
pub const HANDLE_MARKER: u8 = 0x01;

fn sorted(regions: &[StateVarRegion]) -> Cow<'_, [StateVarRegion]> {
    if regions.is_sorted() {
        Cow::Borrowed(regions)
    } else {
        let mut v = regions.to_vec();
        v.sort();
        Cow::Owned(v)
    }
}

/// FNV-1a over the region values of every live handle. Regions are taken in
/// (kind, offset) order and handles of one kind in allocation order.
pub fn state_hash_of(regions: &[StateVarRegion], snapshots: &[HandleSnapshot]) -> StateHash {
    let regions = sorted(regions);
    let mut h = FnvHasher::default();
    for kind in HandleKind::ALL {
        let group: Vec<&StateVarRegion> = regions.iter().filter(|r| r.kind == kind).collect();
        if group.is_empty() {
            continue;
        }
        let mut any = false;
        for snap in snapshots.iter().filter(|s| s.kind == kind) {
            any = true;
            h.write_u8(HANDLE_MARKER);
            for r in &group {
                let (a, b) = (r.offset as usize, (r.offset + r.len) as usize);
                h.write(snap.bytes.get(a..b).unwrap_or(&[]));
            }
        }
        if !any {
            h.write_u8(ABSENT_MARKER);
        }
    }
    StateHash(h.finish())
}

/// State produced by one call: the hash over the handles it took or
/// returned.
pub fn call_state_hash(regions: &[StateVarRegion], rec: &SyscallRecord) -> StateHash {
    let snaps: Vec<HandleSnapshot> = rec
        .snapshots
        .iter()
        .filter(|s| rec.touched.contains(&s.handle))
        .cloned()
        .collect();
    state_hash_of(regions, &snaps)
}

/// Same hash computed from probe region reads.
pub fn state_hash_of_reads(reads: &[RegionRead]) -> StateHash {
    let mut reads: Vec<&RegionRead> = reads.iter().collect();
    reads.sort_by_key(|r| r.region);
    let mut h = FnvHasher::default();
    for kind in HandleKind::ALL {
        let group: Vec<&&RegionRead> = reads.iter().filter(|r| r.region.kind == kind).collect();
        let Some(first) = group.first() else { continue };
        if first.values.is_empty() {
            h.write_u8(ABSENT_MARKER);
            continue;
        }
        for i in 0..first.values.len() {
            h.write_u8(HANDLE_MARKER);
            for r in &group {
                h.write(r.values.get(i).map_or(&[][..], |v| v.as_slice()));
            }
        }
    }
    StateHash(h.finish())
}

/// State hash of the target's current memory.
pub fn state_hash(regions: &[StateVarRegion], probe: &dyn Probe) -> Result<StateHash, ProbeError> {
    Ok(state_hash_of_reads(&probe.read_state_regions(regions)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minitee::HandleId;
    use crate::probe::SimProbe;
    use crate::state::ground_truth_regions;
    use crate::syscall::{parse_program, serialize_payload, TemplateSet};

    fn op(bytes: [u8; 64]) -> HandleSnapshot {
        HandleSnapshot {
            handle: HandleId(0x1008_0000),
            kind: HandleKind::Operation,
            bytes: bytes.to_vec(),
        }
    }

    #[test]
    fn noise_bytes_do_not_matter_but_state_bytes_do() {
        let regions = ground_truth_regions();
        let mut a = [0u8; 64];
        let base = state_hash_of(&regions, &[op(a)]);
        a[40] = 0xff;
        a[63] = 0x11;
        assert_eq!(state_hash_of(&regions, &[op(a)]), base);
        a[12] = 1;
        assert_ne!(state_hash_of(&regions, &[op(a)]), base);
    }

    #[test]
    fn absent_and_empty_cases() {
        let regions = ground_truth_regions();
        assert_ne!(
            state_hash_of(&regions, &[]),
            state_hash_of(&regions, &[op([0; 64])])
        );
        assert_eq!(state_hash_of(&[], &[op([7; 64])]), state_hash_of(&[], &[]));
    }

    #[test]
    fn call_state_ignores_untouched_handles() {
        let regions = ground_truth_regions();
        let mut other = op([0; 64]);
        other.handle = HandleId(0x1008_0040);
        other.bytes[12] = 3;
        let mut rec = SyscallRecord {
            ordinal: 0,
            trace: Vec::new(),
            snapshots: vec![op([0; 64]), other],
            return_code: 0,
            touched: vec![HandleId(0x1008_0000)],
            path: Vec::new(),
        };
        assert_eq!(
            call_state_hash(&regions, &rec),
            state_hash_of(&regions, &[op([0; 64])])
        );
        rec.touched.clear();
        assert_eq!(
            call_state_hash(&regions, &rec),
            state_hash_of(&regions, &[])
        );
    }

    #[test]
    fn probe_reads_agree_with_snapshots() {
        let t = TemplateSet::bundled();
        let text = include_str!("../../data/corpus/01_fig7_aes_cbc.prog");
        let p = serialize_payload(&parse_program(text, &t).unwrap()).unwrap();
        let regions = ground_truth_regions();
        let mut probe = SimProbe::new(11);
        let res = probe.submit(&p).unwrap();
        let last = res.per_syscall.last().unwrap();
        assert_eq!(
            state_hash(&regions, &probe).unwrap(),
            state_hash_of(&regions, &last.snapshots)
        );
    }
}

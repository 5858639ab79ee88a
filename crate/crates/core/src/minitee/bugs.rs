use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BugId(pub u8);

impl fmt::Display for BugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    HardFault,
    MemOverwrite,
    NullDeref,
    UntrustedDeref,
    ResourceExhaustion,
}

impl FaultKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultKind::HardFault => "hard_fault",
            FaultKind::MemOverwrite => "mem_overwrite",
            FaultKind::NullDeref => "null_deref",
            FaultKind::UntrustedDeref => "untrusted_deref",
            FaultKind::ResourceExhaustion => "resource_exhaustion",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub kind: FaultKind,
    /// Innermost frame first.
    pub frames: Vec<String>,
    pub faulting_call_index: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BugSpec {
    pub id: BugId,
    pub kind: FaultKind,
    pub syscall: &'static str,
    pub trigger: &'static str,
    pub min_state: &'static str,
    pub frames: &'static [&'static str],
}

pub const B1: BugId = BugId(1);
pub const B2: BugId = BugId(2);
pub const B3: BugId = BugId(3);
pub const B4: BugId = BugId(4);
pub const B5: BugId = BugId(5);

static CATALOG: [BugSpec; 5] = [
    BugSpec {
        id: B1,
        kind: FaultKind::ResourceExhaustion,
        syscall: "TEE_Malloc",
        trigger: "excessive memory allocation via a size above 1 MiB",
        min_state: "any",
        frames: &[
            "tee_heap_grow",
            "tee_malloc_internal",
            "TEE_Malloc",
            "ta_invoke_one_syscall",
        ],
    },
    BugSpec {
        id: B2,
        kind: FaultKind::MemOverwrite,
        syscall: "TEE_PopulateTransientObject",
        trigger: "attrCount of 0x400 or more overruns the attribute table",
        min_state: "object allocated",
        frames: &[
            "tee_obj_attr_copy_from",
            "utee_cryp_obj_populate",
            "TEE_PopulateTransientObject",
            "ta_invoke_one_syscall",
        ],
    },
    BugSpec {
        id: B3,
        kind: FaultKind::NullDeref,
        syscall: "TEE_MACCompareFinal",
        trigger: "null operation handle",
        min_state: "any",
        frames: &[
            "tee_op_get_info",
            "TEE_MACCompareFinal",
            "ta_invoke_one_syscall",
            "TA_InvokeCommandEntryPoint",
        ],
    },
    BugSpec {
        id: B4,
        kind: FaultKind::HardFault,
        syscall: "TEE_MACUpdate",
        trigger: "chunkSize larger than the chunk buffer on a MAC operation",
        min_state: "MAC operation in handleState 3 (key set and initialized)",
        frames: &[
            "crypto_mac_update",
            "utee_hash_update",
            "TEE_MACUpdate",
            "ta_invoke_one_syscall",
        ],
    },
    BugSpec {
        id: B5,
        kind: FaultKind::UntrustedDeref,
        syscall: "TEE_CipherInit",
        trigger: "operation handle whose self pointer was corrupted",
        min_state: "operation allocated",
        frames: &[
            "tee_cryp_state_get",
            "utee_cipher_init",
            "TEE_CipherInit",
            "ta_invoke_one_syscall",
        ],
    },
];

pub fn seeded_bug_catalog() -> &'static [BugSpec] {
    &CATALOG
}

pub fn bug_spec(id: BugId) -> Option<&'static BugSpec> {
    CATALOG.iter().find(|b| b.id == id)
}

/// Maps a crash's top frames back to the seeded bug that produces them.
pub fn bug_for_frames(frames: &[String]) -> Option<BugId> {
    let n = frames.len().min(3);
    CATALOG
        .iter()
        .find(|b| b.frames.len() >= n && b.frames[..n].iter().zip(frames).all(|(a, b)| *a == b))
        .map(|b| b.id)
}

pub(crate) const DECODE_FAULT_FRAMES: &[&str] = &[
    "ta_decode_payload",
    "ta_process_each_payload",
    "TA_InvokeCommandEntryPoint",
];

pub(crate) fn fault_for(bug: BugId, call_index: usize) -> FaultRecord {
    let spec = bug_spec(bug).expect("catalogued bug");
    FaultRecord {
        kind: spec.kind,
        frames: spec.frames.iter().map(|s| s.to_string()).collect(),
        faulting_call_index: call_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_five_bugs_with_distinct_top_frames() {
        let cat = seeded_bug_catalog();
        assert_eq!(cat.len(), 5);
        let mut tops: Vec<_> = cat.iter().map(|b| &b.frames[..3]).collect();
        tops.sort();
        tops.dedup();
        assert_eq!(tops.len(), 5);
        for b in cat {
            let f = fault_for(b.id, 0);
            assert_eq!(bug_for_frames(&f.frames), Some(b.id));
        }
    }
}

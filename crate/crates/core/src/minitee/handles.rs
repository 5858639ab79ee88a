//! Handle buffer layouts, address map and the algorithm tables the handlers
//! consult.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulated address of a live handle buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HandleId(pub u32);

impl fmt::Display for HandleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HandleKind {
    Operation,
    Object,
}

impl HandleKind {
    pub const ALL: [HandleKind; 2] = [HandleKind::Operation, HandleKind::Object];

    pub fn buffer_len(self) -> usize {
        match self {
            HandleKind::Operation => OP_LEN,
            HandleKind::Object => OBJ_LEN,
        }
    }

    /// Name used in region files.
    pub fn name(self) -> &'static str {
        match self {
            HandleKind::Operation => "OperationHandle",
            HandleKind::Object => "ObjectHandle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "OperationHandle" => Some(HandleKind::Operation),
            "ObjectHandle" => Some(HandleKind::Object),
            _ => None,
        }
    }
}

impl fmt::Display for HandleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const OP_LEN: usize = 64;
pub const OP_ALGORITHM: usize = 0;
pub const OP_MODE: usize = 4;
pub const OP_CLASS: usize = 8;
pub const OP_HANDLE_STATE: usize = 12;
pub const OP_OPERATION_STATE: usize = 16;
pub const OP_KEY_SIZE: usize = 20;
pub const OP_KEY_NOISE: std::ops::Range<usize> = 24..40;
pub const OP_SELF_POINTER: usize = 40;
pub const OP_IV_NOISE: std::ops::Range<usize> = 44..64;

pub const OBJ_LEN: usize = 48;
pub const OBJ_TYPE: usize = 0;
pub const OBJ_USAGE: usize = 4;
pub const OBJ_FLAGS: usize = 8;
pub const OBJ_ATTR_COUNT: usize = 12;
pub const OBJ_NOISE: std::ops::Range<usize> = 16..48;

/// State-variable offsets of both handle kinds.
pub const GROUND_TRUTH: [(HandleKind, u32); 10] = [
    (HandleKind::Operation, OP_ALGORITHM as u32),
    (HandleKind::Operation, OP_MODE as u32),
    (HandleKind::Operation, OP_CLASS as u32),
    (HandleKind::Operation, OP_HANDLE_STATE as u32),
    (HandleKind::Operation, OP_OPERATION_STATE as u32),
    (HandleKind::Operation, OP_KEY_SIZE as u32),
    (HandleKind::Object, OBJ_TYPE as u32),
    (HandleKind::Object, OBJ_USAGE as u32),
    (HandleKind::Object, OBJ_FLAGS as u32),
    (HandleKind::Object, OBJ_ATTR_COUNT as u32),
];

pub const HANDLE_STATE_ALLOCATED: u32 = 0;
pub const HANDLE_STATE_KEY_SET: u32 = 1;
pub const HANDLE_STATE_INITIALIZED: u32 = 3;

pub const CLASS_CIPHER: u32 = 1;
pub const CLASS_MAC: u32 = 3;

pub const FLAG_INITIALIZED: u32 = 0x0002_0000;
pub const USAGE_DEFAULT: u32 = 0xFFFF_FFFF;

pub const ATTR_SECRET_VALUE: u32 = 0xC000_0000;
pub const ATTR_VALUE_BIT: u32 = 0x2000_0000;

pub const TEE_SUCCESS: u32 = 0;
pub const TEE_ERROR_BAD_PARAMETERS: u32 = 0xFFFF_0006;
pub const TEE_ERROR_BAD_STATE: u32 = 0xFFFF_0007;
pub const TEE_ERROR_NOT_SUPPORTED: u32 = 0xFFFF_000A;
pub const TEE_ERROR_OUT_OF_MEMORY: u32 = 0xFFFF_000C;
pub const TEE_ERROR_SHORT_BUFFER: u32 = 0xFFFF_0010;
pub const TEE_ERROR_MAC_INVALID: u32 = 0xFFFF_3071;

pub const OP_BASE: u32 = 0x1008_0000;
pub const OBJ_BASE: u32 = 0x100C_0000;
pub const MEM_BASE: u32 = 0x1010_0000;
pub const ATTR_BASE: u32 = 0x1018_0000;
pub const MAX_OPS: usize = 16;
pub const MAX_OBJS: usize = 16;
pub const MAX_ATTRS: usize = 64;
pub const HEAP_SIZE: u32 = 0x1_0000;
/// Requests above this size overflow the heap bookkeeping.
pub const HEAP_GROW_LIMIT: u64 = 0x10_0000;
pub const MAX_ATTR_TABLE: u64 = 0x3FF;

pub fn op_address(slot: usize) -> u32 {
    OP_BASE + slot as u32 * OP_LEN as u32
}

pub fn obj_address(slot: usize) -> u32 {
    OBJ_BASE + slot as u32 * OBJ_LEN as u32
}

pub fn attr_address(slot: usize) -> u32 {
    ATTR_BASE + slot as u32 * 0x10
}

struct AlgInfo {
    alg: u32,
    key_type: u32,
    key_sizes: &'static [u32],
    needs_iv: bool,
}

const AES_SIZES: &[u32] = &[128, 192, 256];
const DES_SIZES: &[u32] = &[64];
const DES3_SIZES: &[u32] = &[128, 192];
const HMAC_MD5_SIZES: &[u32] = &[64, 128, 192, 256, 384, 512];
const HMAC_SHA1_SIZES: &[u32] = &[128, 192, 256, 384, 512];
const HMAC_SHA256_SIZES: &[u32] = &[192, 256, 384, 512, 1024];

pub const TYPE_GENERIC_SECRET: u32 = 0xA000_0000;
pub const TYPE_HMAC_MD5: u32 = 0xA000_0001;
pub const TYPE_HMAC_SHA1: u32 = 0xA000_0002;
pub const TYPE_HMAC_SHA256: u32 = 0xA000_0004;
pub const TYPE_AES: u32 = 0xA000_0010;
pub const TYPE_DES: u32 = 0xA000_0011;
pub const TYPE_DES3: u32 = 0xA000_0013;

pub const ALG_AES_ECB_NOPAD: u32 = 0x1000_0010;
pub const ALG_AES_CBC_NOPAD: u32 = 0x1000_0110;
pub const ALG_AES_CTR: u32 = 0x1000_0210;
pub const ALG_DES_ECB_NOPAD: u32 = 0x1000_0011;
pub const ALG_DES_CBC_NOPAD: u32 = 0x1000_0111;
pub const ALG_DES3_CBC_NOPAD: u32 = 0x1000_0113;
pub const ALG_HMAC_MD5: u32 = 0x3000_0001;
pub const ALG_HMAC_SHA1: u32 = 0x3000_0002;
pub const ALG_HMAC_SHA256: u32 = 0x3000_0004;

static ALGORITHMS: [AlgInfo; 9] = [
    AlgInfo {
        alg: ALG_AES_ECB_NOPAD,
        key_type: TYPE_AES,
        key_sizes: AES_SIZES,
        needs_iv: false,
    },
    AlgInfo {
        alg: ALG_AES_CBC_NOPAD,
        key_type: TYPE_AES,
        key_sizes: AES_SIZES,
        needs_iv: true,
    },
    AlgInfo {
        alg: ALG_AES_CTR,
        key_type: TYPE_AES,
        key_sizes: AES_SIZES,
        needs_iv: true,
    },
    AlgInfo {
        alg: ALG_DES_ECB_NOPAD,
        key_type: TYPE_DES,
        key_sizes: DES_SIZES,
        needs_iv: false,
    },
    AlgInfo {
        alg: ALG_DES_CBC_NOPAD,
        key_type: TYPE_DES,
        key_sizes: DES_SIZES,
        needs_iv: true,
    },
    AlgInfo {
        alg: ALG_DES3_CBC_NOPAD,
        key_type: TYPE_DES3,
        key_sizes: DES3_SIZES,
        needs_iv: true,
    },
    AlgInfo {
        alg: ALG_HMAC_MD5,
        key_type: TYPE_HMAC_MD5,
        key_sizes: HMAC_MD5_SIZES,
        needs_iv: false,
    },
    AlgInfo {
        alg: ALG_HMAC_SHA1,
        key_type: TYPE_HMAC_SHA1,
        key_sizes: HMAC_SHA1_SIZES,
        needs_iv: false,
    },
    AlgInfo {
        alg: ALG_HMAC_SHA256,
        key_type: TYPE_HMAC_SHA256,
        key_sizes: HMAC_SHA256_SIZES,
        needs_iv: false,
    },
];

static OBJECT_SIZES: [(u32, &[u32]); 7] = [
    (TYPE_GENERIC_SECRET, &[64, 128, 192, 256, 384, 512, 1024]),
    (TYPE_HMAC_MD5, HMAC_MD5_SIZES),
    (TYPE_HMAC_SHA1, HMAC_SHA1_SIZES),
    (TYPE_HMAC_SHA256, HMAC_SHA256_SIZES),
    (TYPE_AES, AES_SIZES),
    (TYPE_DES, DES_SIZES),
    (TYPE_DES3, DES3_SIZES),
];

fn alg_info(alg: u32) -> Option<&'static AlgInfo> {
    ALGORITHMS.iter().find(|a| a.alg == alg)
}

pub fn alg_supported(alg: u32) -> bool {
    alg_info(alg).is_some()
}

pub fn alg_key_size_valid(alg: u32, size: u32) -> bool {
    alg_info(alg).is_some_and(|a| a.key_sizes.contains(&size))
}

pub fn alg_key_type(alg: u32) -> Option<u32> {
    alg_info(alg).map(|a| a.key_type)
}

pub fn alg_needs_iv(alg: u32) -> bool {
    alg_info(alg).is_some_and(|a| a.needs_iv)
}

pub fn alg_iv_len(alg: u32) -> usize {
    match alg_key_type(alg) {
        Some(TYPE_AES) => 16,
        _ => 8,
    }
}

pub fn alg_class(alg: u32) -> u32 {
    match alg >> 28 {
        1 => CLASS_CIPHER,
        3 => CLASS_MAC,
        _ => 0,
    }
}

pub fn object_type_supported(ty: u32) -> bool {
    OBJECT_SIZES.iter().any(|(t, _)| *t == ty)
}

pub fn object_size_valid(ty: u32, size: u32) -> bool {
    OBJECT_SIZES
        .iter()
        .any(|(t, sizes)| *t == ty && sizes.contains(&size))
}

/// Usage bits an object keeps after being bound to an operation in `mode`.
pub fn usage_for_mode(mode: u32) -> u32 {
    match mode {
        0 => 0x0000_0002, // encrypt
        1 => 0x0000_0004, // decrypt
        2 => 0x0000_0010, // sign
        3 => 0x0000_0020, // verify
        4 => 0x0000_0008, // mac
        5 => 0x0000_0000, // digest
        6 => 0x0000_0040, // derive
        _ => USAGE_DEFAULT,
    }
}

pub(crate) fn get_u32(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

pub(crate) fn put_u32(buf: &mut [u8], off: usize, v: u32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

#[derive(Clone, Debug)]
pub(crate) struct OpHandle {
    pub live: bool,
    pub buf: [u8; OP_LEN],
    pub max_key_size: u32,
    pub self_pointer: u32,
    pub key_digest: u64,
    pub mac_acc: u64,
}

impl OpHandle {
    pub fn field(&self, off: usize) -> u32 {
        get_u32(&self.buf, off)
    }

    pub fn set(&mut self, off: usize, v: u32) {
        put_u32(&mut self.buf, off, v)
    }

    pub fn well_formed(&self) -> bool {
        self.field(OP_SELF_POINTER) == self.self_pointer
    }

    pub fn key_set(&self) -> bool {
        self.field(OP_HANDLE_STATE) & HANDLE_STATE_KEY_SET != 0
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ObjHandle {
    pub live: bool,
    pub buf: [u8; OBJ_LEN],
    pub max_size: u32,
    pub key_bits: u32,
    pub key_digest: u64,
}

impl ObjHandle {
    pub fn field(&self, off: usize) -> u32 {
        get_u32(&self.buf, off)
    }

    pub fn set(&mut self, off: usize, v: u32) {
        put_u32(&mut self.buf, off, v)
    }

    pub fn initialized(&self) -> bool {
        self.field(OBJ_FLAGS) & FLAG_INITIALIZED != 0
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MemBlock {
    pub live: bool,
    pub size: u32,
}

#[derive(Clone, Debug)]
pub(crate) struct Attribute {
    pub id: u32,
    pub data: Vec<u8>,
}

impl Attribute {
    pub fn is_ref(&self) -> bool {
        self.id & ATTR_VALUE_BIT == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_offsets_are_word_aligned_and_in_bounds() {
        for (kind, off) in GROUND_TRUTH {
            assert_eq!(off % 4, 0);
            assert!(off as usize + 4 <= kind.buffer_len());
        }
    }

    #[test]
    fn key_type_table_matches_class() {
        for a in &ALGORITHMS {
            assert_ne!(alg_class(a.alg), 0);
            assert!(object_type_supported(a.key_type));
        }
        assert!(!alg_supported(0));
    }
}

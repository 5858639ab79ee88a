//! Binary payload format read by the on-target executor.
//!
//! ```text
//! magic "SZTR" | version u8 = 1 | call count u16
//! per call: ordinal u16 | arg count u8
//! per arg:  tag u8 | value
//!   0 scalar32   u32
//!   1 scalar64   u64
//!   2 buffer     u16 length, bytes
//!   3 resource   u16 call index
//!   4 const_enum u32
//! ```
//!
//! All integers are little-endian.

use thiserror::Error;

use super::template::{TemplateSet, MAX_BUFFER_LEN};
use super::testcase::{ArgValue, Call, TestCase};

pub const MAGIC: [u8; 4] = *b"SZTR";
pub const VERSION: u8 = 1;

const TAG_SCALAR32: u8 = 0;
const TAG_SCALAR64: u8 = 1;
const TAG_BUFFER: u8 = 2;
const TAG_RESOURCE: u8 = 3;
const TAG_CONST_ENUM: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported payload version {0}")]
    UnsupportedVersion(u8),
    #[error("payload truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown syscall ordinal {0}")]
    UnknownOrdinal(u16),
    #[error("unknown argument tag {0}")]
    UnknownArgTag(u8),
    #[error("{0} trailing bytes after last call")]
    TrailingBytes(usize),
    #[error("buffer of {0} bytes exceeds the u16 length field")]
    BufferTooLong(usize),
    #[error("{0} calls exceed the u16 count field")]
    TooManyCalls(usize),
    #[error("{0} arguments exceed the u8 count field")]
    TooManyArgs(usize),
}

impl PayloadError {
    /// Stable numeric code for each failure class.
    pub fn code(&self) -> u8 {
        match self {
            PayloadError::BadMagic(_) => 1,
            PayloadError::UnsupportedVersion(_) => 2,
            PayloadError::Truncated(_) => 3,
            PayloadError::UnknownOrdinal(_) => 4,
            PayloadError::UnknownArgTag(_) => 5,
            PayloadError::TrailingBytes(_) => 6,
            PayloadError::BufferTooLong(_) => 7,
            PayloadError::TooManyCalls(_) => 8,
            PayloadError::TooManyArgs(_) => 9,
        }
    }
}

pub fn serialize_payload(tc: &TestCase) -> Result<Vec<u8>, PayloadError> {
    let count =
        u16::try_from(tc.calls.len()).map_err(|_| PayloadError::TooManyCalls(tc.calls.len()))?;
    let mut out = Vec::with_capacity(7 + tc.calls.len() * 16);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    for call in &tc.calls {
        out.extend_from_slice(&call.ordinal.to_le_bytes());
        let argc = u8::try_from(call.args.len())
            .map_err(|_| PayloadError::TooManyArgs(call.args.len()))?;
        out.push(argc);
        for arg in &call.args {
            match arg {
                ArgValue::Scalar32(v) => {
                    out.push(TAG_SCALAR32);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                ArgValue::Scalar64(v) => {
                    out.push(TAG_SCALAR64);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                ArgValue::Buffer(b) => {
                    if b.len() > MAX_BUFFER_LEN {
                        return Err(PayloadError::BufferTooLong(b.len()));
                    }
                    out.push(TAG_BUFFER);
                    out.extend_from_slice(&(b.len() as u16).to_le_bytes());
                    out.extend_from_slice(b);
                }
                ArgValue::ResourceRef(i) => {
                    out.push(TAG_RESOURCE);
                    out.extend_from_slice(&i.to_le_bytes());
                }
                ArgValue::ConstEnum(v) => {
                    out.push(TAG_CONST_ENUM);
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(PayloadError::Truncated(self.bytes.len())),
        }
    }

    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PayloadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a payload. Ordinals are checked against `templates`; argument
/// kinds are not, so a decoded test case may still fail validation.
pub fn deserialize_payload(
    bytes: &[u8],
    templates: &TemplateSet,
) -> Result<TestCase, PayloadError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4) {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            if m[..bytes.len()] != MAGIC[..bytes.len()] {
                return Err(PayloadError::BadMagic(m));
            }
            return Err(PayloadError::Truncated(bytes.len()));
        }
    };
    if magic != MAGIC {
        return Err(PayloadError::BadMagic(magic));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(PayloadError::UnsupportedVersion(version));
    }
    let count = r.u16()? as usize;
    let mut calls = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let ordinal = r.u16()?;
        if templates.get(ordinal).is_none() {
            return Err(PayloadError::UnknownOrdinal(ordinal));
        }
        let argc = r.u8()? as usize;
        let mut args = Vec::with_capacity(argc);
        for _ in 0..argc {
            let arg = match r.u8()? {
                TAG_SCALAR32 => ArgValue::Scalar32(r.u32()?),
                TAG_SCALAR64 => ArgValue::Scalar64(r.u64()?),
                TAG_BUFFER => {
                    let len = r.u16()? as usize;
                    ArgValue::Buffer(r.take(len)?.to_vec())
                }
                TAG_RESOURCE => ArgValue::ResourceRef(r.u16()?),
                TAG_CONST_ENUM => ArgValue::ConstEnum(r.u32()?),
                other => return Err(PayloadError::UnknownArgTag(other)),
            };
            args.push(arg);
        }
        calls.push(Call { ordinal, args });
    }
    if r.pos != bytes.len() {
        return Err(PayloadError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(TestCase::new(calls))
}

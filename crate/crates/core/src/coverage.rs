//! Branch coverage computed straight from raw branch-trace packets.
//!
//! A packet pairs the base address of a linear code sequence with the
//! taken/not-taken bits of the branches that follow it. Each packet forms one
//! LCSAJ block, and each block is hashed into a [`BranchId`].

use std::collections::BTreeSet;
use std::hash::Hasher;
use std::io::{self, Read, Write};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive address window of the secure world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRange {
    pub lo: u32,
    pub hi: u32,
}

impl AddressRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn contains(&self, addr: u32) -> bool {
        self.lo <= addr && addr <= self.hi
    }
}

pub const SECURE_RANGE: AddressRange = AddressRange::new(0x1000_0000, 0x1FFF_FFFF);
pub const NORMAL_RANGE: AddressRange = AddressRange::new(0x2000_0000, 0x2FFF_FFFF);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bit count {0} outside 1..=8")]
pub struct BadBitCount(pub u8);

/// One raw branch packet. Bit `i` of `bits` is the i-th branch condition
/// (1 = taken); bits at or above `bit_count` are always zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TracePacket {
    base_address: u32,
    bits: u8,
    bit_count: u8,
}

impl TracePacket {
    pub fn new(base_address: u32, bits: u8, bit_count: u8) -> Result<Self, BadBitCount> {
        if !(1..=8).contains(&bit_count) {
            return Err(BadBitCount(bit_count));
        }
        let mask = if bit_count == 8 {
            0xff
        } else {
            (1u8 << bit_count) - 1
        };
        Ok(Self {
            base_address,
            bits: bits & mask,
            bit_count,
        })
    }

    /// Builds a packet from a condition sequence of 1 to 8 entries.
    pub fn from_conditions(base_address: u32, conditions: &[bool]) -> Result<Self, BadBitCount> {
        let n = u8::try_from(conditions.len()).map_err(|_| BadBitCount(u8::MAX))?;
        let bits = conditions
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &c)| acc | ((c as u8) << i));
        Self::new(base_address, bits, n)
    }

    pub fn base_address(&self) -> u32 {
        self.base_address
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn bit_count(&self) -> u8 {
        self.bit_count
    }

    pub fn conditions(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bit_count).map(move |i| self.bits >> i & 1 == 1)
    }
}

/// A linear code sequence and the branch conditions that end it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LcsajBlock {
    pub base_address: u32,
    pub conditions: u8,
    pub condition_count: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchId(pub u64);

/// Keeps the packets whose base address lies in `range`, in stream order.
pub fn filter_packets(packets: &[TracePacket], range: AddressRange) -> Vec<TracePacket> {
    packets
        .iter()
        .filter(|p| range.contains(p.base_address))
        .copied()
        .collect()
}

pub fn build_blocks(packets: &[TracePacket]) -> Vec<LcsajBlock> {
    packets
        .iter()
        .map(|p| LcsajBlock {
            base_address: p.base_address,
            conditions: p.bits,
            condition_count: p.bit_count,
        })
        .collect()
}

/// 64-bit FNV-1a over `base_address (LE) || bit count || packed bits`.
pub fn hash_block(block: &LcsajBlock) -> BranchId {
    let mut h = FnvHasher::default();
    h.write(&block.base_address.to_le_bytes());
    h.write(&[block.condition_count, block.conditions]);
    BranchId(h.finish())
}

/// Branch coverage of one syscall's raw trace.
pub fn coverage_of(trace: &[TracePacket]) -> BTreeSet<BranchId> {
    coverage_in(trace, SECURE_RANGE)
}

pub fn coverage_in(trace: &[TracePacket], range: AddressRange) -> BTreeSet<BranchId> {
    build_blocks(&filter_packets(trace, range))
        .iter()
        .map(hash_block)
        .collect()
}

/// Appends the trace dump encoding of `packets`: six bytes per packet
/// (`base u32 LE`, `bit count u8`, `packed bits u8`).
pub fn write_trace<W: Write>(out: &mut W, packets: &[TracePacket]) -> io::Result<()> {
    for p in packets {
        out.write_all(&p.base_address.to_le_bytes())?;
        out.write_all(&[p.bit_count, p.bits])?;
    }
    Ok(())
}

/// Writes per-syscall traces separated by boundary records (bit count 0).
pub fn write_trace_dump<W: Write>(out: &mut W, per_syscall: &[Vec<TracePacket>]) -> io::Result<()> {
    for (i, trace) in per_syscall.iter().enumerate() {
        if i > 0 {
            out.write_all(&[0, 0, 0, 0, 0, 0])?;
        }
        write_trace(out, trace)?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TraceDumpError {
    #[error("trace dump length {0} is not a multiple of 6")]
    Length(usize),
    #[error("record {index}: {source}")]
    Record { index: usize, source: BadBitCount },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a trace dump back into per-syscall packet lists.
pub fn read_trace_dump<R: Read>(input: &mut R) -> Result<Vec<Vec<TracePacket>>, TraceDumpError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 6 != 0 {
        return Err(TraceDumpError::Length(bytes.len()));
    }
    let mut out = vec![Vec::new()];
    for (index, rec) in bytes.chunks_exact(6).enumerate() {
        let base = u32::from_le_bytes(rec[..4].try_into().unwrap());
        if rec[4] == 0 {
            out.push(Vec::new());
            continue;
        }
        if rec[4] > 8 {
            return Err(TraceDumpError::Record {
                index,
                source: BadBitCount(rec[4]),
            });
        }
        let packet = TracePacket::new(base, rec[5], rec[4])
            .map_err(|source| TraceDumpError::Record { index, source })?;
        out.last_mut().unwrap().push(packet);
    }
    if bytes.is_empty() {
        out.clear();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(addr: u32, conds: &[bool]) -> TracePacket {
        TracePacket::from_conditions(addr, conds).unwrap()
    }

    #[test]
    fn bit_count_bounds() {
        assert_eq!(TracePacket::new(0, 0, 0), Err(BadBitCount(0)));
        assert_eq!(TracePacket::new(0, 0, 9), Err(BadBitCount(9)));
        assert_eq!(TracePacket::new(0, 0xff, 3).unwrap().bits(), 0b111);
    }

    #[test]
    fn normal_world_packets_are_dropped() {
        let stream = [p(0x2000_1000, &[true]), p(0x1000_0004, &[false])];
        assert_eq!(filter_packets(&stream, SECURE_RANGE), vec![stream[1]]);
        let secure = [p(0x1000_0000, &[true]), p(0x1FFF_FFFF, &[false, true])];
        assert_eq!(filter_packets(&secure, SECURE_RANGE), secure.to_vec());
    }

    #[test]
    fn single_packet_gives_single_block() {
        let blocks = build_blocks(&[p(0x1000_0004, &[true, false, true])]);
        assert_eq!(
            blocks,
            vec![LcsajBlock {
                base_address: 0x1000_0004,
                conditions: 0b101,
                condition_count: 3
            }]
        );
        assert!(build_blocks(&[]).is_empty());
    }

    #[test]
    fn equal_blocks_hash_equal_and_one_bit_changes_the_id() {
        let a = build_blocks(&[p(0x1000_0010, &[true, false])])[0];
        let b = build_blocks(&[p(0x1000_0010, &[true, false])])[0];
        let c = build_blocks(&[p(0x1000_0010, &[true, true])])[0];
        assert_eq!(hash_block(&a), hash_block(&b));
        assert_ne!(hash_block(&a), hash_block(&c));
    }

    #[test]
    fn empty_trace_has_no_coverage() {
        assert!(coverage_of(&[]).is_empty());
    }

    #[test]
    fn dump_round_trips_with_boundaries() {
        let traces = vec![
            vec![p(0x1000_0000, &[true])],
            vec![],
            vec![p(0x2000_0000, &[false, true])],
        ];
        let mut buf = Vec::new();
        write_trace_dump(&mut buf, &traces).unwrap();
        assert_eq!(read_trace_dump(&mut buf.as_slice()).unwrap(), traces);
        assert!(matches!(
            read_trace_dump(&mut [0u8; 5].as_slice()),
            Err(TraceDumpError::Length(5))
        ));
    }
}

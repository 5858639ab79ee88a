/// Keyed byte source for handle noise and normal-world trace packets.
///
/// Output depends on the campaign key, everything absorbed since the last
/// reset and a draw counter, so a given payload always sees the same bytes.
#[derive(Clone, Debug)]
pub(crate) struct NoiseSource {
    key: u64,
    pool: u64,
    counter: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseSource {
    pub fn new(key: u64) -> Self {
        Self {
            key: splitmix64(key),
            pool: FNV_OFFSET,
            counter: 0,
        }
    }

    pub fn reset(&mut self) {
        self.pool = FNV_OFFSET;
        self.counter = 0;
    }

    pub fn absorb(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.pool ^= b as u64;
            self.pool = self.pool.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        splitmix64(
            self.key ^ self.pool.rotate_left(23) ^ self.counter.wrapping_mul(0xD1B5_4A32_D192_ED03),
        )
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Stable 64-bit digest used for key material and MAC accumulators.
pub(crate) fn digest(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

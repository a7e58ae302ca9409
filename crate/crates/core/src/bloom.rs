//! Classical Bloom filter over a byte-addressed bit array.
//!
//! Bit `i` lives in byte `i / 8` at bit position `i % 8` (LSB first). This is
//! also the persisted order.

use std::f64::consts::LOG2_E;

use crate::error::{Error, Result};
use crate::hash::{HashFamily, MAX_HASHES};

/// Smallest accepted bit count.
pub const MIN_BITS: u64 = 8;

/// Precomputed bit positions of one key for a given `(family, m)`.
///
/// Filters in a buddy pair or a window set share the family and bit count,
/// so a key is hashed once and probed against every array.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    positions: [u64; MAX_HASHES],
    k: usize,
    m: u64,
}

impl Probe {
    pub fn new(key: &[u8], family: &HashFamily, m: u64) -> Result<Self> {
        if key.is_empty() {
            return Err(Error::InvalidArgument("key must be non-empty".into()));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("bit count must be positive".into()));
        }
        let mut positions = [0u64; MAX_HASHES];
        family.fill_positions(key, m, &mut positions);
        Ok(Self { positions, k: family.k(), m })
    }

    pub fn positions(&self) -> &[u64] {
        &self.positions[..self.k]
    }

    pub fn m(&self) -> u64 {
        self.m
    }
}

#[derive(Debug, Clone)]
pub struct BloomFilter {
    bits: Vec<u8>,
    m: u64,
    family: HashFamily,
    inserted: u64,
}

/// Equal when the bit arrays and hash families match; the insertion counter
/// is not part of the set.
impl PartialEq for BloomFilter {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.family == other.family && self.bits == other.bits
    }
}

impl Eq for BloomFilter {}

impl BloomFilter {
    pub fn new(m: u64, family: HashFamily) -> Result<Self> {
        if m < MIN_BITS {
            return Err(Error::InvalidArgument(format!(
                "bit count must be at least {MIN_BITS}, got {m}"
            )));
        }
        let bytes = usize::try_from(m.div_ceil(8))
            .map_err(|_| Error::InvalidArgument(format!("bit count {m} too large")))?;
        Ok(Self { bits: vec![0; bytes], m, family, inserted: 0 })
    }

    /// Rebuilds a filter from a persisted bit array. Padding bits past `m`
    /// in the last byte must be zero.
    pub fn from_bytes(m: u64, family: HashFamily, bytes: Vec<u8>) -> Result<Self> {
        let mut f = Self::new(m, family)?;
        if bytes.len() != f.bits.len() {
            return Err(Error::Format(format!(
                "bit array holds {} bytes, {} expected for m={m}",
                bytes.len(),
                f.bits.len()
            )));
        }
        let tail = m % 8;
        if tail != 0 && bytes[bytes.len() - 1] >> tail != 0 {
            return Err(Error::Format("padding bits past m are set".into()));
        }
        f.bits = bytes;
        Ok(f)
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn k(&self) -> usize {
        self.family.k()
    }

    /// Number of insert calls since creation or the last clear.
    pub fn inserted_count(&self) -> u64 {
        self.inserted
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn probe(&self, key: &[u8]) -> Result<Probe> {
        Probe::new(key, &self.family, self.m)
    }

    pub fn insert(&mut self, key: &[u8]) -> Result<()> {
        let p = self.probe(key)?;
        self.insert_probe(&p);
        Ok(())
    }

    pub fn contains(&self, key: &[u8]) -> Result<bool> {
        Ok(self.contains_probe(&self.probe(key)?))
    }

    #[inline]
    pub fn insert_probe(&mut self, probe: &Probe) {
        debug_assert_eq!(probe.m, self.m);
        for &i in probe.positions() {
            self.bits[(i >> 3) as usize] |= 1 << (i & 7);
        }
        self.inserted += 1;
    }

    #[inline]
    pub fn contains_probe(&self, probe: &Probe) -> bool {
        debug_assert_eq!(probe.m, self.m);
        probe
            .positions()
            .iter()
            .all(|&i| self.bits[(i >> 3) as usize] & (1 << (i & 7)) != 0)
    }

    pub fn get_bit(&self, i: u64) -> bool {
        i < self.m && self.bits[(i >> 3) as usize] & (1 << (i & 7)) != 0
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn fill_ratio(&self) -> f64 {
        self.popcount() as f64 / self.m as f64
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
        self.inserted = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn is_compatible(&self, other: &BloomFilter) -> bool {
        self.m == other.m && self.family == other.family
    }

    pub(crate) fn check_compatible(&self, other: &BloomFilter) -> Result<()> {
        if self.m != other.m {
            return Err(Error::IncompatibleFilters(format!(
                "bit counts differ: {} vs {}",
                self.m, other.m
            )));
        }
        if self.family != other.family {
            return Err(Error::IncompatibleFilters("hash families differ".into()));
        }
        Ok(())
    }

    /// ORs `other` into `self`.
    pub fn union_with(&mut self, other: &BloomFilter) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        self.inserted += other.inserted;
        Ok(())
    }

    /// True when every bit set in `other` is also set in `self`.
    pub fn is_superset_of(&self, other: &BloomFilter) -> bool {
        self.m == other.m && self.bits.iter().zip(&other.bits).all(|(a, b)| b & !a == 0)
    }
}

/// Bitwise OR of two compatible filters.
pub fn bf_union(a: &BloomFilter, b: &BloomFilter) -> Result<BloomFilter> {
    let mut out = a.clone();
    out.union_with(b)?;
    Ok(out)
}

/// Hash count and per-array bit count for a target false-positive rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizing {
    pub k: u32,
    /// Bits for one array.
    pub m_min: u64,
}

impl Sizing {
    /// Bits for a buddy pair (two arrays).
    pub fn bbf_bits(&self) -> u64 {
        2 * self.m_min
    }
}

/// `k = ceil(log2(1/eps))`, `m = ceil(log2(e) * k * n)`.
pub fn optimal_params(epsilon: f64, n_distinct: f64) -> Result<Sizing> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(n_distinct >= 1.0) || !n_distinct.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "distinct count must be at least 1, got {n_distinct}"
        )));
    }
    let k = (1.0 / epsilon).log2().ceil() as u32;
    let m_min = (LOG2_E * k as f64 * n_distinct).ceil() as u64;
    Ok(Sizing { k, m_min })
}

/// `(1 - e^(-k n / m))^k`.
pub fn fp_rate_classic(k: u32, m: f64, n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    (1.0 - (-(k as f64) * n / m).exp()).powi(k as i32)
}

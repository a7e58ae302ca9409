//! The fixed family of classical string hashes used by every filter.
//!
//! Members are drawn in order from `sax, sdbm, bernstein, elf, fnv`. The
//! definitions follow the usual general-purpose hash-function collections:
//!
//! | id | name      | initial state        | step (per byte `c`)                                   |
//! |----|-----------|----------------------|-------------------------------------------------------|
//! | 0  | sax       | `0`                  | `h ^= (h << 5) + (h >> 2) + c`                        |
//! | 1  | sdbm      | `0`                  | `h = c + (h << 6) + (h << 16) - h`                    |
//! | 2  | bernstein | `5381`               | `h = (h << 5) + h + c` (djb2)                         |
//! | 3  | elf       | `0`                  | `h = (h << 4) + c; g = h & 0xF000_0000; h ^= g >> 24; h &= !g` |
//! | 4  | fnv       | `0xcbf29ce484222325` | `h ^= c; h *= 0x100000001b3` (FNV-1a, 64-bit)         |
//!
//! sax, sdbm, bernstein and fnv run on wrapping 64-bit state. elf is the
//! 32-bit PJW/ELF variant and only ever produces 28 significant bits.
//!
//! A member's 64-bit seed is XORed into its initial state (folded to 32 bits
//! for elf). Seed 0 reproduces the classical definition. Families with more
//! than five members cycle through the algorithms again using distinct
//! non-zero seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of hash functions.
pub const MAX_HASHES: usize = 8;

const SEED_STEP: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlgorithm {
    Sax,
    Sdbm,
    Bernstein,
    Elf,
    Fnv,
}

impl HashAlgorithm {
    /// Canonical member order.
    pub const ALL: [HashAlgorithm; 5] = [
        HashAlgorithm::Sax,
        HashAlgorithm::Sdbm,
        HashAlgorithm::Bernstein,
        HashAlgorithm::Elf,
        HashAlgorithm::Fnv,
    ];

    /// Stable numeric identifier used in persisted summary records.
    pub fn id(self) -> u8 {
        match self {
            HashAlgorithm::Sax => 0,
            HashAlgorithm::Sdbm => 1,
            HashAlgorithm::Bernstein => 2,
            HashAlgorithm::Elf => 3,
            HashAlgorithm::Fnv => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            HashAlgorithm::Sax => "sax",
            HashAlgorithm::Sdbm => "sdbm",
            HashAlgorithm::Bernstein => "bernstein",
            HashAlgorithm::Elf => "elf",
            HashAlgorithm::Fnv => "fnv",
        }
    }

    pub fn hash(self, bytes: &[u8], seed: u64) -> u64 {
        match self {
            HashAlgorithm::Sax => sax(bytes, seed),
            HashAlgorithm::Sdbm => sdbm(bytes, seed),
            HashAlgorithm::Bernstein => bernstein(bytes, seed),
            HashAlgorithm::Elf => elf(bytes, seed),
            HashAlgorithm::Fnv => fnv1a(bytes, seed),
        }
    }
}

pub fn sax(bytes: &[u8], seed: u64) -> u64 {
    let mut h = seed;
    for &c in bytes {
        h ^= (h << 5).wrapping_add(h >> 2).wrapping_add(c as u64);
    }
    h
}

pub fn sdbm(bytes: &[u8], seed: u64) -> u64 {
    let mut h = seed;
    for &c in bytes {
        h = (c as u64)
            .wrapping_add(h << 6)
            .wrapping_add(h << 16)
            .wrapping_sub(h);
    }
    h
}

pub fn bernstein(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 5381u64 ^ seed;
    for &c in bytes {
        h = (h << 5).wrapping_add(h).wrapping_add(c as u64);
    }
    h
}

pub fn elf(bytes: &[u8], seed: u64) -> u64 {
    let mut h = (seed ^ (seed >> 32)) as u32;
    for &c in bytes {
        h = (h << 4).wrapping_add(c as u32);
        let g = h & 0xF000_0000;
        if g != 0 {
            h ^= g >> 24;
        }
        h &= !g;
    }
    h as u64
}

pub fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &c in bytes {
        h ^= c as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One hash function of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashMember {
    pub algorithm: HashAlgorithm,
    pub seed: u64,
}

/// An ordered set of `k` hash functions shared by all arrays of a filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashFamily {
    members: Vec<HashMember>,
}

impl HashFamily {
    /// The standard family of `k` members: the five algorithms in canonical
    /// order with seed 0, then the same order again with a non-zero seed.
    pub fn standard(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_HASHES {
            return Err(Error::InvalidArgument(format!(
                "hash count must be in 1..={MAX_HASHES}, got {k}"
            )));
        }
        let members = (0..k)
            .map(|i| {
                let round = (i / HashAlgorithm::ALL.len()) as u64;
                HashMember {
                    algorithm: HashAlgorithm::ALL[i % HashAlgorithm::ALL.len()],
                    seed: round.wrapping_mul(SEED_STEP),
                }
            })
            .collect();
        Ok(Self { members })
    }

    /// Builds a family from explicit members. Duplicate (algorithm, seed)
    /// pairs are rejected since they would only repeat positions.
    pub fn from_members(members: Vec<HashMember>) -> Result<Self> {
        if members.is_empty() || members.len() > MAX_HASHES {
            return Err(Error::InvalidArgument(format!(
                "hash count must be in 1..={MAX_HASHES}, got {}",
                members.len()
            )));
        }
        for (i, a) in members.iter().enumerate() {
            if members[..i].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate hash member {}/{}",
                    a.algorithm.name(),
                    a.seed
                )));
            }
        }
        Ok(Self { members })
    }

    /// Replaces the seed of member `index`.
    pub fn with_seed(mut self, index: usize, seed: u64) -> Result<Self> {
        let len = self.members.len();
        let member = self.members.get_mut(index).ok_or_else(|| {
            Error::InvalidArgument(format!("member index {index} out of range for k={len}"))
        })?;
        member.seed = seed;
        Self::from_members(self.members)
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[HashMember] {
        &self.members
    }

    /// Writes the `k` bit positions of `key` reduced modulo `m` into `out`.
    /// `out` must hold at least `k` slots; the caller has validated the key.
    #[inline]
    pub(crate) fn fill_positions(&self, key: &[u8], m: u64, out: &mut [u64; MAX_HASHES]) {
        for (slot, member) in out.iter_mut().zip(&self.members) {
            *slot = member.algorithm.hash(key, member.seed) % m;
        }
    }
}

/// The `k` indices in `[0, m)` that `key` maps to under `family`.
pub fn hash_positions(key: &[u8], family: &HashFamily, m: u64) -> Result<Vec<u64>> {
    if key.is_empty() {
        return Err(Error::InvalidArgument("key must be non-empty".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("bit count must be positive".into()));
    }
    let mut buf = [0u64; MAX_HASHES];
    family.fill_positions(key, m, &mut buf);
    Ok(buf[..family.k()].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_definitions_on_known_input() {
        // 32-bit reference values; the 64-bit sdbm/djb2 agree in the low word.
        assert_eq!(bernstein(b"a", 0) as u32, 177_670);
        assert_eq!(bernstein(b"", 0), 5381);
        assert_eq!(sdbm(b"a", 0), 97);
        assert_eq!(sdbm(b"ab", 0) as u32, 97u32.wrapping_mul(65599).wrapping_add(98));
        assert_eq!(fnv1a(b"", 0), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a", 0), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar", 0), 0x8594_4171_f739_67e8);
        assert_eq!(elf(b"a", 0), 97);
        assert_eq!(elf(b"ab", 0), 97 * 16 + 98);
        assert_eq!(sax(b"a", 0), 97);
    }

    #[test]
    fn elf_stays_within_28_bits() {
        let key: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        assert!(elf(&key, 0) < (1 << 28));
        assert!(elf(&key, u64::MAX) < (1 << 28));
    }

    #[test]
    fn standard_family_members() {
        let f = HashFamily::standard(5).unwrap();
        let names: Vec<_> = f.members().iter().map(|m| m.algorithm.name()).collect();
        assert_eq!(names, ["sax", "sdbm", "bernstein", "elf", "fnv"]);
        assert!(f.members().iter().all(|m| m.seed == 0));

        let f8 = HashFamily::standard(8).unwrap();
        assert_eq!(f8.k(), 8);
        assert!(f8.members()[5..].iter().all(|m| m.seed != 0));
        assert_eq!(f8.members()[5].algorithm, HashAlgorithm::Sax);

        assert!(HashFamily::standard(0).is_err());
        assert!(HashFamily::standard(9).is_err());
    }

    #[test]
    fn duplicate_members_rejected() {
        let m = HashMember { algorithm: HashAlgorithm::Fnv, seed: 3 };
        assert!(HashFamily::from_members(vec![m, m]).is_err());
    }

    #[test]
    fn positions_of_zero_key() {
        let f = HashFamily::standard(5).unwrap();
        let key = [0u8; 40];
        let p = hash_positions(&key, &f, 64).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|&i| i < 64));
        assert_eq!(p, hash_positions(&key, &f, 64).unwrap());
    }

    #[test]
    fn empty_key_and_zero_m_rejected() {
        let f = HashFamily::standard(3).unwrap();
        assert!(hash_positions(&[], &f, 64).is_err());
        assert!(hash_positions(b"x", &f, 0).is_err());
    }

    #[test]
    fn fnv_seed_changes_position() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let base = HashFamily::standard(5).unwrap();
        let seeded = base.clone().with_seed(4, 1).unwrap();
        let m = 1u64 << 20;
        let mut differ = 0;
        for _ in 0..1000 {
            let key: [u8; 40] = crate::testutil::random_key(&mut rng);
            let a = hash_positions(&key, &base, m).unwrap();
            let b = hash_positions(&key, &seeded, m).unwrap();
            assert_eq!(a[..4], b[..4]);
            if a[4] != b[4] {
                differ += 1;
            }
        }
        // expected 1000 * (1 - 1/m), i.e. all of them
        assert!(differ >= 998, "only {differ} positions moved");
    }
}

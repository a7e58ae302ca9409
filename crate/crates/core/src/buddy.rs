//! Buddy Bloom Filter: a selecting array `b1` and a remembering array `b2`
//! that share one hash family.
//!
//! A key seen once is set in `b1`; seen again it is promoted into `b2`; after
//! that it is a known duplicate. `b2` is probed first, so known duplicates
//! cost a single probe.

use serde::{Deserialize, Serialize};

use crate::bloom::{BloomFilter, Probe};
use crate::error::Result;
use crate::hash::HashFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObserveOutcome {
    FirstSeen,
    Promoted,
    KnownDuplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserveCounters {
    pub first_seen: u64,
    pub promoted: u64,
    pub known_duplicate: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuddyBloomFilter {
    b1: BloomFilter,
    b2: BloomFilter,
    counters: ObserveCounters,
}

impl BuddyBloomFilter {
    pub fn new(m: u64, family: HashFamily) -> Result<Self> {
        let b1 = BloomFilter::new(m, family)?;
        let b2 = b1.clone();
        Ok(Self { b1, b2, counters: ObserveCounters::default() })
    }

    /// Pairs two existing arrays. Both must share `m` and the hash family.
    pub fn from_parts(b1: BloomFilter, b2: BloomFilter) -> Result<Self> {
        b1.check_compatible(&b2)?;
        Ok(Self { b1, b2, counters: ObserveCounters::default() })
    }

    pub fn selecting(&self) -> &BloomFilter {
        &self.b1
    }

    pub fn remembering(&self) -> &BloomFilter {
        &self.b2
    }

    pub(crate) fn arrays_mut(&mut self) -> (&mut BloomFilter, &mut BloomFilter) {
        (&mut self.b1, &mut self.b2)
    }

    pub fn m(&self) -> u64 {
        self.b1.m()
    }

    pub fn family(&self) -> &HashFamily {
        self.b1.family()
    }

    /// Allocated filter bits across both arrays.
    pub fn allocated_bits(&self) -> u64 {
        2 * self.m()
    }

    pub fn counters(&self) -> ObserveCounters {
        self.counters
    }

    pub fn probe(&self, key: &[u8]) -> Result<Probe> {
        self.b1.probe(key)
    }

    pub fn observe(&mut self, key: &[u8]) -> Result<ObserveOutcome> {
        let p = self.probe(key)?;
        Ok(self.observe_probe(&p))
    }

    pub fn observe_probe(&mut self, p: &Probe) -> ObserveOutcome {
        let outcome = if self.b2.contains_probe(p) {
            ObserveOutcome::KnownDuplicate
        } else if self.b1.contains_probe(p) {
            self.b2.insert_probe(p);
            ObserveOutcome::Promoted
        } else {
            self.b1.insert_probe(p);
            ObserveOutcome::FirstSeen
        };
        match outcome {
            ObserveOutcome::FirstSeen => self.counters.first_seen += 1,
            ObserveOutcome::Promoted => self.counters.promoted += 1,
            ObserveOutcome::KnownDuplicate => self.counters.known_duplicate += 1,
        }
        outcome
    }

    pub fn clear(&mut self) {
        self.b1.clear();
        self.b2.clear();
        self.counters = ObserveCounters::default();
    }

    pub fn is_empty(&self) -> bool {
        self.b1.is_empty() && self.b2.is_empty()
    }
}

/// Upper bound on the false-positive rate of `b2` for a window of `n_total`
/// elements with distinct ratio `r_d`.
///
/// `b2` receives the `N(1 - r_d)` true repeats plus the `N(2r_d - 1)`
/// singletons that leak through `b1` with probability
/// `(1 - e^(-k N r_d / m))^k`. The result is the classical rate for that
/// many elements. The derivation assumes repeats are spread evenly, so
/// `r_d` outside `[0.5, 1]` is accepted but not meaningful.
pub fn bbf_fp_bound(k: u32, m: f64, n_total: f64, r_d: f64) -> f64 {
    let k_f = k as f64;
    let b1_leak = (1.0 - (-k_f * n_total * r_d / m).exp()).powi(k as i32);
    let in_b2 = n_total * ((1.0 - r_d) + (2.0 * r_d - 1.0) * b1_leak);
    (1.0 - (-k_f * in_b2 / m).exp()).powi(k as i32)
}

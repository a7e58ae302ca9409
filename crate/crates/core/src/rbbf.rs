//! Round-robin Buddy Bloom Filters over jumping time windows.
//!
//! `M` buddy filters are assigned to consecutive windows of width `γ`; window
//! `w = floor(t / γ)` lives in slot `w mod M`. A summary filter holds the OR of
//! every slot except the current one and is rebuilt only when time jumps to a
//! new window, so history is probed with a single lookup. The current window
//! is probed directly. Total storage is `2 (M + 1)` arrays of `m` bits.

use serde::{Deserialize, Serialize};

use crate::bloom::{BloomFilter, Probe};
use crate::buddy::{bbf_fp_bound, BuddyBloomFilter};
use crate::error::{Error, Result};
use crate::hash::HashFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RbbfOutcome {
    /// Hit in the summary's or the current window's remembering array.
    SkipKnown,
    /// Inserted into the current selecting array, not seen in history.
    FirstSeen,
    /// Already present in the current selecting array.
    PromotedCurrent,
    /// New to the current window but present in the history summary.
    PromotedHistory,
}

impl RbbfOutcome {
    pub fn is_promoted(self) -> bool {
        matches!(self, RbbfOutcome::PromotedCurrent | RbbfOutcome::PromotedHistory)
    }

    /// Any outcome other than `FirstSeen` reports the key as a duplicate.
    pub fn is_duplicate(self) -> bool {
        self != RbbfOutcome::FirstSeen
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbbfCounters {
    pub skip_known: u64,
    pub first_seen: u64,
    pub promoted_current: u64,
    pub promoted_history: u64,
}

impl RbbfCounters {
    fn record(&mut self, outcome: RbbfOutcome) {
        match outcome {
            RbbfOutcome::SkipKnown => self.skip_known += 1,
            RbbfOutcome::FirstSeen => self.first_seen += 1,
            RbbfOutcome::PromotedCurrent => self.promoted_current += 1,
            RbbfOutcome::PromotedHistory => self.promoted_history += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.skip_known + self.first_seen + self.promoted_current + self.promoted_history
    }
}

/// A window's remembering array, handed out when its slot is reused.
#[derive(Debug, Clone)]
pub struct EvictedWindow {
    pub window_id: u64,
    pub window_start_ms: u64,
    pub b2: BloomFilter,
    pub counters: RbbfCounters,
}

#[derive(Debug, Clone)]
struct Slot {
    filter: BuddyBloomFilter,
    window_id: Option<u64>,
    counters: RbbfCounters,
}

#[derive(Debug, Clone)]
pub struct RbbfWindowSet {
    slots: Vec<Slot>,
    summary: BuddyBloomFilter,
    width_ms: u64,
    current: Option<u64>,
    stale_dropped: u64,
}

/// ORs every window except `stale_index` into a fresh buddy filter. The
/// inputs are left untouched.
pub fn rebuild_summary(windows: &[BuddyBloomFilter], stale_index: usize) -> Result<BuddyBloomFilter> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidArgument("window list is empty".into()))?;
    if stale_index >= windows.len() {
        return Err(Error::InvalidArgument(format!(
            "stale index {stale_index} out of range for {} windows",
            windows.len()
        )));
    }
    for w in windows {
        first.selecting().check_compatible(w.selecting())?;
    }
    let mut out = BuddyBloomFilter::new(first.m(), first.family().clone())?;
    merge_into(&mut out, windows.iter().enumerate().filter(|(j, _)| *j != stale_index).map(|(_, w)| w))?;
    Ok(out)
}

fn merge_into<'a>(
    out: &mut BuddyBloomFilter,
    windows: impl Iterator<Item = &'a BuddyBloomFilter>,
) -> Result<()> {
    let (b1, b2) = out.arrays_mut();
    for w in windows {
        b1.union_with(w.selecting())?;
        b2.union_with(w.remembering())?;
    }
    Ok(())
}

impl RbbfWindowSet {
    /// `windows` is `M`; `width_ms` is the window width `γ`.
    pub fn new(windows: usize, m: u64, family: HashFamily, width_ms: u64) -> Result<Self> {
        if windows == 0 {
            return Err(Error::InvalidArgument("window count must be at least 1".into()));
        }
        if width_ms == 0 {
            return Err(Error::InvalidArgument("window width must be positive".into()));
        }
        let proto = BuddyBloomFilter::new(m, family)?;
        let slots = (0..windows)
            .map(|_| Slot { filter: proto.clone(), window_id: None, counters: RbbfCounters::default() })
            .collect();
        Ok(Self { slots, summary: proto, width_ms, current: None, stale_dropped: 0 })
    }

    pub fn window_count(&self) -> usize {
        self.slots.len()
    }

    pub fn width_ms(&self) -> u64 {
        self.width_ms
    }

    pub fn m(&self) -> u64 {
        self.summary.m()
    }

    pub fn family(&self) -> &HashFamily {
        self.summary.family()
    }

    /// `2 (M + 1) m`.
    pub fn allocated_bits(&self) -> u64 {
        self.slots.iter().map(|s| s.filter.allocated_bits()).sum::<u64>() + self.summary.allocated_bits()
    }

    pub fn current_window_id(&self) -> Option<u64> {
        self.current
    }

    pub fn current_index(&self) -> Option<usize> {
        self.current.map(|w| self.slot_of(w))
    }

    pub fn current_window_start_ms(&self) -> Option<u64> {
        self.current.map(|w| w * self.width_ms)
    }

    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }

    pub fn window(&self, index: usize) -> &BuddyBloomFilter {
        &self.slots[index].filter
    }

    /// Window id held by slot `index`, if any.
    pub fn window_id_at(&self, index: usize) -> Option<u64> {
        self.slots[index].window_id
    }

    pub fn summary(&self) -> &BuddyBloomFilter {
        &self.summary
    }

    pub fn current_counters(&self) -> Option<RbbfCounters> {
        self.current_index().map(|i| self.slots[i].counters)
    }

    pub fn window_id_for(&self, t_ms: u64) -> u64 {
        t_ms / self.width_ms
    }

    fn slot_of(&self, window_id: u64) -> usize {
        (window_id % self.slots.len() as u64) as usize
    }

    /// Moves the clock to `event_ms`. Crossing one or more boundaries clears
    /// the slots being reused, returns their remembering arrays and rebuilds
    /// the summary. Events up to one window width before the current window
    /// are accepted into the current window; older events are counted and
    /// rejected.
    pub fn advance_window(&mut self, event_ms: u64) -> Result<Vec<EvictedWindow>> {
        let target = self.window_id_for(event_ms);
        let Some(current) = self.current else {
            let slot = self.slot_of(target);
            self.slots[slot].window_id = Some(target);
            self.current = Some(target);
            return Ok(Vec::new());
        };
        if target <= current {
            let start = current * self.width_ms;
            if event_ms + self.width_ms < start {
                self.stale_dropped += 1;
                return Err(Error::StaleEvent { event_ms, window_start_ms: start });
            }
            return Ok(Vec::new());
        }

        let m = self.slots.len() as u64;
        let first_new = (current + 1).max(target + 1 - m.min(target + 1));
        let mut evicted = Vec::new();
        for w in first_new..=target {
            let slot = self.slot_of(w);
            let s = &mut self.slots[slot];
            if let Some(old) = s.window_id {
                evicted.push(EvictedWindow {
                    window_id: old,
                    window_start_ms: old * self.width_ms,
                    b2: s.filter.remembering().clone(),
                    counters: s.counters,
                });
            }
            s.filter.clear();
            s.counters = RbbfCounters::default();
            s.window_id = Some(w);
        }
        self.current = Some(target);
        evicted.sort_by_key(|e| e.window_id);

        let stale = self.slot_of(target);
        self.summary.clear();
        let slots = &self.slots;
        merge_into(
            &mut self.summary,
            slots.iter().enumerate().filter(|(j, _)| *j != stale).map(|(_, s)| &s.filter),
        )?;
        Ok(evicted)
    }

    /// Classifies `key` against the current window and the history summary.
    /// The companion key, when given, is written wherever `key` is written
    /// but never affects the outcome.
    pub fn observe(&mut self, key: &[u8], companion: Option<&[u8]>) -> Result<RbbfOutcome> {
        let p = self.summary.probe(key)?;
        let c = companion.map(|c| self.summary.probe(c)).transpose()?;
        self.observe_probe(&p, c.as_ref())
    }

    pub fn observe_probe(&mut self, p: &Probe, companion: Option<&Probe>) -> Result<RbbfOutcome> {
        let index = self
            .current_index()
            .ok_or_else(|| Error::InvalidArgument("no active window; advance the clock first".into()))?;
        let slot = &mut self.slots[index];
        let (b1, b2) = slot.filter.arrays_mut();
        let summary = &self.summary;

        let outcome = if summary.remembering().contains_probe(p) || b2.contains_probe(p) {
            RbbfOutcome::SkipKnown
        } else if b1.contains_probe(p) {
            b2.insert_probe(p);
            if let Some(c) = companion {
                b2.insert_probe(c);
            }
            RbbfOutcome::PromotedCurrent
        } else {
            b1.insert_probe(p);
            if let Some(c) = companion {
                b1.insert_probe(c);
            }
            if summary.selecting().contains_probe(p) {
                b2.insert_probe(p);
                if let Some(c) = companion {
                    b2.insert_probe(c);
                }
                RbbfOutcome::PromotedHistory
            } else {
                RbbfOutcome::FirstSeen
            }
        };
        slot.counters.record(outcome);
        Ok(outcome)
    }

    /// Advances to `event_ms` and observes `key` in one step.
    pub fn observe_at(
        &mut self,
        event_ms: u64,
        key: &[u8],
        companion: Option<&[u8]>,
    ) -> Result<(RbbfOutcome, Vec<EvictedWindow>)> {
        let evicted = self.advance_window(event_ms)?;
        Ok((self.observe(key, companion)?, evicted))
    }

    /// Remembering arrays of every slot that holds a window, oldest first.
    /// The set is left unchanged.
    pub fn live_windows(&self) -> Vec<EvictedWindow> {
        let mut out: Vec<_> = self
            .slots
            .iter()
            .filter_map(|s| {
                s.window_id.map(|w| EvictedWindow {
                    window_id: w,
                    window_start_ms: w * self.width_ms,
                    b2: s.filter.remembering().clone(),
                    counters: s.counters,
                })
            })
            .collect();
        out.sort_by_key(|e| e.window_id);
        out
    }

    /// True when `key` is absent from every array, summary included.
    pub fn is_forgotten(&self, key: &[u8]) -> Result<bool> {
        let p = self.summary.probe(key)?;
        let in_any = |f: &BuddyBloomFilter| {
            f.selecting().contains_probe(&p) || f.remembering().contains_probe(&p)
        };
        Ok(!in_any(&self.summary) && !self.slots.iter().any(|s| in_any(&s.filter)))
    }
}

/// False-positive estimate for a window set treated as one buddy filter over
/// `M · N` elements, with the looser classical cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RbbfBound {
    pub estimate: f64,
    pub cap: f64,
}

pub fn rbbf_fp_bound(k: u32, m: f64, windows: u32, n_per_window: f64, r_d: f64) -> RbbfBound {
    let n = windows as f64 * n_per_window;
    RbbfBound {
        estimate: bbf_fp_bound(k, m, n, r_d),
        cap: (1.0 - (-(k as f64) * n * r_d / m).exp()).powi(k as i32),
    }
}

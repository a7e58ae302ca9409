//! Exact reference detectors.
//!
//! [`ExactTable`] is the plain hash-table duplicate counter used as the
//! memory/time baseline. [`ExactWindowSet`] answers the same temporal question
//! as a window set, with hash-map entries instead of bit arrays: each key
//! remembers in which live windows it was selected and remembered.
//! [`ExactPipeline`] chains two of them like [`Pipeline`](crate::detection::Pipeline).
//!
//! [`compare_runs`] drives an exact window set in lockstep with the
//! approximate one: the exact side classifies each decision from its own
//! state, then applies whatever the approximate side did. Both sides therefore
//! share one history, and every disagreement is attributable to a single
//! decision rather than to divergence after an earlier false positive.

use std::collections::HashMap;
use std::hash::Hash;
use std::mem::size_of;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::detection::{Pipeline, PipelineConfig, StageObserver};
use crate::error::Result;
use crate::flow::{EndNodeTuple, FlowKey, FlowRecord, END_NODE_LEN, FLOW_KEY_LEN};
use crate::rbbf::RbbfOutcome;

pub type FlowTableKey = [u8; FLOW_KEY_LEN];
pub type NodeTableKey = [u8; END_NODE_LEN];

/// Table key of a flow; a flow and its conjugate share it.
pub fn flow_table_key(key: &FlowKey) -> FlowTableKey {
    key.canonical_bytes()
}

pub fn node_table_key(tuple: &EndNodeTuple) -> NodeTableKey {
    tuple.to_bytes()
}

/// Rough heap footprint of a hash map with `capacity` slots.
fn table_bytes<K, V>(capacity: usize) -> usize {
    capacity * (size_of::<K>() + size_of::<V>() + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExactOutcome {
    FirstSeen,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactEntry {
    pub count: u64,
    pub first_seen_window: u64,
    pub last_seen_window: u64,
}

/// Occurrence counter per key, forgetting after `horizon` windows.
#[derive(Debug, Clone)]
pub struct ExactTable<K> {
    map: HashMap<K, ExactEntry>,
    horizon: u64,
}

impl<K: Hash + Eq + Copy> ExactTable<K> {
    /// `horizon` is the number of windows an occurrence stays visible,
    /// counting the one it happened in.
    pub fn new(horizon: u64) -> Self {
        Self { map: HashMap::new(), horizon: horizon.max(1) }
    }

    /// Counts an occurrence of `key` in `window`. A duplicate is a key whose
    /// previous occurrence is still within the horizon.
    pub fn exact_observe(&mut self, key: K, window: u64) -> ExactOutcome {
        match self.map.get_mut(&key) {
            Some(e) => {
                e.count += 1;
                let recent = window.saturating_sub(e.last_seen_window) < self.horizon;
                e.last_seen_window = e.last_seen_window.max(window);
                if recent {
                    ExactOutcome::Duplicate
                } else {
                    ExactOutcome::FirstSeen
                }
            }
            None => {
                self.map.insert(key, ExactEntry { count: 1, first_seen_window: window, last_seen_window: window });
                ExactOutcome::FirstSeen
            }
        }
    }

    pub fn get(&self, key: &K) -> Option<&ExactEntry> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Drops keys last seen before `window`.
    pub fn purge_before(&mut self, window: u64) {
        self.map.retain(|_, e| e.last_seen_window >= window);
    }

    pub fn memory_bytes(&self) -> usize {
        table_bytes::<K, ExactEntry>(self.map.capacity())
    }
}

#[derive(Debug, Clone, Copy)]
struct MirrorEntry {
    /// Window that bit 0 of the masks refers to; bit `i` is `anchor - i`.
    anchor: u64,
    sel: u64,
    rem: u64,
    last_window: u64,
}

impl MirrorEntry {
    fn masks_at(&self, window: u64, windows: u32) -> (u64, u64) {
        let shift = window.saturating_sub(self.anchor);
        if shift >= windows as u64 {
            return (0, 0);
        }
        let live = if windows >= 64 { u64::MAX } else { (1u64 << windows) - 1 };
        ((self.sel << shift) & live, (self.rem << shift) & live)
    }
}

/// Exact counterpart of a window set over `windows` jumping windows.
#[derive(Debug, Clone)]
pub struct ExactWindowSet<K> {
    map: HashMap<K, MirrorEntry>,
    windows: u32,
    current: Option<u64>,
    distinct_in_window: u64,
}

impl<K: Hash + Eq + Copy> ExactWindowSet<K> {
    pub fn new(windows: usize) -> Self {
        assert!((1..=64).contains(&windows), "1..=64 windows supported");
        Self { map: HashMap::new(), windows: windows as u32, current: None, distinct_in_window: 0 }
    }

    /// Classification of `key` in `window` without changing state.
    pub fn decide(&self, key: &K, window: u64) -> RbbfOutcome {
        let Some(e) = self.map.get(key) else {
            return RbbfOutcome::FirstSeen;
        };
        let (sel, rem) = e.masks_at(window, self.windows);
        if rem != 0 {
            RbbfOutcome::SkipKnown
        } else if sel & 1 != 0 {
            RbbfOutcome::PromotedCurrent
        } else if sel != 0 {
            RbbfOutcome::PromotedHistory
        } else {
            RbbfOutcome::FirstSeen
        }
    }

    /// Records the state change that `outcome` implies for `key` in `window`.
    pub fn apply(&mut self, key: K, window: u64, outcome: RbbfOutcome) {
        if self.current != Some(window) {
            self.current = Some(window);
        }
        let windows = self.windows;
        let e = self.map.entry(key).or_insert(MirrorEntry { anchor: window, sel: 0, rem: 0, last_window: u64::MAX });
        if e.last_window != window {
            e.last_window = window;
            self.distinct_in_window += 1;
        }
        let (sel, rem) = e.masks_at(window, windows);
        e.anchor = e.anchor.max(window);
        e.sel = sel;
        e.rem = rem;
        match outcome {
            RbbfOutcome::SkipKnown => {}
            RbbfOutcome::PromotedCurrent => e.rem |= 1,
            RbbfOutcome::FirstSeen => e.sel |= 1,
            RbbfOutcome::PromotedHistory => {
                e.sel |= 1;
                e.rem |= 1;
            }
        }
    }

    pub fn observe(&mut self, key: K, window: u64) -> RbbfOutcome {
        let outcome = self.decide(&key, window);
        self.apply(key, window, outcome);
        outcome
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sum over windows of the distinct keys each window saw.
    pub fn distinct_in_window(&self) -> u64 {
        self.distinct_in_window
    }

    pub fn memory_bytes(&self) -> usize {
        table_bytes::<K, MirrorEntry>(self.map.capacity())
    }
}

/// Jumping-window clock with the same late-event tolerance as the window set.
#[derive(Debug, Clone, Copy)]
struct Clock {
    width_ms: u64,
    current: Option<u64>,
}

impl Clock {
    fn place(&mut self, t_ms: u64) -> Option<u64> {
        let w = t_ms / self.width_ms;
        match self.current {
            Some(c) if w <= c => (t_ms + self.width_ms >= c * self.width_ms).then_some(c),
            _ => {
                self.current = Some(w);
                Some(w)
            }
        }
    }
}

/// Two-stage detection with exact sets.
#[derive(Debug, Clone)]
pub struct ExactPipeline {
    flow: ExactWindowSet<FlowTableKey>,
    node: ExactWindowSet<NodeTableKey>,
    flow_clock: Clock,
    node_clock: Clock,
}

impl ExactPipeline {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            flow: ExactWindowSet::new(config.flow.windows),
            node: ExactWindowSet::new(config.node.windows),
            flow_clock: Clock { width_ms: config.flow.width_ms, current: None },
            node_clock: Clock { width_ms: config.node.width_ms, current: None },
        }
    }

    /// Stage-1 outcome (`None` if stale) and the promoted end-node tuples.
    pub fn process_flow(&mut self, record: &FlowRecord) -> (Option<RbbfOutcome>, Vec<(EndNodeTuple, RbbfOutcome)>) {
        let Some(w) = self.flow_clock.place(record.start_ms) else {
            return (None, Vec::new());
        };
        let outcome = self.flow.observe(flow_table_key(&record.key), w);
        let mut promoted = Vec::new();
        if outcome.is_promoted() {
            let (a, b) = record.key.end_nodes();
            for tuple in [a, b] {
                let Some(nw) = self.node_clock.place(record.start_ms) else { break };
                let o = self.node.observe(node_table_key(&tuple), nw);
                if o.is_promoted() {
                    promoted.push((tuple, o));
                }
            }
        }
        (Some(outcome), promoted)
    }
}

/// Decision-level comparison of one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageComparison {
    pub decisions: u64,
    pub agreements: u64,
    /// Approximate duplicate, exact first sighting.
    pub false_positives: u64,
    /// Approximate first sighting, exact duplicate.
    pub false_negatives: u64,
    pub exact_negatives: u64,
    /// Same duplicate verdict but a different outcome.
    pub outcome_mismatches: u64,
    pub windows: u64,
    pub distinct_in_window: u64,
}

impl StageComparison {
    fn record(&mut self, approx: RbbfOutcome, exact: RbbfOutcome) {
        self.decisions += 1;
        if !exact.is_duplicate() {
            self.exact_negatives += 1;
        }
        match (approx.is_duplicate(), exact.is_duplicate()) {
            (true, false) => self.false_positives += 1,
            (false, true) => self.false_negatives += 1,
            _ => {
                self.agreements += 1;
                if approx != exact {
                    self.outcome_mismatches += 1;
                }
            }
        }
    }

    /// False positives over exact first sightings.
    pub fn fp_rate(&self) -> f64 {
        if self.exact_negatives == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.exact_negatives as f64
        }
    }

    pub fn mean_per_window(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.decisions as f64 / self.windows as f64
        }
    }

    /// Share of distinct keys among each window's decisions.
    pub fn distinct_ratio(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.distinct_in_window as f64 / self.decisions as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub records: u64,
    pub flow: StageComparison,
    pub node: StageComparison,
    pub service_events: u64,
    pub approx_bytes: u64,
    pub exact_bytes: u64,
    pub exact_keys: u64,
    pub approx_ns_per_event: f64,
    pub exact_ns_per_event: f64,
}

impl ComparisonReport {
    /// Node-stage decisions compared.
    pub fn events_compared(&self) -> u64 {
        self.node.decisions
    }
}

struct Lockstep {
    flow: ExactWindowSet<FlowTableKey>,
    node: ExactWindowSet<NodeTableKey>,
    flow_cmp: StageComparison,
    node_cmp: StageComparison,
    last_flow_window: Option<u64>,
    last_node_window: Option<u64>,
    spent: Duration,
}

impl StageObserver for Lockstep {
    fn on_flow(&mut self, window_id: u64, key: &FlowKey, outcome: RbbfOutcome) {
        let t = Instant::now();
        let k = flow_table_key(key);
        let exact = self.flow.decide(&k, window_id);
        self.flow.apply(k, window_id, outcome);
        self.flow_cmp.record(outcome, exact);
        if self.last_flow_window != Some(window_id) {
            self.last_flow_window = Some(window_id);
            self.flow_cmp.windows += 1;
        }
        self.spent += t.elapsed();
    }

    fn on_node(&mut self, window_id: u64, tuple: &EndNodeTuple, outcome: RbbfOutcome) {
        let t = Instant::now();
        let k = node_table_key(tuple);
        let exact = self.node.decide(&k, window_id);
        self.node.apply(k, window_id, outcome);
        self.node_cmp.record(outcome, exact);
        if self.last_node_window != Some(window_id) {
            self.last_node_window = Some(window_id);
            self.node_cmp.windows += 1;
        }
        self.spent += t.elapsed();
    }
}

/// Runs the approximate pipeline over `records` with an exact mirror of both
/// stages and classifies every decision.
pub fn compare_runs<I>(records: I, config: PipelineConfig) -> Result<ComparisonReport>
where
    I: IntoIterator<Item = FlowRecord>,
{
    let observer = Lockstep {
        flow: ExactWindowSet::new(config.flow.windows),
        node: ExactWindowSet::new(config.node.windows),
        flow_cmp: StageComparison::default(),
        node_cmp: StageComparison::default(),
        last_flow_window: None,
        last_node_window: None,
        spent: Duration::ZERO,
    };
    let mut pipeline = Pipeline::with_observer(config, observer)?;
    let approx_bytes = pipeline.allocated_bits() / 8;
    let mut n = 0u64;
    let mut service_events = 0u64;
    let start = Instant::now();
    for r in records {
        n += 1;
        service_events += pipeline.process_flow(&r)?.events.len() as u64;
        pipeline.drain_reports();
    }
    let total = start.elapsed();
    let (_, mut obs) = pipeline.finalize();
    obs.flow_cmp.distinct_in_window = obs.flow.distinct_in_window();
    obs.node_cmp.distinct_in_window = obs.node.distinct_in_window();
    let per = |d: Duration| if n == 0 { 0.0 } else { d.as_nanos() as f64 / n as f64 };
    Ok(ComparisonReport {
        records: n,
        flow: obs.flow_cmp,
        node: obs.node_cmp,
        service_events,
        approx_bytes,
        exact_bytes: (obs.flow.memory_bytes() + obs.node.memory_bytes()) as u64,
        exact_keys: (obs.flow.len() + obs.node.len()) as u64,
        approx_ns_per_event: per(total.saturating_sub(obs.spent)),
        exact_ns_per_event: per(obs.spent),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PROTO_TCP;
    use crate::hash::HashFamily;
    use crate::rbbf::RbbfWindowSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::net::{IpAddr, Ipv4Addr};

    fn key(a: u8, pa: u16, b: u8, pb: u16) -> FlowKey {
        FlowKey::new(
            (IpAddr::V4(Ipv4Addr::new(10, 0, 0, a)), pa),
            (IpAddr::V4(Ipv4Addr::new(10, 0, 0, b)), pb),
            PROTO_TCP,
        )
    }

    #[test]
    fn table_basics() {
        let mut t = ExactTable::new(6);
        let f = key(1, 50000, 2, 80);
        assert_eq!(t.exact_observe(flow_table_key(&f), 0), ExactOutcome::FirstSeen);
        assert_eq!(t.exact_observe(flow_table_key(&f.conjugate()), 0), ExactOutcome::Duplicate);
        assert_eq!(t.get(&flow_table_key(&f)).unwrap().count, 2);
        assert_eq!(t.exact_observe(flow_table_key(&f), 5), ExactOutcome::Duplicate);
        assert_eq!(t.exact_observe(flow_table_key(&f), 11), ExactOutcome::FirstSeen);
        assert_eq!(t.len(), 1);
        t.purge_before(12);
        assert!(t.is_empty());
    }

    #[test]
    fn mirror_sequence() {
        let mut s: ExactWindowSet<u32> = ExactWindowSet::new(3);
        assert_eq!(s.observe(1, 0), RbbfOutcome::FirstSeen);
        assert_eq!(s.observe(1, 0), RbbfOutcome::PromotedCurrent);
        assert_eq!(s.observe(1, 1), RbbfOutcome::SkipKnown);
        assert_eq!(s.observe(2, 1), RbbfOutcome::FirstSeen);
        assert_eq!(s.observe(2, 3), RbbfOutcome::PromotedHistory);
        assert_eq!(s.observe(2, 3), RbbfOutcome::SkipKnown);
        // window 0 left the horizon at 3
        assert_eq!(s.observe(1, 3), RbbfOutcome::FirstSeen);
        assert_eq!(s.observe(3, 4), RbbfOutcome::FirstSeen);
        assert_eq!(s.observe(3, 7), RbbfOutcome::FirstSeen);
    }

    /// With a large filter the approximate set never errs, so the exact
    /// mirror driven by its own answers must agree everywhere.
    #[test]
    fn mirror_matches_window_set_without_collisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut approx = RbbfWindowSet::new(4, 1 << 22, HashFamily::standard(5).unwrap(), 10).unwrap();
        let mut exact: ExactWindowSet<u16> = ExactWindowSet::new(4);
        let mut t = 0u64;
        for _ in 0..20_000 {
            t += rng.gen_range(0..3);
            let k: u16 = rng.gen_range(0..400);
            approx.advance_window(t).unwrap();
            let w = approx.current_window_id().unwrap();
            let a = approx.observe(&k.to_le_bytes(), None).unwrap();
            assert_eq!(exact.observe(k, w), a, "key {k} at t={t}");
        }
    }

    #[test]
    fn comparison_counts_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut records = Vec::new();
        let mut t = 0;
        for i in 0..20_000u32 {
            t += rng.gen_range(0..50);
            let server = rng.gen_range(1..20u8);
            let f = key(100 + (i % 100) as u8, 1024 + (i / 100) as u16, server, 80);
            records.push(FlowRecord { key: f, start_ms: t, end_ms: t, packets: 1, bytes: 40 });
            if rng.gen_bool(0.5) {
                records.push(FlowRecord { key: f.conjugate(), start_ms: t + 1, end_ms: t + 1, packets: 1, bytes: 40 });
            }
        }
        let config = PipelineConfig::with_sizes(1 << 12, 1 << 10, 3).unwrap();
        let r = compare_runs(records.clone(), config).unwrap();
        assert_eq!(r.records, records.len() as u64);
        for s in [r.flow, r.node] {
            assert_eq!(s.false_positives + s.false_negatives + s.agreements, s.decisions);
            assert_eq!(s.false_negatives, 0);
        }
        assert_eq!(r.flow.decisions, r.records);
        assert_eq!(r.approx_bytes, config.allocated_bits() / 8);
        // undersized filters must show some errors
        assert!(r.flow.false_positives > 0);
    }

    #[test]
    fn exact_pipeline_finds_server() {
        let config = PipelineConfig::with_sizes(1 << 12, 1 << 12, 5).unwrap();
        let mut p = ExactPipeline::new(&config);
        let mut found = Vec::new();
        for (i, c) in [11u8, 12, 13].into_iter().enumerate() {
            let f = key(c, 50000, 2, 80);
            let t = i as u64 * 1000;
            found.extend(p.process_flow(&FlowRecord { key: f, start_ms: t, end_ms: t, packets: 1, bytes: 1 }).1);
            found.extend(p.process_flow(&FlowRecord { key: f.conjugate(), start_ms: t + 5, end_ms: t + 5, packets: 1, bytes: 1 }).1);
        }
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].0.port, 80);
    }
}

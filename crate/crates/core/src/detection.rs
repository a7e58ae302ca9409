//! Two-stage service-node discovery.
//!
//! Stage 1 classifies each flow against a window set keyed by the 320-bit
//! flow key, inserting the conjugate alongside so the reverse direction and
//! later fragments of the same flow are recognised. Only flows promoted at
//! stage 1 (a bidirectional exchange or a repeat) reach stage 2, which
//! observes both end-node tuples against a second window set. A tuple that
//! promotes at stage 2 is reported as a service node.
//!
//! Each stage has its own clock driven by record start times. Node-stage
//! windows are reported when their slot is reused, or at [`Pipeline::finalize`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bloom::{optimal_params, BloomFilter};
use crate::error::{Error, Result};
use crate::flow::{EndNodeTuple, FlowKey, FlowRecord};
use crate::hash::HashFamily;
use crate::rbbf::{EvictedWindow, RbbfOutcome, RbbfWindowSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Number of windows in rotation.
    pub windows: usize,
    pub width_ms: u64,
    /// Bits per array.
    pub m: u64,
    /// Hash functions.
    pub k: usize,
}

impl StageConfig {
    pub fn build(&self) -> Result<RbbfWindowSet> {
        RbbfWindowSet::new(self.windows, self.m, HashFamily::standard(self.k)?, self.width_ms)
    }

    /// `2 (windows + 1) m`.
    pub fn allocated_bits(&self) -> u64 {
        2 * (self.windows as u64 + 1) * self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub flow: StageConfig,
    pub node: StageConfig,
    /// Flow-file period `t0`.
    pub t0_s: u64,
    pub timeout_s: u64,
    pub active_timeout_s: u64,
}

pub const DEFAULT_T0_S: u64 = 300;
pub const DEFAULT_TIMEOUT_S: u64 = 900;
pub const DEFAULT_ACTIVE_TIMEOUT_S: u64 = 1800;
pub const DEFAULT_NODE_WINDOWS: usize = 6;

/// Bits per array for each stage and the hash count, sized for `epsilon`.
pub fn stage_sizes(clocks: &Clocks, epsilon: f64, flows_per_window: f64, r_d: f64) -> Result<(u64, u64, usize)> {
    if !(r_d > 0.0 && r_d <= 1.0) || flows_per_window.is_nan() || flows_per_window < 0.0 {
        return Err(Error::Config(format!("cannot size for {flows_per_window} flows at r_d={r_d}")));
    }
    let flow = optimal_params(epsilon, (2.0 * clocks.flow_windows() as f64 * flows_per_window * r_d).max(1.0))?;
    let validated = flows_per_window * (1.0 - r_d).max(0.05);
    let node = optimal_params(epsilon, (2.0 * clocks.node_windows as f64 * validated).max(1.0))?;
    Ok((flow.m_min, node.m_min, flow.k as usize))
}

/// `ceil(timeout / t0) + 1`.
pub fn flow_windows_for(timeout_s: u64, t0_s: u64) -> usize {
    (timeout_s.div_ceil(t0_s) + 1) as usize
}

/// Window clocks of both stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clocks {
    pub t0_s: u64,
    pub timeout_s: u64,
    pub active_timeout_s: u64,
    pub node_windows: usize,
    pub node_window_s: u64,
}

impl Default for Clocks {
    fn default() -> Self {
        Self {
            t0_s: DEFAULT_T0_S,
            timeout_s: DEFAULT_TIMEOUT_S,
            active_timeout_s: DEFAULT_ACTIVE_TIMEOUT_S,
            node_windows: DEFAULT_NODE_WINDOWS,
            node_window_s: DEFAULT_T0_S,
        }
    }
}

impl Clocks {
    pub fn flow_windows(&self) -> usize {
        if self.t0_s == 0 {
            return 0;
        }
        flow_windows_for(self.timeout_s, self.t0_s)
    }
}

impl PipelineConfig {
    /// Stage sizes for a target false-positive rate, given the expected flow
    /// records per window and their distinct ratio. Each stage is sized for
    /// the elements its arrays hold over the whole horizon: the flow stage
    /// writes each distinct flow twice (itself and its conjugate), and each
    /// validated flow puts two end-node tuples into the node stage.
    pub fn sized(epsilon: f64, flows_per_window: f64, r_d: f64) -> Result<Self> {
        Self::sized_with(Clocks::default(), epsilon, flows_per_window, r_d)
    }

    pub fn sized_with(clocks: Clocks, epsilon: f64, flows_per_window: f64, r_d: f64) -> Result<Self> {
        let (m_flow, m_node, k) = stage_sizes(&clocks, epsilon, flows_per_window, r_d)?;
        Self::from_clocks(clocks, m_flow, m_node, k)
    }

    /// Default clocks (`t0` = 300 s, timeout 900 s, `N` = 4, `M` = 6) with the
    /// given array sizes.
    pub fn with_sizes(m_flow: u64, m_node: u64, k: usize) -> Result<Self> {
        Self::from_clocks(Clocks::default(), m_flow, m_node, k)
    }

    pub fn from_clocks(clocks: Clocks, m_flow: u64, m_node: u64, k: usize) -> Result<Self> {
        let c = Self {
            flow: StageConfig { windows: clocks.flow_windows(), width_ms: clocks.t0_s * 1000, m: m_flow, k },
            node: StageConfig {
                windows: clocks.node_windows,
                width_ms: clocks.node_window_s * 1000,
                m: m_node,
                k,
            },
            t0_s: clocks.t0_s,
            timeout_s: clocks.timeout_s,
            active_timeout_s: clocks.active_timeout_s,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("flow", &self.flow), ("node", &self.node)] {
            if s.windows == 0 || s.width_ms == 0 || s.m < crate::bloom::MIN_BITS {
                return Err(Error::Config(format!("{name} stage: {s:?} is not a usable window set")));
            }
            if s.k == 0 || s.k > crate::hash::MAX_HASHES {
                return Err(Error::Config(format!("{name} stage: k={} out of range", s.k)));
            }
        }
        if self.t0_s == 0 {
            return Err(Error::Config("t0 must be positive".into()));
        }
        Ok(())
    }

    pub fn allocated_bits(&self) -> u64 {
        self.flow.allocated_bits() + self.node.allocated_bits()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::sized(0.05, 100_000.0, 0.5).expect("default sizing is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceNodeEvent {
    pub tuple: EndNodeTuple,
    pub detected_at_ms: u64,
    pub via: RbbfOutcome,
    pub flow: FlowKey,
}

impl ServiceNodeEvent {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tuple": self.tuple.to_string(),
            "detected_at_ms": self.detected_at_ms,
            "via": self.via,
            "flow": self.flow.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounters {
    pub flows_in: u64,
    pub flows_validated: u64,
    pub flows_skipped_known: u64,
    pub flows_first_seen: u64,
    pub stale_events_dropped: u64,
    pub node_observations: u64,
    pub nodes_promoted: u64,
}

impl WindowCounters {
    /// First-sighting share of accepted flows; with conjugates folded
    /// together this tracks the window's distinct ratio.
    pub fn distinct_ratio_estimate(&self) -> f64 {
        let accepted = self.flows_in - self.stale_events_dropped;
        if accepted == 0 {
            0.0
        } else {
            self.flows_first_seen as f64 / accepted as f64
        }
    }
}

/// Summary of one node-stage window: its remembering array and tallies of
/// the flows whose start time fell in it.
#[derive(Debug, Clone)]
pub struct WindowReport {
    pub window_id: u64,
    pub window_start_ms: u64,
    pub width_ms: u64,
    pub b2: BloomFilter,
    pub counters: WindowCounters,
}

/// What happened to one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowResult {
    /// Stage-1 classification; `None` when the record was dropped as stale.
    pub outcome: Option<RbbfOutcome>,
    pub events: Vec<ServiceNodeEvent>,
}

/// Hook for every stage decision, called after the decision is made with
/// the window id it was made in.
pub trait StageObserver {
    fn on_flow(&mut self, _window_id: u64, _key: &FlowKey, _outcome: RbbfOutcome) {}
    fn on_node(&mut self, _window_id: u64, _tuple: &EndNodeTuple, _outcome: RbbfOutcome) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl StageObserver for NoObserver {}

pub struct Pipeline<O: StageObserver = NoObserver> {
    config: PipelineConfig,
    flow: RbbfWindowSet,
    node: RbbfWindowSet,
    observer: O,
    tallies: BTreeMap<u64, WindowCounters>,
    latest_window: Option<u64>,
    reports: Vec<WindowReport>,
}

impl Pipeline<NoObserver> {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        Self::with_observer(config, NoObserver)
    }
}

impl<O: StageObserver> Pipeline<O> {
    pub fn with_observer(config: PipelineConfig, observer: O) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            flow: config.flow.build()?,
            node: config.node.build()?,
            config,
            observer,
            tallies: BTreeMap::new(),
            latest_window: None,
            reports: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn observer(&self) -> &O {
        &self.observer
    }

    pub fn flow_stage(&self) -> &RbbfWindowSet {
        &self.flow
    }

    pub fn node_stage(&self) -> &RbbfWindowSet {
        &self.node
    }

    /// Filter bits held by both stages.
    pub fn allocated_bits(&self) -> u64 {
        self.flow.allocated_bits() + self.node.allocated_bits()
    }

    /// Node-stage window a record is tallied in; late records count towards
    /// the newest window seen.
    fn tally_window(&mut self, start_ms: u64) -> u64 {
        let w = start_ms / self.config.node.width_ms;
        let w = self.latest_window.map_or(w, |l| l.max(w));
        self.latest_window = Some(w);
        w
    }

    pub fn process_flow(&mut self, record: &FlowRecord) -> Result<FlowResult> {
        let tw = self.tally_window(record.start_ms);
        self.tallies.entry(tw).or_default().flows_in += 1;

        match self.flow.advance_window(record.start_ms) {
            Ok(_) => {}
            Err(Error::StaleEvent { .. }) => {
                self.tallies.entry(tw).or_default().stale_events_dropped += 1;
                return Ok(FlowResult { outcome: None, events: Vec::new() });
            }
            Err(e) => return Err(e),
        }
        let key = record.key.to_bytes();
        let conj = record.key.conjugate().to_bytes();
        let outcome = self.flow.observe(&key, Some(&conj))?;
        let window = self.flow.current_window_id().expect("clock advanced");
        self.observer.on_flow(window, &record.key, outcome);

        let tally = self.tallies.entry(tw).or_default();
        let events = match outcome {
            RbbfOutcome::SkipKnown => {
                tally.flows_skipped_known += 1;
                Vec::new()
            }
            RbbfOutcome::FirstSeen => {
                tally.flows_first_seen += 1;
                Vec::new()
            }
            RbbfOutcome::PromotedCurrent | RbbfOutcome::PromotedHistory => {
                tally.flows_validated += 1;
                self.detect_dup_node(&record.key, record.start_ms)?
            }
        };
        Ok(FlowResult { outcome: Some(outcome), events })
    }

    /// Observes both end-node tuples of a validated flow at stage 2.
    pub fn detect_dup_node(&mut self, key: &FlowKey, t_ms: u64) -> Result<Vec<ServiceNodeEvent>> {
        let tw = self.tally_window(t_ms);
        let (src, dst) = key.end_nodes();
        let mut events = Vec::new();
        for tuple in [src, dst] {
            match self.node.advance_window(t_ms) {
                Ok(evicted) => self.collect(evicted),
                // only reachable when the node stage runs on a longer clock
                Err(Error::StaleEvent { .. }) => break,
                Err(e) => return Err(e),
            }
            let outcome = self.node.observe(&tuple.to_bytes(), None)?;
            let window = self.node.current_window_id().expect("clock advanced");
            self.observer.on_node(window, &tuple, outcome);
            let tally = self.tallies.entry(tw).or_default();
            tally.node_observations += 1;
            if outcome.is_promoted() {
                tally.nodes_promoted += 1;
                events.push(ServiceNodeEvent { tuple, detected_at_ms: t_ms, via: outcome, flow: *key });
            }
        }
        Ok(events)
    }

    fn empty_b2(&self) -> BloomFilter {
        BloomFilter::new(self.node.m(), self.node.family().clone()).expect("stage already validated")
    }

    fn report_for(&mut self, window_id: u64, b2: BloomFilter) -> WindowReport {
        WindowReport {
            window_id,
            window_start_ms: window_id * self.config.node.width_ms,
            width_ms: self.config.node.width_ms,
            b2,
            counters: self.tallies.remove(&window_id).unwrap_or_default(),
        }
    }

    fn collect(&mut self, evicted: Vec<EvictedWindow>) {
        for e in evicted {
            // windows that only saw unvalidated flows never got a node slot
            let older: Vec<u64> = self.tallies.range(..e.window_id).map(|(&w, _)| w).collect();
            for w in older {
                let empty = self.empty_b2();
                let r = self.report_for(w, empty);
                self.reports.push(r);
            }
            let r = self.report_for(e.window_id, e.b2);
            self.reports.push(r);
        }
    }

    /// Reports for node windows whose slots have been reused since the last
    /// call, oldest first.
    pub fn drain_reports(&mut self) -> Vec<WindowReport> {
        std::mem::take(&mut self.reports)
    }

    /// Flushes every remaining window as a report. Consumes the pipeline.
    pub fn finalize(mut self) -> (Vec<WindowReport>, O) {
        let mut out = std::mem::take(&mut self.reports);
        let mut live: BTreeMap<u64, BloomFilter> =
            self.node.live_windows().into_iter().map(|e| (e.window_id, e.b2)).collect();
        let ids: Vec<u64> = live.keys().chain(self.tallies.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        for w in ids {
            let b2 = live.remove(&w).unwrap_or_else(|| self.empty_b2());
            let r = self.report_for(w, b2);
            out.push(r);
        }
        (out, self.observer)
    }
}

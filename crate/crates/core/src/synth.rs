//! Deterministic synthetic flow streams with ground truth.
//!
//! Background traffic is a Poisson stream of sessions. A session is either
//! bidirectional (a flow, its conjugate after a short gap, and sometimes a
//! split-off fragment of the first flow) or a lone unidirectional flow. The
//! bidirectional share `b` and the distinct ratio `r_d` fix the split
//! probability: each session contributes one distinct key and
//! `1 + b + b·p_split` records, so `p_split = (1/r_d - 1 - b) / b`.
//!
//! Every background end point is unique, so the only end-node tuples that
//! repeat are the planted services (and client ports when reuse is enabled).
//! Planted services are contacted by bidirectional client sessions.
//!
//! Address plan: clients in 10.0.0.0/9 with ports 49152-65535, background
//! responders in 172.16.0.0/12, planted services in 192.168.0.0/16.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::net::{IpAddr, Ipv4Addr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{EndNodeTuple, FlowKey, FlowRecord, PROTO_TCP, PROTO_UDP};

/// Window-aligned epoch used as the default stream start (2023-11-14).
pub const DEFAULT_START_MS: u64 = 1_699_999_800_000;

const CLIENT_BITS: u32 = 37;
const RESPONDER_BITS: u32 = 35;
const SCRAMBLE: u64 = 0x9E37_79B9_7F4A_7C15;
const SERVICE_PORTS: [(u16, u8); 8] = [
    (80, PROTO_TCP),
    (443, PROTO_TCP),
    (53, PROTO_UDP),
    (22, PROTO_TCP),
    (25, PROTO_TCP),
    (8080, PROTO_TCP),
    (123, PROTO_UDP),
    (3306, PROTO_TCP),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    pub min_ms: f64,
    pub max_ms: f64,
    /// Probability of drawing from the tail instead of the body.
    pub tail_weight: f64,
    pub tail_max_ms: f64,
    /// Pareto shape of the tail.
    pub tail_alpha: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { min_ms: 32.0, max_ms: 1024.0, tail_weight: 0.05, tail_max_ms: 300_000.0, tail_alpha: 1.0 }
    }
}

impl GapConfig {
    /// Log-uniform body on `[min, max]`, bounded Pareto tail on `[max, tail_max]`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.tail_weight > 0.0 && rng.gen_bool(self.tail_weight.min(1.0)) {
            let (l, h, a) = (self.max_ms, self.tail_max_ms, self.tail_alpha);
            let u: f64 = rng.gen();
            l * (1.0 - u * (1.0 - (l / h).powf(a))).powf(-1.0 / a)
        } else {
            self.sample_body(rng)
        }
    }

    pub fn sample_body<R: Rng>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.min_ms.ln(), self.max_ms.ln());
        (lo + rng.gen::<f64>() * (hi - lo)).exp()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.min_ms > 0.0
            && self.max_ms >= self.min_ms
            && (0.0..=1.0).contains(&self.tail_weight)
            && self.tail_max_ms >= self.max_ms
            && self.tail_alpha > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad gap distribution {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSpec {
    pub clients: u32,
    /// Offset of the first client session from the stream start; random when absent.
    pub at_s: Option<f64>,
    /// Client sessions are spread uniformly over this span.
    pub spread_s: f64,
}

impl Default for ServiceSpec {
    fn default() -> Self {
        Self { clients: 3, at_s: None, spread_s: 240.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub source: Ipv4Addr,
    pub target: Ipv4Addr,
    pub rate_per_s: f64,
    pub first_port: u16,
    pub last_port: u16,
    pub start_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_ms: u64,
    pub duration_s: f64,
    pub window_s: u64,
    pub flows_per_window: f64,
    pub r_d: f64,
    pub bidirectional_fraction: f64,
    pub gap: GapConfig,
    pub services: Vec<ServiceSpec>,
    pub scan: Option<ScanSpec>,
    /// Share of background bidirectional sessions whose conjugate is pushed
    /// across a window boundary. Their gaps come from the body only.
    pub straddle_fraction: f64,
    /// Probability that a client reuses a recently used address and port.
    pub port_reuse: f64,
    /// Node-stage window count and width used to label services.
    pub horizon_windows: u32,
    pub node_window_s: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            start_ms: DEFAULT_START_MS,
            duration_s: 1800.0,
            window_s: 300,
            flows_per_window: 10_000.0,
            r_d: 0.5,
            bidirectional_fraction: 1.0,
            gap: GapConfig::default(),
            services: Vec::new(),
            scan: None,
            straddle_fraction: 0.0,
            port_reuse: 0.0,
            horizon_windows: 6,
            node_window_s: 300,
        }
    }
}

impl SynthConfig {
    /// Default config for a distinct ratio, with the largest feasible
    /// bidirectional share and no splits beyond what `r_d` requires.
    pub fn for_distinct_ratio(seed: u64, r_d: f64) -> Self {
        let b = (1.0 / r_d - 1.0).clamp(0.0, 1.0);
        Self { seed, r_d, bidirectional_fraction: b, ..Self::default() }
    }

    pub fn split_fraction(&self) -> f64 {
        let b = self.bidirectional_fraction;
        if b == 0.0 {
            0.0
        } else {
            (1.0 / self.r_d - 1.0 - b) / b
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.r_d > 0.0 && self.r_d <= 1.0) {
            return err(format!("r_d must be in (0, 1], got {}", self.r_d));
        }
        let b = self.bidirectional_fraction;
        if !(0.0..=1.0).contains(&b) {
            return err(format!("bidirectional fraction must be in [0, 1], got {b}"));
        }
        if b == 0.0 && self.r_d < 1.0 {
            return err(format!("r_d={} needs some bidirectional sessions", self.r_d));
        }
        let p = self.split_fraction();
        if !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return err(format!(
                "r_d={} and bidirectional fraction {b} need split probability {p:.3}, outside [0, 1]",
                self.r_d
            ));
        }
        if self.duration_s < 0.0 || self.flows_per_window < 0.0 || self.window_s == 0 || self.node_window_s == 0 {
            return err("duration, rate and window widths must be positive".into());
        }
        if self.horizon_windows == 0 {
            return err("horizon needs at least one window".into());
        }
        for p in [self.straddle_fraction, self.port_reuse] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.services.len() > 1 << 16 {
            return err("at most 65536 planted services".into());
        }
        if let Some(s) = &self.scan {
            if s.rate_per_s <= 0.0 || s.first_port > s.last_port {
                return err(format!("bad scan {s:?}"));
            }
        }
        self.gap.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordLabel {
    ValidBidirectional,
    SplitArtifact,
    Scan,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledRecord {
    pub record: FlowRecord,
    pub label: RecordLabel,
    /// Session the record belongs to; scan probes each get their own.
    pub session: u64,
    /// Set on both directions of a session forced across a window boundary.
    pub straddle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedService {
    pub tuple: String,
    pub clients: u32,
    /// Node-stage windows of each client session's validation.
    pub validation_windows: Vec<u64>,
    pub in_truth: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub services: BTreeSet<EndNodeTuple>,
    pub planted: Vec<PlantedService>,
}

impl GroundTruth {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "services": self.services.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
            "planted": self.planted,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LabeledStream {
    pub records: Vec<LabeledRecord>,
    pub truth: GroundTruth,
}

impl LabeledStream {
    pub fn flows(&self) -> impl Iterator<Item = FlowRecord> + '_ {
        self.records.iter().map(|r| r.record)
    }
}

/// Distinct keys (a flow and its conjugate counted once) over records.
pub fn distinct_ratio<'a>(records: impl IntoIterator<Item = &'a FlowRecord>) -> f64 {
    let mut seen = HashSet::new();
    let mut n = 0u64;
    for r in records {
        n += 1;
        seen.insert(r.key.canonical_bytes());
    }
    if n == 0 {
        0.0
    } else {
        seen.len() as f64 / n as f64
    }
}

struct Pending(LabeledRecord, u64);

impl Pending {
    fn key(&self) -> (u64, u64) {
        (self.0.record.start_ms, self.1)
    }
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.key() == o.key()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Pending {
    fn cmp(&self, o: &Self) -> Ordering {
        o.key().cmp(&self.key())
    }
}

fn scramble(i: u64, bits: u32) -> u64 {
    i.wrapping_mul(SCRAMBLE) & ((1u64 << bits) - 1)
}

fn client_tuple(i: u64) -> (IpAddr, u16) {
    let s = scramble(i, CLIENT_BITS);
    let addr = Ipv4Addr::from((10u32 << 24) | (s >> 14) as u32);
    (IpAddr::V4(addr), 49152 + (s & 0x3FFF) as u16)
}

fn responder_tuple(i: u64) -> (IpAddr, u16) {
    let s = scramble(i, RESPONDER_BITS);
    let addr = Ipv4Addr::from((172u32 << 24) | (16 << 16) | (s >> 15) as u32);
    (IpAddr::V4(addr), 1024 + (s & 0x7FFF) as u16)
}

/// Tuple of planted service `i`.
pub fn service_tuple(i: usize) -> EndNodeTuple {
    let (port, proto) = SERVICE_PORTS[i % SERVICE_PORTS.len()];
    let addr = Ipv4Addr::new(192, 168, (i >> 8) as u8, (i & 0xFF) as u8);
    EndNodeTuple::new(IpAddr::V4(addr), port, proto)
}

/// Lazily generated stream in start-time order.
pub struct SynthStream {
    cfg: SynthConfig,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Pending>,
    seq: u64,
    session: u64,
    next_arrival: f64,
    end_ms: f64,
    rate_per_ms: f64,
    split: f64,
    clients: u64,
    responders: u64,
    recent_clients: Vec<(IpAddr, u16)>,
    truth: GroundTruth,
}

impl SynthStream {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            heap: BinaryHeap::new(),
            seq: 0,
            session: 0,
            next_arrival: cfg.start_ms as f64,
            end_ms: cfg.start_ms as f64 + cfg.duration_s * 1000.0,
            rate_per_ms: cfg.flows_per_window * cfg.r_d / (cfg.window_s as f64 * 1000.0),
            split: cfg.split_fraction().clamp(0.0, 1.0),
            clients: 0,
            responders: 0,
            recent_clients: Vec::new(),
            truth: GroundTruth::default(),
            cfg,
        };
        s.plant_services();
        s.plant_scan();
        s.next_arrival += s.exp_gap();
        Ok(s)
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    fn exp_gap(&mut self) -> f64 {
        if self.rate_per_ms <= 0.0 {
            return f64::INFINITY;
        }
        -(1.0 - self.rng.gen::<f64>()).ln() / self.rate_per_ms
    }

    fn push(&mut self, key: FlowKey, start_ms: u64, label: RecordLabel, straddle: bool) {
        let dur = self.rng.gen_range(0..30_000);
        let packets = self.rng.gen_range(1..200u64);
        let bytes = packets * self.rng.gen_range(40..1500u64);
        let record = FlowRecord { key, start_ms, end_ms: start_ms + dur, packets, bytes };
        let l = LabeledRecord { record, label, session: self.session, straddle };
        self.heap.push(Pending(l, self.seq));
        self.seq += 1;
    }

    fn next_client(&mut self) -> (IpAddr, u16) {
        if self.cfg.port_reuse > 0.0 && !self.recent_clients.is_empty() && self.rng.gen_bool(self.cfg.port_reuse) {
            let i = self.rng.gen_range(0..self.recent_clients.len());
            return self.recent_clients[i];
        }
        let c = client_tuple(self.clients);
        self.clients += 1;
        if self.cfg.port_reuse > 0.0 {
            if self.recent_clients.len() == 64 {
                self.recent_clients.remove(0);
            }
            self.recent_clients.push(c);
        }
        c
    }

    fn next_responder(&mut self) -> (IpAddr, u16) {
        let r = responder_tuple(self.responders);
        self.responders += 1;
        r
    }

    /// Emits a bidirectional session; returns the validation time.
    fn bidirectional(&mut self, key: FlowKey, t1: u64, gap_ms: f64, straddle: bool) -> u64 {
        let t2 = t1 + gap_ms.round().max(1.0) as u64;
        self.push(key, t1, RecordLabel::ValidBidirectional, straddle);
        self.push(key.conjugate(), t2, RecordLabel::ValidBidirectional, straddle);
        if self.split > 0.0 && self.rng.gen_bool(self.split) {
            let t3 = t2 + self.cfg.gap.sample(&mut self.rng).round() as u64;
            self.push(key, t3, RecordLabel::SplitArtifact, false);
        }
        self.session += 1;
        t2
    }

    fn plant_services(&mut self) {
        let node_ms = self.cfg.node_window_s * 1000;
        let horizon = self.cfg.horizon_windows as u64;
        let specs = self.cfg.services.clone();
        for (i, spec) in specs.iter().enumerate() {
            let tuple = service_tuple(i);
            let span_ms = spec.spread_s.max(0.0) * 1000.0;
            let at_ms = match spec.at_s {
                Some(a) => a * 1000.0,
                None => self.rng.gen::<f64>() * (self.cfg.duration_s * 1000.0 - span_ms).max(0.0),
            };
            let mut windows = Vec::new();
            for _ in 0..spec.clients {
                let t1 = self.cfg.start_ms + (at_ms + self.rng.gen::<f64>() * span_ms) as u64;
                let client = self.next_client();
                let key = FlowKey::new(client, (IpAddr::V4(tuple.addr.to_ipv4_mapped().unwrap()), tuple.port), tuple.proto);
                let gap = self.cfg.gap.sample(&mut self.rng);
                let v = self.bidirectional(key, t1, gap, false);
                windows.push(v / node_ms);
            }
            windows.sort_unstable();
            let in_truth = windows.windows(2).any(|w| w[1] - w[0] < horizon);
            if in_truth {
                self.truth.services.insert(tuple);
            }
            self.truth.planted.push(PlantedService {
                tuple: tuple.to_string(),
                clients: spec.clients,
                validation_windows: windows,
                in_truth,
            });
        }
    }

    fn plant_scan(&mut self) {
        let Some(s) = self.cfg.scan else { return };
        let start = self.cfg.start_ms as f64 + s.start_s * 1000.0;
        for (i, port) in (s.first_port..=s.last_port).enumerate() {
            let t = (start + i as f64 * 1000.0 / s.rate_per_s) as u64;
            let key = FlowKey::new((IpAddr::V4(s.source), 40_000), (IpAddr::V4(s.target), port), PROTO_TCP);
            self.push(key, t, RecordLabel::Scan, false);
            self.session += 1;
        }
    }

    fn background_session(&mut self, arrival: f64) {
        let t = arrival as u64;
        let client = self.next_client();
        let responder = self.next_responder();
        let proto = if self.rng.gen_bool(0.8) { PROTO_TCP } else { PROTO_UDP };
        let key = FlowKey::new(client, responder, proto);
        let b = self.cfg.bidirectional_fraction;
        if b > 0.0 && self.rng.gen_bool(b) {
            if self.cfg.straddle_fraction > 0.0 && self.rng.gen_bool(self.cfg.straddle_fraction) {
                let w = self.cfg.window_s * 1000;
                let boundary = (t / w + 1) * w;
                let gap = self.cfg.gap.sample_body(&mut self.rng);
                let u: f64 = self.rng.gen();
                let t1 = t.max(boundary.saturating_sub((u * gap) as u64 + 1));
                let gap = gap.max((boundary - t1) as f64);
                self.bidirectional(key, t1, gap, true);
            } else {
                let gap = self.cfg.gap.sample(&mut self.rng);
                self.bidirectional(key, t, gap, false);
            }
        } else {
            self.push(key, t, RecordLabel::Noise, false);
            self.session += 1;
        }
    }
}

impl Iterator for SynthStream {
    type Item = LabeledRecord;

    fn next(&mut self) -> Option<LabeledRecord> {
        loop {
            let arrivals_left = self.next_arrival < self.end_ms;
            if let Some(top) = self.heap.peek() {
                if !arrivals_left || (top.0.record.start_ms as f64) <= self.next_arrival {
                    return self.heap.pop().map(|p| p.0);
                }
            }
            if !arrivals_left {
                return None;
            }
            let a = self.next_arrival;
            self.background_session(a);
            self.next_arrival += self.exp_gap();
        }
    }
}

pub fn generate(config: SynthConfig) -> Result<LabeledStream> {
    let mut s = SynthStream::new(config)?;
    let records: Vec<_> = s.by_ref().collect();
    Ok(LabeledStream { records, truth: s.truth })
}

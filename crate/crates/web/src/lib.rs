//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Everything returns JSON text so the page can `JSON.parse` it. The same
//! functions are plain Rust off the wasm target.

use std::collections::BTreeSet;

use serde_json::json;
use wasm_bindgen::prelude::*;

use rbbf::detection::StageObserver;
use rbbf::flow::FlowKey;
use rbbf::synth::{generate, SynthConfig};
use rbbf::{bbf_fp_bound, fp_rate_classic, optimal_params, BuddyBloomFilter, HashFamily, Pipeline, PipelineConfig, RbbfOutcome};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Sizes for a false-positive target over `n` elements per window.
#[wasm_bindgen]
pub fn sizing(epsilon: f64, n: f64, r_d: f64, windows: u32) -> Result<String, String> {
    let s = optimal_params(epsilon, n * r_d).map_err(err)?;
    let bits_per_element = (s.k as f64 * std::f64::consts::LOG2_E).round();
    Ok(json!({
        "k": s.k,
        "m": s.m_min,
        "bbf_bytes": s.bbf_bits() as f64 / 8.0,
        "rule_of_thumb_bytes": 2.0 * bits_per_element * n * r_d / 8.0,
        "rbbf_bytes": (2 * (windows as u64 + 1) * s.m_min) as f64 / 8.0,
    })
    .to_string())
}

/// False-positive rate of one array and of a buddy pair as the load grows
/// from 0 to `n_max` elements.
#[wasm_bindgen]
pub fn fp_curve(k: u32, m: f64, r_d: f64, n_max: f64, points: u32) -> Result<String, String> {
    if k == 0 || m <= 0.0 || n_max <= 0.0 || points < 2 {
        return Err("need k > 0, m > 0, n_max > 0 and at least 2 points".into());
    }
    let rows: Vec<_> = (0..points)
        .map(|i| {
            let n = n_max * i as f64 / (points - 1) as f64;
            json!({
                "n": n,
                "classic": fp_rate_classic(k, m, n * r_d),
                "buddy": bbf_fp_bound(k, m, n, r_d),
            })
        })
        .collect();
    Ok(serde_json::Value::from(rows).to_string())
}

#[derive(Default)]
struct Validated(BTreeSet<[u8; 40]>);

impl StageObserver for Validated {
    fn on_flow(&mut self, _: u64, key: &FlowKey, outcome: RbbfOutcome) {
        if outcome.is_promoted() {
            self.0.insert(key.canonical_bytes());
        }
    }
}

/// Recall on conjugate pairs forced across a window boundary, for a
/// flow stage of 1 to `max_windows` windows.
#[wasm_bindgen]
pub fn boundary_recall(seed: u64, flows_per_window: f64, straddle: f64, max_windows: u32) -> Result<String, String> {
    let mut cfg = SynthConfig::for_distinct_ratio(seed, 0.5);
    cfg.flows_per_window = flows_per_window;
    cfg.straddle_fraction = straddle;
    cfg.duration_s = 1500.0;
    let stream = generate(cfg).map_err(err)?;
    let pairs: BTreeSet<[u8; 40]> =
        stream.records.iter().filter(|r| r.straddle).map(|r| r.record.key.canonical_bytes()).collect();
    // generous sizing keeps stage-1 false positives out of the picture
    let base = PipelineConfig::sized(0.05, flows_per_window.max(1e5), 0.5).map_err(err)?;
    let mut rows = Vec::new();
    for windows in 1..=max_windows.max(1) as usize {
        let mut config = base;
        config.flow.windows = windows;
        let mut p = Pipeline::with_observer(config, Validated::default()).map_err(err)?;
        for r in stream.flows() {
            p.process_flow(&r).map_err(err)?;
        }
        let (_, found) = p.finalize();
        let hit = pairs.iter().filter(|k| found.0.contains(*k)).count();
        let recall = if pairs.is_empty() { 1.0 } else { hit as f64 / pairs.len() as f64 };
        rows.push(json!({ "windows": windows, "pairs": pairs.len(), "found": hit, "recall": recall }));
    }
    Ok(serde_json::Value::from(rows).to_string())
}

/// A small buddy filter whose bits the page draws after every key.
#[wasm_bindgen]
pub struct Playground {
    filter: BuddyBloomFilter,
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(m: u32, k: u32) -> Result<Playground, String> {
        if !(8..=4096).contains(&m) {
            return Err("m must be between 8 and 4096 bits".into());
        }
        let family = HashFamily::standard(k as usize).map_err(err)?;
        Ok(Playground { filter: BuddyBloomFilter::new(m as u64, family).map_err(err)? })
    }

    /// Feeds one key; returns the outcome and the bit positions it maps to.
    pub fn observe(&mut self, key: &str) -> Result<String, String> {
        let p = self.filter.probe(key.as_bytes()).map_err(err)?;
        let outcome = self.filter.observe_probe(&p);
        Ok(json!({ "outcome": outcome, "positions": p.positions() }).to_string())
    }

    /// Whether `key` would be reported as a duplicate, without inserting it.
    pub fn peek(&self, key: &str) -> Result<String, String> {
        let p = self.filter.probe(key.as_bytes()).map_err(err)?;
        Ok(json!({
            "in_b1": self.filter.selecting().contains_probe(&p),
            "in_b2": self.filter.remembering().contains_probe(&p),
            "positions": p.positions(),
        })
        .to_string())
    }

    pub fn b1_bits(&self) -> Vec<u8> {
        let b = self.filter.selecting();
        (0..b.m()).map(|i| b.get_bit(i) as u8).collect()
    }

    pub fn b2_bits(&self) -> Vec<u8> {
        let b = self.filter.remembering();
        (0..b.m()).map(|i| b.get_bit(i) as u8).collect()
    }

    pub fn counters(&self) -> String {
        let c = self.filter.counters();
        json!({ "first_seen": c.first_seen, "promoted": c.promoted, "known_duplicate": c.known_duplicate }).to_string()
    }

    pub fn reset(&mut self) {
        self.filter.clear();
    }
}

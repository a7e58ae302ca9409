use std::collections::{BTreeMap, BTreeSet, HashMap};

use rbbf::detection::{flow_windows_for, StageObserver};
use rbbf::flow::FlowKey;
use rbbf::oracle::ExactPipeline;
use rbbf::synth::{generate, RecordLabel, ServiceSpec, SynthConfig};
use rbbf::{EndNodeTuple, Pipeline, PipelineConfig, RbbfOutcome};

fn with_services(seed: u64, n: usize) -> SynthConfig {
    let mut cfg = SynthConfig::for_distinct_ratio(seed, 0.49);
    cfg.duration_s = 2400.0;
    cfg.flows_per_window = 20_000.0;
    cfg.services = vec![ServiceSpec::default(); n];
    cfg
}

#[test]
fn exact_replay_recovers_ground_truth() {
    for seed in 0..4 {
        let mut cfg = with_services(seed, 40);
        // some services spread past the horizon so truth is not everything
        for (i, s) in cfg.services.iter_mut().enumerate() {
            s.clients = 1 + (i % 4) as u32;
            if i % 5 == 0 {
                s.spread_s = 2400.0;
            }
        }
        let s = generate(cfg).unwrap();
        let config = PipelineConfig::default();
        let mut exact = ExactPipeline::new(&config);
        let mut found = BTreeSet::new();
        for r in s.flows() {
            for (t, _) in exact.process_flow(&r).1 {
                found.insert(t);
            }
        }
        assert_eq!(found, s.truth.services, "seed {seed}");
        assert!(s.truth.services.len() > 10 && s.truth.services.len() < 40);
    }
}

#[test]
fn approximate_pipeline_emits_every_true_service() {
    let s = generate(with_services(7, 60)).unwrap();
    let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
    let mut found: BTreeMap<EndNodeTuple, u32> = BTreeMap::new();
    for r in s.flows() {
        for e in p.process_flow(&r).unwrap().events {
            *found.entry(e.tuple).or_default() += 1;
        }
    }
    for t in &s.truth.services {
        assert_eq!(found.get(t), Some(&1), "{t}");
    }
    let extra = found.keys().filter(|t| !s.truth.services.contains(t)).count();
    assert!(extra < 50, "{extra} spurious tuples");
}

#[derive(Default)]
struct Promotions(HashMap<[u8; 40], u32>);

impl StageObserver for Promotions {
    fn on_flow(&mut self, _w: u64, key: &FlowKey, outcome: RbbfOutcome) {
        if outcome.is_promoted() {
            *self.0.entry(key.canonical_bytes()).or_default() += 1;
        }
    }
}

#[test]
fn split_flows_reach_node_stage_once() {
    let s = generate(with_services(8, 10)).unwrap();
    let split: BTreeSet<[u8; 40]> = s
        .records
        .iter()
        .filter(|r| r.label == RecordLabel::SplitArtifact)
        .map(|r| r.record.key.canonical_bytes())
        .collect();
    assert!(split.len() > 1000);
    let config = PipelineConfig::default();
    let mut p = Pipeline::with_observer(config, Promotions::default()).unwrap();
    for r in s.flows() {
        p.process_flow(&r).unwrap();
    }
    let (_, obs) = p.finalize();
    for k in &split {
        assert_eq!(obs.0.get(k), Some(&1));
    }
}

#[derive(Default)]
struct Validated(BTreeSet<[u8; 40]>);

impl StageObserver for Validated {
    fn on_flow(&mut self, _w: u64, key: &FlowKey, outcome: RbbfOutcome) {
        if outcome.is_promoted() {
            self.0.insert(key.canonical_bytes());
        }
    }
}

fn straddle_recall(flow_windows: usize) -> f64 {
    let mut cfg = SynthConfig::for_distinct_ratio(11, 0.5);
    cfg.straddle_fraction = 0.2;
    cfg.flows_per_window = 20_000.0;
    let s = generate(cfg).unwrap();
    let mut config = PipelineConfig::default();
    config.flow.windows = flow_windows;
    let mut p = Pipeline::with_observer(config, Validated::default()).unwrap();
    for r in s.flows() {
        p.process_flow(&r).unwrap();
    }
    let (_, obs) = p.finalize();
    let pairs: BTreeSet<[u8; 40]> =
        s.records.iter().filter(|r| r.straddle).map(|r| r.record.key.canonical_bytes()).collect();
    pairs.iter().filter(|k| obs.0.contains(*k)).count() as f64 / pairs.len() as f64
}

#[test]
fn straddling_pairs_need_more_than_one_window() {
    assert!(straddle_recall(1) < 0.01);
    assert_eq!(straddle_recall(flow_windows_for(900, 300)), 1.0);
}

#[test]
fn reports_answer_for_emitted_tuples() {
    let s = generate(with_services(9, 30)).unwrap();
    let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
    let mut events = Vec::new();
    let mut reports = Vec::new();
    for r in s.flows() {
        events.extend(p.process_flow(&r).unwrap().events);
        reports.extend(p.drain_reports());
    }
    let (rest, _) = p.finalize();
    reports.extend(rest);
    let by_window: BTreeMap<u64, _> = reports.iter().map(|r| (r.window_id, r)).collect();
    assert_eq!(by_window.len(), reports.len());
    for e in &events {
        let r = by_window[&(e.detected_at_ms / 300_000)];
        assert!(r.b2.contains(&e.tuple.to_bytes()).unwrap());
    }
    let flows: u64 = reports.iter().map(|r| r.counters.flows_in).sum();
    assert_eq!(flows, s.records.len() as u64);
    for r in &reports {
        let c = r.counters;
        assert_eq!(c.flows_in, c.flows_validated + c.flows_skipped_known + c.flows_first_seen + c.stale_events_dropped);
        assert_eq!(c.node_observations, 2 * c.flows_validated);
    }
}

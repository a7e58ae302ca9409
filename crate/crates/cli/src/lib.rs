//! Subcommands of the `rbbf` tool. Each `cmd_*` takes parsed arguments and
//! the output streams so it can be driven from tests.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rbbf::bloom::{optimal_params, BloomFilter};
use rbbf::detection::{stage_sizes, Clocks, WindowReport};
use rbbf::flow::{FlowReader, FlowRecord, CSV_HEADER};
use rbbf::oracle::{compare_runs, ComparisonReport};
use rbbf::persistence::{self, address_key, SummaryKind, SummaryRecord};
use rbbf::rbbf::rbbf_fp_bound;
use rbbf::synth::{ServiceSpec, SynthConfig, SynthStream};
use rbbf::{EndNodeTuple, HashFamily, Pipeline, PipelineConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_FALSE_NEGATIVE: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "rbbf", version, about = "Discover service nodes in flow records with round-robin buddy Bloom filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stream flow records through the two-stage detector
    Detect(DetectArgs),
    /// List data files whose summary header may contain a tuple or address
    Query(QueryArgs),
    /// Compare the approximate detector against the exact one
    Bench(BenchArgs),
    /// Print filter sizes for a false-positive target
    Params(ParamsArgs),
    /// Generate a labeled synthetic flow stream
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CoreR1,
    CoreR2,
    EdgeR3,
}

impl Preset {
    /// `(flows per 5-minute window, r_d, bytes per array)`.
    pub fn values(self) -> (f64, f64, u64) {
        match self {
            Preset::CoreR1 => (850_000.0, 0.45, 4 << 20),
            Preset::CoreR2 => (1_500_000.0, 0.49, 4 << 20),
            Preset::EdgeR3 => (4_500_000.0, 0.53, 8 << 20),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum SummaryChoice {
    /// Node-stage remembering array
    #[default]
    Node,
    /// Every address seen in the window
    Address,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Target false-positive rate used for sizing
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Bits per array in both stages (overrides sizing)
    #[arg(long)]
    pub bits_per_array: Option<u64>,
    #[arg(long)]
    pub hashes: Option<usize>,
    /// Node-stage window count M
    #[arg(long)]
    pub windows_node: Option<usize>,
    /// Node-stage window width in seconds
    #[arg(long)]
    pub window_seconds: Option<u64>,
    /// Flow-file period in seconds
    #[arg(long)]
    pub t0: Option<u64>,
    /// Flow timeout in seconds
    #[arg(long)]
    pub timeout: Option<u64>,
    /// Expected flow records per window, for sizing
    #[arg(long)]
    pub flows_per_window: Option<f64>,
    /// Expected distinct ratio, for sizing
    #[arg(long)]
    pub r_d: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub preset: Option<Preset>,
    pub epsilon: f64,
    pub flows_per_window: f64,
    pub r_d: f64,
    pub pipeline: PipelineConfig,
}

impl EffectiveConfig {
    pub fn to_json(&self) -> serde_json::Value {
        let p = &self.pipeline;
        json!({
            "preset": self.preset,
            "epsilon": self.epsilon,
            "flows_per_window": self.flows_per_window,
            "r_d": self.r_d,
            "k": p.flow.k,
            "flow_windows": p.flow.windows,
            "node_windows": p.node.windows,
            "m_flow_bits": p.flow.m,
            "m_node_bits": p.node.m,
            "m_flow_bytes": p.flow.m.div_ceil(8),
            "m_node_bytes": p.node.m.div_ceil(8),
            "allocated_bytes": p.allocated_bits() / 8,
        })
    }
}

impl ConfigArgs {
    /// Flags over preset over defaults.
    pub fn resolve(&self) -> rbbf::Result<EffectiveConfig> {
        let preset = self.preset.map(Preset::values);
        let epsilon = self.epsilon.unwrap_or(0.05);
        let flows_per_window = self.flows_per_window.or(preset.map(|p| p.0)).unwrap_or(100_000.0);
        let r_d = self.r_d.or(preset.map(|p| p.1)).unwrap_or(0.5);
        let t0_s = self.t0.unwrap_or(rbbf::detection::DEFAULT_T0_S);
        if t0_s == 0 {
            return Err(rbbf::Error::Config("--t0 must be positive".into()));
        }
        let clocks = Clocks {
            t0_s,
            timeout_s: self.timeout.unwrap_or(rbbf::detection::DEFAULT_TIMEOUT_S),
            node_windows: self.windows_node.unwrap_or(rbbf::detection::DEFAULT_NODE_WINDOWS),
            node_window_s: self.window_seconds.unwrap_or(t0_s),
            ..Clocks::default()
        };
        let (mut m_flow, mut m_node, mut k) = stage_sizes(&clocks, epsilon, flows_per_window, r_d)
            .map_err(|e| rbbf::Error::Config(e.to_string()))?;
        if let Some(bytes) = preset.map(|p| p.2) {
            m_flow = bytes * 8;
            m_node = bytes * 8;
        }
        if let Some(m) = self.bits_per_array {
            m_flow = m;
            m_node = m;
        }
        if let Some(h) = self.hashes {
            k = h;
        }
        let pipeline = PipelineConfig::from_clocks(clocks, m_flow, m_node, k)?;
        Ok(EffectiveConfig { preset: self.preset, epsilon, flows_per_window, r_d, pipeline })
    }
}

/// Exit status for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rbbf::Error>() {
            return match e {
                rbbf::Error::Config(_) | rbbf::Error::InvalidArgument(_) | rbbf::Error::IncompatibleFilters(_) => {
                    EXIT_CONFIG
                }
                rbbf::Error::Io(_) => EXIT_IO,
                _ => EXIT_FORMAT,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return EXIT_IO;
        }
        if cause.downcast_ref::<FalseNegatives>().is_some() {
            return EXIT_FALSE_NEGATIVE;
        }
    }
    1
}

#[derive(Debug)]
pub struct FalseNegatives(pub u64);

impl std::fmt::Display for FalseNegatives {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} false negatives against the exact detector", self.0)
    }
}

impl std::error::Error for FalseNegatives {}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

/// Reads every record of `inputs` in order, passing each to `f`. Returns the
/// number of records skipped for unsupported protocols.
fn for_each_record(inputs: &[PathBuf], mut f: impl FnMut(FlowRecord) -> Result<()>) -> Result<u64> {
    let mut skipped = 0;
    for path in inputs {
        let mut reader = FlowReader::new(open_input(path)?);
        for r in reader.by_ref() {
            f(r.with_context(|| format!("reading {}", path.display()))?)?;
        }
        skipped += reader.skipped();
    }
    Ok(skipped)
}

fn write_record(w: &mut (impl Write + ?Sized), r: &FlowRecord, format: Format) -> io::Result<()> {
    match format {
        Format::Csv => writeln!(w, "{}", r.to_csv()),
        Format::Jsonl => writeln!(w, "{}", r.to_json()),
    }
}

fn emit(w: &mut dyn Write, v: serde_json::Value) -> io::Result<()> {
    writeln!(w, "{v}")
}

#[derive(Args, Debug, Clone)]
pub struct DetectArgs {
    /// Flow files (CSV or JSON lines); '-' reads standard input
    #[arg(default_value = "-")]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for per-window data files with summary headers
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub summary: SummaryChoice,
    /// Body format of the data files
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

struct Staged {
    path: PathBuf,
    body: BufWriter<File>,
    addresses: Option<BloomFilter>,
}

/// Per-window data files. Bodies are staged next to their final name and
/// prefixed with the summary header once the window is reported.
struct WindowFiles {
    dir: PathBuf,
    kind: SummaryChoice,
    format: Format,
    width_ms: u64,
    m: u64,
    family: HashFamily,
    latest: Option<u64>,
    staged: BTreeMap<u64, Staged>,
}

impl WindowFiles {
    fn new(dir: &Path, args: &DetectArgs, config: &PipelineConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            kind: args.summary,
            format: args.format,
            width_ms: config.node.width_ms,
            m: config.node.m,
            family: HashFamily::standard(config.node.k)?,
            latest: None,
            staged: BTreeMap::new(),
        })
    }

    fn add(&mut self, r: &FlowRecord) -> Result<()> {
        let w = (r.start_ms / self.width_ms).max(self.latest.unwrap_or(0));
        self.latest = Some(w);
        if !self.staged.contains_key(&w) {
            let path = self.dir.join(format!(".window-{w}.body"));
            let mut body = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            if self.format == Format::Csv {
                writeln!(body, "{CSV_HEADER}")?;
            }
            let addresses = match self.kind {
                SummaryChoice::Address => Some(BloomFilter::new(self.m, self.family.clone())?),
                SummaryChoice::Node => None,
            };
            self.staged.insert(w, Staged { path, body, addresses });
        }
        let s = self.staged.get_mut(&w).expect("just inserted");
        write_record(&mut s.body, r, self.format)?;
        if let Some(a) = &mut s.addresses {
            a.insert(&r.key.src_addr.octets())?;
            a.insert(&r.key.dst_addr.octets())?;
        }
        Ok(())
    }

    fn close(&mut self, report: &WindowReport) -> Result<PathBuf> {
        let staged = self.staged.remove(&report.window_id);
        let (kind, filter) = match (self.kind, &staged) {
            (SummaryChoice::Node, _) => (SummaryKind::NodeB2, report.b2.clone()),
            (SummaryChoice::Address, Some(Staged { addresses: Some(a), .. })) => (SummaryKind::AddressSet, a.clone()),
            (SummaryChoice::Address, _) => (SummaryKind::AddressSet, BloomFilter::new(self.m, self.family.clone())?),
        };
        let gamma_s = u32::try_from(report.width_ms / 1000).context("window width does not fit the header")?;
        let record = SummaryRecord::new(kind, report.window_start_ms, gamma_s, filter)?;
        let path = self.dir.join(format!("window-{}.rbbf", report.window_start_ms));
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        persistence::write_summary(&mut out, &record)?;
        match staged {
            Some(mut s) => {
                s.body.flush()?;
                drop(s.body);
                io::copy(&mut File::open(&s.path)?, &mut out)?;
                fs::remove_file(&s.path)?;
            }
            None if self.format == Format::Csv => writeln!(out, "{CSV_HEADER}")?,
            None => {}
        }
        out.flush()?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DetectStats {
    pub records: u64,
    pub events: u64,
    pub windows: u64,
    pub skipped_protocol: u64,
    pub files: Vec<PathBuf>,
}

fn report_line(r: &WindowReport, file: Option<&Path>) -> serde_json::Value {
    let c = r.counters;
    json!({
        "window_id": r.window_id,
        "window_start_ms": r.window_start_ms,
        "flows_in": c.flows_in,
        "flows_validated": c.flows_validated,
        "flows_skipped_known": c.flows_skipped_known,
        "flows_first_seen": c.flows_first_seen,
        "stale_events_dropped": c.stale_events_dropped,
        "node_observations": c.node_observations,
        "nodes_promoted": c.nodes_promoted,
        "r_d_estimate": c.distinct_ratio_estimate(),
        "b2_fill": r.b2.fill_ratio(),
        "file": file.map(|p| p.display().to_string()),
    })
}

pub fn cmd_detect(args: &DetectArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<DetectStats> {
    let eff = args.config.resolve()?;
    emit(err, json!({ "config": eff.to_json() }))?;
    let mut pipeline = Pipeline::new(eff.pipeline)?;
    let mut files = match &args.output {
        Some(dir) => Some(WindowFiles::new(dir, args, &eff.pipeline)?),
        None => None,
    };
    let mut stats = DetectStats::default();
    let flush = |reports: Vec<WindowReport>, files: &mut Option<WindowFiles>, stats: &mut DetectStats, err: &mut dyn Write| -> Result<()> {
        for r in reports {
            let path = match files {
                Some(f) => Some(f.close(&r)?),
                None => None,
            };
            emit(err, report_line(&r, path.as_deref()))?;
            stats.windows += 1;
            stats.files.extend(path);
        }
        Ok(())
    };
    stats.skipped_protocol = for_each_record(&args.inputs, |r| {
        stats.records += 1;
        if let Some(f) = &mut files {
            f.add(&r)?;
        }
        for e in pipeline.process_flow(&r)?.events {
            stats.events += 1;
            emit(out, e.to_json())?;
        }
        flush(pipeline.drain_reports(), &mut files, &mut stats, err)
    })?;
    let (reports, _) = pipeline.finalize();
    flush(reports, &mut files, &mut stats, err)?;
    emit(
        err,
        json!({ "final": { "records": stats.records, "events": stats.events, "windows": stats.windows,
                "skipped_protocol": stats.skipped_protocol } }),
    )?;
    out.flush()?;
    Ok(stats)
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    /// End-node tuple `addr:port/proto` or a bare address
    pub key: String,
    /// Data files with summary headers
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Scan the bodies of matching files to confirm
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileVerdict {
    pub file: PathBuf,
    pub summary_match: Option<bool>,
    pub confirmed: Option<bool>,
    pub bytes_read: u64,
    pub error: Option<String>,
}

/// Serialized query key: a 19-byte tuple or a 16-byte address.
pub fn parse_query_key(s: &str) -> rbbf::Result<Vec<u8>> {
    if s.contains('/') {
        Ok(s.parse::<EndNodeTuple>()?.to_bytes().to_vec())
    } else {
        let a: IpAddr = s
            .trim_matches(|c| c == '[' || c == ']')
            .parse()
            .map_err(|_| rbbf::Error::InvalidArgument(format!("{s:?} is neither a tuple nor an address")))?;
        Ok(address_key(a).to_vec())
    }
}

pub fn cmd_query(args: &QueryArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Vec<FileVerdict>> {
    let key = parse_query_key(&args.key)?;
    let checks = persistence::filter_files(&args.files, &key);
    let mut verdicts = Vec::with_capacity(checks.len());
    let mut first_error = None;
    for c in checks {
        let mut v = FileVerdict {
            file: c.path.clone(),
            summary_match: None,
            confirmed: None,
            bytes_read: c.bytes_read,
            error: None,
        };
        match c.verdict {
            Ok(hit) => {
                v.summary_match = Some(hit);
                if hit {
                    writeln!(out, "{}", c.path.display())?;
                    if args.verify {
                        let (_, body) = persistence::open_data_file(&c.path)?;
                        v.confirmed = Some(persistence::body_contains(body, &key)?);
                    }
                }
            }
            Err(e) => {
                v.error = Some(e.to_string());
                first_error.get_or_insert(e);
            }
        }
        emit(err, serde_json::to_value(&v)?)?;
        verdicts.push(v);
    }
    out.flush()?;
    if let Some(e) = first_error {
        return Err(anyhow::Error::new(e).context("some files could not be checked"));
    }
    Ok(verdicts)
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stream length in seconds
    #[arg(long, default_value_t = 1800.0)]
    pub duration: f64,
    /// Share of bidirectional sessions (default: largest feasible)
    #[arg(long)]
    pub bidirectional: Option<f64>,
    /// Planted services
    #[arg(long, default_value_t = 0)]
    pub services: usize,
    /// Clients per planted service
    #[arg(long, default_value_t = 3)]
    pub clients: u32,
    /// Share of bidirectional sessions forced across a window boundary
    #[arg(long, default_value_t = 0.0)]
    pub straddle: f64,
    #[arg(long, default_value_t = 0.0)]
    pub port_reuse: f64,
    /// Probability mass of the long-gap tail
    #[arg(long, default_value_t = 0.05)]
    pub tail_weight: f64,
    /// Full generator config as JSON; other generator flags are ignored
    #[arg(long)]
    pub synth_config: Option<PathBuf>,
}

impl SynthArgs {
    pub fn to_config(&self, flows_per_window: f64, r_d: f64) -> Result<SynthConfig> {
        if let Some(p) = &self.synth_config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| rbbf::Error::Config(e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        let mut cfg = SynthConfig::for_distinct_ratio(self.seed, r_d);
        if let Some(b) = self.bidirectional {
            cfg.bidirectional_fraction = b;
        }
        cfg.duration_s = self.duration;
        cfg.flows_per_window = flows_per_window;
        cfg.services = vec![ServiceSpec { clients: self.clients, ..ServiceSpec::default() }; self.services];
        cfg.straddle_fraction = self.straddle;
        cfg.port_reuse = self.port_reuse;
        cfg.gap.tail_weight = self.tail_weight;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    /// Flow files to replay; a synthetic stream is generated when absent
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutput {
    pub config: serde_json::Value,
    pub report: ComparisonReport,
    pub node_fp_rate: f64,
    pub node_fp_bound: f64,
    pub node_fp_estimate: f64,
    pub memory_ratio: f64,
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<BenchOutput> {
    let eff = args.config.resolve()?;
    let report = if args.inputs.is_empty() {
        let cfg = args.synth.to_config(eff.flows_per_window, eff.r_d)?;
        compare_runs(SynthStream::new(cfg)?.map(|l| l.record), eff.pipeline)?
    } else {
        let mut records = Vec::new();
        for_each_record(&args.inputs, |r| {
            records.push(r);
            Ok(())
        })?;
        compare_runs(records, eff.pipeline)?
    };
    let node = &eff.pipeline.node;
    let bound = rbbf_fp_bound(
        node.k as u32,
        node.m as f64,
        node.windows as u32,
        report.node.mean_per_window(),
        report.node.distinct_ratio().max(f64::MIN_POSITIVE),
    );
    let result = BenchOutput {
        config: eff.to_json(),
        node_fp_rate: report.node.fp_rate(),
        node_fp_bound: bound.cap,
        node_fp_estimate: bound.estimate,
        memory_ratio: report.exact_bytes as f64 / report.approx_bytes.max(1) as f64,
        report,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?;
    out.flush()?;
    let fn_total = result.report.flow.false_negatives + result.report.node.false_negatives;
    if fn_total > 0 {
        return Err(FalseNegatives(fn_total).into());
    }
    Ok(result)
}

#[derive(Args, Debug, Clone)]
pub struct ParamsArgs {
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    /// Elements per window
    #[arg(short, long, default_value_t = 2.5e6)]
    pub n: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r_d: f64,
    /// Windows M of the round-robin set
    #[arg(long, default_value_t = 6)]
    pub windows_node: u32,
    /// Print JSON instead of text
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamsReport {
    pub epsilon: f64,
    pub n: f64,
    pub r_d: f64,
    pub k: u32,
    pub m_bits_per_array: u64,
    pub bbf_bits: u64,
    pub bbf_bytes: f64,
    /// `2 * round(k * log2 e) * n * r_d / 8`, the whole-bits-per-element estimate.
    pub bbf_bytes_rule_of_thumb: f64,
    pub windows: u32,
    pub rbbf_bits: u64,
    pub rbbf_bytes: f64,
    pub fp_at_capacity: f64,
}

pub fn params_report(args: &ParamsArgs) -> rbbf::Result<ParamsReport> {
    if !(args.r_d > 0.0 && args.r_d <= 1.0) {
        return Err(rbbf::Error::Config(format!("r_d must be in (0, 1], got {}", args.r_d)));
    }
    let distinct = args.n * args.r_d;
    let s = optimal_params(args.epsilon, distinct).map_err(|e| rbbf::Error::Config(e.to_string()))?;
    let bits_per_element = (s.k as f64 * std::f64::consts::LOG2_E).round();
    let rbbf_bits = 2 * (args.windows_node as u64 + 1) * s.m_min;
    Ok(ParamsReport {
        epsilon: args.epsilon,
        n: args.n,
        r_d: args.r_d,
        k: s.k,
        m_bits_per_array: s.m_min,
        bbf_bits: s.bbf_bits(),
        bbf_bytes: s.bbf_bits() as f64 / 8.0,
        bbf_bytes_rule_of_thumb: 2.0 * bits_per_element * distinct / 8.0,
        windows: args.windows_node,
        rbbf_bits,
        rbbf_bytes: rbbf_bits as f64 / 8.0,
        fp_at_capacity: rbbf::fp_rate_classic(s.k, s.m_min as f64, distinct),
    })
}

pub fn cmd_params(args: &ParamsArgs, out: &mut dyn Write) -> Result<ParamsReport> {
    let r = params_report(args)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&r)?)?;
    } else {
        let mb = |b: f64| b / 1e6;
        writeln!(out, "epsilon            {}", r.epsilon)?;
        writeln!(out, "elements           {} (r_d {}, {} distinct)", r.n, r.r_d, r.n * r.r_d)?;
        writeln!(out, "k                  {}", r.k)?;
        writeln!(out, "m per array        {} bits", r.m_bits_per_array)?;
        writeln!(out, "BBF total          {} bits = {:.6} MB", r.bbf_bits, mb(r.bbf_bytes))?;
        writeln!(out, "BBF rule of thumb  {:.6} MB", mb(r.bbf_bytes_rule_of_thumb))?;
        writeln!(out, "RBBF(M={}) total    {} bits = {:.6} MB", r.windows, r.rbbf_bits, mb(r.rbbf_bytes))?;
        writeln!(out, "FP at capacity     {:.6}", r.fp_at_capacity)?;
    }
    Ok(r)
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 100_000.0)]
    pub flows_per_window: f64,
    #[arg(long, default_value_t = 0.5)]
    pub r_d: f64,
    /// Stream destination; '-' writes standard output
    #[arg(long, default_value = "-")]
    pub output: PathBuf,
    /// Ground-truth sidecar (default: <output>.truth.json)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Include one label per record in the sidecar
    #[arg(long)]
    pub labels: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

pub fn cmd_gen(args: &GenArgs, stdout: &mut dyn Write) -> Result<serde_json::Value> {
    let cfg = args.synth.to_config(args.flows_per_window, args.r_d)?;
    let mut stream = SynthStream::new(cfg.clone())?;
    let to_stdout = args.output.as_os_str() == "-";
    let mut file_out;
    let w: &mut dyn Write = if to_stdout {
        stdout
    } else {
        file_out = BufWriter::new(File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?);
        &mut file_out
    };
    if args.format == Format::Csv {
        writeln!(w, "{CSV_HEADER}")?;
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut labels = Vec::new();
    let mut n = 0u64;
    for l in stream.by_ref() {
        write_record(w, &l.record, args.format)?;
        let name = serde_json::to_value(l.label)?.as_str().unwrap_or_default().to_string();
        if args.labels {
            labels.push(name.clone());
        }
        *counts.entry(name).or_default() += 1;
        n += 1;
    }
    w.flush()?;
    let mut truth = stream.truth().to_json();
    truth["records"] = json!(n);
    truth["label_counts"] = json!(counts);
    truth["config"] = serde_json::to_value(&cfg)?;
    if args.labels {
        truth["labels"] = json!(labels);
    }
    let sidecar = match (&args.truth, to_stdout) {
        (Some(p), _) => Some(p.clone()),
        (None, false) => Some(PathBuf::from(format!("{}.truth.json", args.output.display()))),
        (None, true) => None,
    };
    if let Some(p) = sidecar {
        fs::write(&p, serde_json::to_string_pretty(&truth)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(truth)
}

/// Runs a parsed command line against the process streams.
pub fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = BufWriter::new(stdout.lock());
    let mut err = stderr.lock();
    match &cli.command {
        Command::Detect(a) => cmd_detect(a, &mut out, &mut err).map(drop),
        Command::Query(a) => cmd_query(a, &mut out, &mut err).map(drop),
        Command::Bench(a) => cmd_bench(a, &mut out).map(drop),
        Command::Params(a) => cmd_params(a, &mut out).map(drop),
        Command::Gen(a) => cmd_gen(a, &mut out).map(drop),
    }?;
    out.flush()?;
    Ok(())
}

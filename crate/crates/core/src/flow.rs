//! Flow keys, end-node tuples and the text interchange format for decoded
//! flow records.
//!
//! CSV schema (one record per line, optional header, `#` comments):
//!
//! ```text
//! start_ms,end_ms,src_addr,src_port,dst_addr,dst_port,proto,packets,bytes
//! 0,1000,10.0.0.1,50000,10.0.0.2,80,tcp,3,180
//! ```
//!
//! JSONL lines carry the same field names; `proto` may be a number or
//! `"tcp"`/`"udp"`. Only TCP (6) and UDP (17) are analysed; other protocols
//! are reported as skipped rather than failing the stream.

use std::fmt;
use std::io::BufRead;
use std::net::{IpAddr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Serialized flow key length: 320 bits.
pub const FLOW_KEY_LEN: usize = 40;
/// Serialized end-node tuple length.
pub const END_NODE_LEN: usize = 19;

pub const CSV_HEADER: &str = "start_ms,end_ms,src_addr,src_port,dst_addr,dst_port,proto,packets,bytes";

/// IPv4 addresses are held in IPv4-mapped form (`::ffff:a.b.c.d`).
pub fn to_v6(addr: IpAddr) -> Ipv6Addr {
    match addr {
        IpAddr::V4(a) => a.to_ipv6_mapped(),
        IpAddr::V6(a) => a,
    }
}

/// Prints mapped IPv4 addresses in dotted form.
pub fn display_addr(addr: &Ipv6Addr) -> String {
    match addr.to_ipv4_mapped() {
        Some(v4) => v4.to_string(),
        None => addr.to_string(),
    }
}

pub fn parse_addr(s: &str) -> Result<Ipv6Addr, String> {
    let s = s.trim().trim_start_matches('[').trim_end_matches(']');
    IpAddr::from_str(s).map(to_v6).map_err(|_| format!("bad address {s:?}"))
}

pub fn parse_proto(s: &str) -> Result<u8, String> {
    let s = s.trim();
    match s.to_ascii_lowercase().as_str() {
        "tcp" => Ok(PROTO_TCP),
        "udp" => Ok(PROTO_UDP),
        other => other.parse::<u8>().map_err(|_| format!("unknown protocol {s:?}")),
    }
}

fn proto_name(p: u8) -> String {
    match p {
        PROTO_TCP => "tcp".into(),
        PROTO_UDP => "udp".into(),
        n => n.to_string(),
    }
}

/// Unidirectional 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_addr: Ipv6Addr,
    pub dst_addr: Ipv6Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub fn new(src: (IpAddr, u16), dst: (IpAddr, u16), proto: u8) -> Self {
        Self {
            src_addr: to_v6(src.0),
            dst_addr: to_v6(dst.0),
            src_port: src.1,
            dst_port: dst.1,
            proto,
        }
    }

    /// The same flow seen from the other side.
    pub fn conjugate(&self) -> Self {
        Self {
            src_addr: self.dst_addr,
            dst_addr: self.src_addr,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }

    /// `(source side, destination side)`.
    pub fn end_nodes(&self) -> (EndNodeTuple, EndNodeTuple) {
        (
            EndNodeTuple { addr: self.src_addr, port: self.src_port, proto: self.proto },
            EndNodeTuple { addr: self.dst_addr, port: self.dst_port, proto: self.proto },
        )
    }

    /// `src_addr(16) | dst_addr(16) | src_port(2 BE) | dst_port(2 BE) | proto(1) | 0(3)`.
    pub fn to_bytes(&self) -> [u8; FLOW_KEY_LEN] {
        let mut out = [0u8; FLOW_KEY_LEN];
        out[0..16].copy_from_slice(&self.src_addr.octets());
        out[16..32].copy_from_slice(&self.dst_addr.octets());
        out[32..34].copy_from_slice(&self.src_port.to_be_bytes());
        out[34..36].copy_from_slice(&self.dst_port.to_be_bytes());
        out[36] = self.proto;
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != FLOW_KEY_LEN {
            return Err(Error::Format(format!("flow key must be {FLOW_KEY_LEN} bytes, got {}", b.len())));
        }
        if b[37..].iter().any(|&x| x != 0) {
            return Err(Error::Format("flow key padding must be zero".into()));
        }
        let addr = |r: &[u8]| Ipv6Addr::from(<[u8; 16]>::try_from(r).unwrap());
        Ok(Self {
            src_addr: addr(&b[0..16]),
            dst_addr: addr(&b[16..32]),
            src_port: u16::from_be_bytes([b[32], b[33]]),
            dst_port: u16::from_be_bytes([b[34], b[35]]),
            proto: b[36],
        })
    }

    /// The smaller of the two orientations' serializations; a flow and its
    /// conjugate share it.
    pub fn canonical_bytes(&self) -> [u8; FLOW_KEY_LEN] {
        let a = self.to_bytes();
        let b = self.conjugate().to_bytes();
        a.min(b)
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, d) = self.end_nodes();
        write!(f, "{s} -> {d}")
    }
}

/// One side of a flow: `{addr, port, proto}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EndNodeTuple {
    pub addr: Ipv6Addr,
    pub port: u16,
    pub proto: u8,
}

impl EndNodeTuple {
    pub fn new(addr: IpAddr, port: u16, proto: u8) -> Self {
        Self { addr: to_v6(addr), port, proto }
    }

    /// `addr(16) | port(2 BE) | proto(1)`.
    pub fn to_bytes(&self) -> [u8; END_NODE_LEN] {
        let mut out = [0u8; END_NODE_LEN];
        out[0..16].copy_from_slice(&self.addr.octets());
        out[16..18].copy_from_slice(&self.port.to_be_bytes());
        out[18] = self.proto;
        out
    }
}

/// `addr:port/proto`, with IPv6 addresses bracketed: `[2001:db8::1]:80/tcp`.
impl fmt::Display for EndNodeTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.addr.to_ipv4_mapped() {
            Some(v4) => write!(f, "{v4}:{}/{}", self.port, proto_name(self.proto)),
            None => write!(f, "[{}]:{}/{}", self.addr, self.port, proto_name(self.proto)),
        }
    }
}

impl FromStr for EndNodeTuple {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("end-node tuple {s:?}: {m}"));
        let (hostport, proto) = s.rsplit_once('/').ok_or_else(|| bad("expected addr:port/proto".into()))?;
        let (host, port) = hostport.rsplit_once(':').ok_or_else(|| bad("missing port".into()))?;
        let addr = parse_addr(host).map_err(bad)?;
        let port = port.parse::<u16>().map_err(|_| bad(format!("bad port {port:?}")))?;
        let proto = parse_proto(proto).map_err(bad)?;
        Ok(Self { addr, port, proto })
    }
}

/// A decoded unidirectional flow record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub start_ms: u64,
    pub end_ms: u64,
    pub packets: u64,
    pub bytes: u64,
}

impl FlowRecord {
    /// One CSV line (no trailing newline) in the interchange schema.
    pub fn to_csv(&self) -> String {
        let k = &self.key;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.start_ms,
            self.end_ms,
            display_addr(&k.src_addr),
            k.src_port,
            display_addr(&k.dst_addr),
            k.dst_port,
            proto_name(k.proto),
            self.packets,
            self.bytes
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&JsonFlow::from(self)).expect("flow record serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct JsonFlow {
    start_ms: u64,
    end_ms: u64,
    src_addr: String,
    src_port: u16,
    dst_addr: String,
    dst_port: u16,
    proto: serde_json::Value,
    packets: u64,
    bytes: u64,
}

impl From<&FlowRecord> for JsonFlow {
    fn from(r: &FlowRecord) -> Self {
        JsonFlow {
            start_ms: r.start_ms,
            end_ms: r.end_ms,
            src_addr: display_addr(&r.key.src_addr),
            src_port: r.key.src_port,
            dst_addr: display_addr(&r.key.dst_addr),
            dst_port: r.key.dst_port,
            proto: r.key.proto.into(),
            packets: r.packets,
            bytes: r.bytes,
        }
    }
}

fn build_record(
    line: usize,
    start_ms: u64,
    end_ms: u64,
    src: (&str, u16),
    dst: (&str, u16),
    proto: &str,
    packets: u64,
    bytes: u64,
) -> Result<FlowRecord> {
    let perr = |msg: String| Error::Parse { line, msg };
    let proto_num = parse_proto(proto).map_err(|_| Error::UnsupportedProtocol {
        line,
        proto: proto.trim().to_string(),
    })?;
    if proto_num != PROTO_TCP && proto_num != PROTO_UDP {
        return Err(Error::UnsupportedProtocol { line, proto: proto.trim().to_string() });
    }
    if end_ms < start_ms {
        return Err(perr(format!("end_ms {end_ms} precedes start_ms {start_ms}")));
    }
    if packets == 0 {
        return Err(perr("packets must be at least 1".into()));
    }
    Ok(FlowRecord {
        key: FlowKey {
            src_addr: parse_addr(src.0).map_err(perr)?,
            dst_addr: parse_addr(dst.0).map_err(perr)?,
            src_port: src.1,
            dst_port: dst.1,
            proto: proto_num,
        },
        start_ms,
        end_ms,
        packets,
        bytes,
    })
}

/// Parses one CSV line of the interchange schema. `line` is the 1-based
/// line number used in errors.
pub fn parse_flow_line(text: &str, line: usize) -> Result<FlowRecord> {
    let fields: Vec<&str> = text.trim().split(',').map(str::trim).collect();
    if fields.len() != 9 {
        return Err(Error::Parse { line, msg: format!("expected 9 fields, found {}", fields.len()) });
    }
    let num = |i: usize, name: &str| -> Result<u64> {
        fields[i]
            .parse::<u64>()
            .map_err(|_| Error::Parse { line, msg: format!("bad {name} {:?}", fields[i]) })
    };
    let port = |i: usize, name: &str| -> Result<u16> {
        fields[i]
            .parse::<u16>()
            .map_err(|_| Error::Parse { line, msg: format!("bad {name} {:?}", fields[i]) })
    };
    build_record(
        line,
        num(0, "start_ms")?,
        num(1, "end_ms")?,
        (fields[2], port(3, "src_port")?),
        (fields[4], port(5, "dst_port")?),
        fields[6],
        num(7, "packets")?,
        num(8, "bytes")?,
    )
}

/// Parses one JSONL line with the interchange field names.
pub fn parse_flow_json(text: &str, line: usize) -> Result<FlowRecord> {
    let j: JsonFlow =
        serde_json::from_str(text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
    let proto = match &j.proto {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.to_string(),
        other => return Err(Error::Parse { line, msg: format!("bad proto {other}") }),
    };
    build_record(
        line,
        j.start_ms,
        j.end_ms,
        (&j.src_addr, j.src_port),
        (&j.dst_addr, j.dst_port),
        &proto,
        j.packets,
        j.bytes,
    )
}

/// Streams records from CSV or JSONL text. Blank lines, `#` comments and a
/// CSV header are ignored; records with out-of-scope protocols are counted
/// in [`FlowReader::skipped`] and not yielded.
pub struct FlowReader<R> {
    inner: R,
    line: usize,
    buf: String,
    skipped: u64,
}

impl<R: BufRead> FlowReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, line: 0, buf: String::new(), skipped: 0 }
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

impl<R: BufRead> Iterator for FlowReader<R> {
    type Item = Result<FlowRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let t = self.buf.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("start_ms") {
                continue;
            }
            let parsed = if t.starts_with('{') {
                parse_flow_json(t, self.line)
            } else {
                parse_flow_line(t, self.line)
            };
            match parsed {
                Err(Error::UnsupportedProtocol { .. }) => self.skipped += 1,
                other => return Some(other),
            }
        }
    }
}

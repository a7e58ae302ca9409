//! Summary records: a Bloom bit array stored as a data-file header so a file
//! can be skipped without scanning its body.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4  "RBBF"
//! version  u16
//! kind     u8   1 = node-stage remembering array, 2 = address set
//! m        u32  bit count
//! k        u8
//! ids      k × u8   hash algorithm ids
//! seeds    k × u64
//! start    u64  window start, epoch ms
//! gamma    u32  window width, seconds
//! bits     ceil(m / 8) bytes
//! ```
//!
//! A data file is a record followed by flow records in the CSV interchange
//! format.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use crate::bloom::BloomFilter;
use crate::error::{Error, Result};
use crate::flow::{to_v6, FlowReader, FlowRecord, END_NODE_LEN};
use crate::hash::{HashAlgorithm, HashFamily, HashMember};

pub const MAGIC: [u8; 4] = *b"RBBF";
pub const VERSION: u16 = 1;
pub const ADDRESS_KEY_LEN: usize = 16;

/// Bytes before the per-member fields.
const FIXED_PREFIX: usize = 4 + 2 + 1 + 4 + 1;
const FIXED_SUFFIX: usize = 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    NodeB2 = 1,
    AddressSet = 2,
}

impl SummaryKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::NodeB2),
            2 => Some(Self::AddressSet),
            _ => None,
        }
    }

    /// Length of the keys the record answers for.
    pub fn key_len(self) -> usize {
        match self {
            Self::NodeB2 => END_NODE_LEN,
            Self::AddressSet => ADDRESS_KEY_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRecord {
    pub kind: SummaryKind,
    pub window_start_ms: u64,
    pub gamma_s: u32,
    pub filter: BloomFilter,
}

/// Serialized header length for `m` bits and `k` hashes.
pub fn header_len(m: u64, k: usize) -> usize {
    FIXED_PREFIX + k + 8 * k + FIXED_SUFFIX + m.div_ceil(8) as usize
}

/// Key of an address in a kind-2 record: the 16-byte IPv6 (or v4-mapped) form.
pub fn address_key(addr: IpAddr) -> [u8; ADDRESS_KEY_LEN] {
    to_v6(addr).octets()
}

impl SummaryRecord {
    pub fn new(kind: SummaryKind, window_start_ms: u64, gamma_s: u32, filter: BloomFilter) -> Result<Self> {
        if filter.m() > u32::MAX as u64 {
            return Err(Error::InvalidArgument(format!("m={} does not fit the record", filter.m())));
        }
        Ok(Self { kind, window_start_ms, gamma_s, filter })
    }

    pub fn len(&self) -> usize {
        header_len(self.filter.m(), self.filter.k())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.filter.m() as u32).to_le_bytes());
        let members = self.filter.family().members();
        out.push(members.len() as u8);
        out.extend(members.iter().map(|m| m.algorithm.id()));
        for m in members {
            out.extend_from_slice(&m.seed.to_le_bytes());
        }
        out.extend_from_slice(&self.window_start_ms.to_le_bytes());
        out.extend_from_slice(&self.gamma_s.to_le_bytes());
        out.extend_from_slice(self.filter.as_bytes());
        out
    }

    /// Membership estimate for a key serialized for this record's kind.
    pub fn query(&self, key: &[u8]) -> Result<bool> {
        let want = self.kind.key_len();
        if key.len() != want {
            return Err(Error::InvalidArgument(format!(
                "{:?} record takes {want}-byte keys, got {}",
                self.kind,
                key.len()
            )));
        }
        self.filter.contains(key)
    }
}

pub fn write_summary<W: Write>(sink: &mut W, record: &SummaryRecord) -> Result<usize> {
    let bytes = record.to_bytes();
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated summary record".into()),
        _ => Error::Io(e),
    })
}

/// Reads exactly one record and nothing past it.
pub fn read_summary<R: Read>(source: &mut R) -> Result<SummaryRecord> {
    let mut head = [0u8; FIXED_PREFIX];
    read_exact_or_format(source, &mut head)?;
    if head[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &head[0..4])));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, this reader supports {VERSION}")));
    }
    let kind = SummaryKind::from_u8(head[6]).ok_or_else(|| Error::Format(format!("unknown kind {}", head[6])))?;
    let m = u32::from_le_bytes(head[7..11].try_into().unwrap()) as u64;
    let k = head[11] as usize;
    let mut rest = vec![0u8; k + 8 * k + FIXED_SUFFIX];
    read_exact_or_format(source, &mut rest)?;
    let mut members = Vec::with_capacity(k);
    for i in 0..k {
        let algorithm = HashAlgorithm::from_id(rest[i])
            .ok_or_else(|| Error::Format(format!("unknown hash id {}", rest[i])))?;
        let at = k + 8 * i;
        let seed = u64::from_le_bytes(rest[at..at + 8].try_into().unwrap());
        members.push(HashMember { algorithm, seed });
    }
    let family = HashFamily::from_members(members).map_err(|e| Error::Format(e.to_string()))?;
    let at = 9 * k;
    let window_start_ms = u64::from_le_bytes(rest[at..at + 8].try_into().unwrap());
    let gamma_s = u32::from_le_bytes(rest[at + 8..at + 12].try_into().unwrap());
    let mut bits = vec![0u8; m.div_ceil(8) as usize];
    read_exact_or_format(source, &mut bits)?;
    let filter = BloomFilter::from_bytes(m, family, bits).map_err(|e| Error::Format(e.to_string()))?;
    Ok(SummaryRecord { kind, window_start_ms, gamma_s, filter })
}

/// Reader wrapper that counts bytes pulled from the inner reader.
#[derive(Debug)]
pub struct CountingReader<R> {
    inner: R,
    count: u64,
}

impl<R> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, count: 0 }
    }

    pub fn bytes_read(&self) -> u64 {
        self.count
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count += n as u64;
        Ok(n)
    }
}

/// Writes a data file: the record, then the CSV body.
pub fn write_data_file<'a>(
    path: &Path,
    record: &SummaryRecord,
    body: impl IntoIterator<Item = &'a FlowRecord>,
) -> Result<()> {
    let mut w = io::BufWriter::new(File::create(path)?);
    write_summary(&mut w, record)?;
    writeln!(w, "{}", crate::flow::CSV_HEADER)?;
    for r in body {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()?;
    Ok(())
}

/// Opens a data file, returning its header and a reader over the body.
pub fn open_data_file(path: &Path) -> Result<(SummaryRecord, FlowReader<BufReader<File>>)> {
    let mut f = File::open(path)?;
    let record = read_summary(&mut f)?;
    Ok((record, FlowReader::new(BufReader::new(f))))
}

/// Kind-2 filter holding every address seen in `records`.
pub fn address_summary<'a>(
    records: impl IntoIterator<Item = &'a FlowRecord>,
    m: u64,
    family: HashFamily,
) -> Result<BloomFilter> {
    let mut f = BloomFilter::new(m, family)?;
    for r in records {
        f.insert(&r.key.src_addr.octets())?;
        f.insert(&r.key.dst_addr.octets())?;
    }
    Ok(f)
}

#[derive(Debug)]
pub struct FileCheck {
    pub path: PathBuf,
    pub verdict: Result<bool>,
    pub bytes_read: u64,
}

/// Checks each file's header for `key`. Only headers are read; a file that
/// cannot be read or parsed gets an error verdict and the rest carry on.
pub fn filter_files<P: AsRef<Path>>(paths: &[P], key: &[u8]) -> Vec<FileCheck> {
    paths
        .iter()
        .map(|p| {
            let path = p.as_ref().to_path_buf();
            match File::open(&path) {
                Err(e) => FileCheck { path, verdict: Err(e.into()), bytes_read: 0 },
                Ok(f) => {
                    let mut r = CountingReader::new(f);
                    let verdict = read_summary(&mut r).and_then(|rec| rec.query(key));
                    FileCheck { path, verdict, bytes_read: r.bytes_read() }
                }
            }
        })
        .collect()
}

/// Paths of the checks that came back positive.
pub fn matching(checks: &[FileCheck]) -> Vec<&Path> {
    checks
        .iter()
        .filter(|c| matches!(c.verdict, Ok(true)))
        .map(|c| c.path.as_path())
        .collect()
}

/// Scans a body for records touching `key` (a tuple or an address key).
pub fn body_contains<R: BufRead>(reader: FlowReader<R>, key: &[u8]) -> Result<bool> {
    for r in reader {
        let r = r?;
        let (a, b) = r.key.end_nodes();
        let hit = match key.len() {
            END_NODE_LEN => a.to_bytes() == key || b.to_bytes() == key,
            ADDRESS_KEY_LEN => r.key.src_addr.octets() == key || r.key.dst_addr.octets() == key,
            n => return Err(Error::InvalidArgument(format!("no key kind is {n} bytes long"))),
        };
        if hit {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{EndNodeTuple, FlowKey, PROTO_TCP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    fn record(m: u64, k: usize) -> SummaryRecord {
        let f = BloomFilter::new(m, HashFamily::standard(k).unwrap()).unwrap();
        SummaryRecord::new(SummaryKind::NodeB2, 1_700_000_000_000, 300, f).unwrap()
    }

    #[test]
    fn header_size() {
        let r = record(64, 5);
        assert_eq!(r.to_bytes().len(), 77);
        assert_eq!(header_len(64, 5), 77);
        let mut buf = Vec::new();
        assert_eq!(write_summary(&mut buf, &r).unwrap(), 77);
        assert_eq!(&buf[..4], b"RBBF");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 1);
        assert_eq!(&buf[7..11], &64u32.to_le_bytes());
        assert_eq!(buf[11], 5);
        assert_eq!(&buf[12..17], &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &m in &[64u64, 1_000_000, 77] {
            for k in 1..=8 {
                let mut f = BloomFilter::new(m, HashFamily::standard(k).unwrap()).unwrap();
                for _ in 0..rng.gen_range(0..500) {
                    let key: [u8; 19] = crate::testutil::random_key(&mut rng);
                    f.insert(&key).unwrap();
                }
                let r = SummaryRecord::new(SummaryKind::NodeB2, rng.gen(), rng.gen(), f).unwrap();
                let bytes = r.to_bytes();
                let back = read_summary(&mut bytes.as_slice()).unwrap();
                assert_eq!(back, r);
                assert_eq!(back.to_bytes(), bytes);
            }
        }
    }

    #[test]
    fn zero_array_rejects_everything() {
        let r = record(64, 5);
        let back = read_summary(&mut r.to_bytes().as_slice()).unwrap();
        for i in 0..100u8 {
            assert!(!back.query(&[i; 19]).unwrap());
        }
    }

    #[test]
    fn malformed_headers() {
        let good = record(64, 3).to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_summary(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        match read_summary(&mut bad.as_slice()) {
            Err(Error::Format(msg)) => assert!(msg.contains('9') && msg.contains('1'), "{msg}"),
            other => panic!("{other:?}"),
        }
        for cut in [3, 11, 20, good.len() - 1] {
            assert!(matches!(read_summary(&mut &good[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = good.clone();
        bad[6] = 7;
        assert!(read_summary(&mut bad.as_slice()).is_err());
        let mut bad = good;
        bad[12] = 42;
        assert!(read_summary(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn key_length_checked() {
        let r = record(64, 3);
        assert!(r.query(&[0; 16]).is_err());
        let a = SummaryRecord { kind: SummaryKind::AddressSet, ..r };
        assert!(a.query(&[0; 19]).is_err());
        assert!(!a.query(&[0; 16]).unwrap());
    }

    #[test]
    fn reader_stops_at_header_end() {
        let r = record(128, 4);
        let mut bytes = r.to_bytes();
        bytes.extend_from_slice(b"trailing body");
        let mut c = CountingReader::new(bytes.as_slice());
        read_summary(&mut c).unwrap();
        assert_eq!(c.bytes_read() as usize, r.len());
    }

    #[test]
    fn data_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.rbbf");
        let key = FlowKey::new(
            (IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)), 40000),
            (IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)), 80),
            PROTO_TCP,
        );
        let recs = [FlowRecord { key, start_ms: 5, end_ms: 9, packets: 2, bytes: 100 }];
        let f = address_summary(&recs, 1024, HashFamily::standard(5).unwrap()).unwrap();
        let rec = SummaryRecord::new(SummaryKind::AddressSet, 0, 300, f).unwrap();
        write_data_file(&path, &rec, &recs).unwrap();
        let (back, body) = open_data_file(&path).unwrap();
        assert_eq!(back, rec);
        let rows: Vec<_> = body.collect::<Result<_>>().unwrap();
        assert_eq!(rows, recs);
        let addr = address_key(IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)));
        assert!(back.query(&addr).unwrap());
        let checks = filter_files(&[path.clone(), dir.path().join("missing")], &addr);
        assert_eq!(matching(&checks), vec![path.as_path()]);
        assert!(checks[1].verdict.is_err());
        assert_eq!(checks[0].bytes_read as usize, rec.len());

        let (_, body) = open_data_file(&path).unwrap();
        let tuple = EndNodeTuple::new(IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)), 80, PROTO_TCP);
        assert!(body_contains(body, &tuple.to_bytes()).unwrap());
    }
}

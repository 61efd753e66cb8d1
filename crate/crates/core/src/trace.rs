//! Block I/O traces: parsing, windowing, per-window features and synthetic
//! trace generation.
//!
//! The text format is one request per line:
//!
//! ```text
//! <timestamp_ns> <device_id> <lba_sectors> <size_bytes> <R|W>
//! ```
//!
//! Fields are separated by spaces or tabs. Lines starting with `#` and blank
//! lines are skipped.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per logical sector.
pub const SECTOR_BYTES: u64 = 512;

/// Default number of requests per window.
pub const DEFAULT_WINDOW_SIZE: usize = 3000;

/// Number of equal-width LBA bins used for the entropy feature.
pub const LBA_BINS: usize = 64;

/// Number of scalar features extracted from a window.
pub const FEATURE_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("empty trace")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps not monotone at line {line}")]
    NotMonotone { line: usize },
    #[error("trace too short for one window")]
    TooShort,
    #[error("window size must be positive")]
    ZeroWindow,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

/// One block I/O request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IoRecord {
    /// Nanoseconds since the start of the trace.
    pub timestamp_ns: u64,
    pub device_id: u32,
    /// Start address in 512-byte sectors.
    pub lba: u64,
    /// Request length in bytes; a positive multiple of 512.
    pub size: u32,
    pub op: Op,
}

impl IoRecord {
    /// First sector past the end of this request.
    pub fn end_lba(&self) -> u64 {
        self.lba + u64::from(self.size) / SECTOR_BYTES
    }

    pub fn is_read(&self) -> bool {
        self.op == Op::Read
    }
}

/// Parses a whole trace. Timestamps are rebased so the first record is at 0.
pub fn parse_trace<R: BufRead>(input: R) -> Result<Vec<IoRecord>, TraceError> {
    let mut records = Vec::new();
    let mut prev_ts: Option<u64> = None;
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record = parse_line(trimmed, line_no)?;
        if let Some(prev) = prev_ts {
            if record.timestamp_ns < prev {
                return Err(TraceError::NotMonotone { line: line_no });
            }
        }
        prev_ts = Some(record.timestamp_ns);
        records.push(record);
    }
    let Some(first) = records.first().map(|r| r.timestamp_ns) else {
        return Err(TraceError::Empty);
    };
    for r in &mut records {
        r.timestamp_ns -= first;
    }
    Ok(records)
}

pub fn parse_trace_str(input: &str) -> Result<Vec<IoRecord>, TraceError> {
    parse_trace(input.as_bytes())
}

fn parse_line(line: &str, line_no: usize) -> Result<IoRecord, TraceError> {
    let err = |message: String| TraceError::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split([' ', '\t']).filter(|f| !f.is_empty()).collect();
    if fields.len() != 5 {
        return Err(err(format!("expected 5 fields, found {}", fields.len())));
    }
    let num = |s: &str, what: &str| -> Result<u64, TraceError> {
        s.parse::<u64>()
            .map_err(|_| err(format!("invalid {what} {s:?}")))
    };
    let timestamp_ns = num(fields[0], "timestamp")?;
    let device_id = u32::try_from(num(fields[1], "device id")?)
        .map_err(|_| err("device id out of range".into()))?;
    let lba = num(fields[2], "lba")?;
    let size = num(fields[3], "size")?;
    if size == 0 || size % SECTOR_BYTES != 0 {
        return Err(err(format!("size {size} is not a positive multiple of 512")));
    }
    let size = u32::try_from(size).map_err(|_| err("size out of range".into()))?;
    let op = match fields[4] {
        "R" | "r" => Op::Read,
        "W" | "w" => Op::Write,
        other => return Err(err(format!("invalid operation {other:?}"))),
    };
    Ok(IoRecord {
        timestamp_ns,
        device_id,
        lba,
        size,
        op,
    })
}

/// Writes records in the trace text format.
pub fn write_trace<W: Write>(mut out: W, records: &[IoRecord]) -> io::Result<()> {
    for r in records {
        let op = match r.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        writeln!(
            out,
            "{} {} {} {} {}",
            r.timestamp_ns, r.device_id, r.lba, r.size, op
        )?;
    }
    Ok(())
}

/// A fixed-length slice of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceWindow<'a> {
    pub window_index: usize,
    pub records: &'a [IoRecord],
}

/// Splits a trace into `floor(len / window_size)` full windows. The trailing
/// remainder is dropped.
pub fn make_windows(
    records: &[IoRecord],
    window_size: usize,
) -> Result<Vec<TraceWindow<'_>>, TraceError> {
    if window_size == 0 {
        return Err(TraceError::ZeroWindow);
    }
    if records.len() < window_size {
        return Err(TraceError::TooShort);
    }
    Ok(records
        .chunks_exact(window_size)
        .enumerate()
        .map(|(window_index, records)| TraceWindow {
            window_index,
            records,
        })
        .collect())
}

/// Summary statistics of one window; the clustering input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub read_ratio: f64,
    pub mean_io_size: f64,
    pub std_io_size: f64,
    pub mean_interarrival: f64,
    pub std_interarrival: f64,
    pub sequential_ratio: f64,
    pub lba_span: f64,
    pub lba_entropy: f64,
    pub write_working_set: f64,
    pub iops: f64,
}

impl WindowFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.read_ratio,
            self.mean_io_size,
            self.std_io_size,
            self.mean_interarrival,
            self.std_interarrival,
            self.sequential_ratio,
            self.lba_span,
            self.lba_entropy,
            self.write_working_set,
            self.iops,
        ]
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

pub fn extract_features(window: &TraceWindow<'_>) -> WindowFeatures {
    let recs = window.records;
    let n = recs.len();
    if n == 0 {
        return WindowFeatures {
            read_ratio: 0.0,
            mean_io_size: 0.0,
            std_io_size: 0.0,
            mean_interarrival: 0.0,
            std_interarrival: 0.0,
            sequential_ratio: 0.0,
            lba_span: 0.0,
            lba_entropy: 0.0,
            write_working_set: 0.0,
            iops: 0.0,
        };
    }
    let nf = n as f64;
    let reads = recs.iter().filter(|r| r.is_read()).count();
    let (mean_io_size, std_io_size) = mean_std(recs.iter().map(|r| f64::from(r.size)));
    let gaps = recs
        .windows(2)
        .map(|w| w[1].timestamp_ns.saturating_sub(w[0].timestamp_ns) as f64);
    let (mean_interarrival, std_interarrival) = mean_std(gaps);
    let sequential = recs
        .windows(2)
        .filter(|w| w[1].lba == w[0].end_lba())
        .count();

    let min_lba = recs.iter().map(|r| r.lba).min().unwrap_or(0);
    let max_lba = recs.iter().map(|r| r.lba).max().unwrap_or(0);
    let span = max_lba - min_lba;
    let lba_entropy = if span == 0 {
        0.0
    } else {
        let mut bins = [0usize; LBA_BINS];
        for r in recs {
            let pos = (r.lba - min_lba) as f64 / span as f64;
            let bin = ((pos * LBA_BINS as f64) as usize).min(LBA_BINS - 1);
            bins[bin] += 1;
        }
        bins.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.log2()
            })
            .sum::<f64>()
            .max(0.0)
    };

    let mut pages = HashSet::new();
    for r in recs.iter().filter(|r| !r.is_read()) {
        let start = r.lba * SECTOR_BYTES / 4096;
        let end = (r.lba * SECTOR_BYTES + u64::from(r.size) - 1) / 4096;
        pages.extend(start..=end);
    }

    // A zero-length window is treated as spanning 1 ns.
    let iops = if n < 2 {
        0.0
    } else {
        1e9 / mean_interarrival.max(1.0)
    };

    WindowFeatures {
        read_ratio: reads as f64 / nf,
        mean_io_size,
        std_io_size,
        mean_interarrival,
        std_interarrival,
        sequential_ratio: sequential as f64 / nf,
        lba_span: span as f64,
        lba_entropy,
        write_working_set: pages.len() as f64,
        iops,
    }
}

/// Synthetic workload shapes used in place of production traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    SeqRead,
    RandRead,
    SeqWrite,
    RandWrite,
    /// Random mixed traffic with the given fraction of reads.
    Mixed(f64),
}

impl Profile {
    /// The five profiles used throughout the test-suite.
    pub const STANDARD: [Profile; 5] = [
        Profile::SeqRead,
        Profile::RandRead,
        Profile::SeqWrite,
        Profile::RandWrite,
        Profile::Mixed(0.7),
    ];

    pub fn read_fraction(&self) -> f64 {
        match *self {
            Profile::SeqRead | Profile::RandRead => 1.0,
            Profile::SeqWrite | Profile::RandWrite => 0.0,
            Profile::Mixed(r) => r.clamp(0.0, 1.0),
        }
    }

    /// Short lowercase name, e.g. `seqread` or `mixed70`.
    pub fn name(&self) -> String {
        match *self {
            Profile::SeqRead => "seqread".into(),
            Profile::RandRead => "randread".into(),
            Profile::SeqWrite => "seqwrite".into(),
            Profile::RandWrite => "randwrite".into(),
            Profile::Mixed(r) => format!("mixed{}", (r.clamp(0.0, 1.0) * 100.0).round() as u32),
        }
    }

    fn mean_interarrival_ns(&self) -> f64 {
        match self {
            Profile::SeqRead => 8_000.0,
            Profile::RandRead => 2_000.0,
            Profile::SeqWrite => 40_000.0,
            Profile::RandWrite => 8_000.0,
            Profile::Mixed(_) => 10_000.0,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "seqread" => Ok(Profile::SeqRead),
            "randread" => Ok(Profile::RandRead),
            "seqwrite" => Ok(Profile::SeqWrite),
            "randwrite" => Ok(Profile::RandWrite),
            _ => {
                let pct = lower
                    .strip_prefix("mixed")
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| (0.0..=100.0).contains(p))
                    .ok_or_else(|| format!("unknown profile {s:?}"))?;
                Ok(Profile::Mixed(pct / 100.0))
            }
        }
    }
}

/// Random accesses are confined to the first 64 GiB of the address space.
const RANDOM_REGION_SECTORS: u64 = (64 << 30) / SECTOR_BYTES;
const SEQ_REQUEST_BYTES: u32 = 64 * 1024;

/// Deterministic synthetic trace for `profile`.
pub fn generate_synthetic_trace(profile: Profile, n: usize, seed: u64) -> Vec<IoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reads = (profile.read_fraction() * n as f64).round() as usize;
    let mut ops: Vec<Op> = (0..n)
        .map(|i| if i < reads { Op::Read } else { Op::Write })
        .collect();
    ops.shuffle(&mut rng);

    let mean_gap = profile.mean_interarrival_ns();
    let seq_sectors = u64::from(SEQ_REQUEST_BYTES) / SECTOR_BYTES;
    // Sequential streams start on a 1 MiB boundary somewhere in the region.
    let mut next_seq = rng.gen_range(0..RANDOM_REGION_SECTORS / 4) / 2048 * 2048;
    let mut ts = 0u64;
    let mut out = Vec::with_capacity(n);
    for (i, op) in ops.into_iter().enumerate() {
        if i > 0 {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            ts += (-u.ln() * mean_gap).round().max(1.0) as u64;
        }
        let (lba, size) = match profile {
            Profile::SeqRead | Profile::SeqWrite => {
                let lba = next_seq;
                next_seq += seq_sectors;
                (lba, SEQ_REQUEST_BYTES)
            }
            Profile::RandRead | Profile::RandWrite => {
                (rng.gen_range(0..RANDOM_REGION_SECTORS / 8) * 8, 4096)
            }
            Profile::Mixed(_) => {
                let size = 4096u32 << rng.gen_range(0..4u32);
                (rng.gen_range(0..RANDOM_REGION_SECTORS / 8) * 8, size)
            }
        };
        out.push(IoRecord {
            timestamp_ns: ts,
            device_id: 0,
            lba,
            size,
            op,
        });
    }
    out
}

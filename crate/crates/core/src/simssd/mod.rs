//! Deterministic event-driven SSD model used to validate configurations.
//!
//! A single virtual clock (microseconds) drives a reservation calendar for
//! every die and channel. Requests are replayed open-loop at their trace
//! timestamps, with at most `min(IOQueueDepth, QueueFetchSize)` requests in
//! service at once. Each request pays the host interface delay, then either a
//! data-cache hit or mapping-table lookups plus per-page flash operations
//! placed by the page allocation scheme. Writes are out-of-place and may
//! trigger garbage collection on the owning die.

mod ftl;
mod lru;
mod timeline;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paramspace::{names, Configuration, Constraints, FlashType, Interface, ParamSpace};
use crate::trace::{IoRecord, Op, SECTOR_BYTES};
use ftl::{Exhausted, Plane, PlaneShape};

use lru::{IntMap, Lru};
use timeline::Timeline;

/// Bytes of DRAM per cached mapping entry.
const CMT_ENTRY_BYTES: u64 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("constraint violation: raw capacity {raw} bytes outside {target} bytes +/- {tolerance}")]
    ConstraintViolation { raw: u64, target: u64, tolerance: f64 },
    #[error("capacity exhausted")]
    CapacityExhausted,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlashTiming {
    pub read_us: f64,
    pub program_us: f64,
    pub erase_us: f64,
}

/// Fixed device constants. Overridable from the catalog JSON `timing` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceTiming {
    pub slc: FlashTiming,
    pub mlc: FlashTiming,
    pub tlc: FlashTiming,
    pub nvme_delay_us: f64,
    pub sata_delay_us: f64,
    /// Channel transfer rate, MB/s (10^6 bytes).
    pub nvme_bus_mbps: f64,
    pub sata_bus_mbps: f64,
    pub cache_hit_us: f64,
    /// GC passes between static wear-leveling block swaps.
    pub wear_leveling_period: u64,
}

impl Default for DeviceTiming {
    fn default() -> Self {
        DeviceTiming {
            slc: FlashTiming {
                read_us: 25.0,
                program_us: 200.0,
                erase_us: 1500.0,
            },
            mlc: FlashTiming {
                read_us: 50.0,
                program_us: 600.0,
                erase_us: 3000.0,
            },
            tlc: FlashTiming {
                read_us: 75.0,
                program_us: 900.0,
                erase_us: 4500.0,
            },
            nvme_delay_us: 5.0,
            sata_delay_us: 25.0,
            nvme_bus_mbps: 800.0,
            sata_bus_mbps: 500.0,
            cache_hit_us: 1.0,
            wear_leveling_period: 64,
        }
    }
}

impl DeviceTiming {
    pub fn flash(&self, t: FlashType) -> FlashTiming {
        match t {
            FlashType::Slc => self.slc,
            FlashType::Mlc => self.mlc,
            FlashType::Tlc => self.tlc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_latency_us: f64,
    pub throughput_mbps: f64,
    pub total_requests: u64,
    pub gc_invocations: u64,
}

/// Internal counters exposed for testing and diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub host_pages_written: u64,
    pub gc_page_moves: u64,
    pub wear_leveling_moves: u64,
    pub pages_programmed: u64,
    pub flash_pages_read: u64,
    pub data_cache_hits: u64,
    pub cmt_misses: u64,
    pub max_data_cache_entries: usize,
    pub data_cache_capacity: usize,
    pub max_cmt_entries: usize,
    pub cmt_capacity: usize,
    pub planes_touched: usize,
    /// Every touched plane's free/valid/invalid pages sum to its capacity and
    /// match a block-level recount.
    pub accounting_consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestLatency {
    pub index: usize,
    pub op: Op,
    pub arrival_us: f64,
    pub latency_us: f64,
    pub measured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Leading fraction of requests replayed but excluded from statistics.
    pub warmup: f64,
    pub record_latencies: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            warmup: 0.1,
            record_latencies: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub result: SimResult,
    pub stats: SimStats,
    pub latencies: Option<Vec<RequestLatency>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Channel,
    Way,
    Die,
    Plane,
}

/// Concrete device settings resolved from a configuration. Parameters absent
/// from the catalog fall back to the commodity reference values.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSettings {
    pub channels: usize,
    pub chips_per_channel: usize,
    pub dies_per_chip: usize,
    pub planes_per_die: usize,
    pub blocks_per_plane: usize,
    pub pages_per_block: usize,
    pub page_size: u64,
    pub queue_depth: usize,
    pub fetch_size: usize,
    pub data_cache_bytes: u64,
    pub cmt_bytes: u64,
    pub allocation: String,
    pub overprovisioning: f64,
    pub greedy_gc: bool,
    pub static_wear_leveling: bool,
    pub sata_processing_delay_us: f64,
}

impl DeviceSettings {
    pub fn resolve(space: &ParamSpace, config: &Configuration) -> Result<Self, SimError> {
        space
            .validate(config)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let num = |name: &str, default: f64| space.value(config, name).unwrap_or(default);
        let count = |name: &str, default: f64| -> Result<usize, SimError> {
            let v = num(name, default).round();
            if v < 1.0 {
                return Err(SimError::InvalidConfig(format!("{name} must be at least 1")));
            }
            Ok(v as usize)
        };
        let allocation = space
            .label(config, names::PAGE_ALLOCATION_SCHEME)
            .unwrap_or("CWDP")
            .to_string();
        let mut letters: Vec<char> = allocation.chars().collect();
        letters.sort_unstable();
        if letters != ['C', 'D', 'P', 'W'] {
            return Err(SimError::InvalidConfig(format!(
                "allocation scheme {allocation:?} is not an ordering of C, W, D, P"
            )));
        }
        let overprovisioning = num(names::OVERPROVISIONING_RATIO, 0.20);
        if !(0.0..0.9).contains(&overprovisioning) {
            return Err(SimError::InvalidConfig(format!(
                "overprovisioning ratio {overprovisioning} out of range"
            )));
        }
        let pages_per_block = count(names::PAGE_NO_PER_BLOCK, 512.0)?;
        if pages_per_block > u16::MAX as usize {
            return Err(SimError::InvalidConfig("too many pages per block".into()));
        }
        let blocks_per_plane = count(names::BLOCK_NO_PER_PLANE, 512.0)?;
        if blocks_per_plane < 4 {
            return Err(SimError::InvalidConfig("need at least 4 blocks per plane".into()));
        }
        let page_size = count(names::PAGE_SIZE, 4096.0)? as u64;
        if !page_size.is_multiple_of(SECTOR_BYTES) {
            return Err(SimError::InvalidConfig("page size must be a multiple of 512".into()));
        }
        Ok(DeviceSettings {
            channels: count(names::FLASH_CHANNEL_COUNT, 12.0)?,
            chips_per_channel: count(names::CHIP_NO_PER_CHANNEL, 5.0)?,
            dies_per_chip: count(names::DIE_NO_PER_CHIP, 8.0)?,
            planes_per_die: count(names::PLANE_NO_PER_DIE, 1.0)?,
            blocks_per_plane,
            pages_per_block,
            page_size,
            queue_depth: count(names::IO_QUEUE_DEPTH, 8192.0)?,
            fetch_size: count(names::QUEUE_FETCH_SIZE, 3072.0)?,
            data_cache_bytes: num(names::DATA_CACHE_CAPACITY, 800e6).max(0.0) as u64,
            cmt_bytes: num(names::CMT_CAPACITY, 2.0 * 1024.0 * 1024.0).max(0.0) as u64,
            allocation,
            overprovisioning,
            greedy_gc: num(names::GREEDY_GC_ENABLED, 1.0) >= 0.5,
            static_wear_leveling: num(names::STATIC_WEAR_LEVELING_ENABLED, 1.0) >= 0.5,
            sata_processing_delay_us: num(names::SATA_PROCESSING_DELAY, 10.0),
        })
    }

    fn units(&self) -> Vec<(Unit, usize)> {
        self.allocation
            .chars()
            .map(|c| match c {
                'C' => (Unit::Channel, self.channels),
                'W' => (Unit::Way, self.chips_per_channel),
                'D' => (Unit::Die, self.dies_per_chip),
                _ => (Unit::Plane, self.planes_per_die),
            })
            .collect()
    }

    pub fn dies(&self) -> usize {
        self.channels * self.chips_per_channel * self.dies_per_chip
    }

    pub fn planes(&self) -> usize {
        self.dies() * self.planes_per_die
    }
}

#[derive(Debug, Clone, Copy)]
struct Location {
    channel: usize,
    die: usize,
    plane: usize,
}

#[derive(Debug, Clone, Copy)]
struct Time(f64);

impl PartialEq for Time {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Device<'a> {
    s: &'a DeviceSettings,
    units: Vec<(Unit, usize)>,
    flash: FlashTiming,
    bus_bytes_per_us: f64,
    cache_hit_us: f64,
    wl_period: u64,
    dies: Vec<Timeline>,
    channels: Vec<Timeline>,
    data_cache: Lru,
    /// Cached translation pages, each holding `entries_per_tpage` entries.
    cmt: Lru,
    entries_per_tpage: u64,
    shape: PlaneShape,
    planes: Vec<Option<Box<Plane>>>,
    mapping: IntMap<u64, u32>,
    logical_pages: u64,
    gc_invocations: u64,
    stats: SimStats,
}

impl<'a> Device<'a> {
    fn new(s: &'a DeviceSettings, timing: &DeviceTiming, constraints: &Constraints) -> Self {
        let bus_mbps = match constraints.interface {
            Interface::Nvme => timing.nvme_bus_mbps,
            Interface::Sata => timing.sata_bus_mbps,
        };
        let shape = PlaneShape {
            blocks: s.blocks_per_plane,
            pages_per_block: s.pages_per_block,
            overprovisioning: s.overprovisioning,
        };
        let data_cache_entries = (s.data_cache_bytes / s.page_size) as usize;
        let cmt_entries = (s.cmt_bytes / CMT_ENTRY_BYTES) as usize;
        let entries_per_tpage = (s.page_size / CMT_ENTRY_BYTES).max(1);
        Device {
            s,
            units: s.units(),
            flash: timing.flash(constraints.flash_type),
            bus_bytes_per_us: bus_mbps,
            cache_hit_us: timing.cache_hit_us,
            wl_period: timing.wear_leveling_period.max(1),
            dies: vec![Timeline::default(); s.dies()],
            channels: vec![Timeline::default(); s.channels],
            data_cache: Lru::new(data_cache_entries),
            cmt: Lru::new(cmt_entries / entries_per_tpage as usize),
            entries_per_tpage,
            shape,
            planes: (0..s.planes()).map(|_| None).collect(),
            mapping: IntMap::default(),
            logical_pages: shape.logical_pages() as u64 * s.planes() as u64,
            gc_invocations: 0,
            stats: SimStats {
                data_cache_capacity: data_cache_entries,
                cmt_capacity: cmt_entries,
                ..SimStats::default()
            },
        }
    }

    fn locate(&self, lpn: u64) -> Location {
        let mut rest = lpn;
        let (mut ch, mut way, mut die, mut plane) = (0, 0, 0, 0);
        for &(unit, radix) in &self.units {
            let digit = (rest % radix as u64) as usize;
            rest /= radix as u64;
            match unit {
                Unit::Channel => ch = digit,
                Unit::Way => way = digit,
                Unit::Die => die = digit,
                Unit::Plane => plane = digit,
            }
        }
        let die_index = (ch * self.s.chips_per_channel + way) * self.s.dies_per_chip + die;
        Location {
            channel: ch,
            die: die_index,
            plane: die_index * self.s.planes_per_die + plane,
        }
    }

    fn transfer_us(&self, bytes: u64) -> f64 {
        bytes as f64 / self.bus_bytes_per_us
    }

    fn flash_read(&mut self, die: usize, ready: f64) -> f64 {
        self.stats.flash_pages_read += 1;
        self.dies[die].reserve(ready, self.flash.read_us) + self.flash.read_us
    }

    fn transfer(&mut self, channel: usize, ready: f64, bytes: u64) -> f64 {
        let dur = self.transfer_us(bytes);
        self.channels[channel].reserve(ready, dur) + dur
    }

    /// Forgets reservations that can no longer affect requests issued at `t`.
    fn prune(&mut self, t: f64) {
        self.dies.iter_mut().for_each(|d| d.prune(t));
        self.channels.iter_mut().for_each(|c| c.prune(t));
    }

    /// Loads missing translation pages; returns when translation is complete.
    fn translate(&mut self, lpns: &[u64], start: f64) -> f64 {
        let tpages: BTreeSet<u64> = lpns.iter().map(|l| l / self.entries_per_tpage).collect();
        let mut ready = start;
        for tpn in tpages {
            if self.cmt.touch(tpn) {
                continue;
            }
            self.stats.cmt_misses += 1;
            self.cmt.insert(tpn);
            // Translation pages live in their own region, scattered over dies.
            let die = (ftl::mix64(tpn) % self.dies.len() as u64) as usize;
            ready = ready.max(self.flash_read(die, start));
        }
        let entries = self.cmt.len() * self.entries_per_tpage as usize;
        self.stats.max_cmt_entries = self.stats.max_cmt_entries.max(entries);
        ready
    }

    fn plane(&mut self, index: usize) -> &mut Plane {
        let shape = self.shape;
        self.planes[index].get_or_insert_with(|| Box::new(Plane::new(shape, index as u64)))
    }

    fn serve(&mut self, rec: &IoRecord, start: f64) -> Result<f64, SimError> {
        let page = self.s.page_size;
        let first_byte = rec.lba * SECTOR_BYTES;
        let last_byte = first_byte + u64::from(rec.size) - 1;
        let pages: Vec<(u64, u64)> = (first_byte / page..=last_byte / page)
            .map(|lpn| {
                let lo = (lpn * page).max(first_byte);
                let hi = ((lpn + 1) * page - 1).min(last_byte);
                (lpn, hi - lo + 1)
            })
            .collect();
        if pages.iter().any(|&(lpn, _)| lpn >= self.logical_pages) {
            return Err(SimError::CapacityExhausted);
        }
        let done = match rec.op {
            Op::Read => self.serve_read(&pages, start),
            Op::Write => self.serve_write(&pages, start)?,
        };
        self.stats.max_data_cache_entries =
            self.stats.max_data_cache_entries.max(self.data_cache.len());
        Ok(done)
    }

    fn serve_read(&mut self, pages: &[(u64, u64)], start: f64) -> f64 {
        let mut hit_bytes = 0;
        let mut misses = Vec::new();
        for &(lpn, bytes) in pages {
            if self.data_cache.touch(lpn) {
                self.stats.data_cache_hits += 1;
                hit_bytes += bytes;
            } else {
                misses.push((lpn, bytes));
            }
        }
        let mut done = if hit_bytes > 0 {
            start + self.cache_hit_us + self.transfer_us(hit_bytes)
        } else {
            start
        };
        if misses.is_empty() {
            return done;
        }
        let lpns: Vec<u64> = misses.iter().map(|m| m.0).collect();
        let ready = self.translate(&lpns, start);
        for (lpn, bytes) in misses {
            let loc = self.locate(lpn);
            let sensed = self.flash_read(loc.die, ready);
            let end = self.transfer(loc.channel, sensed, bytes);
            done = done.max(end);
            self.data_cache.insert(lpn);
        }
        done
    }

    fn serve_write(&mut self, pages: &[(u64, u64)], start: f64) -> Result<f64, SimError> {
        let lpns: Vec<u64> = pages.iter().map(|p| p.0).collect();
        let ready = self.translate(&lpns, start);
        let mut done = start;
        for &(lpn, bytes) in pages {
            let loc = self.locate(lpn);
            let landed = self.transfer(loc.channel, ready, bytes);
            let end = self.dies[loc.die].reserve(landed, self.flash.program_us)
                + self.flash.program_us;
            done = done.max(end);
            self.stats.host_pages_written += 1;
            self.stats.pages_programmed += 1;

            let greedy = self.s.greedy_gc;
            let mut mapping = std::mem::take(&mut self.mapping);
            let passes = self.plane(loc.plane).write(lpn, &mut mapping, greedy);
            self.mapping = mapping;
            let passes = passes.map_err(|Exhausted| SimError::CapacityExhausted)?;
            for pass in passes {
                let mut cost = pass.moved as f64 * (self.flash.read_us + self.flash.program_us)
                    + self.flash.erase_us;
                self.gc_invocations += 1;
                self.stats.gc_page_moves += pass.moved as u64;
                self.stats.pages_programmed += pass.moved as u64;
                self.stats.flash_pages_read += pass.moved as u64;
                if self.s.static_wear_leveling && self.gc_invocations.is_multiple_of(self.wl_period) {
                    let ppb = self.s.pages_per_block as u64;
                    cost += ppb as f64 * (self.flash.read_us + self.flash.program_us)
                        + self.flash.erase_us;
                    self.stats.wear_leveling_moves += ppb;
                    self.stats.pages_programmed += ppb;
                    self.stats.flash_pages_read += ppb;
                }
                self.dies[loc.die].reserve(end, cost);
            }
            self.data_cache.insert(lpn);
        }
        Ok(done)
    }
}

/// Replays `trace` and reports mean latency and throughput over the
/// non-warmup requests.
pub fn simulate(
    space: &ParamSpace,
    config: &Configuration,
    constraints: &Constraints,
    trace: &[IoRecord],
    warmup: f64,
) -> Result<SimResult, SimError> {
    let opts = SimOptions {
        warmup,
        record_latencies: false,
    };
    Ok(simulate_detailed(space, config, constraints, trace, &opts)?.result)
}

pub fn simulate_detailed(
    space: &ParamSpace,
    config: &Configuration,
    constraints: &Constraints,
    trace: &[IoRecord],
    opts: &SimOptions,
) -> Result<SimReport, SimError> {
    if trace.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    if !space.satisfies(config, constraints) {
        return Err(SimError::ConstraintViolation {
            raw: space.raw_capacity(config),
            target: constraints.capacity_bytes,
            tolerance: constraints.capacity_tolerance,
        });
    }
    let settings = DeviceSettings::resolve(space, config)?;
    let timing = space.timing();
    let mut dev = Device::new(&settings, timing, constraints);

    let interface_us = match constraints.interface {
        Interface::Nvme => timing.nvme_delay_us,
        Interface::Sata => timing.sata_delay_us + settings.sata_processing_delay_us,
    };
    let limit = settings.queue_depth.min(settings.fetch_size).max(1);
    let n = trace.len();
    let warm = ((opts.warmup.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1);

    let mut in_service: BinaryHeap<Reverse<Time>> = BinaryHeap::new();
    let mut last_dispatch = 0.0f64;
    let mut latency_sum = 0.0;
    let mut bytes = 0u64;
    let mut first_arrival = f64::INFINITY;
    let mut last_completion = 0.0f64;
    let mut latencies = opts.record_latencies.then(|| Vec::with_capacity(n));

    for (i, rec) in trace.iter().enumerate() {
        let arrival = rec.timestamp_ns as f64 / 1000.0;
        let mut dispatch = arrival.max(last_dispatch);
        while in_service.peek().is_some_and(|t| t.0 .0 <= dispatch) {
            in_service.pop();
        }
        if in_service.len() >= limit {
            if let Some(Reverse(Time(t))) = in_service.pop() {
                dispatch = dispatch.max(t);
            }
        }
        last_dispatch = dispatch;
        if i % 64 == 0 {
            dev.prune(dispatch);
        }
        let completion = dev.serve(rec, dispatch + interface_us)?;
        in_service.push(Reverse(Time(completion)));
        let latency = completion - arrival;
        let measured = i >= warm;
        if measured {
            latency_sum += latency;
            bytes += u64::from(rec.size);
            first_arrival = first_arrival.min(arrival);
            last_completion = last_completion.max(completion);
        }
        if let Some(l) = latencies.as_mut() {
            l.push(RequestLatency {
                index: i,
                op: rec.op,
                arrival_us: arrival,
                latency_us: latency,
                measured,
            });
        }
    }

    let measured = (n - warm) as u64;
    let span = (last_completion - first_arrival).max(f64::MIN_POSITIVE);
    let result = SimResult {
        mean_latency_us: latency_sum / measured as f64,
        throughput_mbps: bytes as f64 / span,
        total_requests: measured,
        gc_invocations: dev.gc_invocations,
    };
    let mut stats = dev.stats;
    stats.planes_touched = dev.planes.iter().filter(|p| p.is_some()).count();
    stats.accounting_consistent = dev
        .planes
        .iter()
        .flatten()
        .all(|p| p.accounting_consistent());
    Ok(SimReport {
        result,
        stats,
        latencies,
    })
}

/// Simulates one configuration on several workloads; results follow input order.
pub fn measure(
    space: &ParamSpace,
    config: &Configuration,
    constraints: &Constraints,
    workloads: &[&[IoRecord]],
    warmup: f64,
) -> Result<Vec<SimResult>, SimError> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        if workloads.len() > 1 {
            return std::thread::scope(|scope| {
                let handles: Vec<_> = workloads
                    .iter()
                    .map(|w| scope.spawn(move || simulate(space, config, constraints, w, warmup)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("simulation thread panicked"))
                    .collect()
            });
        }
    }
    workloads
        .iter()
        .map(|w| simulate(space, config, constraints, w, warmup))
        .collect()
}

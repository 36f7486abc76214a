// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Integer-filter benchmark.
//!
//! Each repetition of each scenario goes through the same three phases:
//!
//! * `init`: create the device and format it (zero the media, reset every
//!   zone),
//! * `fill`: fill zone 0 with seeded random `u32`s,
//! * `filter`: count the values above the threshold, either on the host
//!   (reading every page out of the device) or by offloading the filter
//!   program to a [`CsdEngine`], interpreted or as a native kernel.
//!
//! The random stream is SplitMix64; each `u32` is the upper half of one
//! 64-bit output, written little-endian. The stream is fully determined by
//! the seed, so counts are reproducible anywhere.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{native_filter_kernel, CsdEngine, ExecMode, Stats, DEFAULT_SHARED_REGION_SIZE};
use crate::host_api::{build_filter_program, filter_budget, image_digest, FilterParams};
use crate::zns::{DeviceGeometry, ZnsDevice, ZnsError};

/// Threshold modelling "above RAND_MAX / 2" for uniform `u32` samples.
pub const DEFAULT_THRESHOLD: u32 = 1 << 31;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_RUNS: usize = 5;

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }
}

const FILL_CHUNK: u64 = 1 << 20;

/// Fills an empty zone with random integers and returns the bytes written.
pub fn fill_zone_random(device: &ZnsDevice, zone_id: u64, seed: u64) -> Result<u64, ZnsError> {
    let zone = device.zone(zone_id)?;
    if zone.write_pointer != 0 {
        return Err(ZnsError::ZoneNotEmpty(zone_id));
    }
    let geometry = device.geometry();
    let zone_size = geometry.zone_size;
    // Whole blocks per chunk; a block smaller than a u32 still gets whole words.
    let chunk = FILL_CHUNK.max(geometry.block_size).min(zone_size) / geometry.block_size * geometry.block_size;
    let mut rng = SplitMix64::new(seed);
    let mut buf = vec![0u8; chunk as usize];
    let mut carry: Option<[u8; 4]> = None;
    let mut written = 0;
    while written < zone_size {
        let len = chunk.min(zone_size - written) as usize;
        let buf = &mut buf[..len];
        let mut i = 0;
        if let Some(rest) = carry.take() {
            // Only reachable with blocks narrower than a word.
            let n = len.min(4);
            buf[..n].copy_from_slice(&rest[4 - n..]);
            i = n;
        }
        while i + 4 <= len {
            buf[i..i + 4].copy_from_slice(&rng.next_u32().to_le_bytes());
            i += 4;
        }
        if i < len {
            let word = rng.next_u32().to_le_bytes();
            let n = len - i;
            buf[i..].copy_from_slice(&word[..n]);
            let mut rest = [0u8; 4];
            rest[n..].copy_from_slice(&word[n..]);
            carry = Some(rest);
        }
        device.zone_append(zone_id, buf)?;
        written += len as u64;
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostScan {
    pub count: u64,
    /// Bytes moved from the device to the application.
    pub bytes_read: u64,
}

/// Reads every written page of the zone to the host and counts the values
/// strictly greater than `threshold`.
pub fn host_filter_scan(device: &ZnsDevice, zone_id: u64, threshold: u32) -> Result<HostScan, ZnsError> {
    let zone = device.zone(zone_id)?;
    let block_size = device.geometry().block_size;
    let words = (block_size & !3) as usize;
    let mut page = vec![0u8; block_size as usize];
    let mut scan = HostScan {
        count: 0,
        bytes_read: 0,
    };
    for lba in zone.start_lba..zone.start_lba + zone.write_pointer {
        device.read_into(lba, 0, &mut page)?;
        scan.bytes_read += block_size;
        scan.count += page[..words]
            .chunks_exact(4)
            .filter(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]) > threshold)
            .count() as u64;
    }
    Ok(scan)
}

pub fn host_filter_count(device: &ZnsDevice, zone_id: u64, threshold: u32) -> Result<u64, ZnsError> {
    host_filter_scan(device, zone_id, threshold).map(|s| s.count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Host,
    #[serde(rename = "interp")]
    Interpreted,
    #[serde(rename = "native")]
    NativeKernel,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Host, Scenario::Interpreted, Scenario::NativeKernel];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Host => "host",
            Scenario::Interpreted => "interp",
            Scenario::NativeKernel => "native",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected host, interp or native)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Fill,
    Filter,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Init, Phase::Fill, Phase::Filter];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Fill => "fill",
            Phase::Filter => "filter",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub geometry: DeviceGeometry,
    pub seed: u64,
    pub threshold: u32,
    pub runs: usize,
    pub scenarios: Vec<Scenario>,
    pub shared_region_size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            geometry: DeviceGeometry::default(),
            seed: DEFAULT_SEED,
            threshold: DEFAULT_THRESHOLD,
            runs: DEFAULT_RUNS,
            scenarios: Scenario::ALL.to_vec(),
            shared_region_size: DEFAULT_SHARED_REGION_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub init: u64,
    pub fill: u64,
    pub filter: u64,
}

impl PhaseTimes {
    pub fn get(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Init => self.init,
            Phase::Fill => self.fill,
            Phase::Filter => self.filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub run: usize,
    /// Microseconds per phase.
    pub phases: PhaseTimes,
    pub count: u64,
    pub stats: Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

impl PhaseSummary {
    fn of(values: &[u64]) -> Self {
        PhaseSummary {
            mean: values.iter().sum::<u64>() as f64 / values.len() as f64,
            min: values.iter().copied().min().unwrap_or(0),
            max: values.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub init: PhaseSummary,
    pub fill: PhaseSummary,
    pub filter: PhaseSummary,
}

impl ScenarioSummary {
    pub fn phase(&self, phase: Phase) -> &PhaseSummary {
        match phase {
            Phase::Init => &self.init,
            Phase::Fill => &self.fill,
            Phase::Filter => &self.filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub geometry: DeviceGeometry,
    pub seed: u64,
    pub threshold: u32,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<ScenarioSummary>,
}

impl BenchReport {
    pub fn summary(&self, scenario: Scenario) -> Option<&ScenarioSummary> {
        self.summaries.iter().find(|s| s.scenario == scenario)
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("scenario {scenario}, run {run}, phase {phase}: {source}")]
    Failed {
        scenario: Scenario,
        run: usize,
        phase: Phase,
        #[source]
        source: BoxError,
    },
    #[error("scenario {scenario}, run {run}: offload returned {len} bytes instead of an 8-byte count")]
    BadResult { scenario: Scenario, run: usize, len: usize },
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode report: {0}")]
    Encode(String),
}

struct Measured {
    phases: PhaseTimes,
    count: u64,
    stats: Stats,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let started = Instant::now();
    let out = f();
    (out, started.elapsed().as_micros() as u64)
}

fn run_once(config: &BenchConfig, scenario: Scenario, run: usize) -> Result<Measured, BenchError> {
    let fail = |phase: Phase| move |e: BoxError| BenchError::Failed { scenario, run, phase, source: e };
    let geometry = config.geometry;

    let (device, init) = timed(|| -> Result<ZnsDevice, ZnsError> {
        let device = ZnsDevice::in_memory(geometry)?;
        device.format()?;
        Ok(device)
    });
    let device = Arc::new(device.map_err(|e| fail(Phase::Init)(e.into()))?);

    let (filled, fill) = timed(|| fill_zone_random(&device, 0, config.seed));
    filled.map_err(|e| fail(Phase::Fill)(e.into()))?;

    let page_count = geometry.blocks_per_zone();
    let (outcome, filter) = timed(|| -> Result<(u64, Stats), BoxError> {
        match scenario {
            Scenario::Host => {
                let scan = host_filter_scan(&device, 0, config.threshold)?;
                let mut stats = Stats::default();
                stats.add_read(scan.bytes_read);
                stats.add_returned(scan.bytes_read);
                Ok((scan.count, stats))
            }
            Scenario::Interpreted | Scenario::NativeKernel => {
                let params = FilterParams {
                    threshold: config.threshold,
                    start_lba: 0,
                    page_count,
                };
                let image = build_filter_program(params.threshold, params.start_lba, params.page_count)?.to_bytes();
                let mut engine = CsdEngine::with_shared_region(Arc::clone(&device), config.shared_region_size)?;
                engine.set_instruction_budget(filter_budget(page_count, geometry.block_size)?);
                let mode = if scenario == Scenario::Interpreted {
                    ExecMode::Interpreted
                } else {
                    engine.register_native_kernel(image_digest(&image), native_filter_kernel(params))?;
                    ExecMode::NativeKernel
                };
                engine.nvm_cmd_bpf_run(&image, mode)?;
                let result = engine.nvm_cmd_bpf_result()?;
                let count: [u8; 8] = result.as_slice().try_into().map_err(|_| {
                    Box::new(BenchError::BadResult {
                        scenario,
                        run,
                        len: result.len(),
                    }) as BoxError
                })?;
                Ok((u64::from_le_bytes(count), engine.stats_snapshot()))
            }
        }
    });
    let (count, stats) = outcome.map_err(fail(Phase::Filter))?;

    Ok(Measured {
        phases: PhaseTimes { init, fill, filter },
        count,
        stats,
    })
}

/// Runs every configured scenario `runs` times. Everything runs on the
/// calling thread, one phase at a time.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config
        .geometry
        .validate()
        .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    if config.runs == 0 {
        return Err(BenchError::InvalidConfig("runs must be at least 1".into()));
    }
    if config.scenarios.is_empty() {
        return Err(BenchError::InvalidConfig("no scenarios selected".into()));
    }

    // One unrecorded init + fill so the first measured run does not pay for
    // cold caches and a cold allocator.
    let warm = ZnsDevice::in_memory(config.geometry).and_then(|d| {
        d.format()?;
        fill_zone_random(&d, 0, config.seed)
    });
    warm.map_err(|e| BenchError::Failed {
        scenario: config.scenarios[0],
        run: 0,
        phase: Phase::Init,
        source: e.into(),
    })?;

    // Round-robin over scenarios so slow drift in machine speed is shared
    // evenly instead of biasing whichever scenario ran first.
    let mut per_scenario: Vec<Vec<RunRecord>> = vec![Vec::new(); config.scenarios.len()];
    for run in 0..config.runs {
        for (slot, &scenario) in config.scenarios.iter().enumerate() {
            let m = run_once(config, scenario, run)?;
            per_scenario[slot].push(RunRecord {
                scenario,
                run,
                phases: m.phases,
                count: m.count,
                stats: m.stats,
            });
        }
    }

    let summaries = per_scenario
        .iter()
        .zip(&config.scenarios)
        .map(|(mine, &scenario)| {
            let summarize = |phase: Phase| {
                let values: Vec<u64> = mine.iter().map(|r| r.phases.get(phase)).collect();
                PhaseSummary::of(&values)
            };
            ScenarioSummary {
                scenario,
                init: summarize(Phase::Init),
                fill: summarize(Phase::Fill),
                filter: summarize(Phase::Filter),
            }
        })
        .collect();
    let runs = per_scenario.into_iter().flatten().collect();

    Ok(BenchReport {
        geometry: config.geometry,
        seed: config.seed,
        threshold: config.threshold,
        runs,
        summaries,
    })
}

pub const CSV_HEADER: [&str; 8] = [
    "scenario",
    "run",
    "phase",
    "micros",
    "count",
    "instructions_executed",
    "bytes_read_device",
    "bytes_to_host",
];

/// Writes one CSV row per (scenario, run, phase), or the whole report as JSON.
pub fn emit_report(report: &BenchReport, format: ReportFormat, destination: impl Write) -> Result<(), BenchError> {
    match format {
        ReportFormat::Json => {
            let mut destination = destination;
            serde_json::to_writer_pretty(&mut destination, report).map_err(|e| BenchError::Encode(e.to_string()))?;
            destination.write_all(b"\n")?;
            Ok(())
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(destination);
            let csv_err = |e: csv::Error| BenchError::Encode(e.to_string());
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in &report.runs {
                for phase in Phase::ALL {
                    w.write_record([
                        r.scenario.name().to_string(),
                        r.run.to_string(),
                        phase.name().to_string(),
                        r.phases.get(phase).to_string(),
                        r.count.to_string(),
                        r.stats.instructions_executed.to_string(),
                        r.stats.bytes_read_device.to_string(),
                        r.stats.bytes_to_host.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush()?;
            Ok(())
        }
    }
}

/// Human-readable mean/min/max table.
pub fn format_summary(report: &BenchReport) -> String {
    let mut out = format!("{:<8} {:<7} {:>14} {:>12} {:>12}\n", "scenario", "phase", "mean_us", "min_us", "max_us");
    for s in &report.summaries {
        for phase in Phase::ALL {
            let p = s.phase(phase);
            out.push_str(&format!(
                "{:<8} {:<7} {:>14.1} {:>12} {:>12}\n",
                s.scenario.name(),
                phase.name(),
                p.mean,
                p.min,
                p.max
            ));
        }
    }
    out
}

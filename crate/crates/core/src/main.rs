// SPDX-License-Identifier: (Apache-2.0 OR MIT)

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use zcsd::bench::{
    emit_report, fill_zone_random, format_summary, run_benchmark, BenchConfig, ReportFormat, Scenario,
    DEFAULT_RUNS, DEFAULT_SEED, DEFAULT_THRESHOLD,
};
use zcsd::engine::{native_filter_kernel, CsdEngine, ExecMode, DEFAULT_SHARED_REGION_SIZE};
use zcsd::host_api::{build_filter_program, decode_image, filter_budget, image_digest, match_filter_program};
use zcsd::zns::{DeviceGeometry, ZnsDevice, DEFAULT_BLOCK_SIZE};

#[derive(Parser)]
#[command(name = "zcsd", version, about = "Zoned computational storage simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the integer-filter benchmark.
    Bench(BenchArgs),
    /// Offload a program image to a device image.
    Run(RunArgs),
    /// Manage device images.
    #[command(subcommand)]
    Device(DeviceCommand),
    /// Build program images.
    #[command(subcommand)]
    Image(ImageCommand),
}

#[derive(Args)]
struct GeometryArgs {
    /// Bytes per zone; accepts KiB/MiB/GiB suffixes.
    #[arg(long, value_parser = parse_size, default_value = "16MiB")]
    zone_size: u64,
    /// Bytes per block.
    #[arg(long, value_parser = parse_size, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: u64,
    #[arg(long, default_value_t = 4)]
    zones: u64,
}

impl GeometryArgs {
    fn geometry(&self) -> Result<DeviceGeometry, Failure> {
        DeviceGeometry::new(self.block_size, self.zone_size, self.zones).map_err(|e| Failure::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u32,
    #[arg(long, default_value_t = DEFAULT_RUNS, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    runs: usize,
    #[arg(long, value_delimiter = ',', default_value = "host,interp,native")]
    scenarios: Vec<Scenario>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Device scratch memory available to offloaded programs.
    #[arg(long, value_parser = parse_size_usize, default_value_t = DEFAULT_SHARED_REGION_SIZE)]
    shared_region_size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    device: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Interp)]
    mode: ModeArg,
    /// Print the run statistics as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Interp,
    Native,
}

#[derive(Subcommand)]
enum DeviceCommand {
    /// Create an empty device image.
    Create {
        #[arg(long)]
        device: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Print the zone table.
    Report {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Fill an empty zone with seeded random integers.
    Fill {
        #[arg(long)]
        device: PathBuf,
        #[arg(long, default_value_t = 0)]
        zone: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Reset a zone.
    Reset {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        zone: u64,
    },
}

#[derive(Subcommand)]
enum ImageCommand {
    /// Build the integer-filter program.
    BuildFilter {
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: u32,
        #[arg(long, default_value_t = 0)]
        start_lba: u64,
        #[arg(long)]
        pages: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode an image and list its instructions.
    Dump {
        #[arg(long)]
        image: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (digits, unit) = s.split_at(split);
    let n: u64 = digits.parse().map_err(|_| format!("invalid size `{s}`"))?;
    let shift = match unit.trim() {
        "" | "B" => 0,
        "K" | "KiB" => 10,
        "M" | "MiB" => 20,
        "G" | "GiB" => 30,
        other => return Err(format!("unknown size unit `{other}`")),
    };
    n.checked_mul(1 << shift).ok_or_else(|| format!("size `{s}` overflows"))
}

fn parse_size_usize(s: &str) -> Result<usize, String> {
    parse_size(s).and_then(|n| usize::try_from(n).map_err(|e| e.to_string()))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        // A reader that goes away early (`| head`) is not an error.
        None => match io::stdout().write_all(bytes) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r.context("cannot write to stdout"),
        },
    }
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let config = BenchConfig {
        geometry: args.geometry.geometry()?,
        seed: args.seed,
        threshold: args.threshold,
        runs: args.runs,
        scenarios: args.scenarios,
        shared_region_size: args.shared_region_size,
    };
    let report = run_benchmark(&config)?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    let mut buf = Vec::new();
    emit_report(&report, format, &mut buf)?;
    write_output(args.out.as_deref(), &buf)?;
    eprint!("{}", format_summary(&report));
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let bytes = fs::read(&args.image).with_context(|| format!("cannot read {}", args.image.display()))?;
    let device = Arc::new(
        ZnsDevice::open(&args.device).with_context(|| format!("cannot open device {}", args.device.display()))?,
    );
    let geometry = device.geometry();
    let mut engine = CsdEngine::new(Arc::clone(&device));
    let filter = decode_image(&bytes).ok().and_then(|image| match_filter_program(&image));
    if let Some(params) = filter {
        engine.set_instruction_budget(filter_budget(params.page_count, geometry.block_size)?);
    }
    let mode = match args.mode {
        ModeArg::Interp => ExecMode::Interpreted,
        ModeArg::Native => {
            let params = filter.ok_or_else(|| anyhow!("no native kernel available for this image"))?;
            engine.register_native_kernel(image_digest(&bytes), native_filter_kernel(params))?;
            ExecMode::NativeKernel
        }
    };
    engine.nvm_cmd_bpf_run(&bytes, mode)?;
    let result = engine.nvm_cmd_bpf_result()?;
    let stats = engine.stats_snapshot();

    let hex: String = result.iter().map(|b| format!("{b:02x}")).collect();
    let count = <[u8; 8]>::try_from(result.as_slice()).ok().map(u64::from_le_bytes);
    let mut out = String::new();
    if args.json {
        let json = serde_json::json!({ "result": hex, "value": count, "stats": stats });
        writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
    } else {
        writeln!(out, "result: {hex}")?;
        if let Some(v) = count {
            writeln!(out, "value: {v}")?;
        }
        writeln!(out, "instructions_executed: {}", stats.instructions_executed)?;
        writeln!(out, "helper_calls: {}", stats.helper_calls)?;
        writeln!(out, "bytes_read_device: {}", stats.bytes_read_device)?;
        writeln!(out, "bytes_to_host: {}", stats.bytes_to_host)?;
        writeln!(out, "data_movement_saved: {}", stats.data_movement_saved)?;
        for (phase, micros) in &stats.phase_micros {
            writeln!(out, "{phase}_us: {micros}")?;
        }
    }
    write_output(None, out.as_bytes())?;
    Ok(())
}

fn device(cmd: DeviceCommand) -> Result<(), Failure> {
    match cmd {
        DeviceCommand::Create { device, geometry } => {
            let geometry = geometry.geometry()?;
            ZnsDevice::create(geometry, Some(&device))
                .with_context(|| format!("cannot create {}", device.display()))?
                .sync()?;
        }
        DeviceCommand::Report { device, json } => {
            let dev = ZnsDevice::open(&device).with_context(|| format!("cannot open {}", device.display()))?;
            let g = dev.geometry();
            let zones = dev.zone_report();
            let mut out = String::new();
            if json {
                let json = serde_json::json!({ "geometry": g, "zones": zones });
                writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
            } else {
                writeln!(
                    out,
                    "block_size={} zone_size={} zones={} blocks_per_zone={}",
                    g.block_size,
                    g.zone_size,
                    g.zone_count,
                    g.blocks_per_zone()
                )?;
                for z in zones {
                    let state = format!("{:?}", z.state);
                    writeln!(out, "zone {:>4}  {state:<5}  start_lba={}  wp={}", z.zone_id, z.start_lba, z.write_pointer)?;
                }
            }
            write_output(None, out.as_bytes())?;
        }
        DeviceCommand::Fill { device, zone, seed } => {
            let dev = ZnsDevice::open(&device).with_context(|| format!("cannot open {}", device.display()))?;
            let written = fill_zone_random(&dev, zone, seed)?;
            dev.sync()?;
            write_output(None, format!("{written}\n").as_bytes())?;
        }
        DeviceCommand::Reset { device, zone } => {
            let dev = ZnsDevice::open(&device).with_context(|| format!("cannot open {}", device.display()))?;
            dev.zone_reset(zone)?;
            dev.sync()?;
        }
    }
    Ok(())
}

fn image(cmd: ImageCommand) -> Result<(), Failure> {
    match cmd {
        ImageCommand::BuildFilter { threshold, start_lba, pages, out } => {
            let image = build_filter_program(threshold, start_lba, pages).map_err(|e| Failure::Usage(e.to_string()))?;
            write_output(Some(&out), &image.to_bytes())?;
        }
        ImageCommand::Dump { image } => {
            let bytes = fs::read(&image).with_context(|| format!("cannot read {}", image.display()))?;
            let decoded = decode_image(&bytes)?;
            write_output(None, decoded.program.to_string().as_bytes())?;
        }
    }
    Ok(())
}

/// Joins the error chain, skipping causes a parent message already embeds.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Bench(args) => bench(args),
        Command::Run(args) => run(args),
        Command::Device(cmd) => device(cmd),
        Command::Image(cmd) => image(cmd),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

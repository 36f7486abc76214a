// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Device-side offload engine.
//!
//! [`CsdEngine`] accepts a program image from the host, runs it next to the
//! emulated device, and keeps whatever the program hands back through
//! `bpf_return_data` until the host collects it. Programs reach the device
//! through four numbered helpers, which form the stable ABI between images
//! and the engine:
//!
//! | id | helper              | arguments                          | returns                 |
//! |----|---------------------|------------------------------------|-------------------------|
//! | 1  | `bpf_return_data`   | r1 = address, r2 = size            | 0                       |
//! | 2  | `bpf_read`          | r1 = lba, r2 = offset, r3 = limit, r4 = dest | 0             |
//! | 3  | `bpf_get_lba_size`  | none                               | block size in bytes     |
//! | 4  | `bpf_get_mem_info`  | r1 = address of a u64 size slot    | scratch base address    |
//!
//! Arguments go in `r1..=r5`, the result comes back in `r0`. `bpf_read`
//! limits are 16-bit.
//!
//! Besides interpretation, an image can run as a native kernel: a host
//! function registered under the SHA-256 of the image bytes that performs the
//! same work through [`KernelApi`], with the same accounting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host_api::{decode_image, image_digest, FilterParams, ImageError};
use crate::vm::{
    execute, verify, ExecContext, ExecError, HelperCause, HelperError, MemoryMap, VerifyReport,
    VmConfig,
};
use crate::zns::{ZnsDevice, ZnsError};

pub const HELPER_RETURN_DATA: u32 = 1;
pub const HELPER_READ: u32 = 2;
pub const HELPER_GET_LBA_SIZE: u32 = 3;
pub const HELPER_GET_MEM_INFO: u32 = 4;

/// Maximum bytes a single run may return to the host.
pub const RESULT_BUFFER_CAP: usize = 1 << 20;
pub const DEFAULT_SHARED_REGION_SIZE: usize = 64 << 10;
pub const DEFAULT_INSTRUCTION_BUDGET: u64 = 1 << 32;

/// Per-run accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    /// Wall time per phase, in microseconds.
    pub phase_micros: BTreeMap<String, u64>,
    pub instructions_executed: u64,
    pub helper_calls: u64,
    /// Bytes the program pulled from the media.
    pub bytes_read_device: u64,
    /// Bytes placed in the result buffer.
    pub bytes_to_host: u64,
    /// `bytes_read_device - bytes_to_host`, floored at zero.
    pub data_movement_saved: u64,
}

impl Stats {
    pub fn record_phase(&mut self, phase: &str, micros: u64) {
        *self.phase_micros.entry(phase.to_string()).or_default() += micros;
    }

    pub fn add_read(&mut self, bytes: u64) {
        self.bytes_read_device += bytes;
        self.refresh();
    }

    pub fn add_returned(&mut self, bytes: u64) {
        self.bytes_to_host += bytes;
        self.refresh();
    }

    fn refresh(&mut self) {
        self.data_movement_saved = self.bytes_read_device.saturating_sub(self.bytes_to_host);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecMode {
    Interpreted,
    NativeKernel,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot parse program image: {0}")]
    Parse(#[from] ImageError),
    #[error("program rejected by the verifier: {0}")]
    VerifyFailed(VerifyReport),
    #[error("offload faulted: {0}")]
    ExecFault(#[from] ExecError),
    #[error("no native kernel registered for this image")]
    NoNativeKernel,
    #[error("a native kernel is already registered for this digest")]
    DuplicateDigest,
    #[error("no completed run to collect a result from")]
    NoResult,
    #[error("shared region of {size} bytes cannot hold a {block_size}-byte block")]
    SharedRegionTooSmall { size: usize, block_size: u64 },
}

/// Engine state visible to helpers during one run.
pub struct RunEnv {
    device: Arc<ZnsDevice>,
    result: Vec<u8>,
    stats: Stats,
    last_helper: u32,
}

impl RunEnv {
    fn new(device: Arc<ZnsDevice>) -> Self {
        RunEnv {
            device,
            result: Vec::new(),
            stats: Stats::default(),
            last_helper: 0,
        }
    }

    fn enter(&mut self, helper: u32) {
        self.last_helper = helper;
        self.stats.helper_calls += 1;
    }

    fn return_data(&mut self, data: &[u8]) -> Result<(), HelperError> {
        if self.result.len() + data.len() > RESULT_BUFFER_CAP {
            return Err(HelperError::new(
                HelperCause::ResultOverflow,
                format!("result buffer is capped at {RESULT_BUFFER_CAP} bytes"),
            ));
        }
        self.result.extend_from_slice(data);
        self.stats.add_returned(data.len() as u64);
        Ok(())
    }

    fn read(&mut self, lba: u64, offset: u64, dest: &mut [u8]) -> Result<(), HelperError> {
        if dest.is_empty() {
            return Ok(());
        }
        self.device.read_into(lba, offset, dest).map_err(device_fault)?;
        self.stats.add_read(dest.len() as u64);
        Ok(())
    }
}

fn device_fault(err: ZnsError) -> HelperError {
    let cause = match err {
        ZnsError::UnwrittenRead(_) => HelperCause::UnwrittenRead,
        ZnsError::OutOfRange { .. } => HelperCause::OutOfRange,
        _ => HelperCause::BadArgument,
    };
    HelperError::new(cause, err.to_string())
}

fn check_limit(limit: u64) -> Result<usize, HelperError> {
    if limit > u16::MAX as u64 {
        return Err(HelperError::new(
            HelperCause::BadArgument,
            format!("read limit {limit} does not fit in 16 bits"),
        ));
    }
    Ok(limit as usize)
}

fn bpf_return_data(env: &mut RunEnv, mem: &mut MemoryMap<'_>, args: [u64; 5]) -> Result<u64, HelperError> {
    env.enter(HELPER_RETURN_DATA);
    let size = usize::try_from(args[1])
        .map_err(|_| HelperError::new(HelperCause::MemFault, "size exceeds address space"))?;
    if size == 0 {
        return Ok(0);
    }
    let data = mem.slice(args[0], size)?;
    env.return_data(data)?;
    Ok(0)
}

fn bpf_read(env: &mut RunEnv, mem: &mut MemoryMap<'_>, args: [u64; 5]) -> Result<u64, HelperError> {
    env.enter(HELPER_READ);
    let [lba, offset, limit, dest, _] = args;
    let limit = check_limit(limit)?;
    if limit == 0 {
        return Ok(0);
    }
    let dest = mem.slice_mut(dest, limit)?;
    env.read(lba, offset, dest)?;
    Ok(0)
}

fn bpf_get_lba_size(env: &mut RunEnv, _: &mut MemoryMap<'_>, _: [u64; 5]) -> Result<u64, HelperError> {
    env.enter(HELPER_GET_LBA_SIZE);
    Ok(env.device.geometry().block_size)
}

fn bpf_get_mem_info(env: &mut RunEnv, mem: &mut MemoryMap<'_>, args: [u64; 5]) -> Result<u64, HelperError> {
    env.enter(HELPER_GET_MEM_INFO);
    let size = mem.shared_len() as u64;
    mem.slice_mut(args[0], 8)?.copy_from_slice(&size.to_le_bytes());
    Ok(mem.shared_base())
}

/// The helper table every engine binds.
pub fn device_vm_config(max_instructions: u64) -> VmConfig<RunEnv> {
    VmConfig::new(max_instructions)
        .with_helper(HELPER_RETURN_DATA, "bpf_return_data", bpf_return_data)
        .with_helper(HELPER_READ, "bpf_read", bpf_read)
        .with_helper(HELPER_GET_LBA_SIZE, "bpf_get_lba_size", bpf_get_lba_size)
        .with_helper(HELPER_GET_MEM_INFO, "bpf_get_mem_info", bpf_get_mem_info)
}

/// The helper API as seen by a native kernel. Reads land in the device
/// scratch memory, exactly as a bytecode program would use it.
pub struct KernelApi<'a> {
    env: &'a mut RunEnv,
    scratch: &'a mut [u8],
}

impl KernelApi<'_> {
    pub fn return_data(&mut self, data: &[u8]) -> Result<(), HelperError> {
        self.env.enter(HELPER_RETURN_DATA);
        self.env.return_data(data)
    }

    /// Copies `limit` bytes of block `lba` at `offset` into scratch memory
    /// at `scratch_offset`.
    pub fn read(&mut self, lba: u64, offset: u64, limit: u64, scratch_offset: usize) -> Result<(), HelperError> {
        self.env.enter(HELPER_READ);
        let limit = check_limit(limit)?;
        if limit == 0 {
            return Ok(());
        }
        let dest = scratch_offset
            .checked_add(limit)
            .and_then(|end| self.scratch.get_mut(scratch_offset..end))
            .ok_or_else(|| HelperError::new(HelperCause::MemFault, "read past the scratch region"))?;
        self.env.read(lba, offset, dest)
    }

    pub fn lba_size(&mut self) -> u64 {
        self.env.enter(HELPER_GET_LBA_SIZE);
        self.env.device.geometry().block_size
    }

    /// Scratch memory size in bytes.
    pub fn mem_info(&mut self) -> usize {
        self.env.enter(HELPER_GET_MEM_INFO);
        self.scratch.len()
    }

    pub fn scratch(&self) -> &[u8] {
        self.scratch
    }
}

/// A precompiled stand-in for a program image. Returns the value the
/// program would leave in `r0`.
pub type NativeKernel = Arc<dyn Fn(&mut KernelApi<'_>) -> Result<u64, HelperError> + Send + Sync>;

/// Native equivalent of [`crate::host_api::build_filter_program`].
pub fn native_filter_kernel(params: FilterParams) -> NativeKernel {
    Arc::new(move |api: &mut KernelApi<'_>| {
        api.mem_info();
        let page = api.lba_size();
        let words = (page & !3) as usize;
        let mut count = 0u64;
        for i in 0..params.page_count {
            api.read(params.start_lba.wrapping_add(i), 0, page, 0)?;
            count += api.scratch()[..words]
                .chunks_exact(4)
                .filter(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]) > params.threshold)
                .count() as u64;
        }
        api.return_data(&count.to_le_bytes())?;
        Ok(count)
    })
}

/// The device-side half of the offload API.
pub struct CsdEngine {
    device: Arc<ZnsDevice>,
    vm_config: VmConfig<RunEnv>,
    shared_region_size: usize,
    native_kernels: HashMap<[u8; 32], NativeKernel>,
    result: Option<Vec<u8>>,
    stats: Stats,
}

impl fmt::Debug for CsdEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CsdEngine")
            .field("device", &self.device)
            .field("shared_region_size", &self.shared_region_size)
            .field("native_kernels", &self.native_kernels.len())
            .field("stats", &self.stats)
            .finish()
    }
}

impl CsdEngine {
    /// Engine with the default scratch size, grown to one block if needed.
    pub fn new(device: Arc<ZnsDevice>) -> Self {
        let size = DEFAULT_SHARED_REGION_SIZE.max(device.geometry().block_size as usize);
        Self::with_shared_region(device, size).expect("sized to fit a block")
    }

    pub fn with_shared_region(device: Arc<ZnsDevice>, shared_region_size: usize) -> Result<Self, EngineError> {
        let block_size = device.geometry().block_size;
        if (shared_region_size as u64) < block_size {
            return Err(EngineError::SharedRegionTooSmall {
                size: shared_region_size,
                block_size,
            });
        }
        Ok(CsdEngine {
            device,
            vm_config: device_vm_config(DEFAULT_INSTRUCTION_BUDGET),
            shared_region_size,
            native_kernels: HashMap::new(),
            result: None,
            stats: Stats::default(),
        })
    }

    pub fn device(&self) -> &Arc<ZnsDevice> {
        &self.device
    }

    pub fn vm_config(&self) -> &VmConfig<RunEnv> {
        &self.vm_config
    }

    pub fn set_instruction_budget(&mut self, max_instructions: u64) {
        assert!(max_instructions > 0);
        self.vm_config.max_instructions = max_instructions;
    }

    pub fn shared_region_size(&self) -> usize {
        self.shared_region_size
    }

    pub fn register_native_kernel(&mut self, image_digest: [u8; 32], kernel: NativeKernel) -> Result<(), EngineError> {
        if self.native_kernels.contains_key(&image_digest) {
            return Err(EngineError::DuplicateDigest);
        }
        self.native_kernels.insert(image_digest, kernel);
        Ok(())
    }

    /// Runs `program_image` synchronously and returns the number of result
    /// bytes it produced.
    pub fn nvm_cmd_bpf_run(&mut self, program_image: &[u8], mode: ExecMode) -> Result<u64, EngineError> {
        self.result = None;
        self.stats = Stats::default();

        let started = Instant::now();
        let image = decode_image(program_image)?;
        self.stats.record_phase("parse", micros_since(started));

        let mut env = RunEnv::new(Arc::clone(&self.device));
        let mut stack = vec![0u8; self.vm_config.stack_size];
        let mut shared = vec![0u8; self.shared_region_size];

        let outcome = match mode {
            ExecMode::Interpreted => {
                let started = Instant::now();
                let report = verify(&image.program, &self.vm_config);
                self.stats.record_phase("verify", micros_since(started));
                if !report.passed() {
                    return Err(EngineError::VerifyFailed(report));
                }
                let started = Instant::now();
                let mut ctx = ExecContext::new(&mut stack, &mut shared);
                let outcome = execute(&image.program, &self.vm_config, &mut ctx, &mut env);
                self.stats.record_phase("execute", micros_since(started));
                env.stats.instructions_executed = ctx.counters.instructions_executed;
                outcome
            }
            ExecMode::NativeKernel => {
                let kernel = self
                    .native_kernels
                    .get(&image_digest(program_image))
                    .cloned()
                    .ok_or(EngineError::NoNativeKernel)?;
                let started = Instant::now();
                let mut api = KernelApi {
                    env: &mut env,
                    scratch: &mut shared,
                };
                let outcome = kernel(&mut api).map_err(|error| ExecError::HelperFault {
                    pc: 0,
                    helper: env.last_helper,
                    error,
                });
                self.stats.record_phase("execute", micros_since(started));
                outcome
            }
        };

        env.stats.phase_micros = std::mem::take(&mut self.stats.phase_micros);
        self.stats = env.stats;
        outcome?;
        let len = env.result.len() as u64;
        self.result = Some(env.result);
        Ok(len)
    }

    /// Copy of the bytes returned by the last successful run.
    pub fn nvm_cmd_bpf_result(&self) -> Result<Vec<u8>, EngineError> {
        self.result.clone().ok_or(EngineError::NoResult)
    }

    pub fn stats_snapshot(&self) -> Stats {
        self.stats.clone()
    }
}

fn micros_since(t: Instant) -> u64 {
    t.elapsed().as_micros() as u64
}

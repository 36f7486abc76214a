// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Zoned namespace SSD emulation.
//!
//! A [`ZnsDevice`] is an array of equally sized zones over a block-addressed
//! byte store. Zones are written strictly sequentially through
//! [`ZnsDevice::zone_append`], reads are gated by each zone's write pointer,
//! and space is reclaimed only by the host calling [`ZnsDevice::zone_reset`].
//!
//! The store is either plain memory or a file image. A file image starts with
//! a fixed header, followed by the zone table and the raw data area:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ZNSI"
//! 4       4     version (1)
//! 8       8     block_size
//! 16      8     zone_size
//! 24      8     zone_count
//! 32      9*n   zone table: state byte + write pointer (u64) per zone
//! 32+9n   ...   data, zone_count * zone_size bytes
//! ```
//!
//! All integers are little-endian.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default logical block (page) size.
pub const DEFAULT_BLOCK_SIZE: u64 = 4096;
/// Zone size of the reference evaluation workload.
pub const LARGE_ZONE_SIZE: u64 = 256 << 20;

pub const IMAGE_MAGIC: [u8; 4] = *b"ZNSI";
pub const IMAGE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 32;
const ZONE_ENTRY_LEN: u64 = 9;
const FORMAT_CHUNK: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum ZnsError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("zone {0} does not exist")]
    BadZoneId(u64),
    #[error("zone {0} is full")]
    ZoneFull(u64),
    #[error("append of {blocks} block(s) overflows zone {zone}: only {free} free")]
    Overflow { zone: u64, blocks: u64, free: u64 },
    #[error("append length {0} is not a positive multiple of the block size")]
    UnalignedLength(usize),
    #[error("block {0} is at or beyond its zone's write pointer")]
    UnwrittenRead(u64),
    #[error("access out of range: lba {lba}, offset {offset}, length {length}")]
    OutOfRange { lba: u64, offset: u64, length: u64 },
    #[error("zone {0} is not empty")]
    ZoneNotEmpty(u64),
    #[error("malformed device image: {0}")]
    BadImage(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    /// Bytes per logical block.
    pub block_size: u64,
    /// Bytes per zone.
    pub zone_size: u64,
    pub zone_count: u64,
}

impl DeviceGeometry {
    pub fn new(block_size: u64, zone_size: u64, zone_count: u64) -> Result<Self, ZnsError> {
        let geometry = DeviceGeometry {
            block_size,
            zone_size,
            zone_count,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<(), ZnsError> {
        if self.block_size == 0 || !self.block_size.is_power_of_two() {
            return Err(ZnsError::InvalidGeometry("block size must be a power of two"));
        }
        if self.zone_size == 0 || !self.zone_size.is_multiple_of(self.block_size) {
            return Err(ZnsError::InvalidGeometry(
                "zone size must be a positive multiple of the block size",
            ));
        }
        if self.zone_count == 0 {
            return Err(ZnsError::InvalidGeometry("at least one zone is required"));
        }
        if self.zone_size.checked_mul(self.zone_count).is_none() {
            return Err(ZnsError::InvalidGeometry("device capacity overflows"));
        }
        Ok(())
    }

    pub fn blocks_per_zone(&self) -> u64 {
        self.zone_size / self.block_size
    }

    pub fn total_blocks(&self) -> u64 {
        self.blocks_per_zone() * self.zone_count
    }

    /// Capacity in bytes.
    pub fn capacity(&self) -> u64 {
        self.zone_size * self.zone_count
    }
}

impl Default for DeviceGeometry {
    /// 4 zones of 16 MiB with 4 KiB blocks.
    fn default() -> Self {
        DeviceGeometry {
            block_size: DEFAULT_BLOCK_SIZE,
            zone_size: 16 << 20,
            zone_count: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZoneState {
    Empty,
    Open,
    Full,
}

impl ZoneState {
    fn for_write_pointer(wp: u64, blocks_per_zone: u64) -> Self {
        if wp == 0 {
            ZoneState::Empty
        } else if wp == blocks_per_zone {
            ZoneState::Full
        } else {
            ZoneState::Open
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            ZoneState::Empty => 0,
            ZoneState::Open => 1,
            ZoneState::Full => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ZoneState::Empty),
            1 => Some(ZoneState::Open),
            2 => Some(ZoneState::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneDescriptor {
    pub zone_id: u64,
    pub state: ZoneState,
    /// Next writable block, relative to the zone start.
    pub write_pointer: u64,
    /// Absolute block index of the first block in the zone.
    pub start_lba: u64,
}

enum Backing {
    Memory(Vec<u8>),
    File(File),
}

impl Backing {
    fn write_data(&mut self, pos: u64, data: &[u8], data_offset: u64) -> io::Result<()> {
        match self {
            Backing::Memory(buf) => {
                let pos = pos as usize;
                buf[pos..pos + data.len()].copy_from_slice(data);
                Ok(())
            }
            Backing::File(file) => file.write_all_at(data, data_offset + pos),
        }
    }

    fn read_data(&self, pos: u64, dest: &mut [u8], data_offset: u64) -> io::Result<()> {
        match self {
            Backing::Memory(buf) => {
                let pos = pos as usize;
                dest.copy_from_slice(&buf[pos..pos + dest.len()]);
                Ok(())
            }
            Backing::File(file) => file.read_exact_at(dest, data_offset + pos),
        }
    }
}

struct Inner {
    write_pointers: Vec<u64>,
    backing: Backing,
}

/// An emulated ZNS SSD.
///
/// Every command takes the device lock for its whole duration, so a device
/// shared between threads behaves as if commands executed one at a time.
pub struct ZnsDevice {
    geometry: DeviceGeometry,
    data_offset: u64,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for ZnsDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZnsDevice")
            .field("geometry", &self.geometry)
            .field("file_backed", &self.is_file_backed())
            .finish()
    }
}

impl ZnsDevice {
    /// Creates a device with every zone empty. With a `backing_path` the
    /// device lives in a file image (created or truncated), otherwise in memory.
    pub fn create(geometry: DeviceGeometry, backing_path: Option<&Path>) -> Result<Self, ZnsError> {
        geometry.validate()?;
        let zones = geometry.zone_count as usize;
        let Some(path) = backing_path else {
            let capacity = usize::try_from(geometry.capacity())
                .map_err(|_| ZnsError::InvalidGeometry("capacity exceeds addressable memory"))?;
            return Ok(ZnsDevice {
                geometry,
                data_offset: 0,
                inner: Mutex::new(Inner {
                    write_pointers: vec![0; zones],
                    backing: Backing::Memory(vec![0; capacity]),
                }),
            });
        };

        let data_offset = HEADER_LEN + ZONE_ENTRY_LEN * geometry.zone_count;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        let mut header = Vec::with_capacity(data_offset as usize);
        header.extend_from_slice(&IMAGE_MAGIC);
        header.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
        header.extend_from_slice(&geometry.block_size.to_le_bytes());
        header.extend_from_slice(&geometry.zone_size.to_le_bytes());
        header.extend_from_slice(&geometry.zone_count.to_le_bytes());
        for _ in 0..zones {
            header.push(ZoneState::Empty.to_byte());
            header.extend_from_slice(&0u64.to_le_bytes());
        }
        file.write_all_at(&header, 0)?;
        file.set_len(data_offset + geometry.capacity())?;
        Ok(ZnsDevice {
            geometry,
            data_offset,
            inner: Mutex::new(Inner {
                write_pointers: vec![0; zones],
                backing: Backing::File(file),
            }),
        })
    }

    pub fn in_memory(geometry: DeviceGeometry) -> Result<Self, ZnsError> {
        Self::create(geometry, None)
    }

    /// Reopens a file image written by [`ZnsDevice::create`].
    pub fn open(path: &Path) -> Result<Self, ZnsError> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact_at(&mut header, 0)
            .map_err(|_| ZnsError::BadImage("truncated header".into()))?;
        if header[0..4] != IMAGE_MAGIC {
            return Err(ZnsError::BadImage("bad magic".into()));
        }
        let u64_at = |at: usize| u64::from_le_bytes(header[at..at + 8].try_into().unwrap());
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != IMAGE_VERSION {
            return Err(ZnsError::BadImage(format!("unsupported version {version}")));
        }
        let geometry = DeviceGeometry::new(u64_at(8), u64_at(16), u64_at(24))?;
        let data_offset = HEADER_LEN + ZONE_ENTRY_LEN * geometry.zone_count;
        if file.metadata()?.len() < data_offset + geometry.capacity() {
            return Err(ZnsError::BadImage("data area is truncated".into()));
        }

        let mut table = vec![0u8; (ZONE_ENTRY_LEN * geometry.zone_count) as usize];
        file.read_exact_at(&mut table, HEADER_LEN)?;
        let bpz = geometry.blocks_per_zone();
        let mut write_pointers = Vec::with_capacity(geometry.zone_count as usize);
        for (zone, entry) in table.chunks_exact(ZONE_ENTRY_LEN as usize).enumerate() {
            let wp = u64::from_le_bytes(entry[1..9].try_into().unwrap());
            let state = ZoneState::from_byte(entry[0]);
            if wp > bpz || state != Some(ZoneState::for_write_pointer(wp, bpz)) {
                return Err(ZnsError::BadImage(format!(
                    "zone {zone} has inconsistent state/write pointer"
                )));
            }
            write_pointers.push(wp);
        }

        Ok(ZnsDevice {
            geometry,
            data_offset,
            inner: Mutex::new(Inner {
                write_pointers,
                backing: Backing::File(file),
            }),
        })
    }

    pub fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    pub fn is_file_backed(&self) -> bool {
        matches!(self.lock().backing, Backing::File(_))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn descriptor(&self, zone_id: u64, wp: u64) -> ZoneDescriptor {
        let bpz = self.geometry.blocks_per_zone();
        ZoneDescriptor {
            zone_id,
            state: ZoneState::for_write_pointer(wp, bpz),
            write_pointer: wp,
            start_lba: zone_id * bpz,
        }
    }

    fn check_zone(&self, zone_id: u64) -> Result<(), ZnsError> {
        if zone_id >= self.geometry.zone_count {
            return Err(ZnsError::BadZoneId(zone_id));
        }
        Ok(())
    }

    /// Snapshot of every zone, in zone order.
    pub fn zone_report(&self) -> Vec<ZoneDescriptor> {
        let inner = self.lock();
        inner
            .write_pointers
            .iter()
            .enumerate()
            .map(|(zone, &wp)| self.descriptor(zone as u64, wp))
            .collect()
    }

    pub fn zone(&self, zone_id: u64) -> Result<ZoneDescriptor, ZnsError> {
        self.check_zone(zone_id)?;
        let wp = self.lock().write_pointers[zone_id as usize];
        Ok(self.descriptor(zone_id, wp))
    }

    /// Writes `data` at the zone's write pointer and returns the absolute LBA
    /// of the first block written. The append is all-or-nothing.
    pub fn zone_append(&self, zone_id: u64, data: &[u8]) -> Result<u64, ZnsError> {
        self.check_zone(zone_id)?;
        let bs = self.geometry.block_size;
        if data.is_empty() || !(data.len() as u64).is_multiple_of(bs) {
            return Err(ZnsError::UnalignedLength(data.len()));
        }
        let blocks = data.len() as u64 / bs;
        let bpz = self.geometry.blocks_per_zone();

        let mut inner = self.lock();
        let wp = inner.write_pointers[zone_id as usize];
        let free = bpz - wp;
        if free == 0 {
            return Err(ZnsError::ZoneFull(zone_id));
        }
        if blocks > free {
            return Err(ZnsError::Overflow {
                zone: zone_id,
                blocks,
                free,
            });
        }

        let lba = zone_id * bpz + wp;
        inner.backing.write_data(lba * bs, data, self.data_offset)?;
        let new_wp = wp + blocks;
        self.persist_zone(&mut inner, zone_id, new_wp)?;
        inner.write_pointers[zone_id as usize] = new_wp;
        Ok(lba)
    }

    fn persist_zone(&self, inner: &mut Inner, zone_id: u64, wp: u64) -> Result<(), ZnsError> {
        if let Backing::File(file) = &inner.backing {
            let state = ZoneState::for_write_pointer(wp, self.geometry.blocks_per_zone());
            let mut entry = [0u8; ZONE_ENTRY_LEN as usize];
            entry[0] = state.to_byte();
            entry[1..].copy_from_slice(&wp.to_le_bytes());
            file.write_all_at(&entry, HEADER_LEN + ZONE_ENTRY_LEN * zone_id)?;
        }
        Ok(())
    }

    /// Reads `length` bytes at `offset` within block `lba`. Single-block only.
    pub fn read(&self, lba: u64, offset: u64, length: u64) -> Result<Vec<u8>, ZnsError> {
        self.check_read(lba, offset, length)?;
        let mut out = vec![0u8; length as usize];
        self.read_into(lba, offset, &mut out)?;
        Ok(out)
    }

    /// Like [`ZnsDevice::read`] but fills `dest` (whose length is the read length).
    pub fn read_into(&self, lba: u64, offset: u64, dest: &mut [u8]) -> Result<(), ZnsError> {
        let length = dest.len() as u64;
        self.check_read(lba, offset, length)?;
        let bpz = self.geometry.blocks_per_zone();
        let inner = self.lock();
        let zone = lba / bpz;
        if lba % bpz >= inner.write_pointers[zone as usize] {
            return Err(ZnsError::UnwrittenRead(lba));
        }
        inner
            .backing
            .read_data(lba * self.geometry.block_size + offset, dest, self.data_offset)?;
        Ok(())
    }

    fn check_read(&self, lba: u64, offset: u64, length: u64) -> Result<(), ZnsError> {
        let in_block = offset
            .checked_add(length)
            .is_some_and(|end| end <= self.geometry.block_size);
        if lba >= self.geometry.total_blocks() || !in_block {
            return Err(ZnsError::OutOfRange {
                lba,
                offset,
                length,
            });
        }
        Ok(())
    }

    /// Moves the zone's write pointer back to its start. Data is not erased;
    /// the read gate makes it unreachable.
    pub fn zone_reset(&self, zone_id: u64) -> Result<(), ZnsError> {
        self.check_zone(zone_id)?;
        let mut inner = self.lock();
        self.persist_zone(&mut inner, zone_id, 0)?;
        inner.write_pointers[zone_id as usize] = 0;
        Ok(())
    }

    /// Zeroes the whole media and resets every zone. Unlike
    /// [`ZnsDevice::zone_reset`] this touches every byte, so a fresh in-memory
    /// device is fully committed afterwards.
    pub fn format(&self) -> Result<(), ZnsError> {
        let mut inner = self.lock();
        match &mut inner.backing {
            Backing::Memory(buf) => buf.fill(0),
            Backing::File(file) => {
                let zeros = vec![0u8; FORMAT_CHUNK.min(self.geometry.capacity()) as usize];
                let mut pos = 0;
                while pos < self.geometry.capacity() {
                    let n = (self.geometry.capacity() - pos).min(zeros.len() as u64) as usize;
                    file.write_all_at(&zeros[..n], self.data_offset + pos)?;
                    pos += n as u64;
                }
            }
        }
        for zone in 0..self.geometry.zone_count {
            self.persist_zone(&mut inner, zone, 0)?;
            inner.write_pointers[zone as usize] = 0;
        }
        Ok(())
    }

    /// Flushes a file image to stable storage. No-op in memory.
    pub fn sync(&self) -> Result<(), ZnsError> {
        if let Backing::File(file) = &self.lock().backing {
            file.sync_all()?;
        }
        Ok(())
    }
}

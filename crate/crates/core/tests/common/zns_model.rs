// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Reference model of a zoned device: one growable byte vector per zone.

use rand::rngs::StdRng;
use rand::Rng;

use zcsd::zns::{DeviceGeometry, ZnsDevice, ZnsError, ZoneState};

#[derive(Debug, Clone)]
pub enum Op {
    Append { zone: u64, blocks: u64, seed: u8 },
    Read { lba: u64, offset: u64, len: u64 },
    Reset { zone: u64 },
    Unaligned { zone: u64, len: usize },
}

/// What the model predicts for an operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Appended(u64),
    Data(Vec<u8>),
    Done,
    BadZoneId,
    ZoneFull,
    Overflow,
    Unaligned,
    UnwrittenRead,
    OutOfRange,
}

pub fn classify<T>(r: Result<T, ZnsError>) -> Result<T, Expect> {
    r.map_err(|e| match e {
        ZnsError::BadZoneId(_) => Expect::BadZoneId,
        ZnsError::ZoneFull(_) => Expect::ZoneFull,
        ZnsError::Overflow { .. } => Expect::Overflow,
        ZnsError::UnalignedLength(_) => Expect::Unaligned,
        ZnsError::UnwrittenRead(_) => Expect::UnwrittenRead,
        ZnsError::OutOfRange { .. } => Expect::OutOfRange,
        other => panic!("unexpected device error {other:?}"),
    })
}

pub struct Model {
    pub geometry: DeviceGeometry,
    pub zones: Vec<Vec<u8>>,
}

pub fn block_data(seed: u8, blocks: u64, block_size: u64) -> Vec<u8> {
    (0..blocks * block_size).map(|i| seed.wrapping_add((i * 7 % 251) as u8)).collect()
}

impl Model {
    pub fn new(geometry: DeviceGeometry) -> Self {
        Model {
            geometry,
            zones: vec![Vec::new(); geometry.zone_count as usize],
        }
    }

    pub fn apply(&mut self, op: &Op) -> Expect {
        let g = self.geometry;
        match *op {
            Op::Append { zone, blocks, seed } => {
                let Some(z) = self.zones.get_mut(zone as usize) else { return Expect::BadZoneId };
                if blocks == 0 {
                    return Expect::Unaligned;
                }
                let used = z.len() as u64;
                if used == g.zone_size {
                    return Expect::ZoneFull;
                }
                if used + blocks * g.block_size > g.zone_size {
                    return Expect::Overflow;
                }
                z.extend(block_data(seed, blocks, g.block_size));
                Expect::Appended(zone * g.blocks_per_zone() + used / g.block_size)
            }
            Op::Read { lba, offset, len } => {
                if lba >= g.total_blocks() || offset + len > g.block_size {
                    return Expect::OutOfRange;
                }
                let z = &self.zones[(lba / g.blocks_per_zone()) as usize];
                let start = (lba % g.blocks_per_zone()) * g.block_size;
                if start >= z.len() as u64 {
                    return Expect::UnwrittenRead;
                }
                let from = (start + offset) as usize;
                Expect::Data(z[from..from + len as usize].to_vec())
            }
            Op::Reset { zone } => match self.zones.get_mut(zone as usize) {
                Some(z) => {
                    z.clear();
                    Expect::Done
                }
                None => Expect::BadZoneId,
            },
            Op::Unaligned { zone, .. } => {
                if zone >= g.zone_count {
                    Expect::BadZoneId
                } else {
                    Expect::Unaligned
                }
            }
        }
    }

    pub fn state(&self, zone: usize) -> (ZoneState, u64) {
        let wp = self.zones[zone].len() as u64 / self.geometry.block_size;
        let state = if wp == 0 {
            ZoneState::Empty
        } else if wp == self.geometry.blocks_per_zone() {
            ZoneState::Full
        } else {
            ZoneState::Open
        };
        (state, wp)
    }
}

pub fn apply_device(dev: &ZnsDevice, op: &Op) -> Expect {
    let g = dev.geometry();
    let out = match *op {
        Op::Append { zone, blocks, seed } => {
            dev.zone_append(zone, &block_data(seed, blocks, g.block_size)).map(Expect::Appended)
        }
        Op::Read { lba, offset, len } => dev.read(lba, offset, len).map(Expect::Data),
        Op::Reset { zone } => dev.zone_reset(zone).map(|_| Expect::Done),
        Op::Unaligned { zone, len } => dev.zone_append(zone, &vec![0; len]).map(Expect::Appended),
    };
    classify(out).unwrap_or_else(|e| e)
}

pub fn random_op(rng: &mut StdRng, g: DeviceGeometry) -> Op {
    let bpz = g.blocks_per_zone();
    let zone = if rng.gen_ratio(1, 40) { g.zone_count + rng.gen_range(0..3) } else { rng.gen_range(0..g.zone_count) };
    match rng.gen_range(0..100) {
        0..=39 => Op::Append {
            zone,
            blocks: rng.gen_range(1..=bpz.min(4) + 1),
            seed: rng.gen(),
        },
        40..=84 => {
            let lba = rng.gen_range(0..g.total_blocks() + 2);
            let offset = rng.gen_range(0..=g.block_size);
            let len = rng.gen_range(0..=g.block_size + 1 - offset.min(g.block_size));
            Op::Read { lba, offset, len }
        }
        85..=95 => Op::Reset { zone },
        _ => Op::Unaligned {
            zone,
            len: if g.block_size == 1 || rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..g.block_size as usize) },
        },
    }
}

/// Runs `ops` random operations against both the device and the model.
/// Returns the number of divergences (zero expected) and the set of outcome
/// kinds seen.
pub fn differential(dev: &ZnsDevice, ops: usize, rng: &mut StdRng) -> (usize, Vec<&'static str>) {
    let g = dev.geometry();
    let mut model = Model::new(g);
    let mut divergences = 0;
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..ops {
        let op = random_op(rng, g);
        let expected = model.apply(&op);
        let got = apply_device(dev, &op);
        seen.insert(match &expected {
            Expect::Appended(_) => "append",
            Expect::Data(_) => "read",
            Expect::Done => "reset",
            Expect::BadZoneId => "bad-zone",
            Expect::ZoneFull => "zone-full",
            Expect::Overflow => "overflow",
            Expect::Unaligned => "unaligned",
            Expect::UnwrittenRead => "unwritten-read",
            Expect::OutOfRange => "out-of-range",
        });
        if got != expected {
            divergences += 1;
        }
        for z in dev.zone_report() {
            let (state, wp) = model.state(z.zone_id as usize);
            if (z.state, z.write_pointer) != (state, wp) || z.start_lba != z.zone_id * g.blocks_per_zone() {
                divergences += 1;
            }
        }
    }
    (divergences, seen.into_iter().collect())
}

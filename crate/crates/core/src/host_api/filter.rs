// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! The integer-filter offload program.
//!
//! Counts the little-endian `u32` values strictly greater than a threshold
//! across `page_count` consecutive blocks starting at `start_lba`, pulling
//! one block at a time into the device scratch memory, and returns the count
//! as 8 little-endian bytes. Constants are baked into the code as wide
//! immediates.

use super::{encode_image, decode_image, ImageError, ProgramImage};
use crate::engine::{HELPER_GET_LBA_SIZE, HELPER_GET_MEM_INFO, HELPER_READ, HELPER_RETURN_DATA};
use crate::vm::{AluOp, Instruction as I, JmpCond, MemSize};

/// Largest page size [`build_filter_program`] sizes its budget check for.
pub const FILTER_MAX_BLOCK_SIZE: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterParams {
    pub threshold: u32,
    pub start_lba: u64,
    pub page_count: u64,
}

// Slot positions of the baked-in constants.
const START_LBA_SLOT: usize = 6;
const PAGE_COUNT_SLOT: usize = 8;
const THRESHOLD_SLOT: usize = 21;

pub fn filter_instructions(params: FilterParams) -> Vec<I> {
    let [lba_lo, lba_hi] = I::lddw(6, params.start_lba);
    let [pages_lo, pages_hi] = I::lddw(7, params.page_count);
    let [thr_lo, thr_hi] = I::lddw(4, params.threshold as u64);
    vec![
        // r9 = scratch base, [r10-8] = scratch size
        I::mov64_reg(1, 10),
        I::alu64_imm(AluOp::Add, 1, -8),
        I::call(HELPER_GET_MEM_INFO),
        I::mov64_reg(9, 0),
        // [r10-16] = page size
        I::call(HELPER_GET_LBA_SIZE),
        I::store_reg(MemSize::DW, 10, 0, -16),
        lba_lo,
        lba_hi,
        pages_lo,
        pages_hi,
        I::mov64_imm(8, 0),
        // 11: outer loop over pages
        I::jmp_imm(JmpCond::Eq, 7, 0, 20),
        I::mov64_reg(1, 6),
        I::mov64_imm(2, 0),
        I::load(MemSize::DW, 3, 10, -16),
        I::mov64_reg(4, 9),
        I::call(HELPER_READ),
        // r1 = cursor, r2 = end of the last whole word
        I::mov64_reg(1, 9),
        I::load(MemSize::DW, 2, 10, -16),
        I::alu64_imm(AluOp::And, 2, -4),
        I::alu64_reg(AluOp::Add, 2, 9),
        thr_lo,
        thr_hi,
        // 23: inner loop over words
        I::jmp_reg(JmpCond::Ge, 1, 2, 5),
        I::load(MemSize::W, 5, 1, 0),
        I::jmp_reg(JmpCond::Le, 5, 4, 1),
        I::alu64_imm(AluOp::Add, 8, 1),
        I::alu64_imm(AluOp::Add, 1, 4),
        I::ja(-6),
        I::alu64_imm(AluOp::Add, 6, 1),
        I::alu64_imm(AluOp::Add, 7, -1),
        I::ja(-21),
        // 32: return the count
        I::store_reg(MemSize::DW, 10, 8, -24),
        I::mov64_reg(1, 10),
        I::alu64_imm(AluOp::Add, 1, -24),
        I::mov64_imm(2, 8),
        I::call(HELPER_RETURN_DATA),
        I::mov64_reg(0, 8),
        I::exit(),
    ]
}

/// Upper bound on the instructions the filter executes over `page_count`
/// pages of `block_size` bytes.
pub fn filter_budget(page_count: u64, block_size: u64) -> Result<u64, ImageError> {
    let per_page = (block_size / 4)
        .checked_mul(6)
        .and_then(|w| w.checked_add(15))
        .ok_or(ImageError::ProgramTooLarge)?;
    page_count
        .checked_mul(per_page)
        .and_then(|n| n.checked_add(17))
        .ok_or(ImageError::ProgramTooLarge)
}

pub fn build_filter_program(
    threshold: u32,
    start_lba: u64,
    page_count: u64,
) -> Result<ProgramImage, ImageError> {
    if page_count == 0 {
        return Err(ImageError::EmptyProgram);
    }
    filter_budget(page_count, FILTER_MAX_BLOCK_SIZE)?;
    let params = FilterParams {
        threshold,
        start_lba,
        page_count,
    };
    let bytes = encode_image(&filter_instructions(params))?;
    decode_image(&bytes)
}

/// Recovers the parameters of an image produced by [`build_filter_program`].
/// Any other image, however similar, yields `None`.
pub fn match_filter_program(image: &ProgramImage) -> Option<FilterParams> {
    let code = image.code();
    let wide = |at: usize| -> Option<u64> {
        let (lo, hi) = (code.get(at)?, code.get(at + 1)?);
        Some(((hi.imm as u32 as u64) << 32) | lo.imm as u32 as u64)
    };
    let params = FilterParams {
        threshold: u32::try_from(wide(THRESHOLD_SLOT)?).ok()?,
        start_lba: wide(START_LBA_SLOT)?,
        page_count: wide(PAGE_COUNT_SLOT)?,
    };
    (params.page_count > 0 && filter_instructions(params) == code).then_some(params)
}

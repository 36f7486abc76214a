// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Bounds-checked interpreter.
//!
//! Programs see a 64-bit virtual address space with exactly two mapped
//! regions: the stack, which ends at `r10`, and the shared region handed in
//! by the embedder. Every load, store, and helper memory argument is
//! translated against those two regions; anything else faults.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::insn::opcode::*;
use super::insn::{Instruction, Program, FRAME_POINTER};

/// Virtual address of the first stack byte.
pub const STACK_BASE: u64 = 0x1_0000_0000;
/// Virtual address of the first shared-region byte.
pub const SHARED_BASE: u64 = 0x2_0000_0000;
pub const DEFAULT_STACK_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{} of {len} byte(s) at {addr:#x} is outside the sandbox", if *.write { "write" } else { "read" })]
pub struct MemFault {
    pub addr: u64,
    pub len: u64,
    pub write: bool,
}

#[inline(always)]
fn locate(base: u64, region_len: usize, addr: u64, len: usize) -> Option<usize> {
    let off = addr.wrapping_sub(base);
    let region_len = region_len as u64;
    (off <= region_len && len as u64 <= region_len - off).then_some(off as usize)
}

/// The program-visible memory: stack and shared region.
pub struct MemoryMap<'a> {
    stack: &'a mut [u8],
    shared: &'a mut [u8],
}

impl<'a> MemoryMap<'a> {
    pub fn new(stack: &'a mut [u8], shared: &'a mut [u8]) -> Self {
        assert!((stack.len() as u64) < SHARED_BASE - STACK_BASE);
        MemoryMap { stack, shared }
    }

    /// Initial value of `r10`: one past the last stack byte.
    pub fn stack_top(&self) -> u64 {
        STACK_BASE + self.stack.len() as u64
    }

    pub fn shared_base(&self) -> u64 {
        SHARED_BASE
    }

    pub fn shared_len(&self) -> usize {
        self.shared.len()
    }

    pub fn shared(&self) -> &[u8] {
        self.shared
    }

    pub fn shared_mut(&mut self) -> &mut [u8] {
        self.shared
    }

    pub fn stack(&self) -> &[u8] {
        self.stack
    }

    pub fn slice(&self, addr: u64, len: usize) -> Result<&[u8], MemFault> {
        if let Some(off) = locate(SHARED_BASE, self.shared.len(), addr, len) {
            return Ok(&self.shared[off..off + len]);
        }
        if let Some(off) = locate(STACK_BASE, self.stack.len(), addr, len) {
            return Ok(&self.stack[off..off + len]);
        }
        Err(MemFault {
            addr,
            len: len as u64,
            write: false,
        })
    }

    pub fn slice_mut(&mut self, addr: u64, len: usize) -> Result<&mut [u8], MemFault> {
        if let Some(off) = locate(SHARED_BASE, self.shared.len(), addr, len) {
            return Ok(&mut self.shared[off..off + len]);
        }
        if let Some(off) = locate(STACK_BASE, self.stack.len(), addr, len) {
            return Ok(&mut self.stack[off..off + len]);
        }
        Err(MemFault {
            addr,
            len: len as u64,
            write: true,
        })
    }

    #[inline]
    fn load(&self, addr: u64, width: usize) -> Result<u64, MemFault> {
        let bytes = self.slice(addr, width)?;
        Ok(match width {
            1 => bytes[0] as u64,
            2 => u16::from_le_bytes(bytes.try_into().unwrap()) as u64,
            4 => u32::from_le_bytes(bytes.try_into().unwrap()) as u64,
            _ => u64::from_le_bytes(bytes.try_into().unwrap()),
        })
    }

    #[inline]
    fn store(&mut self, addr: u64, width: usize, value: u64) -> Result<(), MemFault> {
        let bytes = self.slice_mut(addr, width)?;
        bytes.copy_from_slice(&value.to_le_bytes()[..width]);
        Ok(())
    }
}

/// Why a helper call failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HelperCause {
    MemFault,
    UnwrittenRead,
    OutOfRange,
    ResultOverflow,
    BadArgument,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{cause:?}: {detail}")]
pub struct HelperError {
    pub cause: HelperCause,
    pub detail: String,
}

impl HelperError {
    pub fn new(cause: HelperCause, detail: impl Into<String>) -> Self {
        HelperError {
            cause,
            detail: detail.into(),
        }
    }
}

impl From<MemFault> for HelperError {
    fn from(fault: MemFault) -> Self {
        HelperError::new(HelperCause::MemFault, fault.to_string())
    }
}

/// A host function callable from bytecode. Receives the embedder state, the
/// program's memory, and `r1..=r5`; its return value lands in `r0`.
pub type HelperFn<E> = fn(&mut E, &mut MemoryMap<'_>, [u64; 5]) -> Result<u64, HelperError>;

pub struct Helper<E> {
    pub name: &'static str,
    pub func: HelperFn<E>,
}

impl<E> Clone for Helper<E> {
    fn clone(&self) -> Self {
        Helper {
            name: self.name,
            func: self.func,
        }
    }
}

impl<E> fmt::Debug for Helper<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// Execution limits and the helper table for a family of runs.
#[derive(Debug)]
pub struct VmConfig<E> {
    pub max_instructions: u64,
    pub stack_size: usize,
    helpers: BTreeMap<u32, Helper<E>>,
}

impl<E> Clone for VmConfig<E> {
    fn clone(&self) -> Self {
        VmConfig {
            max_instructions: self.max_instructions,
            stack_size: self.stack_size,
            helpers: self.helpers.clone(),
        }
    }
}

impl<E> VmConfig<E> {
    pub fn new(max_instructions: u64) -> Self {
        assert!(max_instructions > 0, "instruction budget must be positive");
        VmConfig {
            max_instructions,
            stack_size: DEFAULT_STACK_SIZE,
            helpers: BTreeMap::new(),
        }
    }

    pub fn with_stack_size(mut self, stack_size: usize) -> Self {
        assert!(stack_size > 0, "stack must not be empty");
        self.stack_size = stack_size;
        self
    }

    pub fn with_helper(mut self, id: u32, name: &'static str, func: HelperFn<E>) -> Self {
        self.register_helper(id, name, func);
        self
    }

    pub fn register_helper(&mut self, id: u32, name: &'static str, func: HelperFn<E>) {
        self.helpers.insert(id, Helper { name, func });
    }

    pub fn helper(&self, id: u32) -> Option<&Helper<E>> {
        self.helpers.get(&id)
    }

    pub fn helper_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.helpers.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub instructions_executed: u64,
    pub helper_calls: u64,
}

/// Per-run state: registers, memory, and counters.
pub struct ExecContext<'a> {
    pub registers: [u64; 11],
    pub memory: MemoryMap<'a>,
    pub counters: Counters,
}

impl<'a> ExecContext<'a> {
    /// Zeroed registers except `r10`, which points at the stack top.
    pub fn new(stack: &'a mut [u8], shared: &'a mut [u8]) -> Self {
        let memory = MemoryMap::new(stack, shared);
        let mut registers = [0; 11];
        registers[FRAME_POINTER as usize] = memory.stack_top();
        ExecContext {
            registers,
            memory,
            counters: Counters::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("instruction budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("memory fault at pc {pc}: {fault}")]
    MemFault { pc: usize, fault: MemFault },
    #[error("division by zero at pc {pc}")]
    DivByZero { pc: usize },
    #[error("helper {helper} failed at pc {pc}: {error}")]
    HelperFault {
        pc: usize,
        helper: u32,
        error: HelperError,
    },
    #[error("unknown opcode {opcode:#04x} at pc {pc}")]
    UnknownOpcode { pc: usize, opcode: u8 },
    #[error("invalid register r{reg} at pc {pc}")]
    BadRegister { pc: usize, reg: u8 },
    #[error("jump from pc {pc} to {target} leaves the program")]
    JumpOutOfBounds { pc: usize, target: i64 },
    #[error("execution fell off the end of the program after pc {pc}")]
    FellOffEnd { pc: usize },
    #[error("call to unknown helper {id} at pc {pc}")]
    UnknownHelper { pc: usize, id: u32 },
    #[error("write to the frame pointer at pc {pc}")]
    WriteToFramePointer { pc: usize },
}

#[inline(always)]
fn alu64(code: u8, dst: u64, src: u64, pc: usize) -> Result<u64, ExecError> {
    Ok(match code {
        ADD => dst.wrapping_add(src),
        SUB => dst.wrapping_sub(src),
        MUL => dst.wrapping_mul(src),
        DIV => dst.checked_div(src).ok_or(ExecError::DivByZero { pc })?,
        OR => dst | src,
        AND => dst & src,
        LSH => dst << (src & 63),
        RSH => dst >> (src & 63),
        NEG => dst.wrapping_neg(),
        MOD => dst.checked_rem(src).ok_or(ExecError::DivByZero { pc })?,
        XOR => dst ^ src,
        MOV => src,
        _ => ((dst as i64) >> (src & 63)) as u64,
    })
}

#[inline(always)]
fn alu32(code: u8, dst: u32, src: u32, pc: usize) -> Result<u32, ExecError> {
    Ok(match code {
        ADD => dst.wrapping_add(src),
        SUB => dst.wrapping_sub(src),
        MUL => dst.wrapping_mul(src),
        DIV => dst.checked_div(src).ok_or(ExecError::DivByZero { pc })?,
        OR => dst | src,
        AND => dst & src,
        LSH => dst << (src & 31),
        RSH => dst >> (src & 31),
        NEG => dst.wrapping_neg(),
        MOD => dst.checked_rem(src).ok_or(ExecError::DivByZero { pc })?,
        XOR => dst ^ src,
        MOV => src,
        _ => ((dst as i32) >> (src & 31)) as u32,
    })
}

#[inline(always)]
fn condition(code: u8, a: u64, b: u64) -> bool {
    match code {
        JEQ => a == b,
        JGT => a > b,
        JGE => a >= b,
        JSET => a & b != 0,
        JNE => a != b,
        JSGT => (a as i64) > (b as i64),
        JSGE => (a as i64) >= (b as i64),
        JLT => a < b,
        JLE => a <= b,
        JSLT => (a as i64) < (b as i64),
        _ => (a as i64) <= (b as i64),
    }
}

#[inline(always)]
fn reg(pc: usize, r: u8) -> Result<usize, ExecError> {
    if r > FRAME_POINTER {
        return Err(ExecError::BadRegister { pc, reg: r });
    }
    Ok(r as usize)
}

#[inline(always)]
fn writable(pc: usize, r: u8) -> Result<usize, ExecError> {
    if r == FRAME_POINTER {
        return Err(ExecError::WriteToFramePointer { pc });
    }
    reg(pc, r)
}

/// Runs `program` to its `EXIT` and returns `r0`.
///
/// The interpreter does not assume the program was verified: every property
/// the verifier checks statically is also enforced here, one instruction at a
/// time, so an unverified program fails with a fault instead of misbehaving.
pub fn execute<E>(
    program: &Program,
    config: &VmConfig<E>,
    ctx: &mut ExecContext<'_>,
    env: &mut E,
) -> Result<u64, ExecError> {
    let insns: &[Instruction] = program.instructions();
    let len = insns.len();
    let budget = config.max_instructions;
    let regs = &mut ctx.registers;
    let mut pc = 0usize;

    loop {
        if ctx.counters.instructions_executed >= budget {
            return Err(ExecError::BudgetExceeded { limit: budget });
        }
        ctx.counters.instructions_executed += 1;

        let insn = insns[pc];
        let op = insn.opcode;
        let mut next = pc + 1;

        match class(op) {
            CLS_ALU64 | CLS_ALU if is_supported(op) => {
                let d = writable(pc, insn.dst)?;
                let code = op & 0xf0;
                let src = if op & SRC_REG != 0 {
                    regs[reg(pc, insn.src)?]
                } else {
                    insn.imm as i64 as u64
                };
                regs[d] = if class(op) == CLS_ALU64 {
                    alu64(code, regs[d], src, pc)?
                } else {
                    alu32(code, regs[d] as u32, src as u32, pc)? as u64
                };
            }
            CLS_JMP if is_supported(op) => match op & 0xf0 {
                EXIT => return Ok(regs[0]),
                CALL => {
                    let id = insn.imm as u32;
                    let helper = config
                        .helper(id)
                        .ok_or(ExecError::UnknownHelper { pc, id })?;
                    ctx.counters.helper_calls += 1;
                    let args = [regs[1], regs[2], regs[3], regs[4], regs[5]];
                    regs[0] = (helper.func)(env, &mut ctx.memory, args).map_err(|error| {
                        ExecError::HelperFault {
                            pc,
                            helper: id,
                            error,
                        }
                    })?;
                }
                JA => next = jump_target(pc, insn.offset, len)?,
                code => {
                    let a = regs[reg(pc, insn.dst)?];
                    let b = if op & SRC_REG != 0 {
                        regs[reg(pc, insn.src)?]
                    } else {
                        insn.imm as i64 as u64
                    };
                    if condition(code, a, b) {
                        next = jump_target(pc, insn.offset, len)?;
                    }
                }
            },
            CLS_LD if op == LDDW => {
                let d = writable(pc, insn.dst)?;
                let hi = insns.get(pc + 1).ok_or(ExecError::FellOffEnd { pc })?;
                regs[d] = ((hi.imm as u32 as u64) << 32) | insn.imm as u32 as u64;
                next = pc + 2;
            }
            CLS_LDX if is_supported(op) => {
                let d = writable(pc, insn.dst)?;
                let addr = regs[reg(pc, insn.src)?].wrapping_add(insn.offset as i64 as u64);
                regs[d] = ctx
                    .memory
                    .load(addr, mem_width(op))
                    .map_err(|fault| ExecError::MemFault { pc, fault })?;
            }
            CLS_ST | CLS_STX if is_supported(op) => {
                let addr = regs[reg(pc, insn.dst)?].wrapping_add(insn.offset as i64 as u64);
                let value = if class(op) == CLS_STX {
                    regs[reg(pc, insn.src)?]
                } else {
                    insn.imm as i64 as u64
                };
                ctx.memory
                    .store(addr, mem_width(op), value)
                    .map_err(|fault| ExecError::MemFault { pc, fault })?;
            }
            _ => return Err(ExecError::UnknownOpcode { pc, opcode: op }),
        }

        if next >= len {
            return Err(ExecError::FellOffEnd { pc });
        }
        pc = next;
    }
}

#[inline(always)]
fn jump_target(pc: usize, offset: i16, len: usize) -> Result<usize, ExecError> {
    let target = pc as i64 + 1 + offset as i64;
    if target < 0 || target >= len as i64 {
        return Err(ExecError::JumpOutOfBounds { pc, target });
    }
    Ok(target as usize)
}

// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Instruction encoding.
//!
//! Every instruction occupies one 8-byte slot:
//!
//! ```text
//! byte 0     opcode
//! byte 1     dst register (low nibble), src register (high nibble)
//! bytes 2-3  signed offset, little-endian
//! bytes 4-7  signed immediate, little-endian
//! ```
//!
//! The wide immediate load (`LDDW`) spans two slots; the second slot carries
//! the upper 32 bits of the constant in its immediate and is otherwise zero.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Opcode constants for the supported instruction subset.
pub mod opcode {
    // Instruction classes.
    pub const CLS_LD: u8 = 0x00;
    pub const CLS_LDX: u8 = 0x01;
    pub const CLS_ST: u8 = 0x02;
    pub const CLS_STX: u8 = 0x03;
    pub const CLS_ALU: u8 = 0x04;
    pub const CLS_JMP: u8 = 0x05;
    pub const CLS_ALU64: u8 = 0x07;

    // Operand source.
    pub const SRC_IMM: u8 = 0x00;
    pub const SRC_REG: u8 = 0x08;

    // Memory access widths and modes.
    pub const SIZE_W: u8 = 0x00;
    pub const SIZE_H: u8 = 0x08;
    pub const SIZE_B: u8 = 0x10;
    pub const SIZE_DW: u8 = 0x18;
    pub const MODE_IMM: u8 = 0x00;
    pub const MODE_MEM: u8 = 0x60;

    // ALU operation codes.
    pub const ADD: u8 = 0x00;
    pub const SUB: u8 = 0x10;
    pub const MUL: u8 = 0x20;
    pub const DIV: u8 = 0x30;
    pub const OR: u8 = 0x40;
    pub const AND: u8 = 0x50;
    pub const LSH: u8 = 0x60;
    pub const RSH: u8 = 0x70;
    pub const NEG: u8 = 0x80;
    pub const MOD: u8 = 0x90;
    pub const XOR: u8 = 0xa0;
    pub const MOV: u8 = 0xb0;
    pub const ARSH: u8 = 0xc0;

    // Jump operation codes.
    pub const JA: u8 = 0x00;
    pub const JEQ: u8 = 0x10;
    pub const JGT: u8 = 0x20;
    pub const JGE: u8 = 0x30;
    pub const JSET: u8 = 0x40;
    pub const JNE: u8 = 0x50;
    pub const JSGT: u8 = 0x60;
    pub const JSGE: u8 = 0x70;
    pub const CALL: u8 = 0x80;
    pub const EXIT: u8 = 0x90;
    pub const JLT: u8 = 0xa0;
    pub const JLE: u8 = 0xb0;
    pub const JSLT: u8 = 0xc0;
    pub const JSLE: u8 = 0xd0;

    pub const LDDW: u8 = CLS_LD | MODE_IMM | SIZE_DW;
    pub const LDXW: u8 = CLS_LDX | MODE_MEM | SIZE_W;
    pub const LDXH: u8 = CLS_LDX | MODE_MEM | SIZE_H;
    pub const LDXB: u8 = CLS_LDX | MODE_MEM | SIZE_B;
    pub const LDXDW: u8 = CLS_LDX | MODE_MEM | SIZE_DW;
    pub const STW: u8 = CLS_ST | MODE_MEM | SIZE_W;
    pub const STH: u8 = CLS_ST | MODE_MEM | SIZE_H;
    pub const STB: u8 = CLS_ST | MODE_MEM | SIZE_B;
    pub const STDW: u8 = CLS_ST | MODE_MEM | SIZE_DW;
    pub const STXW: u8 = CLS_STX | MODE_MEM | SIZE_W;
    pub const STXH: u8 = CLS_STX | MODE_MEM | SIZE_H;
    pub const STXB: u8 = CLS_STX | MODE_MEM | SIZE_B;
    pub const STXDW: u8 = CLS_STX | MODE_MEM | SIZE_DW;
    pub const JA_OP: u8 = CLS_JMP | JA;
    pub const CALL_OP: u8 = CLS_JMP | CALL;
    pub const EXIT_OP: u8 = CLS_JMP | EXIT;

    pub const fn class(op: u8) -> u8 {
        op & 0x07
    }

    /// Access width in bytes of a load/store opcode.
    pub const fn mem_width(op: u8) -> usize {
        match op & 0x18 {
            SIZE_W => 4,
            SIZE_H => 2,
            SIZE_B => 1,
            _ => 8,
        }
    }

    /// Whether `op` belongs to the supported instruction subset.
    pub const fn is_supported(op: u8) -> bool {
        match class(op) {
            CLS_ALU | CLS_ALU64 => {
                let code = op & 0xf0;
                if code == NEG {
                    op & SRC_REG == 0
                } else {
                    code <= ARSH
                }
            }
            CLS_JMP => match op & 0xf0 {
                JA | CALL | EXIT => op & SRC_REG == 0,
                code => code <= JSLE,
            },
            CLS_LD => op == LDDW,
            CLS_LDX | CLS_ST | CLS_STX => op & 0xe0 == MODE_MEM,
            _ => false,
        }
    }
}

use opcode::*;

/// Highest register index (`r10`, the read-only frame pointer).
pub const FRAME_POINTER: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Instruction {
    pub opcode: u8,
    pub dst: u8,
    pub src: u8,
    pub offset: i16,
    pub imm: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Or,
    And,
    Lsh,
    Rsh,
    Mod,
    Xor,
    Mov,
    Arsh,
}

impl AluOp {
    pub const ALL: [AluOp; 12] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::Div,
        AluOp::Or,
        AluOp::And,
        AluOp::Lsh,
        AluOp::Rsh,
        AluOp::Mod,
        AluOp::Xor,
        AluOp::Mov,
        AluOp::Arsh,
    ];

    pub fn code(self) -> u8 {
        match self {
            AluOp::Add => ADD,
            AluOp::Sub => SUB,
            AluOp::Mul => MUL,
            AluOp::Div => DIV,
            AluOp::Or => OR,
            AluOp::And => AND,
            AluOp::Lsh => LSH,
            AluOp::Rsh => RSH,
            AluOp::Mod => MOD,
            AluOp::Xor => XOR,
            AluOp::Mov => MOV,
            AluOp::Arsh => ARSH,
        }
    }
}

/// Conditional jump predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JmpCond {
    Eq,
    Gt,
    Ge,
    Set,
    Ne,
    Sgt,
    Sge,
    Lt,
    Le,
    Slt,
    Sle,
}

impl JmpCond {
    pub const ALL: [JmpCond; 11] = [
        JmpCond::Eq,
        JmpCond::Gt,
        JmpCond::Ge,
        JmpCond::Set,
        JmpCond::Ne,
        JmpCond::Sgt,
        JmpCond::Sge,
        JmpCond::Lt,
        JmpCond::Le,
        JmpCond::Slt,
        JmpCond::Sle,
    ];

    pub fn code(self) -> u8 {
        match self {
            JmpCond::Eq => JEQ,
            JmpCond::Gt => JGT,
            JmpCond::Ge => JGE,
            JmpCond::Set => JSET,
            JmpCond::Ne => JNE,
            JmpCond::Sgt => JSGT,
            JmpCond::Sge => JSGE,
            JmpCond::Lt => JLT,
            JmpCond::Le => JLE,
            JmpCond::Slt => JSLT,
            JmpCond::Sle => JSLE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemSize {
    B,
    H,
    W,
    DW,
}

impl MemSize {
    pub const ALL: [MemSize; 4] = [MemSize::B, MemSize::H, MemSize::W, MemSize::DW];

    fn bits(self) -> u8 {
        match self {
            MemSize::B => SIZE_B,
            MemSize::H => SIZE_H,
            MemSize::W => SIZE_W,
            MemSize::DW => SIZE_DW,
        }
    }
}

impl Instruction {
    pub const SIZE: usize = 8;

    pub const fn new(opcode: u8, dst: u8, src: u8, offset: i16, imm: i32) -> Self {
        Instruction {
            opcode,
            dst,
            src,
            offset,
            imm,
        }
    }

    pub fn encode(&self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[0] = self.opcode;
        out[1] = (self.dst & 0x0f) | (self.src << 4);
        out[2..4].copy_from_slice(&self.offset.to_le_bytes());
        out[4..8].copy_from_slice(&self.imm.to_le_bytes());
        out
    }

    pub fn decode(slot: &[u8; 8]) -> Self {
        Instruction {
            opcode: slot[0],
            dst: slot[1] & 0x0f,
            src: slot[1] >> 4,
            offset: i16::from_le_bytes([slot[2], slot[3]]),
            imm: i32::from_le_bytes([slot[4], slot[5], slot[6], slot[7]]),
        }
    }

    pub fn alu64_imm(op: AluOp, dst: u8, imm: i32) -> Self {
        Self::new(CLS_ALU64 | SRC_IMM | op.code(), dst, 0, 0, imm)
    }

    pub fn alu64_reg(op: AluOp, dst: u8, src: u8) -> Self {
        Self::new(CLS_ALU64 | SRC_REG | op.code(), dst, src, 0, 0)
    }

    pub fn alu32_imm(op: AluOp, dst: u8, imm: i32) -> Self {
        Self::new(CLS_ALU | SRC_IMM | op.code(), dst, 0, 0, imm)
    }

    pub fn alu32_reg(op: AluOp, dst: u8, src: u8) -> Self {
        Self::new(CLS_ALU | SRC_REG | op.code(), dst, src, 0, 0)
    }

    pub fn neg64(dst: u8) -> Self {
        Self::new(CLS_ALU64 | NEG, dst, 0, 0, 0)
    }

    pub fn neg32(dst: u8) -> Self {
        Self::new(CLS_ALU | NEG, dst, 0, 0, 0)
    }

    pub fn mov64_imm(dst: u8, imm: i32) -> Self {
        Self::alu64_imm(AluOp::Mov, dst, imm)
    }

    pub fn mov64_reg(dst: u8, src: u8) -> Self {
        Self::alu64_reg(AluOp::Mov, dst, src)
    }

    /// Two-slot load of a full 64-bit constant.
    pub fn lddw(dst: u8, value: u64) -> [Self; 2] {
        [
            Self::new(LDDW, dst, 0, 0, value as u32 as i32),
            Self::new(0, 0, 0, 0, (value >> 32) as u32 as i32),
        ]
    }

    /// `dst = *(size *)(src + offset)`
    pub fn load(size: MemSize, dst: u8, src: u8, offset: i16) -> Self {
        Self::new(CLS_LDX | MODE_MEM | size.bits(), dst, src, offset, 0)
    }

    /// `*(size *)(dst + offset) = imm`
    pub fn store_imm(size: MemSize, dst: u8, offset: i16, imm: i32) -> Self {
        Self::new(CLS_ST | MODE_MEM | size.bits(), dst, 0, offset, imm)
    }

    /// `*(size *)(dst + offset) = src`
    pub fn store_reg(size: MemSize, dst: u8, src: u8, offset: i16) -> Self {
        Self::new(CLS_STX | MODE_MEM | size.bits(), dst, src, offset, 0)
    }

    pub fn ja(offset: i16) -> Self {
        Self::new(JA_OP, 0, 0, offset, 0)
    }

    pub fn jmp_imm(cond: JmpCond, dst: u8, imm: i32, offset: i16) -> Self {
        Self::new(CLS_JMP | SRC_IMM | cond.code(), dst, 0, offset, imm)
    }

    pub fn jmp_reg(cond: JmpCond, dst: u8, src: u8, offset: i16) -> Self {
        Self::new(CLS_JMP | SRC_REG | cond.code(), dst, src, offset, 0)
    }

    pub fn call(helper_id: u32) -> Self {
        Self::new(CALL_OP, 0, 0, 0, helper_id as i32)
    }

    pub fn exit() -> Self {
        Self::new(EXIT_OP, 0, 0, 0, 0)
    }

    pub fn is_wide(&self) -> bool {
        self.opcode == LDDW
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.opcode;
        let src_is_reg = op & SRC_REG != 0;
        let operand = |f: &mut fmt::Formatter<'_>| {
            if src_is_reg {
                write!(f, "r{}", self.src)
            } else {
                write!(f, "{:#x}", self.imm)
            }
        };
        match class(op) {
            CLS_ALU | CLS_ALU64 => {
                let name = match op & 0xf0 {
                    ADD => "add",
                    SUB => "sub",
                    MUL => "mul",
                    DIV => "div",
                    OR => "or",
                    AND => "and",
                    LSH => "lsh",
                    RSH => "rsh",
                    NEG => "neg",
                    MOD => "mod",
                    XOR => "xor",
                    MOV => "mov",
                    ARSH => "arsh",
                    _ => return write!(f, "unknown {op:#04x}"),
                };
                let width = if class(op) == CLS_ALU64 { "64" } else { "32" };
                if op & 0xf0 == NEG {
                    return write!(f, "{name}{width} r{}", self.dst);
                }
                write!(f, "{name}{width} r{}, ", self.dst)?;
                operand(f)
            }
            CLS_JMP => match op & 0xf0 {
                JA => write!(f, "ja {:+}", self.offset),
                CALL => write!(f, "call {}", self.imm as u32),
                EXIT => write!(f, "exit"),
                _ => {
                    let name = match op & 0xf0 {
                        JEQ => "jeq",
                        JGT => "jgt",
                        JGE => "jge",
                        JSET => "jset",
                        JNE => "jne",
                        JSGT => "jsgt",
                        JSGE => "jsge",
                        JLT => "jlt",
                        JLE => "jle",
                        JSLT => "jslt",
                        JSLE => "jsle",
                        _ => return write!(f, "unknown {op:#04x}"),
                    };
                    write!(f, "{name} r{}, ", self.dst)?;
                    operand(f)?;
                    write!(f, ", {:+}", self.offset)
                }
            },
            _ if op == LDDW => write!(f, "lddw r{}, {:#x} (low)", self.dst, self.imm as u32),
            CLS_LDX => write!(
                f,
                "ldx{} r{}, [r{}{:+}]",
                mem_width(op) * 8,
                self.dst,
                self.src,
                self.offset
            ),
            CLS_ST => write!(
                f,
                "st{} [r{}{:+}], {:#x}",
                mem_width(op) * 8,
                self.dst,
                self.offset,
                self.imm
            ),
            CLS_STX => write!(
                f,
                "stx{} [r{}{:+}], r{}",
                mem_width(op) * 8,
                self.dst,
                self.offset,
                self.src
            ),
            _ => write!(f, "unknown {op:#04x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("program of {0} bytes is empty or not a whole number of 8-byte slots")]
    TruncatedProgram(usize),
    #[error("wide immediate load at slot {0} is missing a well-formed second slot")]
    MalformedWideImm(usize),
}

/// A decoded program: one [`Instruction`] per slot, including the second
/// slot of each wide immediate load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    helper_ids: BTreeSet<u32>,
}

impl Program {
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(Instruction::SIZE) {
            return Err(DecodeError::TruncatedProgram(bytes.len()));
        }
        let instructions = bytes
            .chunks_exact(Instruction::SIZE)
            .map(|slot| Instruction::decode(slot.try_into().unwrap()))
            .collect();
        Self::from_instructions(instructions)
    }

    pub fn from_instructions(instructions: Vec<Instruction>) -> Result<Self, DecodeError> {
        if instructions.is_empty() {
            return Err(DecodeError::TruncatedProgram(0));
        }
        let mut helper_ids = BTreeSet::new();
        let mut pc = 0;
        while pc < instructions.len() {
            let insn = &instructions[pc];
            if insn.is_wide() {
                match instructions.get(pc + 1) {
                    Some(next) if next.opcode == 0 && next.dst == 0 && next.src == 0 && next.offset == 0 => {}
                    _ => return Err(DecodeError::MalformedWideImm(pc)),
                }
                pc += 2;
                continue;
            }
            if insn.opcode == CALL_OP {
                helper_ids.insert(insn.imm as u32);
            }
            pc += 1;
        }
        Ok(Program {
            instructions,
            helper_ids,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        self.instructions.iter().flat_map(|i| i.encode()).collect()
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    /// Helper ids referenced by `CALL` instructions.
    pub fn declared_helper_ids(&self) -> &BTreeSet<u32> {
        &self.helper_ids
    }

    /// Number of 8-byte slots.
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut pc = 0;
        while pc < self.instructions.len() {
            let insn = &self.instructions[pc];
            if insn.is_wide() {
                let hi = self.instructions[pc + 1].imm as u32 as u64;
                let value = (hi << 32) | insn.imm as u32 as u64;
                writeln!(f, "{pc:5}: lddw r{}, {value:#x}", insn.dst)?;
                pc += 2;
            } else {
                writeln!(f, "{pc:5}: {insn}")?;
                pc += 1;
            }
        }
        Ok(())
    }
}

// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Structural verifier.
//!
//! The verifier only looks at program structure: opcodes, register fields,
//! control flow, and helper ids. It does not track value ranges, so memory
//! safety is left to the interpreter's per-access bounds checks.

use std::fmt;

use super::insn::opcode::*;
use super::insn::{Program, FRAME_POINTER};
use super::interp::VmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    UnknownOpcode(u8),
    BadRegister(u8),
    /// Jump target outside the program.
    JumpOutOfBounds(i64),
    /// Jump target lands on the second slot of a wide immediate load.
    JumpIntoWideImm(usize),
    UnknownHelper(u32),
    /// Non-jump instruction in the last slot, or a conditional jump whose
    /// fall-through leaves the program.
    FallsOffEnd,
    /// The program contains no `EXIT` at all.
    NoExit,
    /// No control-flow path from this instruction reaches an `EXIT`.
    NoPathToExit,
    WritesFramePointer,
    DivisionByZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Violation {
    /// Instruction (slot) index. `NoExit` uses index 0.
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = self.index;
        match self.kind {
            ViolationKind::UnknownOpcode(op) => write!(f, "{at}: unknown opcode {op:#04x}"),
            ViolationKind::BadRegister(r) => write!(f, "{at}: invalid register r{r}"),
            ViolationKind::JumpOutOfBounds(t) => write!(f, "{at}: jump out of bounds (target {t})"),
            ViolationKind::JumpIntoWideImm(t) => {
                write!(f, "{at}: jump into the middle of a wide load (target {t})")
            }
            ViolationKind::UnknownHelper(id) => write!(f, "{at}: unknown helper {id}"),
            ViolationKind::FallsOffEnd => write!(f, "{at}: falls off end"),
            ViolationKind::NoExit => write!(f, "program has no exit"),
            ViolationKind::NoPathToExit => write!(f, "{at}: no path to exit"),
            ViolationKind::WritesFramePointer => write!(f, "{at}: writes read-only r10"),
            ViolationKind::DivisionByZero => write!(f, "{at}: division by constant zero"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks `program` against the supported subset and `config`'s helper table.
pub fn verify<E>(program: &Program, config: &VmConfig<E>) -> VerifyReport {
    let insns = program.instructions();
    let len = insns.len();
    let mut violations = Vec::new();
    let mut flag = |index, kind| violations.push(Violation { index, kind });

    // Second slots of wide loads are data, not instructions.
    let mut is_data = vec![false; len];
    let mut pc = 0;
    while pc < len {
        if insns[pc].is_wide() {
            is_data[pc + 1] = true;
            pc += 2;
        } else {
            pc += 1;
        }
    }

    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); len];
    let mut exits = Vec::new();
    let jump = |pc: usize, offset: i16, flag: &mut dyn FnMut(usize, ViolationKind)| {
        let target = pc as i64 + 1 + offset as i64;
        if target < 0 || target >= len as i64 {
            flag(pc, ViolationKind::JumpOutOfBounds(target));
            None
        } else if is_data[target as usize] {
            flag(pc, ViolationKind::JumpIntoWideImm(target as usize));
            None
        } else {
            Some(target as usize)
        }
    };

    for (pc, insn) in insns.iter().enumerate() {
        if is_data[pc] {
            continue;
        }
        let op = insn.opcode;
        if !is_supported(op) {
            flag(pc, ViolationKind::UnknownOpcode(op));
            continue;
        }
        let reads_src = match class(op) {
            CLS_ALU | CLS_ALU64 | CLS_JMP => op & SRC_REG != 0,
            CLS_LDX | CLS_STX => true,
            _ => false,
        };
        let uses_dst = !matches!(op, JA_OP | CALL_OP | EXIT_OP);
        let writes_dst = matches!(class(op), CLS_ALU | CLS_ALU64 | CLS_LDX) || op == LDDW;
        if uses_dst && insn.dst > FRAME_POINTER {
            flag(pc, ViolationKind::BadRegister(insn.dst));
        }
        if reads_src && insn.src > FRAME_POINTER {
            flag(pc, ViolationKind::BadRegister(insn.src));
        }
        if writes_dst && insn.dst == FRAME_POINTER {
            flag(pc, ViolationKind::WritesFramePointer);
        }

        let fallthrough = if op == LDDW { pc + 2 } else { pc + 1 };
        match class(op) {
            CLS_ALU | CLS_ALU64 => {
                let code = op & 0xf0;
                if (code == DIV || code == MOD) && op & SRC_REG == 0 && insn.imm == 0 {
                    flag(pc, ViolationKind::DivisionByZero);
                }
            }
            CLS_JMP => match op {
                EXIT_OP => {
                    exits.push(pc);
                    continue;
                }
                JA_OP => {
                    if let Some(t) = jump(pc, insn.offset, &mut flag) {
                        successors[pc].push(t);
                    }
                    continue;
                }
                CALL_OP => {
                    let id = insn.imm as u32;
                    if config.helper(id).is_none() {
                        flag(pc, ViolationKind::UnknownHelper(id));
                    }
                }
                _ => {
                    if let Some(t) = jump(pc, insn.offset, &mut flag) {
                        successors[pc].push(t);
                    }
                }
            },
            _ => {}
        }
        if fallthrough >= len {
            flag(pc, ViolationKind::FallsOffEnd);
        } else {
            successors[pc].push(fallthrough);
        }
    }

    if exits.is_empty() {
        flag(0, ViolationKind::NoExit);
    }

    // Backwards reachability from every EXIT over the static CFG.
    let mut predecessors: Vec<Vec<usize>> = vec![Vec::new(); len];
    for (from, succ) in successors.iter().enumerate() {
        for &to in succ {
            predecessors[to].push(from);
        }
    }
    let mut reaches_exit = vec![false; len];
    let mut work = exits;
    for &e in &work {
        reaches_exit[e] = true;
    }
    while let Some(n) = work.pop() {
        for &p in &predecessors[n] {
            if !reaches_exit[p] {
                reaches_exit[p] = true;
                work.push(p);
            }
        }
    }
    for pc in 0..len {
        if !is_data[pc] && !reaches_exit[pc] && is_supported(insns[pc].opcode) {
            flag(pc, ViolationKind::NoPathToExit);
        }
    }

    VerifyReport { violations }
}

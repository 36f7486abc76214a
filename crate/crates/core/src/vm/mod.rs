// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! BPF-style virtual machine: instruction encoding, a structural verifier,
//! and a bounds-checked interpreter with a pluggable helper table.

pub mod insn;
pub mod interp;
pub mod verify;

pub use insn::{opcode, AluOp, DecodeError, Instruction, JmpCond, MemSize, Program, FRAME_POINTER};
pub use interp::{
    execute, Counters, ExecContext, ExecError, Helper, HelperCause, HelperError, HelperFn,
    MemFault, MemoryMap, VmConfig, DEFAULT_STACK_SIZE, SHARED_BASE, STACK_BASE,
};
pub use verify::{verify, Violation, ViolationKind, VerifyReport};

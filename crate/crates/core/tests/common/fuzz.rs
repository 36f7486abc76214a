// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Random program generation and a differential runner.

use rand::rngs::StdRng;
use rand::Rng;

use zcsd::vm::{
    execute, verify, AluOp, ExecContext, ExecError, HelperError, Instruction as I, JmpCond, MemSize, MemoryMap,
    Program, VmConfig, SHARED_BASE,
};

use super::refvm::{self, Outcome, RefVm};

pub const STACK_SIZE: usize = 512;
pub const SHARED_SIZE: usize = 64;
pub const GUARD: usize = 256;
pub const CANARY: u8 = 0xa5;
pub const BUDGET: u64 = 5_000;

fn mix(_: &mut (), _: &mut MemoryMap<'_>, a: [u64; 5]) -> Result<u64, HelperError> {
    Ok((a[0].rotate_left(7) ^ a[1]).wrapping_add(a[2]))
}

fn fill(_: &mut (), mem: &mut MemoryMap<'_>, a: [u64; 5]) -> Result<u64, HelperError> {
    let n = a[1].min(refvm::FILL_MAX);
    mem.slice_mut(a[0], n as usize)?.fill(a[2] as u8);
    Ok(n)
}

pub fn config() -> VmConfig<()> {
    VmConfig::new(BUDGET)
        .with_stack_size(STACK_SIZE)
        .with_helper(refvm::MIX, "mix", mix)
        .with_helper(refvm::FILL, "fill", fill)
}

/// Everything observable about one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observed {
    pub outcome: Outcome,
    pub steps: u64,
    pub stack: Vec<u8>,
    pub shared: Vec<u8>,
    /// Guard bytes around both regions still hold the canary.
    pub canaries_intact: bool,
}

fn guarded(len: usize) -> Vec<u8> {
    vec![CANARY; GUARD + len + GUARD]
}

fn finish(buf: &[u8], len: usize) -> (Vec<u8>, bool) {
    let intact = buf[..GUARD].iter().chain(&buf[GUARD + len..]).all(|&b| b == CANARY);
    (buf[GUARD..GUARD + len].to_vec(), intact)
}

/// Runs `code` on the crate's interpreter.
pub fn run_crate(program: &Program, config: &VmConfig<()>, shared_init: &[u8]) -> Observed {
    let mut stack = guarded(config.stack_size);
    let mut shared = guarded(shared_init.len());
    shared[GUARD..GUARD + shared_init.len()].copy_from_slice(shared_init);
    let (outcome, steps) = {
        let mut ctx = ExecContext::new(
            &mut stack[GUARD..GUARD + config.stack_size],
            &mut shared[GUARD..GUARD + shared_init.len()],
        );
        let r = execute(program, config, &mut ctx, &mut ());
        let outcome = match r {
            Ok(v) => Outcome::Exit(v),
            Err(ExecError::BudgetExceeded { .. }) => Outcome::OutOfBudget,
            Err(ExecError::MemFault { pc, .. }) => Outcome::MemFault { pc },
            Err(ExecError::DivByZero { pc }) => Outcome::DivByZero { pc },
            Err(ExecError::HelperFault { pc, .. }) => Outcome::HelperFault { pc },
            Err(ExecError::UnknownOpcode { pc, .. })
            | Err(ExecError::BadRegister { pc, .. })
            | Err(ExecError::JumpOutOfBounds { pc, .. })
            | Err(ExecError::FellOffEnd { pc })
            | Err(ExecError::UnknownHelper { pc, .. })
            | Err(ExecError::WriteToFramePointer { pc }) => Outcome::Invalid { pc },
        };
        (outcome, ctx.counters.instructions_executed)
    };
    let (stack_bytes, a) = finish(&stack, config.stack_size);
    let (shared_bytes, b) = finish(&shared, shared_init.len());
    Observed {
        outcome,
        steps,
        stack: stack_bytes,
        shared: shared_bytes,
        canaries_intact: a && b,
    }
}

/// Runs raw `code` bytes on the reference evaluator.
pub fn run_reference(code: &[u8], budget: u64, shared_init: &[u8]) -> Observed {
    let mut stack = guarded(STACK_SIZE);
    let mut shared = guarded(shared_init.len());
    shared[GUARD..GUARD + shared_init.len()].copy_from_slice(shared_init);
    let (outcome, steps) = {
        let mut vm = RefVm::new(
            code,
            &mut stack[GUARD..GUARD + STACK_SIZE],
            &mut shared[GUARD..GUARD + shared_init.len()],
        );
        let o = vm.run(budget);
        (o, vm.steps)
    };
    let (stack_bytes, a) = finish(&stack, STACK_SIZE);
    let (shared_bytes, b) = finish(&shared, shared_init.len());
    Observed {
        outcome,
        steps,
        stack: stack_bytes,
        shared: shared_bytes,
        canaries_intact: a && b,
    }
}

pub fn encode(insns: &[I]) -> Vec<u8> {
    insns.iter().flat_map(|i| i.encode()).collect()
}

fn pick<T: Copy>(rng: &mut StdRng, items: &[T]) -> T {
    items[rng.gen_range(0..items.len())]
}

fn interesting_imm(rng: &mut StdRng) -> i32 {
    match rng.gen_range(0..6) {
        0 => rng.gen_range(-4..=4),
        1 => pick(rng, &[i32::MIN, i32::MAX, -1, 31, 32, 63, 64]),
        2 => rng.gen_range(-600..600),
        _ => rng.gen(),
    }
}

/// Emits one random instruction (two slots for a wide load). Memory
/// accesses go through r10 or r9, which the prelude points at the shared
/// region, with offsets straddling both region edges.
fn random_insn(rng: &mut StdRng, out: &mut Vec<I>) {
    let dst = rng.gen_range(0..=8u8);
    let src = rng.gen_range(0..=10u8);
    match rng.gen_range(0..100) {
        0..=29 => {
            let op = pick(rng, &AluOp::ALL);
            let mut imm = interesting_imm(rng);
            if matches!(op, AluOp::Div | AluOp::Mod) && imm == 0 {
                imm = 3;
            }
            out.push(if rng.gen_bool(0.5) { I::alu64_imm(op, dst, imm) } else { I::alu32_imm(op, dst, imm) });
        }
        30..=34 => out.push(if rng.gen_bool(0.5) { I::neg64(dst) } else { I::neg32(dst) }),
        35..=49 => {
            let op = pick(rng, &AluOp::ALL);
            out.push(if rng.gen_bool(0.5) { I::alu64_reg(op, dst, src) } else { I::alu32_reg(op, dst, src) });
        }
        50..=54 => out.extend(I::lddw(dst, rng.gen())),
        55..=74 => {
            let size = pick(rng, &MemSize::ALL);
            let (base, off) = if rng.gen_bool(0.5) {
                (10, rng.gen_range(-(STACK_SIZE as i16) - 12..12))
            } else {
                (9, rng.gen_range(-12..SHARED_SIZE as i16 + 12))
            };
            out.push(match rng.gen_range(0..3) {
                0 => I::load(size, dst, base, off),
                1 => I::store_imm(size, base, off, interesting_imm(rng)),
                _ => I::store_reg(size, base, src, off),
            });
        }
        75..=89 => {
            // Mostly forward. Targets past the end are rejected by the verifier.
            let off = if rng.gen_bool(0.8) { rng.gen_range(0..8) } else { rng.gen_range(-8..0) };
            let cond = pick(rng, &JmpCond::ALL);
            out.push(if rng.gen_bool(0.5) {
                I::jmp_imm(cond, dst, interesting_imm(rng), off)
            } else {
                I::jmp_reg(cond, dst, src, off)
            });
        }
        90..=93 => out.push(I::ja(rng.gen_range(-6..8))),
        _ => {
            // Helper call with a pointer-ish first argument half the time.
            if rng.gen_bool(0.5) {
                out.push(I::mov64_reg(1, pick(rng, &[9, 10])));
                out.push(I::alu64_imm(AluOp::Add, 1, rng.gen_range(-530..80)));
            }
            out.push(I::call(pick(rng, &[refvm::MIX, refvm::FILL])));
        }
    }
}

/// A random program that decodes cleanly. Whether it verifies is up to the
/// caller to check.
pub fn random_program(rng: &mut StdRng) -> Vec<I> {
    let mut insns = Vec::new();
    insns.extend(I::lddw(9, SHARED_BASE));
    for r in 1..=4u8 {
        if rng.gen_bool(0.5) {
            insns.extend(I::lddw(r, rng.gen()));
        }
    }
    let body = rng.gen_range(1..40);
    while insns.len() < body + 8 {
        random_insn(rng, &mut insns);
    }
    if rng.gen_bool(0.5) {
        insns.push(I::mov64_reg(0, rng.gen_range(0..=9)));
    }
    insns.push(I::exit());
    insns
}

/// Generates random programs until one decodes and passes the verifier.
pub fn random_verified(rng: &mut StdRng, config: &VmConfig<()>) -> (Vec<u8>, Program, u64) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let code = encode(&random_program(rng));
        let Ok(program) = Program::decode(&code) else { continue };
        if verify(&program, config).passed() {
            return (code, program, attempts);
        }
    }
}

// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Small programs with hand-computed results, one or two features each.

use zcsd::vm::{AluOp, Instruction as I, JmpCond, MemSize, SHARED_BASE};

use super::refvm::{Outcome, FILL, MIX};

pub struct Case {
    pub name: &'static str,
    pub code: Vec<I>,
    pub shared: Vec<u8>,
    pub expect: Outcome,
}

fn case(name: &'static str, code: Vec<I>, expect: Outcome) -> Case {
    Case {
        name,
        code,
        shared: Vec::new(),
        expect,
    }
}

fn with_lddw(dst: u8, value: u64, rest: Vec<I>) -> Vec<I> {
    let mut v = I::lddw(dst, value).to_vec();
    v.extend(rest);
    v
}

use AluOp::*;
use Outcome::*;

pub fn cases() -> Vec<Case> {
    let mut v = vec![
        case("mov-exit", vec![I::mov64_imm(0, 42), I::exit()], Exit(42)),
        case(
            "add-sub-wraps-below-zero",
            vec![I::mov64_imm(0, 10), I::alu64_imm(Add, 0, 5), I::alu64_imm(Sub, 0, 20), I::exit()],
            Exit(0xffff_ffff_ffff_fffb),
        ),
        case(
            "mul-wraps",
            with_lddw(0, 0x8000_0000_0000_0001, vec![I::alu64_imm(Mul, 0, 2), I::exit()]),
            Exit(2),
        ),
        case(
            "div-and-mod",
            vec![
                I::mov64_imm(0, 100),
                I::alu64_imm(Div, 0, 7),
                I::mov64_imm(1, 100),
                I::alu64_imm(Mod, 1, 7),
                I::alu64_imm(Lsh, 0, 8),
                I::alu64_reg(Or, 0, 1),
                I::exit(),
            ],
            Exit(14 * 256 + 2),
        ),
        case(
            "add32-wraps-and-zero-extends",
            vec![I::mov64_imm(0, -1), I::alu32_imm(Add, 0, 2), I::exit()],
            Exit(1),
        ),
        case(
            "mov32-drops-upper-half",
            with_lddw(0, 0xaaaa_aaaa_bbbb_bbbb, vec![I::alu32_reg(Mov, 0, 0), I::exit()]),
            Exit(0xbbbb_bbbb),
        ),
        case("neg64", vec![I::mov64_imm(0, 5), I::neg64(0), I::exit()], Exit(0xffff_ffff_ffff_fffb)),
        case("neg32", vec![I::mov64_imm(0, 5), I::neg32(0), I::exit()], Exit(0xffff_fffb)),
        case(
            "arsh64-keeps-sign",
            vec![I::mov64_imm(0, -16), I::alu64_imm(Arsh, 0, 2), I::exit()],
            Exit(0xffff_ffff_ffff_fffc),
        ),
        case(
            "arsh32-keeps-sign-in-low-half",
            vec![I::alu32_imm(Mov, 0, -16), I::alu32_imm(Arsh, 0, 2), I::exit()],
            Exit(0xffff_fffc),
        ),
        case(
            "rsh-is-logical",
            vec![I::mov64_imm(0, -16), I::alu64_imm(Rsh, 0, 60), I::exit()],
            Exit(0xf),
        ),
        case(
            "shift-amount-masked",
            vec![I::mov64_imm(0, 1), I::mov64_imm(1, 67), I::alu64_reg(Lsh, 0, 1), I::exit()],
            Exit(8),
        ),
        case(
            "and-xor",
            vec![I::mov64_imm(0, 0xf0f), I::alu64_imm(And, 0, 0xff), I::alu64_imm(Xor, 0, 3), I::exit()],
            Exit(0x0c),
        ),
        case(
            "jeq-skips",
            vec![
                I::mov64_imm(0, 0),
                I::mov64_imm(1, 5),
                I::jmp_imm(JmpCond::Eq, 1, 5, 1),
                I::mov64_imm(0, 1),
                I::exit(),
            ],
            Exit(0),
        ),
        case(
            "signed-vs-unsigned-greater",
            vec![
                I::mov64_imm(0, 0),
                I::mov64_imm(1, -1),
                I::jmp_imm(JmpCond::Sgt, 1, 0, 1),
                I::alu64_imm(Add, 0, 1),
                I::jmp_imm(JmpCond::Gt, 1, 0, 1),
                I::alu64_imm(Add, 0, 10),
                I::exit(),
            ],
            Exit(1),
        ),
        case(
            "countdown-loop-sums",
            vec![
                I::mov64_imm(0, 0),
                I::mov64_imm(1, 10),
                I::alu64_reg(Add, 0, 1),
                I::alu64_imm(Sub, 1, 1),
                I::jmp_imm(JmpCond::Ne, 1, 0, -3),
                I::exit(),
            ],
            Exit(55),
        ),
        case(
            "stack-bytes-little-endian",
            with_lddw(
                1,
                0x1122_3344_5566_7788,
                vec![
                    I::store_reg(MemSize::DW, 10, 1, -8),
                    I::load(MemSize::B, 0, 10, -8),
                    I::load(MemSize::H, 2, 10, -6),
                    I::alu64_imm(Lsh, 0, 16),
                    I::alu64_reg(Or, 0, 2),
                    I::exit(),
                ],
            ),
            Exit(0x88_5566),
        ),
        case(
            "store-imm-sign-extends",
            vec![
                I::store_imm(MemSize::W, 10, -4, -2),
                I::load(MemSize::W, 0, 10, -4),
                I::store_imm(MemSize::DW, 10, -16, -2),
                I::load(MemSize::DW, 1, 10, -16),
                I::alu64_reg(Add, 0, 1),
                I::exit(),
            ],
            Exit(0xffff_fffc),
        ),
        case(
            "stack-underflow-faults",
            vec![I::load(MemSize::B, 0, 10, -513), I::exit()],
            MemFault { pc: 0 },
        ),
        case(
            "stack-top-is-exclusive",
            vec![I::load(MemSize::B, 0, 10, 0), I::exit()],
            MemFault { pc: 0 },
        ),
        case(
            "division-by-zero-register",
            vec![I::mov64_imm(0, 1), I::mov64_imm(1, 0), I::alu64_reg(Div, 0, 1), I::exit()],
            DivByZero { pc: 2 },
        ),
        case(
            "helper-mix",
            vec![
                I::mov64_imm(1, 1),
                I::mov64_imm(2, 0x80),
                I::mov64_imm(3, 5),
                I::call(MIX),
                I::exit(),
            ],
            Exit(5),
        ),
        case(
            "helper-fill-stack",
            vec![
                I::mov64_reg(1, 10),
                I::alu64_imm(Add, 1, -16),
                I::mov64_imm(2, 8),
                I::mov64_imm(3, 0x41),
                I::call(FILL),
                I::load(MemSize::DW, 0, 10, -16),
                I::exit(),
            ],
            Exit(0x4141_4141_4141_4141),
        ),
        case(
            "helper-fill-past-stack-top",
            vec![
                I::mov64_reg(1, 10),
                I::alu64_imm(Add, 1, -16),
                I::mov64_imm(2, 100),
                I::mov64_imm(3, 0x41),
                I::call(FILL),
                I::exit(),
            ],
            HelperFault { pc: 4 },
        ),
        case(
            "jset",
            vec![
                I::mov64_imm(0, 0),
                I::mov64_imm(1, 0b1010),
                I::jmp_imm(JmpCond::Set, 1, 0b0100, 1),
                I::alu64_imm(Add, 0, 1),
                I::jmp_imm(JmpCond::Set, 1, 0b0010, 1),
                I::alu64_imm(Add, 0, 2),
                I::exit(),
            ],
            Exit(1),
        ),
        case(
            "signed-and-unsigned-less-register",
            vec![
                I::mov64_imm(1, -5),
                I::mov64_imm(2, 3),
                I::mov64_imm(0, 0),
                I::jmp_reg(JmpCond::Slt, 1, 2, 1),
                I::mov64_imm(0, 99),
                I::jmp_reg(JmpCond::Lt, 1, 2, 1),
                I::alu64_imm(Add, 0, 7),
                I::exit(),
            ],
            Exit(7),
        ),
        case(
            "budget-stops-long-loop",
            vec![
                I::mov64_imm(1, 0),
                I::alu64_imm(Add, 1, 1),
                I::jmp_imm(JmpCond::Ne, 1, 0, -2),
                I::exit(),
            ],
            OutOfBudget,
        ),
        case("lddw-full-width", with_lddw(0, 0xdead_beef_cafe_f00d, vec![I::exit()]), Exit(0xdead_beef_cafe_f00d)),
        case(
            "mul32-truncates",
            vec![I::alu32_imm(Mov, 0, 0x10000), I::alu32_imm(Mul, 0, 0x10001), I::exit()],
            Exit(0x10000),
        ),
        case(
            "div32-is-unsigned",
            vec![I::mov64_imm(0, -1), I::alu32_imm(Div, 0, 2), I::exit()],
            Exit(0x7fff_ffff),
        ),
        case("mod64-of-max", with_lddw(0, u64::MAX, vec![I::alu64_imm(Mod, 0, 10), I::exit()]), Exit(5)),
        case(
            "jsge-negative-immediate",
            vec![I::mov64_imm(0, 0), I::jmp_imm(JmpCond::Sge, 0, -1, 1), I::mov64_imm(0, 1), I::exit()],
            Exit(0),
        ),
    ];

    v.push(Case {
        name: "shared-region-read",
        code: with_lddw(1, SHARED_BASE, vec![I::load(MemSize::W, 0, 1, 4), I::exit()]),
        shared: vec![1, 2, 3, 4, 5, 6, 7, 8],
        expect: Exit(0x0807_0605),
    });
    v.push(Case {
        name: "shared-region-overrun",
        code: with_lddw(1, SHARED_BASE, vec![I::load(MemSize::DW, 0, 1, 4), I::exit()]),
        shared: vec![1, 2, 3, 4, 5, 6, 7, 8],
        expect: MemFault { pc: 2 },
    });
    v.push(Case {
        name: "shared-region-write-back",
        code: with_lddw(
            1,
            SHARED_BASE,
            vec![
                I::load(MemSize::H, 2, 1, 0),
                I::alu64_imm(Add, 2, 1),
                I::store_reg(MemSize::H, 1, 2, 2),
                I::load(MemSize::W, 0, 1, 0),
                I::exit(),
            ],
        ),
        shared: vec![0xff, 0x00, 0, 0],
        expect: Exit(0x0100_00ff),
    });
    v
}

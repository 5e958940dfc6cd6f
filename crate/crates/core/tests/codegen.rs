mod common;

use qsvm::codegen::asm::{assemble, disassemble, AsmError};
use qsvm::codegen::isa::{Opcode, Operand, Reg};
use qsvm::codegen::{buffer_capacities, static_checks, SYNC_BLOCK};
use qsvm::explorer::{default_horizon, explore};
use qsvm::sched::SchedulerKind;

/// Instruction lines from `label` up to the next phase or sync label.
/// Node-local labels (`P1_N3_EXE`) are dropped.
fn block(text: &str, label: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut inside = false;
    for line in text.lines() {
        if let Some(l) = line.strip_suffix(':') {
            let local = l.contains("_N");
            if inside && !local {
                break;
            }
            inside |= l == label;
            continue;
        }
        if inside {
            out.push(line.trim().to_string());
        }
    }
    out
}

#[test]
fn blue_worker_periodic_block_matches_golden() {
    let p = common::fixture("reaction_wheel.rx");
    let c = common::compile(&p, SchedulerKind::Eg, 2);
    let text = disassemble(&c.bytecode.workers[0]);
    let got = block(&text, "PERIODIC_0");
    let golden: Vec<String> = common::fixture_text("golden/reaction_wheel_eg2_periodic_0.pvm")
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(golden.len(), 14);
    assert_eq!(got, golden, "\n{text}");
}

#[test]
fn golden_opcode_sequence() {
    let ops: Vec<String> = common::fixture_text("golden/reaction_wheel_eg2_periodic_0.pvm")
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(
        ops,
        ["EXE", "ADDI", "WU", "BEQ", "JAL", "EXE", "EXE", "EXE", "ADDI", "DU", "ADDI", "JAL", "BGE", "JAL"]
    );
}

#[test]
fn disassembly_round_trips_on_every_fixture() {
    for (name, p) in common::all_fixtures() {
        for (kind, w) in common::CONFIGS {
            let Ok(c) = common::try_compile(&p, kind, w) else { continue };
            for wb in &c.bytecode.workers {
                let text = disassemble(wb);
                let back = assemble(&text, wb.worker).unwrap_or_else(|e| panic!("{name} {kind} W={w}: {e}"));
                assert_eq!(&back, wb, "{name} {kind} W={w} worker {}", wb.worker);
                assert_eq!(disassemble(&back), text);
            }
        }
    }
}

#[test]
fn assembler_rejects_bad_input() {
    assert!(matches!(assemble("    FOO $zero\n", 0), Err(AsmError::Opcode { line: 1, .. })));
    assert!(matches!(assemble("    JAL $zero, NOWHERE\n", 0), Err(AsmError::UndefinedLabel(l)) if l == "NOWHERE"));
    assert!(matches!(assemble("    ADDI $zero, 5\n", 0), Err(AsmError::Instr { .. })));
    assert!(matches!(assemble("    ADDI $nonsense, $zero, 1\n", 0), Err(AsmError::Register { .. })));
    assert!(matches!(assemble("A:\nA:\n    STP\n", 0), Err(AsmError::DuplicateLabel { .. })));
    assert!(assemble("A:\n    STP\n", 0).is_ok());
}

#[test]
fn static_checks_pass_on_every_fixture() {
    for (name, p) in common::all_fixtures() {
        for (kind, w) in common::CONFIGS {
            let Ok(c) = common::try_compile(&p, kind, w) else {
                assert!(kind == SchedulerKind::Eg && w == 1, "{name} {kind} W={w}");
                continue;
            };
            assert!(static_checks(&c.bytecode, &c.dags).is_empty());
            assert_eq!(c.bytecode.workers.len(), w);
            for wb in &c.bytecode.workers {
                assert!(wb.target(SYNC_BLOCK).is_some());
            }
        }
    }
}

#[test]
fn tampered_bytecode_fails_static_checks() {
    let p = common::fixture("reaction_wheel.rx");
    let mut c = common::compile(&p, SchedulerKind::Eg, 2);
    let wb = &mut c.bytecode.workers[1];
    let exe = wb.instructions.iter().position(|i| i.op == Opcode::EXE).unwrap();
    wb.instructions.remove(exe);
    assert!(!static_checks(&c.bytecode, &c.dags).is_empty());
}

#[test]
fn delayed_feedback_connection_holds_two_events() {
    let p = common::fixture("reaction_wheel.rx");
    let ex = explore(&p, default_horizon(&p));
    // Pushes every 150 us with a 100 us delay: ceil(100/150) + 1 = 2.
    assert_eq!(buffer_capacities(&p, &ex), vec![0, 0, 2, 0]);
}

#[test]
fn capacity_grows_with_delay_over_gap() {
    // Pushes every 20 us into a 70 us delay: ceil(70/20) + 1 = 5.
    let src = "reactor A { timer t offset 0 period 20us; output o; reaction 1 triggers(t) effects(o) wcet 1us body { emit o 1; } }
reactor B { input i; reaction 1 triggers(i) wcet 1us body { } }
connection A.o -> B.i after 70us;
timeout 400us;";
    let p = qsvm::model::parse_program(src).unwrap();
    let ex = explore(&p, default_horizon(&p));
    assert_eq!(buffer_capacities(&p, &ex), vec![5]);
}

#[test]
fn compile_is_byte_identical_across_runs() {
    for (name, p) in common::all_fixtures() {
        let a = common::compile(&p, SchedulerKind::Lb, 2);
        let b = common::compile(&p, SchedulerKind::Lb, 2);
        for (x, y) in a.bytecode.workers.iter().zip(&b.bytecode.workers) {
            assert_eq!(disassemble(x), disassemble(y), "{name}");
        }
        assert_eq!(
            serde_json::to_string(&a.sidecar()).unwrap(),
            serde_json::to_string(&b.sidecar()).unwrap()
        );
    }
}

#[test]
fn redundant_waits_are_dropped() {
    // Between two jumps, a worker only re-waits on a counter for a larger
    // value; a wait already implied by an earlier one is dropped.
    for (name, p) in common::all_fixtures() {
        let Ok(c) = common::try_compile(&p, SchedulerKind::Lb, 4) else { continue };
        for wb in &c.bytecode.workers {
            let mut seen = std::collections::HashMap::new();
            for ins in &wb.instructions {
                match ins.op {
                    Opcode::JAL | Opcode::JALR | Opcode::STP => seen.clear(),
                    Opcode::WU => {
                        let Operand::Reg(r @ Reg::Counter(_)) = &ins.operands[0] else { continue };
                        let v = ins.operands[1].imm().unwrap();
                        let prev = seen.insert(r.clone(), v);
                        assert!(prev.is_none_or(|p| p < v), "{name} worker {}: {}", wb.worker, disassemble(wb));
                    }
                    _ => {}
                }
            }
        }
    }
}

use std::fmt::Write;

use super::program::*;
use super::time::TimeValue;

fn dur(t: TimeValue) -> String {
    format!("{}ns", t.as_ns())
}

/// Canonical text form; durations are always printed in nanoseconds.
pub fn print_program(p: &ProgramDef) -> String {
    let mut s = String::new();
    for r in &p.reactors {
        let _ = writeln!(s, "reactor {} {{", r.name);
        for t in &r.timers {
            let _ = writeln!(
                s,
                "  timer {} offset {} period {};",
                t.name,
                dur(t.offset),
                dur(t.period)
            );
        }
        for i in &r.inputs {
            let _ = writeln!(s, "  input {i};");
        }
        for o in &r.outputs {
            let _ = writeln!(s, "  output {o};");
        }
        for rx in &r.reactions {
            let triggers: Vec<&str> = rx
                .triggers
                .iter()
                .map(|t| match t {
                    TriggerRef::Startup => "startup",
                    TriggerRef::Shutdown => "shutdown",
                    TriggerRef::Timer(i) => r.timers[*i].name.as_str(),
                    TriggerRef::Input(i) => r.inputs[*i].as_str(),
                })
                .collect();
            let _ = write!(s, "  reaction {} triggers({})", rx.priority, triggers.join(", "));
            if !rx.effects.is_empty() {
                let effects: Vec<&str> =
                    rx.effects.iter().map(|e| r.outputs[*e].as_str()).collect();
                let _ = write!(s, " effects({})", effects.join(", "));
            }
            let _ = write!(s, " wcet {}", dur(rx.wcet));
            if !rx.body.is_empty() {
                s.push_str(" body {");
                for op in &rx.body {
                    match op {
                        BodyOp::BusySpin(d) => {
                            let _ = write!(s, " busy_spin {};", dur(*d));
                        }
                        BodyOp::Emit { port, value } => {
                            let _ = write!(s, " emit {} {};", r.outputs[*port], value);
                        }
                        BodyOp::Noop => s.push_str(" noop;"),
                    }
                }
                s.push_str(" }");
            }
            s.push('\n');
        }
        s.push_str("}\n");
    }
    for c in &p.connections {
        let from = &p.reactors[c.from.reactor];
        let to = &p.reactors[c.to.reactor];
        let _ = write!(
            s,
            "connection {}.{} -> {}.{}",
            from.name, from.outputs[c.from.port], to.name, to.inputs[c.to.port]
        );
        if let Some(d) = c.delay {
            let _ = write!(s, " after {}", dur(d));
        }
        s.push_str(";\n");
    }
    if let Some(t) = p.timeout {
        let _ = writeln!(s, "timeout {};", dur(t));
    }
    s
}

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use super::program::*;
use super::time::TimeValue;
use crate::diag::Diagnostic;

/// Zero-delay precedence edges between reactions: the intra-reactor
/// priority chain plus writer → triggered reader across every zero-delay
/// connection. Indexed by [`ReactionId`].
pub fn precedence_graph(p: &ProgramDef) -> Vec<Vec<ReactionId>> {
    let idx = p.index();
    let mut succ = vec![Vec::new(); p.reaction_count()];
    for (ri, r) in p.reactors.iter().enumerate() {
        let mut order: Vec<usize> = (0..r.reactions.len()).collect();
        order.sort_by_key(|&k| r.reactions[k].priority);
        for w in order.windows(2) {
            succ[idx.reaction_id(ri, w[0]).0].push(idx.reaction_id(ri, w[1]));
        }
    }
    for c in p.connections.iter().filter(|c| !c.is_delayed()) {
        let (Some(src), Some(dst)) = (p.reactors.get(c.from.reactor), p.reactors.get(c.to.reactor))
        else {
            continue;
        };
        for (wk, w) in src.reactions.iter().enumerate() {
            if !w.effects.contains(&c.from.port) {
                continue;
            }
            for (rk, rd) in dst.reactions.iter().enumerate() {
                if rd.triggers.contains(&TriggerRef::Input(c.to.port)) {
                    succ[idx.reaction_id(c.from.reactor, wk).0]
                        .push(idx.reaction_id(c.to.reactor, rk));
                }
            }
        }
    }
    for s in &mut succ {
        s.sort();
        s.dedup();
    }
    succ
}

/// Finds one cycle in `succ`, returned as the sequence of nodes on it.
pub fn find_cycle(succ: &[Vec<ReactionId>]) -> Option<Vec<ReactionId>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = succ.len();
    let mut color = vec![0u8; n];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        stack.push((root, 0));
        color[root] = 1;
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < succ[v].len() {
                let w = succ[v][*i].0;
                *i += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => {
                        let start = stack.iter().position(|&(x, _)| x == w).unwrap();
                        return Some(stack[start..].iter().map(|&(x, _)| ReactionId(x)).collect());
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Global execution rank of every reaction: a topological order of the
/// precedence graph, ties broken by (reactor index, priority). Within one tag
/// triggered reactions run in increasing rank.
pub fn reaction_ranks(p: &ProgramDef) -> Result<Vec<usize>, Vec<ReactionId>> {
    let idx = p.index();
    let succ = precedence_graph(p);
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in &succ {
        for w in s {
            indeg[w.0] += 1;
        }
    }
    let key = |i: usize| {
        let (r, k) = idx.reactions[i];
        Reverse((r, p.reactors[r].reactions[k].priority, i))
    };
    let mut heap: BinaryHeap<_> = (0..n).filter(|&i| indeg[i] == 0).map(key).collect();
    let mut rank = vec![usize::MAX; n];
    let mut next = 0;
    while let Some(Reverse((_, _, i))) = heap.pop() {
        rank[i] = next;
        next += 1;
        for w in &succ[i] {
            indeg[w.0] -= 1;
            if indeg[w.0] == 0 {
                heap.push(key(w.0));
            }
        }
    }
    if next < n {
        return Err(find_cycle(&succ).unwrap_or_default());
    }
    Ok(rank)
}

/// Checks every structural invariant of a program. Returns an empty list iff
/// the program is valid.
pub fn validate(p: &ProgramDef) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |code, msg: String| out.push(Diagnostic::error(code, msg));

    if p.reactors.is_empty() {
        err("no-reactors", "no reactors".into());
    }
    let mut names = HashSet::new();
    for r in &p.reactors {
        if !names.insert(r.name.as_str()) {
            err("duplicate-name", format!("duplicate reactor name `{}`", r.name));
        }
        for t in &r.timers {
            if t.period <= TimeValue::ZERO {
                err("timer-period", format!("timer `{}.{}` has non-positive period", r.name, t.name));
            }
            if t.offset < TimeValue::ZERO {
                err("timer-offset", format!("timer `{}.{}` has negative offset", r.name, t.name));
            }
        }
        let mut prios = HashSet::new();
        for rx in &r.reactions {
            let name = format!("{}.{}", r.name, rx.priority);
            if rx.priority == 0 {
                err("priority", format!("reaction `{name}` has priority 0"));
            }
            if !prios.insert(rx.priority) {
                err("duplicate-priority", format!("duplicate priority {} in reactor `{}`", rx.priority, r.name));
            }
            if rx.triggers.is_empty() {
                err("no-triggers", format!("reaction `{name}` has no triggers"));
            }
            for t in &rx.triggers {
                let ok = match *t {
                    TriggerRef::Timer(i) => i < r.timers.len(),
                    TriggerRef::Input(i) => i < r.inputs.len(),
                    _ => true,
                };
                if !ok {
                    err("bad-trigger", format!("reaction `{name}` references a trigger outside its reactor"));
                }
            }
            for &e in &rx.effects {
                if e >= r.outputs.len() {
                    err("bad-effect", format!("reaction `{name}` references an effect outside its reactor"));
                }
            }
            if rx.wcet <= TimeValue::ZERO {
                err("wcet", format!("reaction `{name}` must declare a positive wcet"));
            }
            for op in &rx.body {
                match op {
                    BodyOp::BusySpin(d) if *d < TimeValue::ZERO => {
                        err("body", format!("reaction `{name}` has a negative busy_spin"));
                    }
                    BodyOp::Emit { port, .. } if !rx.effects.contains(port) => {
                        err("body", format!("reaction `{name}` emits on a port it does not declare as an effect"));
                    }
                    _ => {}
                }
            }
            if rx.scripted_duration() > rx.wcet {
                err(
                    "body-exceeds-wcet",
                    format!(
                        "reaction `{name}` body runs {} but declares wcet {}",
                        rx.scripted_duration(),
                        rx.wcet
                    ),
                );
            }
        }
    }

    let mut endpoints_ok = true;
    let mut fed = HashSet::new();
    for c in &p.connections {
        let from_ok = p
            .reactors
            .get(c.from.reactor)
            .is_some_and(|r| c.from.port < r.outputs.len());
        let to_ok = p
            .reactors
            .get(c.to.reactor)
            .is_some_and(|r| c.to.port < r.inputs.len());
        if !from_ok || !to_ok {
            endpoints_ok = false;
            err("bad-connection", "connection endpoint does not exist".into());
            continue;
        }
        let label = format!(
            "{}.{} -> {}.{}",
            p.reactors[c.from.reactor].name,
            p.reactors[c.from.reactor].outputs[c.from.port],
            p.reactors[c.to.reactor].name,
            p.reactors[c.to.reactor].inputs[c.to.port]
        );
        if !fed.insert(c.to) {
            err("multiple-inputs", format!("input of `{label}` already has an incoming connection"));
        }
        if let Some(d) = c.delay {
            if d <= TimeValue::ZERO {
                err("delay", format!("connection `{label}` needs a positive delay"));
            }
        }
    }
    if let Some(t) = p.timeout {
        if t < TimeValue::ZERO {
            err("timeout", "timeout is negative".into());
        }
    }

    if endpoints_ok && out.is_empty() {
        if let Err(cycle) = reaction_ranks(p) {
            let idx = p.index();
            let names: Vec<String> = cycle.iter().map(|&r| p.reaction_name(&idx, r)).collect();
            out.push(Diagnostic::error(
                "causality-cycle",
                format!("zero-delay cycle: {}", names.join(" -> ")),
            ));
        }
    }
    out
}

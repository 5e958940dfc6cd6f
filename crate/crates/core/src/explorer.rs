//! State-space exploration: splits the worst-case execution of a program into
//! an initialization phase, a repeating periodic phase and a shutdown phase,
//! linked by guarded transitions.

use std::collections::HashMap;

use serde::Serialize;

use crate::diag::Diagnostic;
use crate::engine::{Engine, EventKind, Mode, PendingEvent, TagStep};
use crate::model::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Initialization,
    Periodic,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateSpaceNode {
    pub tag: Tag,
    /// In execution order.
    pub invoked: Vec<ReactionId>,
    /// Events still queued after this tag was processed.
    pub pending: Vec<PendingEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseDiagram {
    pub kind: PhaseKind,
    /// Absolute logical time at which the phase (first) begins. Node tags are
    /// absolute; offsets within the phase are `tag - start`.
    pub start: TimeValue,
    pub nodes: Vec<StateSpaceNode>,
    /// Present iff `kind` is periodic.
    pub hyperperiod: Option<TimeValue>,
    /// Time from `start` until control moves to the next phase. `None` for a
    /// terminal phase.
    pub span: Option<TimeValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Guard {
    Default,
    /// Taken once the phase's time offset reaches `threshold` (the last tag,
    /// rounded down to a hyperperiod boundary).
    TimeGeq(TimeValue),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GuardedTransition {
    pub from: usize,
    pub to: usize,
    pub guard: Guard,
    pub time_increment: TimeValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exploration {
    pub phases: Vec<PhaseDiagram>,
    /// Guarded transitions come before the default transition of the same
    /// source phase.
    pub transitions: Vec<GuardedTransition>,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

impl Exploration {
    pub fn phase(&self, kind: PhaseKind) -> Option<&PhaseDiagram> {
        self.phases.iter().find(|p| p.kind == kind)
    }

    pub fn to_json(&self, program: &ProgramDef) -> serde_json::Value {
        let idx = program.index();
        let name = |r: &ReactionId| program.reaction_name(&idx, *r);
        let phases: Vec<_> = self
            .phases
            .iter()
            .map(|ph| {
                let nodes: Vec<_> = ph
                    .nodes
                    .iter()
                    .map(|n| {
                        serde_json::json!({
                            "tag_ns": n.tag.time.as_ns(),
                            "microstep": n.tag.microstep,
                            "invoked": n.invoked.iter().map(name).collect::<Vec<_>>(),
                            "pending": n.pending,
                        })
                    })
                    .collect();
                serde_json::json!({
                    "kind": ph.kind,
                    "start_ns": ph.start.as_ns(),
                    "hyperperiod_ns": ph.hyperperiod.map(|h| h.as_ns()),
                    "span_ns": ph.span.map(|h| h.as_ns()),
                    "nodes": nodes,
                })
            })
            .collect();
        serde_json::json!({ "phases": phases, "transitions": self.transitions })
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Four times the lcm of all timer periods and connection delays (delayed
/// feedback loops recur at their delay), plus the largest offset and the sum
/// of all delays.
pub fn default_horizon(p: &ProgramDef) -> TimeValue {
    let mut lcm: i128 = 1;
    let mut extra = 0i128;
    let mut fold = |v: i64| {
        let v = v.max(1) as i128;
        lcm = (lcm / gcd(lcm, v)).saturating_mul(v).min(i64::MAX as i128);
    };
    let mut max_offset = 0i128;
    for (_, _, t) in p.timers() {
        fold(t.period.as_ns());
        max_offset = max_offset.max(t.offset.as_ns() as i128);
    }
    for c in &p.connections {
        if let Some(d) = c.delay {
            fold(d.as_ns());
            extra = extra.saturating_add(d.as_ns() as i128);
        }
    }
    let h = lcm.saturating_mul(4).saturating_add(max_offset).saturating_add(extra);
    TimeValue(h.min(i64::MAX as i128) as i64)
}

type StateKey = (Vec<ReactionId>, Vec<(i64, u32, EventKind)>);

fn node(engine: &Engine, step: TagStep) -> StateSpaceNode {
    StateSpaceNode { tag: step.tag, invoked: step.invoked, pending: engine.pending() }
}

enum Stop<'p> {
    Exhausted,
    Timeout,
    Horizon,
    /// `before` is the engine just before the repeated state was processed.
    Cycle { first: usize, hyperperiod: TimeValue, before: Box<Engine<'p>> },
}

/// Explores `program` (which must be valid) up to `horizon`.
pub fn explore(program: &ProgramDef, horizon: TimeValue) -> Exploration {
    let timeout = program.timeout;
    let mut engine = Engine::new(program, Mode::WorstCase, None);
    let mut states: Vec<StateSpaceNode> = Vec::new();
    let mut seen: HashMap<StateKey, usize> = HashMap::new();

    let stop = loop {
        let Some(next) = engine.next_tag() else { break Stop::Exhausted };
        if timeout.is_some_and(|t| next.time >= t) {
            break Stop::Timeout;
        }
        if next.time > horizon {
            break Stop::Horizon;
        }
        let before = engine.clone();
        let Some(step) = engine.step() else { break Stop::Exhausted };
        if timeout.is_some_and(|t| step.tag.time >= t) {
            // Only empty tags lay before it; it belongs to shutdown.
            break Stop::Timeout;
        }
        let key: StateKey = (step.invoked.clone(), engine.pending_relative(step.tag));
        if let Some(&first) = seen.get(&key) {
            let hyperperiod = step.tag.time - states[first].tag.time;
            break Stop::Cycle { first, hyperperiod, before: Box::new(before) };
        }
        // A startup invocation can never recur, so keep it out of the
        // periodic phase even if the rest of the state repeats.
        let startup = step.tag.time == TimeValue::ZERO
            && step.invoked.iter().any(|&r| {
                program.reaction(&program.index(), r).triggers.contains(&TriggerRef::Startup)
            });
        if !startup {
            seen.insert(key, states.len());
        }
        states.push(node(&engine, step));
    };

    let mut phases = Vec::new();
    let mut transitions = Vec::new();
    let mut diagnostics = Vec::new();

    match stop {
        Stop::Cycle { first, hyperperiod, before } => {
            let s = states[first].tag.time;
            let periodic_nodes = states.split_off(first);
            if first > 0 || s > TimeValue::ZERO {
                phases.push(PhaseDiagram {
                    kind: PhaseKind::Initialization,
                    start: TimeValue::ZERO,
                    nodes: states,
                    hyperperiod: None,
                    span: Some(s),
                });
                transitions.push(GuardedTransition {
                    from: 0,
                    to: 1,
                    guard: Guard::Default,
                    time_increment: s,
                });
            }
            let pi = phases.len();
            phases.push(PhaseDiagram {
                kind: PhaseKind::Periodic,
                start: s,
                nodes: periodic_nodes,
                hyperperiod: Some(hyperperiod),
                span: Some(hyperperiod),
            });
            if let Some(t) = timeout {
                let k = (t - s).as_ns() / hyperperiod.as_ns();
                let boundary = s + TimeValue(k * hyperperiod.as_ns());
                // The engine about to enter the second hyperperiod, moved ahead
                // by whole hyperperiods; relative-tag equality makes this exact.
                let mut e = *before;
                e.shift(TimeValue((k - 1) * hyperperiod.as_ns()));
                e.set_timeout(t);
                let mut nodes = Vec::new();
                while let Some(step) = e.step() {
                    nodes.push(node(&e, step));
                }
                phases.push(PhaseDiagram {
                    kind: PhaseKind::Shutdown,
                    start: boundary,
                    nodes,
                    hyperperiod: None,
                    span: None,
                });
                transitions.push(GuardedTransition {
                    from: pi,
                    to: pi + 1,
                    guard: Guard::TimeGeq(boundary),
                    time_increment: TimeValue::ZERO,
                });
            }
            transitions.push(GuardedTransition {
                from: pi,
                to: pi,
                guard: Guard::Default,
                time_increment: hyperperiod,
            });
        }
        Stop::Horizon => {
            diagnostics.push(Diagnostic::error(
                "no-periodic-phase",
                format!("no periodic phase found within horizon {horizon}"),
            ));
            phases.push(PhaseDiagram {
                kind: PhaseKind::Initialization,
                start: TimeValue::ZERO,
                nodes: states,
                hyperperiod: None,
                span: None,
            });
        }
        Stop::Exhausted | Stop::Timeout => {
            let terminal = timeout.is_none();
            phases.push(PhaseDiagram {
                kind: PhaseKind::Initialization,
                start: TimeValue::ZERO,
                nodes: states,
                hyperperiod: None,
                span: timeout,
            });
            if let Some(t) = timeout {
                engine.set_timeout(t);
                let mut nodes = Vec::new();
                while let Some(step) = engine.step() {
                    nodes.push(node(&engine, step));
                }
                phases.push(PhaseDiagram {
                    kind: PhaseKind::Shutdown,
                    start: t,
                    nodes,
                    hyperperiod: None,
                    span: None,
                });
                transitions.push(GuardedTransition {
                    from: 0,
                    to: 1,
                    guard: Guard::Default,
                    time_increment: t,
                });
            }
            debug_assert!(terminal || phases.len() == 2);
        }
    }
    Exploration { phases, transitions, diagnostics }
}

/// Unrolls the phases into the invocation sequence they describe, following
/// transitions until `limit` (inclusive) or a terminal phase. Leaving a phase
/// advances time by its span; guards are then checked before the default.
pub fn replay(ex: &Exploration, limit: TimeValue) -> Vec<(Tag, ReactionId)> {
    let mut out = Vec::new();
    if ex.phases.is_empty() {
        return out;
    }
    let mut phase = 0;
    let mut offset = TimeValue::ZERO;
    loop {
        let ph = &ex.phases[phase];
        for n in &ph.nodes {
            let t = n.tag.time - ph.start + offset;
            if t > limit {
                return out;
            }
            out.extend(n.invoked.iter().map(|r| (Tag::new(t, n.tag.microstep), *r)));
        }
        let Some(span) = ph.span else { return out };
        offset = offset + span;
        let next = ex.transitions.iter().filter(|tr| tr.from == phase).find(|tr| match tr.guard {
            Guard::Default => true,
            Guard::TimeGeq(th) => offset >= th,
        });
        let Some(next) = next else { return out };
        if next.guard != Guard::Default {
            offset = offset + next.time_increment;
        }
        if offset > limit {
            return out;
        }
        phase = next.to;
    }
}

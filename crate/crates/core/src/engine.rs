//! Tag-by-tag event unrolling shared by the reference simulator and the
//! state-space explorer.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::*;

/// How reaction outputs are decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Run the scripted bodies; a port is present only if the body emits.
    Actual,
    /// Treat every declared effect as present. Used to enumerate every
    /// invocation a schedule must make room for.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    Startup,
    Shutdown,
    Timer { reactor: ReactorIdx, timer: usize },
    /// Delivery of a value through a delayed connection.
    Arrival { connection: usize, value: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PendingEvent {
    pub tag: Tag,
    pub event: EventKind,
}

/// Reactions invoked at one tag, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStep {
    pub tag: Tag,
    pub invoked: Vec<ReactionId>,
}

#[derive(Debug, Clone)]
pub struct Engine<'p> {
    program: &'p ProgramDef,
    idx: ProgramIndex,
    by_rank: Vec<ReactionId>,
    mode: Mode,
    timeout: Option<TimeValue>,
    queue: BTreeMap<Tag, BTreeSet<EventKind>>,
}

impl<'p> Engine<'p> {
    /// `program` must be valid (in particular free of zero-delay cycles).
    pub fn new(program: &'p ProgramDef, mode: Mode, timeout: Option<TimeValue>) -> Self {
        let idx = program.index();
        let ranks = reaction_ranks(program).expect("program has a causality cycle");
        let mut by_rank: Vec<ReactionId> = (0..ranks.len()).map(ReactionId).collect();
        by_rank.sort_by_key(|r| ranks[r.0]);
        let mut e = Engine { program, idx, by_rank, mode, timeout: None, queue: BTreeMap::new() };
        e.push(Tag::at(TimeValue::ZERO), EventKind::Startup);
        for (ri, ti, t) in program.timers() {
            e.push(Tag::at(t.offset), EventKind::Timer { reactor: ri, timer: ti });
        }
        if let Some(t) = timeout {
            e.set_timeout(t);
        }
        e
    }

    pub fn program(&self) -> &'p ProgramDef {
        self.program
    }

    fn push(&mut self, tag: Tag, ev: EventKind) {
        if let Some(t) = self.timeout {
            if tag.time > t {
                return;
            }
        }
        self.queue.entry(tag).or_default().insert(ev);
    }

    /// Installs (or moves) the last tag: later events are dropped and a
    /// shutdown event is queued at `(t, 0)`.
    pub fn set_timeout(&mut self, t: TimeValue) {
        for evs in self.queue.values_mut() {
            evs.remove(&EventKind::Shutdown);
        }
        self.queue.retain(|tag, evs| tag.time <= t && !evs.is_empty());
        self.timeout = Some(t);
        self.push(Tag::at(t), EventKind::Shutdown);
    }

    /// Moves every pending event `delta` later.
    pub fn shift(&mut self, delta: TimeValue) {
        let q = std::mem::take(&mut self.queue);
        for (tag, evs) in q {
            let tag = Tag::new(tag.time + delta, tag.microstep);
            for ev in evs {
                self.push(tag, ev);
            }
        }
    }

    pub fn next_tag(&self) -> Option<Tag> {
        self.queue.keys().next().copied()
    }

    pub fn pending(&self) -> Vec<PendingEvent> {
        self.queue
            .iter()
            .flat_map(|(t, evs)| evs.iter().map(|e| PendingEvent { tag: *t, event: e.clone() }))
            .collect()
    }

    /// Pending events other than shutdown, timed relative to `now`.
    pub fn pending_relative(&self, now: Tag) -> Vec<(i64, u32, EventKind)> {
        self.queue
            .iter()
            .flat_map(|(t, evs)| {
                evs.iter()
                    .filter(|e| **e != EventKind::Shutdown)
                    .map(move |e| ((t.time - now.time).as_ns(), t.microstep, e.clone()))
            })
            .collect()
    }

    /// Processes queued tags until one invokes at least one reaction and
    /// returns it. `None` once the queue is exhausted.
    pub fn step(&mut self) -> Option<TagStep> {
        while let Some((tag, events)) = self.queue.pop_first() {
            let invoked = self.process(tag, events);
            if !invoked.is_empty() {
                return Some(TagStep { tag, invoked });
            }
        }
        None
    }

    fn process(&mut self, tag: Tag, events: BTreeSet<EventKind>) -> Vec<ReactionId> {
        let p = self.program;
        let nports = self.idx.ports.len();
        let mut present = vec![false; nports];
        let mut value = vec![0i64; nports];
        let mut startup = false;
        let mut shutdown = false;
        let mut timers = BTreeSet::new();
        for ev in events {
            match ev {
                EventKind::Startup => startup = true,
                EventKind::Shutdown => shutdown = true,
                EventKind::Timer { reactor, timer } => {
                    timers.insert((reactor, timer));
                    let period = p.reactors[reactor].timers[timer].period;
                    self.push(
                        Tag::at(tag.time + period),
                        EventKind::Timer { reactor, timer },
                    );
                }
                EventKind::Arrival { connection, value: v } => {
                    let port = self.idx.input_id(p.connections[connection].to);
                    present[port.0] = true;
                    value[port.0] = v;
                }
            }
        }

        let mut invoked = Vec::new();
        for &rid in &self.by_rank {
            let (ri, k) = self.idx.reactions[rid.0];
            let rx = &p.reactors[ri].reactions[k];
            let triggered = rx.triggers.iter().any(|t| match *t {
                TriggerRef::Startup => startup,
                TriggerRef::Shutdown => shutdown,
                TriggerRef::Timer(i) => timers.contains(&(ri, i)),
                TriggerRef::Input(i) => present[self.idx.input_id(PortRef { reactor: ri, port: i }).0],
            });
            if !triggered {
                continue;
            }
            invoked.push(rid);
            let mut written: Vec<(usize, i64)> = Vec::new();
            match self.mode {
                Mode::WorstCase => written.extend(rx.effects.iter().map(|&e| (e, 0))),
                Mode::Actual => {
                    for op in &rx.body {
                        if let BodyOp::Emit { port, value } = op {
                            written.push((*port, *value));
                        }
                    }
                }
            }
            for (port, v) in written {
                let out = PortRef { reactor: ri, port };
                let id = self.idx.output_id(p, out);
                present[id.0] = true;
                value[id.0] = v;
                for c in p.connections.iter().filter(|c| c.from == out && !c.is_delayed()) {
                    let dst = self.idx.input_id(c.to);
                    present[dst.0] = true;
                    value[dst.0] = v;
                }
            }
        }

        for (ci, c) in p.connections.iter().enumerate() {
            if let Some(d) = c.delay {
                let src = self.idx.output_id(p, c.from);
                if present[src.0] {
                    self.push(
                        Tag::at(tag.time + d),
                        EventKind::Arrival { connection: ci, value: value[src.0] },
                    );
                }
            }
        }
        invoked
    }
}

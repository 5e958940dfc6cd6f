//! Single-threaded reference simulator. Its output is the ground truth the
//! compiled schedules are checked against.

use serde::Serialize;

use crate::engine::{Engine, Mode};
use crate::model::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TraceEntry {
    pub tag: Tag,
    pub reaction: ReactionId,
}

/// Reaction invocations ordered by tag, and within a tag by execution rank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LogicalTrace {
    pub entries: Vec<TraceEntry>,
}

impl LogicalTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reactions invoked at exactly `tag`.
    pub fn at(&self, tag: Tag) -> Vec<ReactionId> {
        self.entries.iter().filter(|e| e.tag == tag).map(|e| e.reaction).collect()
    }

    /// CSV with header `tag_time_ns,microstep,reactor,reaction`.
    pub fn to_csv(&self, program: &ProgramDef) -> String {
        let idx = program.index();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tag_time_ns", "microstep", "reactor", "reaction"])
            .expect("in-memory write");
        for e in &self.entries {
            let (r, k) = idx.reactions[e.reaction.0];
            let reactor = &program.reactors[r];
            w.write_record([
                e.tag.time.as_ns().to_string(),
                e.tag.microstep.to_string(),
                reactor.name.clone(),
                reactor.reactions[k].priority.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Runs `program` up to `min(horizon, timeout)` inclusive.
pub fn simulate(program: &ProgramDef, horizon: TimeValue) -> LogicalTrace {
    let mut engine = Engine::new(program, Mode::Actual, program.timeout);
    let mut entries = Vec::new();
    while let Some(step) = engine.step() {
        if step.tag.time > horizon {
            break;
        }
        entries.extend(step.invoked.into_iter().map(|reaction| TraceEntry { tag: step.tag, reaction }));
    }
    LogicalTrace { entries }
}

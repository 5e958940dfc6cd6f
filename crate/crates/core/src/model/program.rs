use serde::{Deserialize, Serialize};

use super::time::TimeValue;

/// Index into [`ProgramDef::reactors`].
pub type ReactorIdx = usize;

/// Flattened reaction index, reactor-major in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReactionId(pub usize);

/// Flattened port index: all ports of reactor 0 (inputs then outputs), then
/// reactor 1, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TriggerRef {
    Startup,
    Shutdown,
    Timer(usize),
    Input(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyOp {
    BusySpin(TimeValue),
    /// Writes `value` to the reactor's output port at index `port`.
    Emit { port: usize, value: i64 },
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerDef {
    pub name: String,
    pub offset: TimeValue,
    pub period: TimeValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionDef {
    pub priority: u32,
    pub triggers: Vec<TriggerRef>,
    /// Indices into the owning reactor's `outputs`.
    pub effects: Vec<usize>,
    pub wcet: TimeValue,
    pub body: Vec<BodyOp>,
}

impl ReactionDef {
    pub fn scripted_duration(&self) -> TimeValue {
        self.body
            .iter()
            .map(|op| match op {
                BodyOp::BusySpin(d) => *d,
                _ => TimeValue::ZERO,
            })
            .fold(TimeValue::ZERO, |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactorDef {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timers: Vec<TimerDef>,
    pub reactions: Vec<ReactionDef>,
}

/// `(reactor, index into that reactor's outputs or inputs)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub reactor: ReactorIdx,
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionDef {
    /// An output port.
    pub from: PortRef,
    /// An input port.
    pub to: PortRef,
    /// `None` for a logically instantaneous connection.
    pub delay: Option<TimeValue>,
}

impl ConnectionDef {
    pub fn is_delayed(&self) -> bool {
        self.delay.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramDef {
    pub reactors: Vec<ReactorDef>,
    pub connections: Vec<ConnectionDef>,
    /// The last tag of the execution.
    pub timeout: Option<TimeValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortDir {
    Input,
    Output,
}

/// Flat lookup tables derived from a [`ProgramDef`].
#[derive(Debug, Clone)]
pub struct ProgramIndex {
    /// `(reactor, index within reactor.reactions)` per [`ReactionId`].
    pub reactions: Vec<(ReactorIdx, usize)>,
    /// `(reactor, direction, index)` per [`PortId`].
    pub ports: Vec<(ReactorIdx, PortDir, usize)>,
    reaction_base: Vec<usize>,
    port_base: Vec<usize>,
}

impl ProgramIndex {
    pub fn new(program: &ProgramDef) -> Self {
        let mut reactions = Vec::new();
        let mut ports = Vec::new();
        let mut reaction_base = Vec::new();
        let mut port_base = Vec::new();
        for (ri, r) in program.reactors.iter().enumerate() {
            reaction_base.push(reactions.len());
            port_base.push(ports.len());
            for k in 0..r.reactions.len() {
                reactions.push((ri, k));
            }
            for k in 0..r.inputs.len() {
                ports.push((ri, PortDir::Input, k));
            }
            for k in 0..r.outputs.len() {
                ports.push((ri, PortDir::Output, k));
            }
        }
        ProgramIndex {
            reactions,
            ports,
            reaction_base,
            port_base,
        }
    }

    pub fn reaction_id(&self, reactor: ReactorIdx, local: usize) -> ReactionId {
        ReactionId(self.reaction_base[reactor] + local)
    }

    pub fn input_id(&self, p: PortRef) -> PortId {
        PortId(self.port_base[p.reactor] + p.port)
    }

    pub fn output_id(&self, program: &ProgramDef, p: PortRef) -> PortId {
        PortId(self.port_base[p.reactor] + program.reactors[p.reactor].inputs.len() + p.port)
    }
}

impl ProgramDef {
    pub fn index(&self) -> ProgramIndex {
        ProgramIndex::new(self)
    }

    pub fn reaction_count(&self) -> usize {
        self.reactors.iter().map(|r| r.reactions.len()).sum()
    }

    pub fn reaction(&self, idx: &ProgramIndex, id: ReactionId) -> &ReactionDef {
        let (r, k) = idx.reactions[id.0];
        &self.reactors[r].reactions[k]
    }

    /// `Reactor.priority`, e.g. `Controller.2`.
    pub fn reaction_name(&self, idx: &ProgramIndex, id: ReactionId) -> String {
        let (r, k) = idx.reactions[id.0];
        format!(
            "{}.{}",
            self.reactors[r].name, self.reactors[r].reactions[k].priority
        )
    }

    pub fn port_name(&self, idx: &ProgramIndex, id: PortId) -> String {
        let (r, dir, k) = idx.ports[id.0];
        let reactor = &self.reactors[r];
        let port = match dir {
            PortDir::Input => &reactor.inputs[k],
            PortDir::Output => &reactor.outputs[k],
        };
        format!("{}.{}", reactor.name, port)
    }

    pub fn reactor_by_name(&self, name: &str) -> Option<ReactorIdx> {
        self.reactors.iter().position(|r| r.name == name)
    }

    /// Connection feeding the given input port, if any.
    pub fn connection_into(&self, to: PortRef) -> Option<usize> {
        self.connections.iter().position(|c| c.to == to)
    }

    pub fn timers(&self) -> impl Iterator<Item = (ReactorIdx, usize, &TimerDef)> {
        self.reactors.iter().enumerate().flat_map(|(ri, r)| {
            r.timers
                .iter()
                .enumerate()
                .map(move |(ti, t)| (ri, ti, t))
        })
    }
}

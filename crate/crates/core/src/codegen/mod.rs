//! Bytecode generation: one instruction sequence per worker per phase,
//! connection helpers, the synchronization block, and phase linking.

pub mod asm;
mod helpers;
pub mod isa;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dag::{DagTask, NodeId, NodeKind};
use crate::diag::Diagnostic;
use crate::explorer::{Exploration, Guard, PhaseKind};
use crate::model::*;
use crate::sched::PartitionedDag;
use isa::build::{i, l, r};
use isa::{FuncRef, Instruction, Opcode, Operand, Reg};

pub use helpers::buffer_capacities;

/// One line of a worker's code before linking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Label(String),
    Instr(Instruction),
}

/// Generated code for one phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseCode {
    pub kind: PhaseKind,
    pub workers: Vec<Vec<Item>>,
    /// Opcodes attributed to each DAG node (the tail node also gets worker
    /// 0's end-of-phase code, the coordinator sync block and the transition
    /// code once linked).
    pub node_instrs: Vec<Vec<Opcode>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerBytecode {
    pub worker: usize,
    pub instructions: Vec<Instruction>,
    /// Label → instruction index.
    pub labels: BTreeMap<String, usize>,
}

impl WorkerBytecode {
    pub fn target(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    /// Labels attached to instruction `pc`.
    pub fn labels_at(&self, pc: usize) -> Vec<&str> {
        self.labels.iter().filter(|(_, &v)| v == pc).map(|(k, _)| k.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionMeta {
    pub name: String,
    pub reactor: String,
    pub rank: usize,
    pub wcet: TimeValue,
    pub body: Vec<BodyOp>,
    /// Output port names (`Reactor.port`) indexed like `BodyOp::Emit::port`.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionMeta {
    pub from_reactor: String,
    pub from_port: String,
    pub to_reactor: String,
    pub to_port: String,
    pub delay: Option<TimeValue>,
    /// Circular buffer size; 0 when the connection needs no buffer.
    pub capacity: usize,
}

/// Tables the VM needs besides the instructions (the JSON sidecar).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramMeta {
    pub workers: usize,
    pub reactors: Vec<String>,
    pub reactions: Vec<ReactionMeta>,
    pub output_ports: Vec<String>,
    pub connections: Vec<ConnectionMeta>,
    /// Initial value of `$timeout`: the guard threshold of the shutdown
    /// transition. `None` when the program never shuts down.
    pub timeout_guard: Option<TimeValue>,
    /// The program's last tag.
    pub last_tag: Option<TimeValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledProgram {
    pub meta: ProgramMeta,
    pub workers: Vec<WorkerBytecode>,
}

fn label_prefix(kind: PhaseKind) -> &'static str {
    match kind {
        PhaseKind::Initialization => "INIT",
        PhaseKind::Periodic => "PERIODIC",
        PhaseKind::Shutdown => "SHUTDOWN",
    }
}

pub fn phase_label(kind: PhaseKind, worker: usize) -> String {
    format!("{}_{worker}", label_prefix(kind))
}

pub const SYNC_BLOCK: &str = "SYNC_BLOCK";

fn ins(op: Opcode, ops: Vec<Operand>) -> Instruction {
    Instruction::new(op, ops)
}

fn exe(f: FuncRef) -> Instruction {
    ins(Opcode::EXE, vec![Operand::Func(f), i(0)])
}

fn port_name(p: &ProgramDef, reactor: ReactorIdx, out: usize) -> String {
    format!("{}.{}", p.reactors[reactor].name, p.reactors[reactor].outputs[out])
}

/// Whether a trigger other than an input port fires at `tag` in every
/// instance of the phase.
fn static_trigger_present(
    p: &ProgramDef,
    reactor: ReactorIdx,
    rx: &ReactionDef,
    tag: Tag,
    kind: PhaseKind,
) -> bool {
    rx.triggers.iter().any(|t| match *t {
        TriggerRef::Startup => kind == PhaseKind::Initialization && tag.time == TimeValue::ZERO,
        TriggerRef::Shutdown => kind == PhaseKind::Shutdown && Some(tag.time) == p.timeout,
        TriggerRef::Timer(k) => {
            let tm = &p.reactors[reactor].timers[k];
            tag.time >= tm.offset && (tag.time - tm.offset).as_ns() % tm.period.as_ns() == 0
        }
        TriggerRef::Input(_) => false,
    })
}

/// Whether some reaction is triggered by the destination of connection `c`.
pub(crate) fn destination_triggers(p: &ProgramDef, c: &ConnectionDef) -> bool {
    p.reactors[c.to.reactor]
        .reactions
        .iter()
        .any(|rx| rx.triggers.contains(&TriggerRef::Input(c.to.port)))
}

/// Instruction generation for one partitioned phase DAG.
pub fn generate_instructions(program: &ProgramDef, pdag: &PartitionedDag, phase_index: usize) -> PhaseCode {
    let idx = program.index();
    let dag = &pdag.dag;
    let w_count = pdag.workers;
    let preds = dag.predecessors();

    let mut pos: HashMap<NodeId, (usize, i64)> = HashMap::new();
    for (w, vs) in pdag.order.iter().enumerate() {
        for (k, &v) in vs.iter().enumerate() {
            pos.insert(v, (w, k as i64 + 1));
        }
    }
    let react = |v: NodeId| -> (ReactionId, Tag, ReactorIdx) {
        let NodeKind::Reaction { reaction, tag, .. } = dag.nodes[v].kind else { unreachable!() };
        (reaction, tag, idx.reactions[reaction.0].0)
    };
    // Reaction nodes in sequentialization order, to find first/last
    // writers and readers at a tag.
    let mut seq: Vec<NodeId> = dag.reaction_nodes().collect();
    seq.sort_by_key(|&v| {
        let (rid, tag, _) = react(v);
        (tag, program.reaction(&idx, rid).priority, v)
    });

    let mut workers: Vec<Vec<Item>> = vec![Vec::new(); w_count];
    let mut node_instrs: Vec<Vec<Opcode>> = vec![Vec::new(); dag.nodes.len()];

    for (w, vs) in pdag.order.iter().enumerate() {
        let mut waited: HashMap<usize, i64> = HashMap::new();
        for &v in vs {
            let mut code: Vec<Item> = Vec::new();
            let (rid, tag, ri) = react(v);
            let rx = program.reaction(&idx, rid);
            let reactor = &program.reactors[ri];
            let offset = dag.nodes[v].offset;

            let mut need: BTreeMap<usize, i64> = BTreeMap::new();
            for &u in &preds[v] {
                if let Some(&(uw, upos)) = pos.get(&u) {
                    if uw != w {
                        let e = need.entry(uw).or_insert(0);
                        *e = (*e).max(upos);
                    }
                }
            }
            for (uw, upos) in need {
                if waited.get(&uw).is_none_or(|&have| have < upos) {
                    code.push(Item::Instr(ins(Opcode::WU, vec![r(Reg::Counter(uw)), i(upos)])));
                    waited.insert(uw, upos);
                }
            }

            if offset > TimeValue::ZERO {
                code.push(Item::Instr(ins(
                    Opcode::ADVI,
                    vec![r(Reg::Tag(reactor.name.clone())), r(Reg::TimeOffset), i(offset.as_ns())],
                )));
                code.push(Item::Instr(ins(Opcode::DU, vec![r(Reg::TimeOffset), i(offset.as_ns())])));
            }

            let exe_label = format!("P{phase_index}_N{v}_EXE");
            let after_label = format!("P{phase_index}_N{v}_AFTER");
            let conditional = !static_trigger_present(program, ri, rx, tag, dag.phase);
            if conditional {
                for t in &rx.triggers {
                    let TriggerRef::Input(port) = *t else { continue };
                    let Some(ci) = program.connection_into(PortRef { reactor: ri, port }) else { continue };
                    let c = &program.connections[ci];
                    let test = if c.is_delayed() {
                        vec![r(Reg::BufHead(ci)), r(Reg::Tag(reactor.name.clone())), l(exe_label.clone())]
                    } else {
                        let sender = port_name(program, c.from.reactor, c.from.port);
                        vec![r(Reg::Present(sender)), r(Reg::One), l(exe_label.clone())]
                    };
                    code.push(Item::Instr(ins(Opcode::BEQ, test)));
                }
                code.push(Item::Instr(ins(Opcode::JAL, vec![r(Reg::Zero), l(after_label.clone())])));
                code.push(Item::Label(exe_label));
            }
            code.push(Item::Instr(exe(FuncRef::Reaction(program.reaction_name(&idx, rid)))));
            if conditional {
                code.push(Item::Label(after_label));
            }

            // Pre-connection helpers: after the last writer of the port at
            // this tag.
            for (ci, c) in program.connections.iter().enumerate() {
                if !c.is_delayed() || c.from.reactor != ri || !rx.effects.contains(&c.from.port) {
                    continue;
                }
                if !destination_triggers(program, c) {
                    continue;
                }
                let last = seq.iter().copied().rfind(|&u| {
                    let (urid, utag, uri) = react(u);
                    utag == tag && uri == ri && program.reaction(&idx, urid).effects.contains(&c.from.port)
                });
                if last == Some(v) {
                    code.push(Item::Instr(exe(FuncRef::PreConn(ci))));
                }
            }
            // Post-connection helpers.
            for t in &rx.triggers {
                let TriggerRef::Input(port) = *t else { continue };
                let Some(ci) = program.connection_into(PortRef { reactor: ri, port }) else { continue };
                let c = &program.connections[ci];
                let emit = if c.is_delayed() {
                    let last = seq.iter().copied().rfind(|&u| {
                        let (urid, utag, uri) = react(u);
                        utag == tag
                            && uri == ri
                            && program.reaction(&idx, urid).triggers.contains(&TriggerRef::Input(port))
                    });
                    last == Some(v)
                } else {
                    // Sole same-tag reader of the sender's port (over every
                    // zero-delay connection out of it).
                    let readers = seq
                        .iter()
                        .filter(|&&u| {
                            let (urid, utag, uri) = react(u);
                            utag == tag
                                && program.reaction(&idx, urid).triggers.iter().any(|ut| match *ut {
                                    TriggerRef::Input(up) => program
                                        .connection_into(PortRef { reactor: uri, port: up })
                                        .map(|k| &program.connections[k])
                                        .is_some_and(|k| !k.is_delayed() && k.from == c.from),
                                    _ => false,
                                })
                        })
                        .count();
                    readers == 1
                };
                if emit {
                    code.push(Item::Instr(exe(FuncRef::PostConn(ci))));
                }
            }
            code.push(Item::Instr(ins(
                Opcode::ADDI,
                vec![r(Reg::Counter(w)), r(Reg::Counter(w)), i(1)],
            )));

            for it in &code {
                if let Item::Instr(x) = it {
                    node_instrs[v].push(x.op);
                }
            }
            workers[w].extend(code);
        }
    }

    if !dag.is_terminal() {
        let p = dag.period.as_ns();
        for (w, code) in workers.iter_mut().enumerate() {
            let mut tail = vec![ins(Opcode::DU, vec![r(Reg::TimeOffset), i(p)])];
            if w == 0 {
                tail.push(ins(Opcode::ADDI, vec![r(Reg::OffsetInc), r(Reg::Zero), i(p)]));
            }
            tail.push(ins(Opcode::JAL, vec![r(Reg::ReturnAddr(w)), l(SYNC_BLOCK)]));
            if w == 0 {
                node_instrs[dag.tail].extend(tail.iter().map(|x| x.op));
            }
            code.extend(tail.into_iter().map(Item::Instr));
        }
    }
    PhaseCode { kind: dag.phase, workers, node_instrs }
}

/// The coordinator (worker 0) or participant half of the barrier run at
/// every phase boundary.
pub fn generate_sync_block(program: &ProgramDef, workers: usize, worker: usize) -> Vec<Instruction> {
    let mut b = Vec::new();
    if worker == 0 {
        for p in 1..workers {
            b.push(ins(Opcode::WU, vec![r(Reg::BinarySema(p)), i(1)]));
        }
        b.push(ins(Opcode::ADD, vec![r(Reg::TimeOffset), r(Reg::TimeOffset), r(Reg::OffsetInc)]));
        for w in 0..workers {
            b.push(ins(Opcode::ADDI, vec![r(Reg::Counter(w)), r(Reg::Zero), i(0)]));
        }
        for rt in &program.reactors {
            b.push(ins(Opcode::ADVI, vec![r(Reg::Tag(rt.name.clone())), r(Reg::TimeOffset), i(0)]));
        }
        for p in 1..workers {
            b.push(ins(Opcode::ADDI, vec![r(Reg::BinarySema(p)), r(Reg::Zero), i(0)]));
        }
        b.push(ins(Opcode::JALR, vec![r(Reg::Zero), r(Reg::ReturnAddr(0)), i(0)]));
    } else {
        b.push(ins(Opcode::ADDI, vec![r(Reg::BinarySema(worker)), r(Reg::Zero), i(1)]));
        b.push(ins(Opcode::WLT, vec![r(Reg::BinarySema(worker)), i(1)]));
        b.push(ins(Opcode::JALR, vec![r(Reg::Zero), r(Reg::ReturnAddr(worker)), i(0)]));
    }
    b
}

/// Places phases in transition order and joins them: default transitions
/// become `JAL`, the timeout guard a `BGE $time_offset, $timeout`, terminal
/// phases end in `STP`. The sync block goes last when any phase uses it.
pub fn link(
    program: &ProgramDef,
    ex: &Exploration,
    phases: &mut [PhaseCode],
    tails: &[NodeId],
    workers: usize,
) -> (Vec<WorkerBytecode>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut placed = vec![false; ex.phases.len()];
    let mut layout = Vec::new();
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(ph) = queue.pop_front() {
        if ph >= ex.phases.len() || placed[ph] {
            continue;
        }
        placed[ph] = true;
        layout.push(ph);
        for tr in ex.transitions.iter().filter(|t| t.from == ph) {
            queue.push_back(tr.to);
        }
    }
    for (k, done) in placed.iter().enumerate() {
        if !done {
            diags.push(Diagnostic::warning("unreachable-phase", format!("phase {k} is never entered")));
        }
    }

    let mut out = Vec::new();
    for w in 0..workers {
        let mut items: Vec<Item> = Vec::new();
        let mut uses_sync = false;
        for &ph in &layout {
            let kind = ex.phases[ph].kind;
            items.push(Item::Label(phase_label(kind, w)));
            items.extend(phases[ph].workers[w].iter().cloned());
            let mut trans = Vec::new();
            let outgoing: Vec<_> = ex.transitions.iter().filter(|t| t.from == ph).collect();
            for tr in outgoing.iter().filter(|t| t.guard != Guard::Default) {
                trans.push(ins(
                    Opcode::BGE,
                    vec![r(Reg::TimeOffset), r(Reg::Timeout), l(phase_label(ex.phases[tr.to].kind, w))],
                ));
            }
            for tr in outgoing.iter().filter(|t| t.guard == Guard::Default) {
                trans.push(ins(
                    Opcode::JAL,
                    vec![r(Reg::ReturnAddr(w)), l(phase_label(ex.phases[tr.to].kind, w))],
                ));
            }
            if outgoing.is_empty() {
                trans.push(ins(Opcode::STP, vec![]));
            } else {
                uses_sync = true;
            }
            if w == 0 {
                phases[ph].node_instrs[tails[ph]].extend(trans.iter().map(|x| x.op));
            }
            items.extend(trans.into_iter().map(Item::Instr));
        }
        if uses_sync {
            let block = generate_sync_block(program, workers, w);
            if w == 0 {
                for &ph in &layout {
                    if ex.transitions.iter().any(|t| t.from == ph) {
                        phases[ph].node_instrs[tails[ph]].extend(block.iter().map(|x| x.op));
                    }
                }
            }
            items.push(Item::Label(SYNC_BLOCK.to_string()));
            items.extend(block.into_iter().map(Item::Instr));
        }
        let mut instructions = Vec::new();
        let mut labels = BTreeMap::new();
        for it in items {
            match it {
                Item::Label(name) => {
                    labels.insert(name, instructions.len());
                }
                Item::Instr(x) => instructions.push(x),
            }
        }
        out.push(WorkerBytecode { worker: w, instructions, labels });
    }
    (out, diags)
}

/// Builds the sidecar tables.
pub fn program_meta(program: &ProgramDef, ex: &Exploration, workers: usize) -> ProgramMeta {
    let idx = program.index();
    let ranks = reaction_ranks(program).expect("valid program");
    let capacities = buffer_capacities(program, ex);
    let reactions = (0..program.reaction_count())
        .map(|k| {
            let rid = ReactionId(k);
            let (ri, _) = idx.reactions[k];
            let rx = program.reaction(&idx, rid);
            ReactionMeta {
                name: program.reaction_name(&idx, rid),
                reactor: program.reactors[ri].name.clone(),
                rank: ranks[k],
                wcet: rx.wcet,
                body: rx.body.clone(),
                outputs: (0..program.reactors[ri].outputs.len()).map(|o| port_name(program, ri, o)).collect(),
            }
        })
        .collect();
    let output_ports = program
        .reactors
        .iter()
        .enumerate()
        .flat_map(|(ri, rt)| (0..rt.outputs.len()).map(move |o| (ri, o)))
        .map(|(ri, o)| port_name(program, ri, o))
        .collect();
    let connections = program
        .connections
        .iter()
        .enumerate()
        .map(|(ci, c)| ConnectionMeta {
            from_reactor: program.reactors[c.from.reactor].name.clone(),
            from_port: port_name(program, c.from.reactor, c.from.port),
            to_reactor: program.reactors[c.to.reactor].name.clone(),
            to_port: format!(
                "{}.{}",
                program.reactors[c.to.reactor].name, program.reactors[c.to.reactor].inputs[c.to.port]
            ),
            delay: c.delay,
            capacity: capacities[ci],
        })
        .collect();
    let timeout_guard = ex.transitions.iter().find_map(|t| match t.guard {
        Guard::TimeGeq(th) => Some(th),
        Guard::Default => None,
    });
    ProgramMeta {
        workers,
        reactors: program.reactors.iter().map(|r| r.name.clone()).collect(),
        reactions,
        output_ports,
        connections,
        timeout_guard,
        last_tag: program.timeout,
    }
}

/// Generates and links code for every phase. `pdags[k]` is the partition of
/// phase `k` of `ex`.
pub fn compile(
    program: &ProgramDef,
    ex: &Exploration,
    pdags: &[PartitionedDag],
) -> (CompiledProgram, Vec<PhaseCode>, Vec<Diagnostic>) {
    let workers = pdags.first().map(|p| p.workers).unwrap_or(1);
    let mut phases: Vec<PhaseCode> =
        pdags.iter().enumerate().map(|(k, pd)| generate_instructions(program, pd, k)).collect();
    let tails: Vec<NodeId> = pdags.iter().map(|pd| pd.dag.tail).collect();
    let (bytecode, diags) = link(program, ex, &mut phases, &tails, workers);
    let meta = program_meta(program, ex, workers);
    (CompiledProgram { meta, workers: bytecode }, phases, diags)
}

/// Static well-formedness of linked bytecode: operand kinds, label closure
/// and the WU/ADDI counter contract. Returns one message per violation.
pub fn static_checks(prog: &CompiledProgram, dags: &[DagTask]) -> Vec<String> {
    let mut errs = Vec::new();
    for wb in &prog.workers {
        for (pc, x) in wb.instructions.iter().enumerate() {
            if let Err(e) = x.check() {
                errs.push(format!("worker {} pc {pc}: {e}", wb.worker));
            }
            for o in &x.operands {
                if let Some(lbl) = o.label() {
                    if !wb.labels.contains_key(lbl) {
                        errs.push(format!("worker {} pc {pc}: undefined label {lbl}", wb.worker));
                    }
                }
            }
        }
    }
    // Every WU on counter[b] waits for a value worker b reaches within the
    // same phase segment (between sync-block calls).
    let segments = |wb: &WorkerBytecode| -> Vec<(usize, usize)> {
        let mut segs = Vec::new();
        let mut start = 0;
        for (pc, x) in wb.instructions.iter().enumerate() {
            let ends = x.op == Opcode::STP
                || (x.op == Opcode::JAL && x.operands.get(1).and_then(Operand::label) == Some(SYNC_BLOCK));
            if ends {
                segs.push((start, pc + 1));
                start = pc + 1;
            }
        }
        segs
    };
    let increments: Vec<Vec<i64>> = prog
        .workers
        .iter()
        .map(|wb| {
            segments(wb)
                .into_iter()
                .map(|(a, b)| {
                    wb.instructions[a..b]
                        .iter()
                        .filter(|x| {
                            x.op == Opcode::ADDI
                                && matches!(x.operands[0].reg(), Some(Reg::Counter(c)) if *c == wb.worker)
                                && x.operands[1].reg() == Some(&Reg::Counter(wb.worker))
                        })
                        .count() as i64
                })
                .collect()
        })
        .collect();
    for wb in &prog.workers {
        for (seg, (a, b)) in segments(wb).into_iter().enumerate() {
            for x in &wb.instructions[a..b] {
                if x.op != Opcode::WU {
                    continue;
                }
                if let (Some(Reg::Counter(other)), Some(v)) = (x.operands[0].reg(), x.operands[1].imm()) {
                    let have = increments.get(*other).and_then(|s| s.get(seg)).copied().unwrap_or(0);
                    if v > have {
                        errs.push(format!(
                            "worker {} waits for counter[{other}] >= {v} but segment {seg} only reaches {have}",
                            wb.worker
                        ));
                    }
                }
            }
        }
    }
    let exes: usize = prog
        .workers
        .iter()
        .flat_map(|wb| &wb.instructions)
        .filter(|x| matches!(x.operands.first(), Some(Operand::Func(FuncRef::Reaction(_)))))
        .count();
    let nodes: usize = dags.iter().map(|d| d.reaction_nodes().count()).sum();
    if exes != nodes {
        errs.push(format!("{exes} reaction EXEs for {nodes} reaction nodes"));
    }
    errs
}

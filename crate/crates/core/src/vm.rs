//! Multi-worker bytecode interpreter. The virtual clock steps workers
//! cooperatively in one thread and jumps time between waits; the real clock
//! runs one thread per worker against the wall clock.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::codegen::isa::{FuncRef, Opcode, Operand, Reg};
use crate::codegen::{CompiledProgram, ProgramMeta};
use crate::model::{BodyOp, ReactionId, Tag, TimeValue};
use crate::oracle::{LogicalTrace, TraceEntry};

/// Physical time source.
pub trait Clock {
    fn now(&self) -> TimeValue;
    fn wait_until(&self, t: TimeValue);
}

/// Nanoseconds since construction, read from the monotonic wall clock.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn start() -> Self {
        WallClock { start: Instant::now() }
    }
}

impl Clock for WallClock {
    fn now(&self) -> TimeValue {
        TimeValue::ns(self.start.elapsed().as_nanos() as i64)
    }

    /// Sleeps through all but the last 200 µs, then spins.
    fn wait_until(&self, t: TimeValue) {
        const SPIN: i64 = 200_000;
        loop {
            let left = t.as_ns() - self.now().as_ns();
            if left <= 0 {
                return;
            }
            if left > SPIN {
                std::thread::sleep(Duration::from_nanos((left - SPIN) as u64));
            } else {
                std::hint::spin_loop();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VmFault {
    #[error("program has {expected} workers but {got} bytecode sequences were given")]
    WorkerCount { expected: usize, got: usize },
    #[error("worker {worker} pc {pc}: {msg}")]
    Load { worker: usize, pc: usize, msg: String },
    #[error("worker {worker}: pc {pc} out of range")]
    PcOutOfRange { worker: usize, pc: i64 },
    #[error("connection {connection} buffer overflow at tag {tag} (capacity {capacity})")]
    BufferOverflow { connection: usize, tag: TimeValue, capacity: usize },
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("watchdog expired after {0:?}")]
    Watchdog(Duration),
    #[error("sync block contract violated: {0}")]
    SyncContract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub reaction: ReactionId,
    pub tag: Tag,
    /// Clock reading at EXE start, relative to the run's start.
    pub physical: TimeValue,
    pub worker: usize,
    /// Global start order.
    pub seq: u64,
}

impl TraceEvent {
    pub fn lag(&self) -> i64 {
        self.physical.as_ns() - self.tag.time.as_ns()
    }
}

#[derive(Debug, Clone, Default)]
pub struct VmConfig {
    /// Stop once logical work past this time would begin. Needed for
    /// programs without a timeout.
    pub stop_at: Option<TimeValue>,
    /// Real clock only; defaults to 10× the last tag (or 10 s).
    pub watchdog: Option<Duration>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VmRun {
    /// In start order.
    pub events: Vec<TraceEvent>,
    /// True when `stop_at` cut the run short.
    pub stopped: bool,
    /// Completed passes through the sync block.
    pub sync_epochs: usize,
    /// `offset_inc` of each completed sync pass, in order.
    pub sync_increments: Vec<i64>,
    /// Reactions whose body took longer than their declared WCET.
    pub overruns: Vec<(ReactionId, Tag)>,
    pub final_time_offset: i64,
}

impl VmRun {
    /// Events ordered by tag, then execution rank.
    pub fn logical_trace(&self, meta: &ProgramMeta) -> LogicalTrace {
        let mut entries: Vec<(Tag, usize, ReactionId)> = self
            .events
            .iter()
            .map(|e| (e.tag, meta.reactions[e.reaction.0].rank, e.reaction))
            .collect();
        entries.sort();
        LogicalTrace { entries: entries.into_iter().map(|(tag, _, reaction)| TraceEntry { tag, reaction }).collect() }
    }

    /// `(reaction name, lag ns)` samples for the lag statistics.
    pub fn lag_samples<'m>(&self, meta: &'m ProgramMeta) -> Vec<(&'m str, i64)> {
        self.events.iter().map(|e| (meta.reactions[e.reaction.0].name.as_str(), e.lag())).collect()
    }

    /// `reactor,reaction,tag_ns,microstep,physical_ns,lag_ns` in start order.
    pub fn trace_csv(&self, meta: &ProgramMeta) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["reactor", "reaction", "tag_ns", "microstep", "physical_ns", "lag_ns"])
            .expect("in-memory");
        for e in &self.events {
            let r = &meta.reactions[e.reaction.0];
            w.write_record([
                r.reactor.clone(),
                r.name.clone(),
                e.tag.time.as_ns().to_string(),
                e.tag.microstep.to_string(),
                e.physical.as_ns().to_string(),
                e.lag().to_string(),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }
}

/// Fixed-capacity FIFO of `(tag, value)` events on a delayed connection.
#[derive(Debug, Clone)]
pub struct ConnectionBuffer {
    capacity: usize,
    items: VecDeque<(i64, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum BufferError {
    #[error("buffer full (capacity {0})")]
    Full(usize),
    #[error("tag {tag} does not follow the newest buffered tag {last}")]
    OutOfOrder { tag: i64, last: i64 },
}

impl ConnectionBuffer {
    pub fn new(capacity: usize) -> Self {
        ConnectionBuffer { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Tag of the oldest event, if any.
    pub fn head(&self) -> Option<i64> {
        self.items.front().map(|e| e.0)
    }

    /// Tags must strictly increase.
    pub fn push(&mut self, tag: i64, value: i64) -> Result<(), BufferError> {
        if let Some(&(last, _)) = self.items.back() {
            if tag <= last {
                return Err(BufferError::OutOfOrder { tag, last });
            }
        }
        if self.items.len() >= self.capacity {
            return Err(BufferError::Full(self.capacity));
        }
        self.items.push_back((tag, value));
        Ok(())
    }

    /// Removes the head if it is due at `now`.
    pub fn pop_at(&mut self, now: i64) -> Option<i64> {
        if self.head() == Some(now) {
            self.items.pop_front().map(|e| e.1)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Reg(usize),
    BufHead(usize),
}

#[derive(Debug, Clone, Copy)]
enum Func {
    Reaction(usize),
    Pre(usize),
    Post(usize),
}

#[derive(Debug, Clone, Copy)]
enum Arg {
    Slot(Slot),
    Imm(i64),
    Target(usize),
    Func(Func),
}

impl Arg {
    fn slot(self) -> Slot {
        match self {
            Arg::Slot(s) => s,
            _ => unreachable!("checked at load"),
        }
    }
    fn imm(self) -> i64 {
        match self {
            Arg::Imm(v) => v,
            _ => unreachable!("checked at load"),
        }
    }
    fn target(self) -> usize {
        match self {
            Arg::Target(t) => t,
            _ => unreachable!("checked at load"),
        }
    }
}

#[derive(Debug, Clone)]
struct Ins {
    op: Opcode,
    args: Vec<Arg>,
}

struct ReactionInfo {
    reactor: usize,
    body: Vec<BodyOp>,
    /// Output slots (present, value) by local port index.
    outputs: Vec<(usize, usize)>,
    wcet: TimeValue,
}

struct ConnInfo {
    from_reactor: usize,
    to_reactor: usize,
    present: usize,
    value: usize,
    delay: i64,
    capacity: usize,
}

/// Loaded program plus shared machine state.
struct Machine {
    code: Vec<Vec<Ins>>,
    regs: Vec<AtomicI64>,
    zero: usize,
    one: usize,
    time_offset: usize,
    offset_inc: usize,
    counters: Vec<usize>,
    /// Tag register slot → reactor.
    tag_reactor: HashMap<usize, usize>,
    tag_slots: Vec<usize>,
    /// Presence slots of each reactor's outputs.
    reactor_present: Vec<Vec<usize>>,
    reactions: Vec<ReactionInfo>,
    conns: Vec<ConnInfo>,
    buffers: Vec<Mutex<ConnectionBuffer>>,
    seq: AtomicU64,
    /// `time_offset` when the current sync pass advanced it.
    sync_expect: Mutex<Option<i64>>,
    sync_increments: Mutex<Vec<i64>>,
    fault: Mutex<Option<VmFault>>,
    stop: AtomicBool,
}

enum Step {
    Next,
    Jump(usize),
    Halt,
    /// Block until the clock reaches `target`; `base` is the value of the
    /// base register.
    WaitTime { base: i64, target: i64 },
    /// Block until `reg >= v` (or `< v` when `less`).
    WaitReg { slot: Slot, v: i64, less: bool },
    /// Body paused in a busy spin: resume at `op` once `until` is reached.
    Spin { reaction: usize, op: usize, until: i64 },
}

impl Machine {
    fn load(prog: &CompiledProgram) -> Result<Self, VmFault> {
        let meta = &prog.meta;
        let w = meta.workers;
        if prog.workers.len() != w {
            return Err(VmFault::WorkerCount { expected: w, got: prog.workers.len() });
        }
        let mut slots: HashMap<Reg, usize> = HashMap::new();
        let mut add = |r: Reg| {
            let n = slots.len();
            *slots.entry(r).or_insert(n)
        };
        let zero = add(Reg::Zero);
        let one = add(Reg::One);
        let start = add(Reg::StartTime);
        let timeout = add(Reg::Timeout);
        let time_offset = add(Reg::TimeOffset);
        let offset_inc = add(Reg::OffsetInc);
        let counters: Vec<usize> = (0..w).map(|k| add(Reg::Counter(k))).collect();
        for k in 0..w {
            add(Reg::ReturnAddr(k));
            add(Reg::BinarySema(k));
        }
        let tag_slots: Vec<usize> = meta.reactors.iter().map(|r| add(Reg::Tag(r.clone()))).collect();
        let mut port_slots: HashMap<String, (usize, usize)> = HashMap::new();
        for p in &meta.output_ports {
            let pr = add(Reg::Present(p.clone()));
            let va = add(Reg::Value(p.clone()));
            port_slots.insert(p.clone(), (pr, va));
        }
        let reactor_idx: HashMap<&str, usize> =
            meta.reactors.iter().enumerate().map(|(k, r)| (r.as_str(), k)).collect();
        let reactor_present: Vec<Vec<usize>> = meta
            .reactors
            .iter()
            .map(|r| {
                meta.output_ports
                    .iter()
                    .filter(|p| p.split_once('.').is_some_and(|(a, _)| a == r))
                    .map(|p| port_slots[p].0)
                    .collect()
            })
            .collect();
        let reactions: Vec<ReactionInfo> = meta
            .reactions
            .iter()
            .map(|r| ReactionInfo {
                reactor: reactor_idx[r.reactor.as_str()],
                body: r.body.clone(),
                outputs: r.outputs.iter().map(|p| port_slots[p]).collect(),
                wcet: r.wcet,
            })
            .collect();
        let conns: Vec<ConnInfo> = meta
            .connections
            .iter()
            .map(|c| ConnInfo {
                from_reactor: reactor_idx[c.from_reactor.as_str()],
                to_reactor: reactor_idx[c.to_reactor.as_str()],
                present: port_slots[&c.from_port].0,
                value: port_slots[&c.from_port].1,
                delay: c.delay.map_or(0, TimeValue::as_ns),
                capacity: c.capacity,
            })
            .collect();
        let by_name: HashMap<&str, usize> =
            meta.reactions.iter().enumerate().map(|(k, r)| (r.name.as_str(), k)).collect();

        let mut code = Vec::new();
        for wb in &prog.workers {
            let mut seq = Vec::new();
            for (pc, x) in wb.instructions.iter().enumerate() {
                let err = |msg: String| VmFault::Load { worker: wb.worker, pc, msg };
                x.check().map_err(|e| err(e.to_string()))?;
                let mut args = Vec::new();
                for o in &x.operands {
                    args.push(match o {
                        Operand::Reg(Reg::BufHead(c)) => {
                            if *c >= conns.len() {
                                return Err(err(format!("no connection {c}")));
                            }
                            Arg::Slot(Slot::BufHead(*c))
                        }
                        Operand::Reg(r) => Arg::Slot(Slot::Reg(
                            *slots.get(r).ok_or_else(|| err(format!("unknown register {r}")))?,
                        )),
                        Operand::Imm(v) => Arg::Imm(*v),
                        Operand::Label(l) => {
                            Arg::Target(wb.target(l).ok_or_else(|| err(format!("undefined label {l}")))?)
                        }
                        Operand::Func(FuncRef::Reaction(n)) => Arg::Func(Func::Reaction(
                            *by_name.get(n.as_str()).ok_or_else(|| err(format!("unknown reaction {n}")))?,
                        )),
                        Operand::Func(FuncRef::PreConn(c)) | Operand::Func(FuncRef::PostConn(c))
                            if *c >= conns.len() =>
                        {
                            return Err(err(format!("no connection {c}")));
                        }
                        Operand::Func(FuncRef::PreConn(c)) => Arg::Func(Func::Pre(*c)),
                        Operand::Func(FuncRef::PostConn(c)) => Arg::Func(Func::Post(*c)),
                    });
                }
                seq.push(Ins { op: x.op, args });
            }
            code.push(seq);
        }

        let regs: Vec<AtomicI64> = (0..slots.len()).map(|_| AtomicI64::new(0)).collect();
        regs[one].store(1, SeqCst);
        regs[start].store(0, SeqCst);
        regs[timeout].store(meta.timeout_guard.map_or(i64::MAX, TimeValue::as_ns), SeqCst);
        Ok(Machine {
            code,
            regs,
            zero,
            one,
            time_offset,
            offset_inc,
            counters,
            tag_reactor: tag_slots.iter().enumerate().map(|(r, &s)| (s, r)).collect(),
            tag_slots,
            reactor_present,
            reactions,
            buffers: conns.iter().map(|c| Mutex::new(ConnectionBuffer::new(c.capacity))).collect(),
            conns,
            seq: AtomicU64::new(0),
            sync_expect: Mutex::new(None),
            sync_increments: Mutex::new(Vec::new()),
            fault: Mutex::new(None),
            stop: AtomicBool::new(false),
        })
    }

    fn read(&self, s: Slot) -> i64 {
        match s {
            Slot::Reg(k) => self.regs[k].load(SeqCst),
            Slot::BufHead(c) => self.buffers[c].lock().expect("buffer lock").head().unwrap_or(-1),
        }
    }

    fn write(&self, s: Slot, v: i64) {
        if let Slot::Reg(k) = s {
            if k != self.zero && k != self.one {
                self.regs[k].store(v, SeqCst);
            }
        }
    }

    fn set_fault(&self, f: VmFault) {
        let mut g = self.fault.lock().expect("fault lock");
        if g.is_none() {
            *g = Some(f);
        }
        self.stop.store(true, SeqCst);
    }

    fn tag_of(&self, reactor: usize) -> i64 {
        self.regs[self.tag_slots[reactor]].load(SeqCst)
    }

    /// Runs body ops from `from` until a spin or the end. Returns the spin
    /// duration and resume index.
    fn body(&self, reaction: usize, from: usize) -> Option<(i64, usize)> {
        let info = &self.reactions[reaction];
        for (k, op) in info.body.iter().enumerate().skip(from) {
            match *op {
                BodyOp::BusySpin(d) => return Some((d.as_ns(), k + 1)),
                BodyOp::Emit { port, value } => {
                    let (pr, va) = info.outputs[port];
                    self.regs[va].store(value, SeqCst);
                    self.regs[pr].store(1, SeqCst);
                }
                BodyOp::Noop => {}
            }
        }
        None
    }

    fn pre_conn(&self, c: usize) -> Result<(), VmFault> {
        let ci = &self.conns[c];
        if self.regs[ci.present].load(SeqCst) == 0 {
            return Ok(());
        }
        let tag = self.tag_of(ci.from_reactor) + ci.delay;
        let mut buf = self.buffers[c].lock().expect("buffer lock");
        buf.push(tag, self.regs[ci.value].load(SeqCst))
            .map_err(|_| VmFault::BufferOverflow { connection: c, tag: TimeValue::ns(tag), capacity: ci.capacity })
    }

    fn post_conn(&self, c: usize) {
        let ci = &self.conns[c];
        if ci.delay == 0 {
            self.regs[ci.present].store(0, SeqCst);
            return;
        }
        let now = self.tag_of(ci.to_reactor);
        let mut buf = self.buffers[c].lock().expect("buffer lock");
        buf.pop_at(now);
    }

    fn record(&self, reaction: usize, worker: usize, physical: i64) -> TraceEvent {
        TraceEvent {
            reaction: ReactionId(reaction),
            tag: Tag::at(TimeValue::ns(self.tag_of(self.reactions[reaction].reactor))),
            physical: TimeValue::ns(physical),
            worker,
            seq: self.seq.fetch_add(1, SeqCst),
        }
    }

    /// Executes the instruction at `pc`. EXE of a reaction body records its
    /// event into `events`.
    fn exec(&self, worker: usize, pc: usize, now: i64, events: &mut Vec<TraceEvent>) -> Result<Step, VmFault> {
        let x = &self.code[worker][pc];
        let a = &x.args;
        Ok(match x.op {
            Opcode::ADD => {
                let v = self.read(a[1].slot()).wrapping_add(self.read(a[2].slot()));
                if worker == 0 && a[0].slot() == Slot::Reg(self.time_offset) {
                    *self.sync_expect.lock().expect("sync lock") = Some(self.read(a[0].slot()));
                }
                self.write(a[0].slot(), v);
                Step::Next
            }
            Opcode::ADDI => {
                self.write(a[0].slot(), self.read(a[1].slot()).wrapping_add(a[2].imm()));
                Step::Next
            }
            Opcode::ADV | Opcode::ADVI => {
                let inc = if x.op == Opcode::ADV { self.read(a[2].slot()) } else { a[2].imm() };
                let v = self.read(a[1].slot()).wrapping_add(inc);
                let dst = a[0].slot();
                if let Slot::Reg(k) = dst {
                    if let Some(&r) = self.tag_reactor.get(&k) {
                        if self.regs[k].load(SeqCst) != v {
                            for &p in &self.reactor_present[r] {
                                self.regs[p].store(0, SeqCst);
                            }
                        }
                    }
                }
                self.write(dst, v);
                Step::Next
            }
            Opcode::BEQ | Opcode::BNE | Opcode::BLT | Opcode::BGE => {
                let (l, r) = (self.read(a[0].slot()), self.read(a[1].slot()));
                let take = match x.op {
                    Opcode::BEQ => l == r,
                    Opcode::BNE => l != r,
                    Opcode::BLT => l < r,
                    _ => l >= r,
                };
                if take {
                    Step::Jump(a[2].target())
                } else {
                    Step::Next
                }
            }
            Opcode::DU => {
                let base = self.read(a[0].slot());
                Step::WaitTime { base, target: base.saturating_add(a[1].imm()) }
            }
            Opcode::WU => Step::WaitReg { slot: a[0].slot(), v: a[1].imm(), less: false },
            Opcode::WLT => Step::WaitReg { slot: a[0].slot(), v: a[1].imm(), less: true },
            Opcode::EXE => match a[0] {
                Arg::Func(Func::Reaction(r)) => {
                    events.push(self.record(r, worker, now));
                    match self.body(r, 0) {
                        Some((d, op)) => Step::Spin { reaction: r, op, until: now.saturating_add(d) },
                        None => Step::Next,
                    }
                }
                Arg::Func(Func::Pre(c)) => {
                    self.pre_conn(c)?;
                    Step::Next
                }
                Arg::Func(Func::Post(c)) => {
                    self.post_conn(c);
                    Step::Next
                }
                _ => unreachable!("checked at load"),
            },
            Opcode::JAL => {
                self.write(a[0].slot(), pc as i64 + 1);
                Step::Jump(a[1].target())
            }
            Opcode::JALR => {
                let dest = self.read(a[1].slot()).wrapping_add(a[2].imm());
                if worker == 0 {
                    self.check_sync()?;
                }
                self.write(a[0].slot(), pc as i64 + 1);
                if dest < 0 || dest as usize >= self.code[worker].len() {
                    return Err(VmFault::PcOutOfRange { worker, pc: dest });
                }
                Step::Jump(dest as usize)
            }
            Opcode::STP => Step::Halt,
        })
    }

    /// Register contract at the end of a coordinator sync pass.
    fn check_sync(&self) -> Result<(), VmFault> {
        let Some(before) = self.sync_expect.lock().expect("sync lock").take() else { return Ok(()) };
        let inc = self.regs[self.offset_inc].load(SeqCst);
        self.sync_increments.lock().expect("sync lock").push(inc);
        let expect = before + inc;
        let got = self.regs[self.time_offset].load(SeqCst);
        if got != expect {
            return Err(VmFault::SyncContract(format!("time_offset is {got}, expected {expect}")));
        }
        for (w, &c) in self.counters.iter().enumerate() {
            let v = self.regs[c].load(SeqCst);
            if v != 0 {
                return Err(VmFault::SyncContract(format!("counter[{w}] is {v} after reset")));
            }
        }
        Ok(())
    }

    fn reg_ready(&self, slot: Slot, v: i64, less: bool) -> bool {
        let cur = self.read(slot);
        if less {
            cur < v
        } else {
            cur >= v
        }
    }

    fn finish(self, mut events: Vec<TraceEvent>, stopped: bool, stop_at: Option<TimeValue>) -> Result<VmRun, VmFault> {
        if let Some(f) = self.fault.into_inner().expect("fault lock") {
            return Err(f);
        }
        let increments = self.sync_increments.into_inner().expect("sync lock");
        events.sort_by_key(|e| e.seq);
        if let Some(limit) = stop_at {
            events.retain(|e| e.tag.time <= limit);
        }
        let overruns = Vec::new();
        Ok(VmRun {
            events,
            stopped,
            sync_epochs: increments.len(),
            sync_increments: increments,
            overruns,
            final_time_offset: self.regs[self.time_offset].load(SeqCst),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Wait {
    Time(i64),
    Reg { slot: Slot, v: i64, less: bool },
    Spin { reaction: usize, op: usize, until: i64 },
}

/// Deterministic run: workers are stepped round-robin in one thread and the
/// clock jumps to the earliest pending time wait once nobody can progress.
pub fn run_virtual(prog: &CompiledProgram, cfg: &VmConfig) -> Result<VmRun, VmFault> {
    let m = Machine::load(prog)?;
    let w = m.code.len();
    let mut pc = vec![0usize; w];
    // Halted by STP, or parked at a DU whose base lies past `stop_at`.
    let mut halted = vec![false; w];
    let mut wait: Vec<Option<Wait>> = vec![None; w];
    let mut events = Vec::new();
    let mut now: i64 = 0;
    let limit = cfg.stop_at.map(TimeValue::as_ns);
    let mut stopped = false;

    'outer: loop {
        let mut progressed = true;
        while progressed {
            progressed = false;
            for k in 0..w {
                if halted[k] {
                    continue;
                }
                match wait[k] {
                    Some(Wait::Time(t)) if t > now => continue,
                    Some(Wait::Spin { until, .. }) if until > now => continue,
                    Some(Wait::Reg { slot, v, less }) if !m.reg_ready(slot, v, less) => continue,
                    Some(Wait::Spin { reaction, op, .. }) => {
                        wait[k] = None;
                        progressed = true;
                        if let Some((d, next)) = m.body(reaction, op) {
                            wait[k] = Some(Wait::Spin { reaction, op: next, until: now.saturating_add(d) });
                            continue;
                        }
                        pc[k] += 1;
                    }
                    Some(_) => {
                        wait[k] = None;
                        pc[k] += 1;
                    }
                    None => {}
                }
                // Run until this worker blocks.
                loop {
                    if pc[k] >= m.code[k].len() {
                        m.set_fault(VmFault::PcOutOfRange { worker: k, pc: pc[k] as i64 });
                        break 'outer;
                    }
                    let step = match m.exec(k, pc[k], now, &mut events) {
                        Ok(s) => s,
                        Err(f) => {
                            m.set_fault(f);
                            break 'outer;
                        }
                    };
                    progressed = true;
                    match step {
                        Step::Next => pc[k] += 1,
                        Step::Jump(t) => pc[k] = t,
                        Step::Halt => {
                            halted[k] = true;
                            break;
                        }
                        Step::WaitTime { base, .. } if limit.is_some_and(|l| base > l) => {
                            halted[k] = true;
                            stopped = true;
                            break;
                        }
                        Step::WaitTime { target: t, .. } => {
                            if t <= now {
                                pc[k] += 1;
                            } else {
                                wait[k] = Some(Wait::Time(t));
                                break;
                            }
                        }
                        Step::WaitReg { slot, v, less } => {
                            if m.reg_ready(slot, v, less) {
                                pc[k] += 1;
                            } else {
                                wait[k] = Some(Wait::Reg { slot, v, less });
                                break;
                            }
                        }
                        Step::Spin { reaction, op, until } => {
                            wait[k] = Some(Wait::Spin { reaction, op, until });
                            break;
                        }
                    }
                }
            }
        }
        if halted.iter().all(|&h| h) {
            break;
        }
        let next = (0..w)
            .filter(|&k| !halted[k])
            .filter_map(|k| match wait[k] {
                Some(Wait::Time(t)) => Some(t),
                Some(Wait::Spin { until, .. }) => Some(until),
                _ => None,
            })
            .min();
        match next {
            Some(t) => now = t,
            // Whoever is still blocked waits on a parked worker.
            None if stopped => break,
            None => {
                let blocked: Vec<String> = (0..w)
                    .filter(|&k| !halted[k])
                    .map(|k| format!("worker {k} at pc {}", pc[k]))
                    .collect();
                m.set_fault(VmFault::Deadlock(blocked.join(", ")));
                break;
            }
        }
    }
    m.finish(events, stopped, cfg.stop_at)
}

/// Wall-clock run with one thread per worker. Waits busy-spin (after a
/// coarse sleep for long DU waits).
pub fn run_real_time(prog: &CompiledProgram, cfg: &VmConfig) -> Result<VmRun, VmFault> {
    let m = Machine::load(prog)?;
    let w = m.code.len();
    let watchdog = cfg.watchdog.unwrap_or_else(|| {
        prog.meta
            .last_tag
            .map(|t| Duration::from_nanos(t.as_ns().max(0) as u64) * 10)
            .unwrap_or(Duration::from_secs(10))
            .max(Duration::from_millis(100))
    });
    let limit = cfg.stop_at.map(TimeValue::as_ns);
    let clock = WallClock::start();
    let deadline = watchdog.as_nanos() as i64;
    let stopped = AtomicBool::new(false);
    // Workers that halted or parked.
    let done = AtomicUsize::new(0);
    let overruns = Mutex::new(Vec::new());

    let per_worker: Vec<Vec<TraceEvent>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..w)
            .map(|k| {
                let m = &m;
                let stopped = &stopped;
                let done = &done;
                let overruns = &overruns;
                s.spawn(move || {
                    let mut events = Vec::new();
                    let mut pc = 0usize;
                    let expired = || {
                        if m.stop.load(SeqCst) {
                            return true;
                        }
                        if clock.now().as_ns() > deadline {
                            m.set_fault(VmFault::Watchdog(watchdog));
                            return true;
                        }
                        false
                    };
                    loop {
                        if m.stop.load(SeqCst) {
                            break;
                        }
                        if pc >= m.code[k].len() {
                            m.set_fault(VmFault::PcOutOfRange { worker: k, pc: pc as i64 });
                            break;
                        }
                        let now = clock.now().as_ns();
                        let step = match m.exec(k, pc, now, &mut events) {
                            Ok(s) => s,
                            Err(f) => {
                                m.set_fault(f);
                                break;
                            }
                        };
                        match step {
                            Step::Next => pc += 1,
                            Step::Jump(t) => pc = t,
                            Step::Halt => break,
                            Step::WaitTime { base, .. } if limit.is_some_and(|l| base > l) => {
                                stopped.store(true, SeqCst);
                                break;
                            }
                            Step::WaitTime { target: t, .. } => {
                                while clock.now().as_ns() < t {
                                    if expired() {
                                        break;
                                    }
                                    let left = t - clock.now().as_ns();
                                    if left > 1_000_000 {
                                        std::thread::sleep(Duration::from_nanos((left - 500_000) as u64));
                                    } else {
                                        std::hint::spin_loop();
                                    }
                                }
                                pc += 1;
                            }
                            Step::WaitReg { slot, v, less } => {
                                let mut spins = 0u32;
                                while !m.reg_ready(slot, v, less) {
                                    if expired() {
                                        break;
                                    }
                                    if done.load(SeqCst) == w - 1 && !m.reg_ready(slot, v, less) {
                                        if !stopped.load(SeqCst) {
                                            m.set_fault(VmFault::Deadlock(format!("worker {k} at pc {pc}")));
                                        }
                                        m.stop.store(true, SeqCst);
                                        break;
                                    }
                                    spins += 1;
                                    if spins.is_multiple_of(1024) {
                                        std::thread::yield_now();
                                    } else {
                                        std::hint::spin_loop();
                                    }
                                }
                                pc += 1;
                            }
                            Step::Spin { reaction, mut op, mut until } => {
                                let began = now;
                                loop {
                                    clock.wait_until(TimeValue::ns(until));
                                    match m.body(reaction, op) {
                                        Some((d, next)) => {
                                            op = next;
                                            until = clock.now().as_ns().saturating_add(d);
                                        }
                                        None => break,
                                    }
                                }
                                let took = clock.now().as_ns() - began;
                                if took > m.reactions[reaction].wcet.as_ns() {
                                    let e = events.last().expect("recorded at EXE");
                                    overruns.lock().expect("overrun lock").push((e.reaction, e.tag));
                                }
                                pc += 1;
                            }
                        }
                    }
                    done.fetch_add(1, SeqCst);
                    events
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let events = per_worker.into_iter().flatten().collect();
    let overruns = overruns.into_inner().expect("overrun lock");
    let stopped = stopped.load(SeqCst);
    let mut run = m.finish(events, stopped, cfg.stop_at)?;
    run.overruns = overruns;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::asm::assemble;
    use crate::codegen::{ProgramMeta, WorkerBytecode};

    fn single(text: &str) -> CompiledProgram {
        let wb: WorkerBytecode = assemble(text, 0).unwrap();
        CompiledProgram {
            meta: ProgramMeta {
                workers: 1,
                reactors: vec![],
                reactions: vec![],
                output_ports: vec![],
                connections: vec![],
                timeout_guard: None,
                last_tag: None,
            },
            workers: vec![wb],
        }
    }

    #[test]
    fn addi_then_stop() {
        let p = single("ADDI $counter[0], $zero, 5\nSTP\n");
        let m = Machine::load(&p).unwrap();
        let mut ev = Vec::new();
        assert!(matches!(m.exec(0, 0, 0, &mut ev).unwrap(), Step::Next));
        assert_eq!(m.regs[m.counters[0]].load(SeqCst), 5);
        assert!(run_virtual(&p, &VmConfig::default()).unwrap().events.is_empty());
    }

    #[test]
    fn zero_register_ignores_writes() {
        let p = single("JAL $zero, L\nL:\nSTP\n");
        let m = Machine::load(&p).unwrap();
        m.write(Slot::Reg(m.zero), 9);
        assert_eq!(m.read(Slot::Reg(m.zero)), 0);
        run_virtual(&p, &VmConfig::default()).unwrap();
    }

    #[test]
    fn virtual_clock_jumps_to_du_target() {
        let p = single("DU $zero, 1000\nADDI $time_offset, $zero, 7\nSTP\n");
        let run = run_virtual(&p, &VmConfig::default()).unwrap();
        assert_eq!(run.final_time_offset, 7);
    }

    #[test]
    fn self_wait_deadlocks() {
        let p = single("WU $counter[0], 1\nSTP\n");
        assert!(matches!(run_virtual(&p, &VmConfig::default()), Err(VmFault::Deadlock(_))));
    }

    #[test]
    fn stop_at_cuts_infinite_loop() {
        let p = single("L:\nDU $time_offset, 10\nADDI $time_offset, $time_offset, 10\nJAL $zero, L\n");
        let run = run_virtual(&p, &VmConfig { stop_at: Some(TimeValue::ns(95)), ..Default::default() }).unwrap();
        assert!(run.stopped);
        // Parks at the first DU whose base has passed the limit.
        assert_eq!(run.final_time_offset, 100);
    }
}

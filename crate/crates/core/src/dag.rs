//! DAG task model: one node per reaction invocation of a phase, a virtual
//! path of sync/dummy nodes encoding offsets and deadlines, and timing
//! attributes (EST/EFT/LST/LFT).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write;

use serde::Serialize;

use crate::diag::Diagnostic;
use crate::explorer::{PhaseDiagram, PhaseKind};
use crate::model::*;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Reaction { reaction: ReactionId, invocation: usize, tag: Tag },
    /// A fixed point in time on the virtual path, relative to the phase start.
    Sync { time: TimeValue },
    Dummy { interval: TimeValue },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DagNode {
    pub kind: NodeKind,
    pub wcet: TimeValue,
    pub offset: TimeValue,
    pub deadline: TimeValue,
    pub est: TimeValue,
    pub eft: TimeValue,
    pub lst: TimeValue,
    pub lft: TimeValue,
}

impl DagNode {
    pub fn reaction(&self) -> Option<ReactionId> {
        match self.kind {
            NodeKind::Reaction { reaction, .. } => Some(reaction),
            _ => None,
        }
    }

    pub fn is_reaction(&self) -> bool {
        self.reaction().is_some()
    }

    pub fn tag(&self) -> Option<Tag> {
        match self.kind {
            NodeKind::Reaction { tag, .. } => Some(tag),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    VirtualPath,
    Timing,
    Dependency,
    Sequentialization,
    SchedulerAdded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DagEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DagTask {
    pub nodes: Vec<DagNode>,
    pub edges: Vec<DagEdge>,
    /// `TimeValue::INFINITY` for a terminal phase.
    pub period: TimeValue,
    pub head: NodeId,
    pub tail: NodeId,
    pub phase: PhaseKind,
    /// Absolute start time of the phase the DAG was built from.
    pub phase_start: TimeValue,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("graph has a cycle through node {0}")]
pub struct CycleError(pub NodeId);

impl DagTask {
    pub fn reaction_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_reaction())
    }

    pub fn sync_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Sync { .. }))
    }

    pub fn sync_at(&self, time: TimeValue) -> Option<NodeId> {
        self.sync_nodes()
            .find(|&i| matches!(self.nodes[i].kind, NodeKind::Sync { time: t } if t == time))
    }

    pub fn is_terminal(&self) -> bool {
        self.period.is_infinite()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// Adds an edge unless one between the same endpoints already exists.
    pub fn add_edge(&mut self, from: NodeId, to: NodeId, kind: EdgeKind) -> bool {
        if from == to || self.has_edge(from, to) {
            return false;
        }
        self.edges.push(DagEdge { from, to, kind });
        true
    }

    pub fn successors(&self) -> Vec<Vec<NodeId>> {
        let mut s = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            s[e.from].push(e.to);
        }
        s
    }

    pub fn predecessors(&self) -> Vec<Vec<NodeId>> {
        let mut p = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            p[e.to].push(e.from);
        }
        p
    }

    /// Kahn order, smallest ready id first.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, CycleError> {
        let succ = self.successors();
        let mut indeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let mut ready: BTreeSet<NodeId> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &w in &succ[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.insert(w);
                }
            }
        }
        if order.len() < self.nodes.len() {
            let stuck = (0..self.nodes.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(CycleError(stuck));
        }
        Ok(order)
    }

    /// `reach[u][v]` is true iff there is a non-empty path u → v.
    pub fn reachability(&self) -> Result<Vec<Vec<bool>>, CycleError> {
        let order = self.topo_order()?;
        let succ = self.successors();
        let n = self.nodes.len();
        let mut reach = vec![vec![false; n]; n];
        for &v in order.iter().rev() {
            for &w in &succ[v] {
                reach[v][w] = true;
                let row = reach[w].clone();
                for (x, r) in row.into_iter().enumerate() {
                    if r {
                        reach[v][x] = true;
                    }
                }
            }
        }
        Ok(reach)
    }

    /// Forward (EST/EFT) and backward (LST/LFT) passes. Sync nodes are fixed
    /// at their time. Returns an error diagnostic per reaction node whose
    /// latest start precedes its earliest start.
    pub fn propagate(&mut self) -> Result<Vec<Diagnostic>, CycleError> {
        let order = self.topo_order()?;
        let preds = self.predecessors();
        let succ = self.successors();
        for &v in &order {
            let n = &self.nodes[v];
            let est = match n.kind {
                NodeKind::Sync { time } => time,
                _ => preds[v].iter().map(|&p| self.nodes[p].eft).max().unwrap_or(TimeValue::ZERO),
            };
            let node = &mut self.nodes[v];
            node.est = est;
            node.eft = est.saturating_add(node.wcet);
        }
        for &v in order.iter().rev() {
            let lft = match self.nodes[v].kind {
                NodeKind::Sync { time } => time,
                _ => succ[v].iter().map(|&s| self.nodes[s].lst).min().unwrap_or(self.period),
            };
            let node = &mut self.nodes[v];
            node.lft = lft;
            node.lst = lft.saturating_sub(node.wcet);
        }
        let mut diags = Vec::new();
        for v in self.reaction_nodes() {
            let n = &self.nodes[v];
            if n.lst < n.est {
                diags.push(Diagnostic::error(
                    "infeasible-timing",
                    format!(
                        "node {v} cannot meet its deadline: EST {} > LST {}",
                        n.est, n.lst
                    ),
                ));
            }
        }
        Ok(diags)
    }

    /// Short human label, e.g. `Controller.2#0` or `sync@100000ns`.
    pub fn node_label(&self, program: &ProgramDef, v: NodeId) -> String {
        match self.nodes[v].kind {
            NodeKind::Reaction { reaction, invocation, .. } => {
                format!("{}#{}", program.reaction_name(&program.index(), reaction), invocation)
            }
            NodeKind::Sync { time } => format!("sync@{time}"),
            NodeKind::Dummy { interval } => format!("dummy({interval})"),
        }
    }

    /// Graphviz rendering. `workers` optionally colors reaction nodes by
    /// assigned worker.
    pub fn to_dot(&self, program: &ProgramDef, workers: Option<&[Option<usize>]>) -> String {
        const PALETTE: [&str; 8] =
            ["lightblue", "palegreen", "orange", "plum", "khaki", "salmon", "cyan", "tan"];
        let mut s = String::from("digraph dag {\n  rankdir=LR;\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let label = self.node_label(program, i);
            let (shape, fill) = match n.kind {
                NodeKind::Reaction { .. } => {
                    let fill = workers
                        .and_then(|w| w.get(i).copied().flatten())
                        .map(|w| PALETTE[w % PALETTE.len()])
                        .unwrap_or("white");
                    ("box", fill)
                }
                NodeKind::Sync { .. } => ("circle", "gray"),
                NodeKind::Dummy { .. } => ("ellipse", "lightgray"),
            };
            let wcet = if n.wcet.is_infinite() { "inf".to_string() } else { n.wcet.as_ns().to_string() };
            let _ = writeln!(
                s,
                "  n{i} [label=\"{label}\\n{wcet}ns\", shape={shape}, style=filled, fillcolor={fill}];"
            );
        }
        for e in &self.edges {
            let color = match e.kind {
                EdgeKind::VirtualPath => "black",
                EdgeKind::Timing => "gray",
                EdgeKind::Dependency => "blue",
                EdgeKind::Sequentialization => "red",
                EdgeKind::SchedulerAdded => "darkgreen",
            };
            let _ = writeln!(s, "  n{} -> n{} [color={color}];", e.from, e.to);
        }
        s.push_str("}\n");
        s
    }
}

fn blank(kind: NodeKind, wcet: TimeValue) -> DagNode {
    DagNode {
        kind,
        wcet,
        offset: TimeValue::ZERO,
        deadline: TimeValue::ZERO,
        est: TimeValue::ZERO,
        eft: TimeValue::ZERO,
        lst: TimeValue::ZERO,
        lft: TimeValue::ZERO,
    }
}

/// Builds the DAG of one phase. Attributes are propagated before returning.
pub fn build_dag(program: &ProgramDef, phase: &PhaseDiagram) -> DagTask {
    let idx = program.index();
    let period = phase.span.unwrap_or(TimeValue::INFINITY);
    let mut nodes = Vec::new();
    let mut at: HashMap<(Tag, ReactionId), NodeId> = HashMap::new();
    let mut count: HashMap<ReactionId, usize> = HashMap::new();
    for st in &phase.nodes {
        for &r in &st.invoked {
            let inv = count.entry(r).or_default();
            let mut n = blank(
                NodeKind::Reaction { reaction: r, invocation: *inv, tag: st.tag },
                program.reaction(&idx, r).wcet,
            );
            *inv += 1;
            n.offset = st.tag.time - phase.start;
            at.insert((st.tag, r), nodes.len());
            nodes.push(n);
        }
    }
    let nreact = nodes.len();
    // Implicit deadlines: the next invocation of the same reaction, else P.
    for v in 0..nreact {
        let r = nodes[v].reaction().unwrap();
        let next = (v + 1..nreact).find(|&w| nodes[w].reaction() == Some(r));
        nodes[v].deadline = match next {
            Some(w) => nodes[w].offset,
            None => period,
        };
    }

    let mut times: BTreeSet<TimeValue> = BTreeSet::new();
    times.insert(TimeValue::ZERO);
    for n in &nodes {
        times.insert(n.offset);
        if !n.deadline.is_infinite() {
            times.insert(n.deadline);
        }
    }
    if !period.is_infinite() {
        times.insert(period);
    }
    let mut sync_of: BTreeMap<TimeValue, NodeId> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut prev: Option<(NodeId, TimeValue)> = None;
    for &t in &times {
        let s = nodes.len();
        let mut n = blank(NodeKind::Sync { time: t }, TimeValue::ZERO);
        n.offset = t;
        n.deadline = t;
        nodes.push(n);
        sync_of.insert(t, s);
        if let Some((ps, pt)) = prev {
            let d = nodes.len();
            let mut dn = blank(NodeKind::Dummy { interval: t - pt }, t - pt);
            dn.offset = pt;
            dn.deadline = t;
            nodes.push(dn);
            edges.push(DagEdge { from: ps, to: d, kind: EdgeKind::VirtualPath });
            edges.push(DagEdge { from: d, to: s, kind: EdgeKind::VirtualPath });
        }
        prev = Some((s, t));
    }
    let head = sync_of[&TimeValue::ZERO];
    let tail = if period.is_infinite() {
        let s = nodes.len();
        let mut n = blank(NodeKind::Sync { time: TimeValue::INFINITY }, TimeValue::ZERO);
        n.offset = TimeValue::INFINITY;
        n.deadline = TimeValue::INFINITY;
        nodes.push(n);
        sync_of.insert(TimeValue::INFINITY, s);
        edges.push(DagEdge { from: prev.unwrap().0, to: s, kind: EdgeKind::VirtualPath });
        s
    } else {
        sync_of[&period]
    };

    let mut dag = DagTask {
        nodes,
        edges,
        period,
        head,
        tail,
        phase: phase.kind,
        phase_start: phase.start,
    };

    for v in 0..nreact {
        let (o, d) = (dag.nodes[v].offset, dag.nodes[v].deadline);
        dag.add_edge(sync_of[&o], v, EdgeKind::Timing);
        dag.add_edge(v, sync_of[&d], EdgeKind::Timing);
    }

    for (from, to) in dependency_pairs(program, &dag, &at) {
        dag.add_edge(from, to, EdgeKind::Dependency);
    }

    let mut per_reactor: BTreeMap<ReactorIdx, Vec<NodeId>> = BTreeMap::new();
    for v in 0..nreact {
        let r = dag.nodes[v].reaction().unwrap();
        per_reactor.entry(idx.reactions[r.0].0).or_default().push(v);
    }
    for (_, mut vs) in per_reactor {
        vs.sort_by_key(|&v| {
            let n = &dag.nodes[v];
            let NodeKind::Reaction { reaction, invocation, tag } = n.kind else { unreachable!() };
            (tag, program.reaction(&idx, reaction).priority, invocation)
        });
        for w in vs.windows(2) {
            dag.add_edge(w[0], w[1], EdgeKind::Sequentialization);
        }
    }

    dag.propagate().expect("DAG construction produced a cycle");
    dag
}

/// Reaction-to-reaction ordering constraints other than same-reactor
/// sequencing: port writers before triggered readers (same tag for
/// zero-delay connections, `tag - delay` for delayed ones), and zero-delay
/// readers before the sending reactor next advances its tag.
fn dependency_pairs(
    program: &ProgramDef,
    dag: &DagTask,
    at: &HashMap<(Tag, ReactionId), NodeId>,
) -> Vec<(NodeId, NodeId)> {
    let idx = program.index();
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    let reaction_nodes: Vec<NodeId> = dag.reaction_nodes().collect();
    for &v in &reaction_nodes {
        let NodeKind::Reaction { reaction, tag, .. } = dag.nodes[v].kind else { continue };
        let (ri, _) = idx.reactions[reaction.0];
        for trig in &program.reaction(&idx, reaction).triggers {
            let TriggerRef::Input(port) = *trig else { continue };
            let Some(ci) = program.connection_into(PortRef { reactor: ri, port }) else { continue };
            let c = &program.connections[ci];
            let wtag = match c.delay {
                Some(d) => Tag::at(tag.time - d),
                None => tag,
            };
            let sender = &program.reactors[c.from.reactor];
            for (k, w) in sender.reactions.iter().enumerate() {
                if !w.effects.contains(&c.from.port) {
                    continue;
                }
                let wid = idx.reaction_id(c.from.reactor, k);
                if let Some(&u) = at.get(&(wtag, wid)) {
                    if seen.insert((u, v)) {
                        pairs.push((u, v));
                    }
                }
            }
            if c.delay.is_none() {
                let next = reaction_nodes.iter().copied().find(|&u| {
                    let n = &dag.nodes[u];
                    n.tag().is_some_and(|t| t > tag)
                        && idx.reactions[n.reaction().unwrap().0].0 == c.from.reactor
                });
                if let Some(u) = next {
                    if seen.insert((v, u)) {
                        pairs.push((v, u));
                    }
                }
            }
        }
    }
    pairs
}

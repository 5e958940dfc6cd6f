//! Partitioning a DAG task across workers: a load-balancing list scheduler,
//! an edge-generation-style scheduler targeting trivial schedulability, and a
//! partition validator.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::analysis::dag_length;
use crate::dag::{CycleError, DagTask, EdgeKind, NodeId};
use crate::diag::{Diagnostic, Severity};
use crate::model::TimeValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// Load-Balanced.
    Lb,
    /// Edge-generation style.
    Eg,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Lb => "lb",
            SchedulerKind::Eg => "eg",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lb" => Ok(SchedulerKind::Lb),
            "eg" => Ok(SchedulerKind::Eg),
            _ => Err(format!("unknown scheduler `{s}` (expected lb or eg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("infeasible: no ordering fits width {width} into {workers} workers within period {period} (current length {length}, total reaction WCET {work})")]
    Infeasible { length: TimeValue, period: TimeValue, width: usize, workers: usize, work: TimeValue },
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionedDag {
    /// Input DAG plus scheduler-added edges, re-propagated.
    pub dag: DagTask,
    pub workers: usize,
    /// Worker per node; `None` for the virtual path.
    pub assignment: Vec<Option<usize>>,
    /// Execution order of each worker's reaction nodes.
    pub order: Vec<Vec<NodeId>>,
}

fn reaches(succ: &[Vec<NodeId>], from: NodeId, to: NodeId) -> bool {
    let mut seen = vec![false; succ.len()];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        for &w in &succ[v] {
            if w == to {
                return true;
            }
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    false
}

fn infeasible_count(dag: &DagTask) -> usize {
    let mut d = dag.clone();
    match d.propagate() {
        Ok(diags) => diags.len(),
        Err(_) => usize::MAX,
    }
}

/// Orders `u → v` unless `u` already reaches `v`.
fn link(dag: &mut DagTask, u: NodeId, v: NodeId) {
    if !reaches(&dag.successors(), u, v) {
        dag.add_edge(u, v, EdgeKind::SchedulerAdded);
    }
}

/// Reaction nodes in a topological order that prefers smaller (EST, tag, id).
/// Plain EST order is not enough: once timing is infeasible a node behind a
/// sync node can have a smaller EST than one in front of it.
fn list_order(dag: &DagTask) -> Vec<NodeId> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let succ = dag.successors();
    let mut indeg = vec![0usize; dag.nodes.len()];
    for vs in &succ {
        for &v in vs {
            indeg[v] += 1;
        }
    }
    let key = |v: NodeId| Reverse((dag.nodes[v].est, dag.nodes[v].tag(), v));
    let mut heap: BinaryHeap<_> = (0..dag.nodes.len()).filter(|&v| indeg[v] == 0).map(key).collect();
    let mut out = Vec::new();
    while let Some(Reverse((_, _, v))) = heap.pop() {
        if dag.nodes[v].is_reaction() {
            out.push(v);
        }
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                heap.push(key(w));
            }
        }
    }
    out
}

fn finish(mut dag: DagTask, workers: usize, order: Vec<Vec<NodeId>>) -> Result<PartitionedDag, SchedError> {
    let mut assignment = vec![None; dag.nodes.len()];
    for (w, vs) in order.iter().enumerate() {
        for &v in vs {
            assignment[v] = Some(w);
        }
    }
    dag.propagate()?;
    Ok(PartitionedDag { dag, workers, assignment, order })
}

/// Visits reaction nodes by (EST, tag, id) and gives each to the least loaded
/// worker (accumulated WCET) whose queue can take it without making any more
/// nodes miss their deadline; ties go to the lowest index. If no worker
/// qualifies the least loaded one is used anyway and the partition validator
/// reports the timing violation.
pub fn schedule_load_balanced(dag: &DagTask, workers: usize) -> Result<PartitionedDag, SchedError> {
    if workers == 0 {
        return Err(SchedError::NoWorkers);
    }
    let mut g = dag.clone();
    g.propagate()?;
    let mut load = vec![TimeValue::ZERO; workers];
    let mut order: Vec<Vec<NodeId>> = vec![Vec::new(); workers];
    for v in list_order(&g) {
        let mut cands: Vec<usize> = (0..workers).collect();
        cands.sort_by_key(|&w| (load[w], w));
        let before = infeasible_count(&g);
        let mut chosen = None;
        for &w in &cands {
            let Some(&last) = order[w].last() else {
                chosen = Some((w, g.clone()));
                break;
            };
            let mut trial = g.clone();
            link(&mut trial, last, v);
            if infeasible_count(&trial) <= before {
                chosen = Some((w, trial));
                break;
            }
        }
        let (w, next) = chosen.unwrap_or_else(|| {
            let w = cands[0];
            let mut trial = g.clone();
            if let Some(&last) = order[w].last() {
                link(&mut trial, last, v);
            }
            (w, trial)
        });
        g = next;
        load[w] = load[w] + g.nodes[v].wcet;
        order[w].push(v);
    }
    finish(g, workers, order)
}

/// Maximum bipartite matching over the comparability relation of
/// `nodes` (`left u` – `right v` iff `reach[u][v]`). Returns `mate_of_right`.
fn matching(nodes: &[NodeId], reach: &[Vec<bool>]) -> Vec<Option<usize>> {
    let k = nodes.len();
    let mut mate_r: Vec<Option<usize>> = vec![None; k];
    fn augment(
        u: usize,
        nodes: &[NodeId],
        reach: &[Vec<bool>],
        seen: &mut [bool],
        mate_r: &mut [Option<usize>],
    ) -> bool {
        for v in 0..nodes.len() {
            if reach[nodes[u]][nodes[v]] && !seen[v] {
                seen[v] = true;
                if mate_r[v].is_none_or(|u2| augment(u2, nodes, reach, seen, mate_r)) {
                    mate_r[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    for u in 0..k {
        let mut seen = vec![false; k];
        augment(u, nodes, reach, &mut seen, &mut mate_r);
    }
    mate_r
}

/// Width of the reaction nodes (size of a maximum antichain) and one such
/// antichain, via Dilworth/König on the reachability relation.
pub fn max_antichain(dag: &DagTask, reach: &[Vec<bool>]) -> Vec<NodeId> {
    let nodes: Vec<NodeId> = dag.reaction_nodes().collect();
    let k = nodes.len();
    let mate_r = matching(&nodes, reach);
    let mut mate_l = vec![None; k];
    for (v, m) in mate_r.iter().enumerate() {
        if let Some(u) = m {
            mate_l[*u] = Some(v);
        }
    }
    // Alternating search from unmatched left vertices.
    let mut zl = vec![false; k];
    let mut zr = vec![false; k];
    let mut stack: Vec<usize> = (0..k).filter(|&u| mate_l[u].is_none()).collect();
    for &u in &stack {
        zl[u] = true;
    }
    while let Some(u) = stack.pop() {
        for v in 0..k {
            if reach[nodes[u]][nodes[v]] && !zr[v] {
                zr[v] = true;
                if let Some(u2) = mate_r[v] {
                    if !zl[u2] {
                        zl[u2] = true;
                        stack.push(u2);
                    }
                }
            }
        }
    }
    (0..k).filter(|&i| zl[i] && !zr[i]).map(|i| nodes[i]).collect()
}

pub fn width(dag: &DagTask) -> Result<usize, CycleError> {
    let reach = dag.reachability()?;
    Ok(max_antichain(dag, &reach).len())
}

/// Length within the period and reaction-node width within `workers`.
pub fn is_trivially_schedulable(dag: &DagTask, workers: usize) -> Result<bool, CycleError> {
    let fits = dag.is_terminal() || dag_length(dag)? <= dag.period;
    Ok(fits && width(dag)? <= workers)
}

fn min_chain_cover(dag: &DagTask, reach: &[Vec<bool>]) -> Vec<Vec<NodeId>> {
    let nodes: Vec<NodeId> = dag.reaction_nodes().collect();
    let mate_r = matching(&nodes, reach);
    let mut next = vec![None; nodes.len()];
    for (v, m) in mate_r.iter().enumerate() {
        if let Some(u) = m {
            next[*u] = Some(v);
        }
    }
    let mut chains = Vec::new();
    for start in 0..nodes.len() {
        if mate_r[start].is_some() {
            continue;
        }
        let mut chain = vec![nodes[start]];
        let mut cur = start;
        while let Some(n) = next[cur] {
            chain.push(nodes[n]);
            cur = n;
        }
        chains.push(chain);
    }
    chains
}

/// Greedy path cover in reachability order: each node joins a chain whose
/// last node reaches it, preferring a direct edge, then the lighter chain,
/// then the older chain.
fn greedy_chains(g: &DagTask, reach: &[Vec<bool>]) -> Vec<Vec<NodeId>> {
    let mut chains: Vec<Vec<NodeId>> = Vec::new();
    let mut load: Vec<TimeValue> = Vec::new();
    for v in list_order(g) {
        let best = (0..chains.len())
            .filter(|&c| reach[*chains[c].last().unwrap()][v])
            .min_by_key(|&c| (!g.has_edge(*chains[c].last().unwrap(), v), load[c], c));
        match best {
            Some(c) => {
                chains[c].push(v);
                load[c] = load[c] + g.nodes[v].wcet;
            }
            None => {
                chains.push(vec![v]);
                load.push(g.nodes[v].wcet);
            }
        }
    }
    chains
}

/// Adds ordering edges until the reaction-node width is at most `workers`
/// while the DAG length stays within the period, then maps a cover of at
/// most `workers` chains onto the workers.
pub fn schedule_edge_generation(dag: &DagTask, workers: usize) -> Result<PartitionedDag, SchedError> {
    if workers == 0 {
        return Err(SchedError::NoWorkers);
    }
    let mut g = dag.clone();
    g.propagate()?;
    let bounded = !g.is_terminal();
    let work = g.reaction_nodes().map(|v| g.nodes[v].wcet).fold(TimeValue::ZERO, |a, b| a + b);
    loop {
        let reach = g.reachability()?;
        let anti = max_antichain(&g, &reach);
        let length = dag_length(&g)?;
        if bounded && length > g.period {
            return Err(SchedError::Infeasible { length, period: g.period, width: anti.len(), workers, work });
        }
        if anti.len() <= workers {
            break;
        }
        let mut best: Option<(TimeValue, NodeId, NodeId)> = None;
        for &u in &anti {
            for &v in &anti {
                if u == v {
                    continue;
                }
                let mut trial = g.clone();
                trial.add_edge(u, v, EdgeKind::SchedulerAdded);
                let l = dag_length(&trial)?;
                if bounded && l > g.period {
                    continue;
                }
                if best.is_none_or(|b| (l, u, v) < b) {
                    best = Some((l, u, v));
                }
            }
        }
        let Some((_, u, v)) = best else {
            return Err(SchedError::Infeasible { length, period: g.period, width: anti.len(), workers, work });
        };
        g.add_edge(u, v, EdgeKind::SchedulerAdded);
        g.propagate()?;
    }

    let reach = g.reachability()?;
    let mut chains = greedy_chains(&g, &reach);
    if chains.len() > workers {
        chains = min_chain_cover(&g, &reach);
        chains.sort_by_key(|c| c[0]);
    }
    for c in &chains {
        for w in c.windows(2) {
            link(&mut g, w[0], w[1]);
        }
    }
    let mut order = chains;
    order.resize(workers, Vec::new());
    finish(g, workers, order)
}

pub fn schedule(dag: &DagTask, kind: SchedulerKind, workers: usize) -> Result<PartitionedDag, SchedError> {
    match kind {
        SchedulerKind::Lb => schedule_load_balanced(dag, workers),
        SchedulerKind::Eg => schedule_edge_generation(dag, workers),
    }
}

/// Checks that `output` preserves every edge of `input` (by reachability),
/// is acyclic, assigns every reaction node, totally orders each worker's
/// nodes, and meets its timing after re-propagation (timing misses are
/// warnings).
pub fn validate_partition(input: &DagTask, output: &PartitionedDag) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let g = &output.dag;
    let reach = match g.reachability() {
        Ok(r) => r,
        Err(CycleError(v)) => {
            out.push(Diagnostic::error("cycle", format!("partitioned graph has a cycle through node {v}")));
            return out;
        }
    };
    if g.nodes.len() < input.nodes.len() {
        out.push(Diagnostic::error("nodes", "partitioned graph lost nodes"));
        return out;
    }
    for e in &input.edges {
        if !reach[e.from][e.to] {
            out.push(Diagnostic::error(
                "lost-dependency",
                format!("edge ({}, {}) of the input is not preserved", e.from, e.to),
            ));
        }
    }
    for v in input.reaction_nodes() {
        match output.assignment.get(v).copied().flatten() {
            Some(w) if w < output.workers => {}
            _ => out.push(Diagnostic::error("unassigned", format!("node {v} has no valid worker"))),
        }
    }
    for (w, vs) in output.order.iter().enumerate() {
        let assigned: Vec<NodeId> = (0..g.nodes.len()).filter(|&v| output.assignment[v] == Some(w)).collect();
        let mut sorted = vs.clone();
        sorted.sort_unstable();
        if sorted != assigned {
            out.push(Diagnostic::error("order", format!("worker {w} order does not match its assignment")));
        }
        for p in vs.windows(2) {
            if !reach[p[0]][p[1]] {
                out.push(Diagnostic::error(
                    "not-linear",
                    format!("worker {w}: node {} does not precede node {}", p[0], p[1]),
                ));
            }
        }
    }
    let mut timed = g.clone();
    if let Ok(diags) = timed.propagate() {
        out.extend(diags.into_iter().map(|mut d| {
            d.severity = Severity::Warning;
            d
        }));
    }
    out
}

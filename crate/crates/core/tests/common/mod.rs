#![allow(dead_code)]

use std::path::PathBuf;

use qsvm::dag::{DagNode, DagTask, EdgeKind, NodeId, NodeKind};
use qsvm::explorer::PhaseKind;
use qsvm::model::{ReactionId, Tag};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use qsvm::model::{parse_program, ProgramDef, TimeValue};
use qsvm::pipeline::{compile_program, CompileOptions, Compiled};
use qsvm::sched::SchedulerKind;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn fixture(name: &str) -> ProgramDef {
    parse_program(&fixture_text(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every `.rx` program under fixtures/, sorted by file name.
pub fn all_fixtures() -> Vec<(String, ProgramDef)> {
    let mut names: Vec<String> = std::fs::read_dir(fixtures_dir())
        .expect("fixtures dir")
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".rx"))
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), fixture(&n))).collect()
}

pub fn compile(p: &ProgramDef, scheduler: SchedulerKind, workers: usize) -> Compiled {
    try_compile(p, scheduler, workers).unwrap_or_else(|e| panic!("{scheduler} W={workers}: {e}"))
}

pub fn try_compile(p: &ProgramDef, scheduler: SchedulerKind, workers: usize) -> Result<Compiled, qsvm::pipeline::PipelineError> {
    compile_program(p.clone(), &CompileOptions { workers, scheduler, ..Default::default() })
}

/// The scheduler/worker combinations every fixture is checked under. EG with
/// one worker is only attempted; it may be infeasible.
pub const CONFIGS: [(SchedulerKind, usize); 6] = [
    (SchedulerKind::Lb, 1),
    (SchedulerKind::Lb, 2),
    (SchedulerKind::Lb, 4),
    (SchedulerKind::Eg, 1),
    (SchedulerKind::Eg, 2),
    (SchedulerKind::Eg, 4),
];

/// Longest weighted path into `dag.tail`, by listing every path from a
/// source node forward. Only reaction nodes may enter the tail.
pub fn brute_force_longest(dag: &DagTask, w: &[TimeValue]) -> TimeValue {
    let succ = dag.successors();
    let preds = dag.predecessors();
    let mut best = w[dag.tail].as_ns();
    let mut stack: Vec<Vec<NodeId>> = (0..dag.nodes.len()).filter(|&v| preds[v].is_empty()).map(|v| vec![v]).collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == dag.tail {
            best = best.max(path.iter().map(|&v| w[v].as_ns()).sum());
            continue;
        }
        for &n in &succ[last] {
            if n == dag.tail && !dag.nodes[last].is_reaction() {
                continue;
            }
            let mut p = path.clone();
            p.push(n);
            stack.push(p);
        }
    }
    TimeValue::ns(best)
}

fn node(kind: NodeKind, wcet: TimeValue) -> DagNode {
    let z = TimeValue::ZERO;
    DagNode { kind, wcet, offset: z, deadline: z, est: z, eft: z, lst: z, lft: z }
}

/// A random periodic DAG of at most `max_nodes` nodes: head sync, one dummy,
/// tail sync, and reaction nodes joined by random forward edges.
pub fn random_dag(seed: u64, max_nodes: usize) -> DagTask {
    let mut rng = StdRng::seed_from_u64(seed);
    let period = TimeValue::us(rng.gen_range(50..=500));
    let k = rng.gen_range(1..=max_nodes - 3);
    let mut nodes = vec![node(NodeKind::Sync { time: TimeValue::ZERO }, TimeValue::ZERO)];
    for r in 0..k {
        let kind = NodeKind::Reaction { reaction: ReactionId(r), invocation: 0, tag: Tag::at(TimeValue::ZERO) };
        nodes.push(node(kind, TimeValue::us(rng.gen_range(1..=60))));
    }
    nodes.push(node(NodeKind::Dummy { interval: period }, TimeValue::ZERO));
    nodes.push(node(NodeKind::Sync { time: period }, TimeValue::ZERO));
    let (dummy, tail) = (k + 1, k + 2);
    let mut dag = DagTask {
        nodes,
        edges: vec![],
        period,
        head: 0,
        tail,
        phase: PhaseKind::Periodic,
        phase_start: TimeValue::ZERO,
    };
    dag.add_edge(0, dummy, EdgeKind::VirtualPath);
    dag.add_edge(dummy, tail, EdgeKind::VirtualPath);
    for a in 1..=k {
        for b in a + 1..=k {
            if rng.gen_bool(0.3) {
                dag.add_edge(a, b, EdgeKind::Dependency);
            }
        }
    }
    let preds = dag.predecessors();
    let succ = dag.successors();
    for v in 1..=k {
        if preds[v].is_empty() {
            dag.add_edge(0, v, EdgeKind::Timing);
        }
        if succ[v].is_empty() {
            dag.add_edge(v, tail, EdgeKind::Timing);
        }
    }
    dag
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances and runtime budgets are pinned below.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use qsvm::analysis::{hyperperiod_wcet, lag_statistics, InstrCosts};
use qsvm::codegen::asm::disassemble;
use qsvm::codegen::buffer_capacities;
use qsvm::dag::{DagNode, DagTask, EdgeKind, NodeId, NodeKind};
use qsvm::explorer::{default_horizon, explore, Guard, PhaseKind};
use qsvm::model::*;
use qsvm::oracle::simulate;
use qsvm::pipeline::{compile_program, CompileOptions, Compiled};
use qsvm::sched::{is_trivially_schedulable, schedule, validate_partition, width, SchedError, SchedulerKind};
use qsvm::vm::{run_real_time, run_virtual, ConnectionBuffer, VmConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn read_fixture(name: &str) -> Result<String, String> {
    std::fs::read_to_string(fixtures_dir().join(name)).map_err(|e| format!("{name}: {e}"))
}

fn fixture(name: &str) -> Result<ProgramDef, String> {
    parse_program(&read_fixture(name)?).map_err(|e| format!("{name}: {e}"))
}

fn all_fixtures() -> Result<Vec<(String, ProgramDef)>, String> {
    let mut names: Vec<String> = std::fs::read_dir(fixtures_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".rx"))
        .collect();
    names.sort();
    names.into_iter().map(|n| fixture(&n).map(|p| (n, p))).collect()
}

fn compile(p: &ProgramDef, scheduler: SchedulerKind, workers: usize) -> Result<Compiled, String> {
    compile_program(p.clone(), &CompileOptions { workers, scheduler, ..Default::default() })
        .map_err(|e| format!("{scheduler} W={workers}: {e}"))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const CONFIGS: [(SchedulerKind, usize); 6] = [
    (SchedulerKind::Lb, 1),
    (SchedulerKind::Lb, 2),
    (SchedulerKind::Lb, 4),
    (SchedulerKind::Eg, 1),
    (SchedulerKind::Eg, 2),
    (SchedulerKind::Eg, 4),
];

/// Criterion 1: `analyze` with zero instruction costs reports exactly 150 us.
fn hyperperiod_wcet_reproduction() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_qsvm"))
        .arg("analyze")
        .arg(fixtures_dir().join("reaction_wheel.rx"))
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || format!("exit {:?}", out.status.code()))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with("periodic:"))
        .ok_or_else(|| format!("no periodic line in {text:?}"))?;
    let ns: i64 = line
        .split_whitespace()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("unparsable line {line:?}"))?;
    check(ns == 150_000, || format!("got {ns} ns"))?;
    Ok("periodic hyperperiod WCET = 150000 ns (exact)".into())
}

/// Criterion 2: Worker 0 under EG with two workers: the periodic block equals the
/// committed 14-line golden file.
fn structural_bytecode_reproduction() -> Outcome {
    let p = fixture("reaction_wheel.rx")?;
    let c = compile(&p, SchedulerKind::Eg, 2)?;
    let text = disassemble(&c.bytecode.workers[0]);
    let mut got = Vec::new();
    let mut inside = false;
    for line in text.lines() {
        if let Some(label) = line.strip_suffix(':') {
            if inside && !label.contains("_N") {
                break;
            }
            inside |= label == "PERIODIC_0";
            continue;
        }
        if inside {
            got.push(line.trim().to_string());
        }
    }
    let golden: Vec<String> =
        read_fixture("golden/reaction_wheel_eg2_periodic_0.pvm")?.lines().map(str::to_string).collect();
    check(golden.len() == 14, || format!("golden has {} lines", golden.len()))?;
    if got != golden {
        let at = got.iter().zip(&golden).position(|(a, b)| a != b).unwrap_or(got.len().min(golden.len()));
        return Err(format!("line {}: got {:?}, want {:?}", at + 1, got.get(at), golden.get(at)));
    }
    Ok("14/14 lines identical".into())
}

/// Criterion 3: Three phases with 1/3/1 states, 150 us hyperperiod, 5 s entry
/// increment, and an exit guard at the last tag.
fn phase_reproduction() -> Outcome {
    let p = fixture("reaction_wheel.rx")?;
    let ex = explore(&p, default_horizon(&p));
    let kinds: Vec<PhaseKind> = ex.phases.iter().map(|ph| ph.kind).collect();
    check(kinds == [PhaseKind::Initialization, PhaseKind::Periodic, PhaseKind::Shutdown], || format!("{kinds:?}"))?;
    let counts: Vec<usize> = ex.phases.iter().map(|ph| ph.nodes.len()).collect();
    check(counts == [1, 3, 1], || format!("node counts {counts:?}"))?;
    let hp = ex.phases[1].hyperperiod;
    check(hp == Some(TimeValue::us(150)), || format!("hyperperiod {hp:?}"))?;
    let entry = ex.transitions.iter().find(|t| t.from == 0 && t.to == 1).ok_or("no init->periodic")?;
    check(entry.time_increment == TimeValue::secs(5), || format!("increment {}", entry.time_increment))?;
    let last_tag = p.timeout.ok_or("fixture has no timeout")?;
    let exit = ex.transitions.iter().find(|t| t.from == 1 && t.to == 2).ok_or("no periodic->shutdown")?;
    check(exit.guard == Guard::TimeGeq(last_tag), || format!("guard {:?}, last tag {last_tag}", exit.guard))?;
    Ok(format!("phases 1/3/1, P = 150 us, init increment 5 s, guard t >= {last_tag}"))
}

/// Criterion 4: VM traces equal oracle traces on every fixture and configuration, and
/// 100 repeated runs are identical.
fn oracle_equivalence() -> Outcome {
    let fixtures = all_fixtures()?;
    check(fixtures.len() >= 6, || format!("only {} fixtures", fixtures.len()))?;
    let mut configs = 0;
    let mut infeasible = 0;
    for (name, p) in &fixtures {
        for (kind, w) in CONFIGS {
            let c = match compile(p, kind, w) {
                Ok(c) => c,
                Err(_) if kind == SchedulerKind::Eg && w == 1 => {
                    infeasible += 1;
                    continue;
                }
                Err(e) => return Err(format!("{name}: {e}")),
            };
            let limit = c.horizon().unwrap_or(TimeValue::ms(2));
            let cfg = VmConfig { stop_at: Some(limit), ..Default::default() };
            let first = run_virtual(&c.bytecode, &cfg).map_err(|e| format!("{name} {kind} W={w}: {e}"))?;
            let want = simulate(&c.program, limit);
            check(first.logical_trace(&c.bytecode.meta) == want, || format!("{name} {kind} W={w}: trace differs"))?;
            let reps = if kind == SchedulerKind::Eg && w == 2 { 100 } else { 1 };
            for _ in 1..reps {
                let again = run_virtual(&c.bytecode, &cfg).map_err(|e| e.to_string())?;
                check(again.events == first.events, || format!("{name} {kind} W={w}: nondeterministic"))?;
            }
            configs += 1;
        }
    }
    Ok(format!(
        "{} fixtures, {configs} configurations equal the oracle, 100 identical runs each under eg/2, {infeasible} eg/1 configurations infeasible",
        fixtures.len()
    ))
}

fn blank(kind: NodeKind, wcet: TimeValue) -> DagNode {
    let z = TimeValue::ZERO;
    DagNode { kind, wcet, offset: z, deadline: z, est: z, eft: z, lst: z, lft: z }
}

fn random_dag(seed: u64) -> DagTask {
    let mut rng = StdRng::seed_from_u64(seed);
    let period = TimeValue::us(rng.gen_range(50..=500));
    let k = rng.gen_range(1..=9);
    let mut nodes = vec![blank(NodeKind::Sync { time: TimeValue::ZERO }, TimeValue::ZERO)];
    for r in 0..k {
        let kind = NodeKind::Reaction { reaction: ReactionId(r), invocation: 0, tag: Tag::at(TimeValue::ZERO) };
        nodes.push(blank(kind, TimeValue::us(rng.gen_range(1..=60))));
    }
    nodes.push(blank(NodeKind::Dummy { interval: period }, TimeValue::ZERO));
    nodes.push(blank(NodeKind::Sync { time: period }, TimeValue::ZERO));
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
    let (preds, succ) = (dag.predecessors(), dag.successors());
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

/// Every path from a source into the tail, listed explicitly.
fn brute_force(dag: &DagTask) -> i64 {
    let w = |v: NodeId| match dag.nodes[v].kind {
        NodeKind::Dummy { interval } => interval.as_ns(),
        NodeKind::Sync { .. } => 0,
        NodeKind::Reaction { .. } => dag.nodes[v].wcet.as_ns(),
    };
    let (preds, succ) = (dag.predecessors(), dag.successors());
    let mut best = 0;
    let mut stack: Vec<Vec<NodeId>> = (0..dag.nodes.len()).filter(|&v| preds[v].is_empty()).map(|v| vec![v]).collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == dag.tail {
            best = best.max(path.iter().map(|&v| w(v)).sum());
            continue;
        }
        for &n in &succ[last] {
            if n != dag.tail || dag.nodes[last].is_reaction() {
                let mut p = path.clone();
                p.push(n);
                stack.push(p);
            }
        }
    }
    best
}

/// Criterion 5: hyperperiod_wcet equals brute-force path enumeration on 100 seeded
/// random DAGs of at most 12 nodes.
fn wcet_analysis_oracle() -> Outcome {
    for seed in 0..100u64 {
        let dag = random_dag(seed);
        check(dag.nodes.len() <= 12, || format!("seed {seed}: {} nodes", dag.nodes.len()))?;
        let got = hyperperiod_wcet(&dag, &[], &InstrCosts::zero()).map_err(|e| e.to_string())?;
        let want = brute_force(&dag);
        check(got.hyperperiod_wcet.as_ns() == want, || format!("seed {seed}: {} vs {want}", got.hyperperiod_wcet))?;
    }
    Ok("100/100 DAGs exact".into())
}

/// Criterion 6: Valid partitions everywhere; EG/2 trivially schedulable at length
/// 150 us and width <= 2; EG/1 infeasible with 205 us of work.
fn scheduler_validity() -> Outcome {
    let mut checked = 0;
    for (name, p) in all_fixtures()? {
        let ex = explore(&p, default_horizon(&p));
        for ph in &ex.phases {
            let dag = qsvm::dag::build_dag(&p, ph);
            for (kind, w) in CONFIGS {
                match schedule(&dag, kind, w) {
                    Ok(pd) => {
                        let d = validate_partition(&dag, &pd);
                        check(!qsvm::diag::has_errors(&d), || format!("{name} {kind} W={w}: {d:?}"))?;
                        checked += 1;
                    }
                    Err(SchedError::Infeasible { .. }) if kind == SchedulerKind::Eg && w == 1 => {}
                    Err(e) => return Err(format!("{name} {kind} W={w}: {e}")),
                }
            }
        }
    }
    let p = fixture("reaction_wheel.rx")?;
    let ex = explore(&p, default_horizon(&p));
    let dag = qsvm::dag::build_dag(&p, ex.phase(PhaseKind::Periodic).ok_or("no periodic phase")?);
    let pd = schedule(&dag, SchedulerKind::Eg, 2).map_err(|e| e.to_string())?;
    let length = qsvm::analysis::dag_length(&pd.dag).map_err(|e| e.to_string())?;
    let wd = width(&pd.dag).map_err(|e| e.to_string())?;
    check(is_trivially_schedulable(&pd.dag, 2).unwrap_or(false), || "EG/2 not trivially schedulable".into())?;
    check(length == TimeValue::us(150) && length == pd.dag.period, || format!("EG/2 length {length}"))?;
    check(wd <= 2, || format!("EG/2 width {wd}"))?;
    match schedule(&dag, SchedulerKind::Eg, 1) {
        Err(SchedError::Infeasible { work, .. }) if work == TimeValue::us(205) => {}
        other => return Err(format!("EG/1: {other:?}")),
    }
    Ok(format!("{checked} partitions valid; EG/2 length 150 us, width {wd}; EG/1 infeasible (205 us > 150 us)"))
}

/// Criterion 7: Real-clock run of the x1000 fixture: logical trace equals the oracle,
/// no negative lag, and the lag summary has the table's columns. Lag
/// magnitudes are machine-dependent and not asserted.
fn real_clock_lag_property() -> Outcome {
    let p = fixture("reaction_wheel_x1000.rx")?;
    let c = compile(&p, SchedulerKind::Eg, 2)?;
    let run = run_real_time(&c.bytecode, &VmConfig::default()).map_err(|e| e.to_string())?;
    let limit = c.horizon().ok_or("fixture has no timeout")?;
    check(run.logical_trace(&c.bytecode.meta) == simulate(&c.program, limit), || "trace differs".into())?;
    let report = lag_statistics(run.lag_samples(&c.bytecode.meta));
    check(report.negative == 0, || format!("{} negative lags", report.negative))?;
    let csv = report.summary_csv("ReactionWheel", "eg");
    let mut lines = csv.lines();
    check(lines.next() == Some("program,scheduler,avg_us,max_us,std_us"), || format!("header {csv:?}"))?;
    let row = lines.next().ok_or("no summary row")?;
    check(row.split(',').count() == 5, || format!("row {row:?}"))?;
    Ok(format!("{} events match; lag row: {row}", run.events.len()))
}

/// Criterion 8: On every fixture run, each sync pass leaves all counters at 0 and
/// advances time_offset by exactly offset_inc (checked inside the VM at every
/// pass; a violation is a fault). Increments must also match the explorer.
fn sync_block_contract() -> Outcome {
    let mut epochs = 0;
    for (name, p) in all_fixtures()? {
        let ex = explore(&p, default_horizon(&p));
        let allowed: Vec<i64> = ex.transitions.iter().map(|t| t.time_increment.as_ns()).collect();
        for (kind, w) in CONFIGS {
            let Ok(c) = compile(&p, kind, w) else { continue };
            let limit = c.horizon().unwrap_or(TimeValue::ms(2));
            let run = run_virtual(&c.bytecode, &VmConfig { stop_at: Some(limit), ..Default::default() })
                .map_err(|e| format!("{name} {kind} W={w}: {e}"))?;
            check(run.sync_epochs > 0, || format!("{name}: no sync pass"))?;
            check(run.sync_increments.iter().all(|i| allowed.contains(i)), || format!("{name}: stray increment"))?;
            if !run.stopped {
                let sum: i64 = run.sync_increments.iter().sum();
                check(sum == run.final_time_offset, || format!("{name}: offsets drift"))?;
            }
            epochs += run.sync_epochs;
        }
    }
    Ok(format!("{epochs} sync passes, contract held at every one"))
}

/// Criterion 9: FIFO order and capacity on the 100 us feedback connection under random
/// push gaps and same-tag push/pop interleavings.
fn connection_buffer_law() -> Outcome {
    let p = fixture("reaction_wheel.rx")?;
    let ex = explore(&p, default_horizon(&p));
    let cap = buffer_capacities(&p, &ex)[2];
    check(cap == 2, || format!("capacity {cap}"))?;
    let delay = p.connections[2].delay.ok_or("connection is not delayed")?.as_ns();
    let period = ex.phase(PhaseKind::Periodic).and_then(|ph| ph.hyperperiod).ok_or("no period")?.as_ns();

    let cfg = PropConfig {
        cases: 512,
        rng_algorithm: RngAlgorithm::ChaCha,
        failure_persistence: None,
        ..PropConfig::default()
    };
    let mut runner = TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (
        proptest::collection::vec(period..3 * period, 1..50),
        proptest::collection::vec(proptest::bool::ANY, 50),
    );
    runner
        .run(&strategy, |(gaps, push_first)| {
            let mut t = 5_000_000_000i64;
            let mut ev: Vec<(i64, u8, i64)> = Vec::new();
            for (i, g) in gaps.iter().enumerate() {
                t += g;
                ev.push((t, if push_first[i] { 0 } else { 2 }, i as i64));
                ev.push((t + delay, 1, i as i64));
            }
            ev.sort();
            let mut buf = ConnectionBuffer::new(cap);
            let mut next = 0;
            for (t, kind, i) in ev {
                if kind == 1 {
                    let v = buf.pop_at(t);
                    proptest::prop_assert_eq!(v, Some(next));
                    next += 1;
                } else {
                    proptest::prop_assert!(buf.push(t + delay, i).is_ok());
                    proptest::prop_assert!(buf.len() <= cap);
                }
            }
            proptest::prop_assert!(buf.is_empty());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("512 cases: FIFO preserved, occupancy <= 2".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("hyperperiod WCET reproduction", Duration::from_secs(1), hyperperiod_wcet_reproduction),
        ("structural bytecode reproduction", Duration::from_secs(1), structural_bytecode_reproduction),
        ("phase reproduction", Duration::from_secs(1), phase_reproduction),
        ("oracle equivalence", Duration::from_secs(30), oracle_equivalence),
        ("WCET analysis oracle", Duration::from_secs(10), wcet_analysis_oracle),
        ("scheduler validity", Duration::from_secs(5), scheduler_validity),
        ("real-clock lag property", Duration::from_secs(60), real_clock_lag_property),
        ("sync-block contract", Duration::from_secs(30), sync_block_contract),
        ("connection-buffer law", Duration::from_secs(10), connection_buffer_law),
    ];
    let mut failed = 0;
    for (k, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *budget => Err(format!("{detail}; took {took:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({took:.2?})", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why} ({took:.2?})", k + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

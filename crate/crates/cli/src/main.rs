use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qsvm::analysis::{lag_statistics, read_trace_samples, InstrCosts};
use qsvm::codegen::asm::{assemble, disassemble};
use qsvm::codegen::CompiledProgram;
use qsvm::explorer::PhaseKind;
use qsvm::model::{parse_program, TimeValue};
use qsvm::oracle::simulate;
use qsvm::pipeline::{compile_source, CompileOptions, Compiled, PipelineError, Sidecar};
use qsvm::random::{random_program, GenConfig};
use qsvm::sched::SchedulerKind;
use qsvm::vm::{run_real_time, run_virtual, VmConfig};

const SIDECAR: &str = "program.json";

#[derive(Parser)]
#[command(name = "qsvm", version, about = "Compile timed reactor programs to worker bytecode, run and analyze them")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a program to one `.pvm` file per worker plus a JSON sidecar.
    Compile(CompileCmd),
    /// Run a program (source file or compile output directory) on the VM.
    Run(RunCmd),
    /// Static hyperperiod WCET bound of every phase.
    Analyze(AnalyzeCmd),
    /// Lag statistics from VM trace CSVs.
    Report(ReportCmd),
    /// Print a seeded random program.
    Gen(GenCmd),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, env = "QSVM_WORKERS", default_value_t = 2,
          value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[arg(long, env = "QSVM_SCHEDULER", default_value = "lb")]
    scheduler: SchedulerKind,
    /// Exploration horizon, e.g. `2ms`.
    #[arg(long, env = "QSVM_HORIZON")]
    horizon: Option<TimeValue>,
    /// Overrides the program's timeout.
    #[arg(long, env = "QSVM_TIMEOUT")]
    timeout: Option<TimeValue>,
}

impl Common {
    fn options(&self) -> CompileOptions {
        CompileOptions {
            workers: self.workers as usize,
            scheduler: self.scheduler,
            horizon: self.horizon,
            timeout: self.timeout,
        }
    }
}

#[derive(Args)]
struct CompileCmd {
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "QSVM_OUT_DIR", default_value = "qsvm-out")]
    out_dir: PathBuf,
    /// Also write one partitioned-DAG DOT file per phase.
    #[arg(long)]
    dot: bool,
    /// Also write the state-space diagrams as `ssd.json`.
    #[arg(long)]
    ssd_json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClockKind {
    Virtual,
    Real,
}

#[derive(Args)]
struct RunCmd {
    /// A `.rx` source file or a directory written by `compile`.
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "QSVM_CLOCK", value_enum, default_value = "virtual")]
    clock: ClockKind,
    #[arg(long, env = "QSVM_TRACE_OUT")]
    trace_out: Option<PathBuf>,
    /// Compare the logical trace with the reference simulator.
    #[arg(long)]
    check_oracle: bool,
    /// Real clock only: abort after this long (default 10× the timeout).
    #[arg(long, env = "QSVM_WATCHDOG")]
    watchdog: Option<TimeValue>,
    /// Stop at this logical time; required for programs without a timeout.
    #[arg(long, env = "QSVM_STOP_AT")]
    stop_at: Option<TimeValue>,
}

#[derive(Args)]
struct AnalyzeCmd {
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// JSON object of per-opcode costs in ns; all zero when omitted.
    #[arg(long, env = "QSVM_INSTR_COSTS")]
    instr_costs: Option<PathBuf>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupBy {
    Reaction,
}

#[derive(Args)]
struct ReportCmd {
    traces: Vec<PathBuf>,
    #[arg(long, value_enum)]
    group_by: Option<GroupBy>,
    /// Program column; defaults to the trace file stem.
    #[arg(long)]
    program: Option<String>,
    /// Scheduler column.
    #[arg(long, default_value = "-")]
    scheduler: String,
}

#[derive(Args)]
struct GenCmd {
    #[arg(long, env = "QSVM_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    max_reactors: usize,
    /// Omit the timeout.
    #[arg(long)]
    no_timeout: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status classes.
enum Failure {
    /// Program diagnostics, oracle mismatches and I/O problems.
    Diagnostics(anyhow::Error),
    Fault(anyhow::Error),
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Diagnostics(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.cmd {
        Cmd::Compile(c) => compile(c),
        Cmd::Run(c) => run(c),
        Cmd::Analyze(c) => analyze(c),
        Cmd::Report(c) => report(c),
        Cmd::Gen(c) => gen(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Diagnostics(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Fault(e)) => {
            eprintln!("vm fault: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("usage: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn build(input: &Path, common: &Common) -> Result<Compiled, Failure> {
    let text = read(input)?;
    compile_source(&text, &common.options()).map_err(|e| {
        report_pipeline_error(&e);
        Failure::Diagnostics(anyhow!(e))
    })
}

fn report_pipeline_error(e: &PipelineError) {
    for d in e.diagnostics() {
        eprintln!("{d}");
    }
}

fn print_warnings(c: &Compiled) {
    for d in &c.diagnostics {
        eprintln!("{d}");
    }
}

fn phase_name(k: PhaseKind) -> &'static str {
    match k {
        PhaseKind::Initialization => "init",
        PhaseKind::Periodic => "periodic",
        PhaseKind::Shutdown => "shutdown",
    }
}

fn compile(cmd: CompileCmd) -> Outcome {
    let c = build(&cmd.input, &cmd.common)?;
    print_warnings(&c);
    let dir = &cmd.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for wb in &c.bytecode.workers {
        write(&dir.join(format!("worker_{}.pvm", wb.worker)), &disassemble(wb))?;
    }
    let sidecar = serde_json::to_string_pretty(&c.sidecar()).context("serializing sidecar")?;
    write(&dir.join(SIDECAR), &(sidecar + "\n"))?;
    if cmd.dot {
        for (pd, ph) in c.partitions.iter().zip(&c.exploration.phases) {
            let dot = pd.dag.to_dot(&c.program, Some(&pd.assignment));
            write(&dir.join(format!("dag_{}.dot", phase_name(ph.kind))), &dot)?;
        }
    }
    if cmd.ssd_json {
        let json = serde_json::to_string_pretty(&c.exploration.to_json(&c.program)).context("serializing SSDs")?;
        write(&dir.join("ssd.json"), &(json + "\n"))?;
    }
    println!(
        "compiled {} phase(s) for {} worker(s) into {}",
        c.exploration.phases.len(),
        c.bytecode.workers.len(),
        dir.display()
    );
    Ok(())
}

/// Loads a compile output directory: the sidecar plus `worker_<k>.pvm`.
fn load_dir(dir: &Path) -> anyhow::Result<(CompiledProgram, String)> {
    let sidecar: Sidecar = serde_json::from_str(&read(&dir.join(SIDECAR))?).context("parsing sidecar")?;
    let mut workers = Vec::new();
    for k in 0..sidecar.meta.workers {
        let path = dir.join(format!("worker_{k}.pvm"));
        workers.push(assemble(&read(&path)?, k).with_context(|| format!("assembling {}", path.display()))?);
    }
    Ok((CompiledProgram { meta: sidecar.meta, workers }, sidecar.source))
}

fn run(cmd: RunCmd) -> Outcome {
    let (bytecode, program) = if cmd.input.is_dir() {
        let (bc, source) = load_dir(&cmd.input)?;
        (bc, parse_program(&source).context("sidecar source")?)
    } else {
        let c = build(&cmd.input, &cmd.common)?;
        print_warnings(&c);
        (c.bytecode, c.program)
    };
    let stop_at = cmd.stop_at.or(program.timeout);
    if stop_at.is_none() {
        return Err(Failure::Usage(anyhow!("program has no timeout; pass --stop-at")));
    }
    let cfg = VmConfig {
        stop_at: cmd.stop_at,
        watchdog: cmd.watchdog.map(|t| Duration::from_nanos(t.as_ns().max(0) as u64)),
    };
    let result = match cmd.clock {
        ClockKind::Virtual => run_virtual(&bytecode, &cfg),
        ClockKind::Real => run_real_time(&bytecode, &cfg),
    };
    let vm_run = result.map_err(|e| Failure::Fault(anyhow!(e)))?;
    if let Some(path) = &cmd.trace_out {
        write(path, &vm_run.trace_csv(&bytecode.meta))?;
    }
    let lags = lag_statistics(vm_run.lag_samples(&bytecode.meta));
    println!("events: {}", vm_run.events.len());
    println!("sync epochs: {}", vm_run.sync_epochs);
    if let Some(s) = &lags.overall {
        println!("lag us: avg {:.3} max {:.3} std {:.3}", s.avg_us, s.max_us, s.std_us);
    }
    if lags.negative > 0 {
        println!("negative lags: {}", lags.negative);
    }
    if !vm_run.overruns.is_empty() {
        println!("wcet overruns: {}", vm_run.overruns.len());
    }
    if cmd.check_oracle {
        let horizon = stop_at.expect("checked above");
        let expected = simulate(&program, horizon);
        let got = vm_run.logical_trace(&bytecode.meta);
        if got != expected {
            let idx = program.index();
            let at = got.entries.iter().zip(&expected.entries).position(|(a, b)| a != b);
            let detail = match at {
                Some(k) => format!(
                    "first difference at entry {k}: vm {} @ {} vs oracle {} @ {}",
                    program.reaction_name(&idx, got.entries[k].reaction),
                    got.entries[k].tag,
                    program.reaction_name(&idx, expected.entries[k].reaction),
                    expected.entries[k].tag
                ),
                None => format!("vm has {} entries, oracle {}", got.len(), expected.len()),
            };
            return Err(Failure::Diagnostics(anyhow!("logical trace differs from oracle: {detail}")));
        }
        println!("oracle: match ({} entries)", got.len());
    }
    Ok(())
}

fn analyze(cmd: AnalyzeCmd) -> Outcome {
    let c = build(&cmd.input, &cmd.common)?;
    let costs = match &cmd.instr_costs {
        Some(p) => InstrCosts::from_json(&read(p)?).map_err(|e| anyhow!(e))?,
        None => InstrCosts::zero(),
    };
    let reports = c.wcet(&costs).map_err(|e| anyhow!(e))?;
    if cmd.json {
        let phases: Vec<_> = reports
            .iter()
            .zip(&c.exploration.phases)
            .zip(&c.partitions)
            .map(|((r, ph), pd)| {
                serde_json::json!({
                    "phase": ph.kind,
                    "hyperperiod_wcet_ns": r.hyperperiod_wcet.as_ns(),
                    "critical_path": r.critical_path.iter().map(|&v| pd.dag.node_label(&c.program, v)).collect::<Vec<_>>(),
                    "nodes": (0..pd.dag.nodes.len()).map(|v| serde_json::json!({
                        "node": pd.dag.node_label(&c.program, v),
                        "w_ns": r.node_wcet[v].as_ns(),
                        "w_bar_ns": r.upto_wcet[v].as_ns(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&serde_json::json!({ "phases": phases })).context("serializing")?;
        println!("{text}");
    } else {
        for ((r, ph), pd) in reports.iter().zip(&c.exploration.phases).zip(&c.partitions) {
            let path: Vec<_> = r.critical_path.iter().map(|&v| pd.dag.node_label(&c.program, v)).collect();
            println!(
                "{}: hyperperiod WCET {} ns (critical path: {})",
                phase_name(ph.kind),
                r.hyperperiod_wcet.as_ns(),
                path.join(" -> ")
            );
        }
    }
    Ok(())
}

fn report(cmd: ReportCmd) -> Outcome {
    if cmd.traces.is_empty() {
        return Err(Failure::Usage(anyhow!("no trace files given")));
    }
    let mut out = String::new();
    for (k, path) in cmd.traces.iter().enumerate() {
        let samples = read_trace_samples(&read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let lags = lag_statistics(samples);
        let text = match cmd.group_by {
            Some(GroupBy::Reaction) => lags.per_reaction_csv(),
            None => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                lags.summary_csv(cmd.program.as_deref().unwrap_or(&stem), &cmd.scheduler)
            }
        };
        // One header for the whole output.
        let body = if k == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, b)| b) };
        out.push_str(body);
    }
    print!("{out}");
    Ok(())
}

fn gen(cmd: GenCmd) -> Outcome {
    if cmd.max_reactors == 0 {
        return Err(Failure::Usage(anyhow!("--max-reactors must be at least 1")));
    }
    let cfg = GenConfig {
        max_reactors: cmd.max_reactors,
        timeout_periods: if cmd.no_timeout { None } else { GenConfig::default().timeout_periods },
        ..GenConfig::default()
    };
    let text = qsvm::model::print_program(&random_program(cmd.seed, &cfg));
    match &cmd.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

//! Source text to linked bytecode in one call.

use serde::{Deserialize, Serialize};

use crate::analysis::{self, AnalysisError, InstrCosts, WcetReport};
use crate::codegen::{self, CompiledProgram, PhaseCode, ProgramMeta};
use crate::dag::{build_dag, DagTask};
use crate::diag::{has_errors, Diagnostic};
use crate::explorer::{default_horizon, explore, Exploration, PhaseKind};
use crate::model::*;
use crate::sched::{schedule, validate_partition, PartitionedDag, SchedError, SchedulerKind};

/// What `compile` writes next to the per-worker assembly: the tables the VM
/// needs and the canonical program text (for oracle checks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub meta: ProgramMeta,
    pub source: String,
}

#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub workers: usize,
    pub scheduler: SchedulerKind,
    /// Exploration horizon; defaults to [`default_horizon`].
    pub horizon: Option<TimeValue>,
    /// Replaces the program's own timeout.
    pub timeout: Option<TimeValue>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { workers: 2, scheduler: SchedulerKind::Lb, horizon: None, timeout: None }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("program is invalid")]
    Invalid(Vec<Diagnostic>),
    #[error("state-space exploration failed")]
    Explore(Vec<Diagnostic>),
    #[error("cannot schedule the {phase:?} phase")]
    Schedule { phase: PhaseKind, source: SchedError },
    #[error("{phase:?} phase: partition is invalid")]
    Partition { phase: PhaseKind, diagnostics: Vec<Diagnostic> },
    #[error("generated bytecode failed static checks: {}", .0.join("; "))]
    Static(Vec<String>),
}

impl PipelineError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            PipelineError::Invalid(d) | PipelineError::Explore(d) => d,
            PipelineError::Partition { diagnostics, .. } => diagnostics,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub program: ProgramDef,
    pub exploration: Exploration,
    /// Per phase, before partitioning.
    pub dags: Vec<DagTask>,
    pub partitions: Vec<PartitionedDag>,
    pub phase_code: Vec<PhaseCode>,
    pub bytecode: CompiledProgram,
    /// Warnings collected along the way.
    pub diagnostics: Vec<Diagnostic>,
}

impl Compiled {
    /// Static WCET bound of every phase, with instruction overhead.
    pub fn wcet(&self, costs: &InstrCosts) -> Result<Vec<WcetReport>, AnalysisError> {
        self.partitions
            .iter()
            .zip(&self.phase_code)
            .map(|(pd, code)| analysis::hyperperiod_wcet(&pd.dag, &code.node_instrs, costs))
            .collect()
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar { meta: self.bytecode.meta.clone(), source: print_program(&self.program) }
    }

    /// Logical time up to which the VM and the oracle are compared.
    pub fn horizon(&self) -> Option<TimeValue> {
        self.program.timeout
    }
}

pub fn compile_source(text: &str, opts: &CompileOptions) -> Result<Compiled, PipelineError> {
    compile_program(parse_program(text)?, opts)
}

pub fn compile_program(mut program: ProgramDef, opts: &CompileOptions) -> Result<Compiled, PipelineError> {
    if opts.timeout.is_some() {
        program.timeout = opts.timeout;
    }
    let mut diagnostics = validate(&program);
    if has_errors(&diagnostics) {
        return Err(PipelineError::Invalid(diagnostics));
    }
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(&program));
    let exploration = explore(&program, horizon);
    if has_errors(&exploration.diagnostics) {
        return Err(PipelineError::Explore(exploration.diagnostics.clone()));
    }
    diagnostics.extend(exploration.diagnostics.iter().cloned());

    let mut dags = Vec::new();
    let mut partitions = Vec::new();
    for ph in &exploration.phases {
        let dag = build_dag(&program, ph);
        let pd = schedule(&dag, opts.scheduler, opts.workers)
            .map_err(|source| PipelineError::Schedule { phase: ph.kind, source })?;
        let report = validate_partition(&dag, &pd);
        if has_errors(&report) {
            return Err(PipelineError::Partition { phase: ph.kind, diagnostics: report });
        }
        diagnostics.extend(report);
        dags.push(dag);
        partitions.push(pd);
    }
    let (bytecode, phase_code, link_diags) = codegen::compile(&program, &exploration, &partitions);
    diagnostics.extend(link_diags);
    let problems = codegen::static_checks(&bytecode, &dags);
    if !problems.is_empty() {
        return Err(PipelineError::Static(problems));
    }
    Ok(Compiled { program, exploration, dags, partitions, phase_code, bytecode, diagnostics })
}

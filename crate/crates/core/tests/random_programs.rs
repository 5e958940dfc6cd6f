use proptest::prelude::*;
use qsvm::model::TimeValue;
use qsvm::oracle::simulate;
use qsvm::pipeline::{compile_program, CompileOptions, PipelineError};
use qsvm::random::{random_program, GenConfig};
use qsvm::sched::{SchedError, SchedulerKind};
use qsvm::vm::{run_virtual, VmConfig};

fn config(timeout: bool) -> GenConfig {
    GenConfig {
        max_reactors: 6,
        periods: [50, 75, 100, 150].into_iter().map(TimeValue::us).collect(),
        max_wcet: TimeValue::us(20),
        emit_probability: 0.5,
        timeout_periods: timeout.then_some(4),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn generated_programs_run_like_the_oracle(
        seed in 0u64..1_000_000,
        timeout in any::<bool>(),
        eg in any::<bool>(),
        workers in 1usize..=4,
    ) {
        let p = random_program(seed, &config(timeout));
        let scheduler = if eg { SchedulerKind::Eg } else { SchedulerKind::Lb };
        let c = match compile_program(p, &CompileOptions { workers, scheduler, ..Default::default() }) {
            Ok(c) => c,
            // Overloaded programs are legitimately rejected by EG.
            Err(PipelineError::Schedule { source: SchedError::Infeasible { .. }, .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(format!("seed {seed}: {e}"))),
        };
        let limit = c.horizon().unwrap_or(TimeValue::us(1_000));
        let run = run_virtual(&c.bytecode, &VmConfig { stop_at: Some(limit), ..Default::default() })
            .map_err(|e| TestCaseError::fail(format!("seed {seed}: {e}")))?;
        prop_assert_eq!(run.logical_trace(&c.bytecode.meta), simulate(&c.program, limit), "seed {}", seed);
    }
}

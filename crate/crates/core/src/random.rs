//! Seeded generator of small valid programs, for property tests and the
//! `gen` command.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::model::*;

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_reactors: usize,
    /// Timer periods are drawn from this set (harmonic sets keep the
    /// hyperperiod short).
    pub periods: Vec<TimeValue>,
    pub max_wcet: TimeValue,
    /// Probability that a reaction with effects emits on each of them.
    pub emit_probability: f64,
    /// Number of base hyperperiods before the timeout; `None` for no timeout.
    pub timeout_periods: Option<i64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_reactors: 5,
            periods: [100, 200, 400].into_iter().map(TimeValue::us).collect(),
            max_wcet: TimeValue::us(8),
            emit_probability: 0.7,
            timeout_periods: Some(3),
        }
    }
}

/// Builds a program from `seed`. Zero-delay connections only go from
/// earlier to later reactors, so the result is always acyclic; delayed
/// connections may go anywhere.
pub fn random_program(seed: u64, cfg: &GenConfig) -> ProgramDef {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(1..=cfg.max_reactors.max(1));
    let mut reactors: Vec<ReactorDef> = (0..n)
        .map(|k| ReactorDef {
            name: format!("R{k}"),
            inputs: vec![],
            outputs: vec!["out".into()],
            timers: vec![],
            reactions: vec![],
        })
        .collect();

    let mut connections = Vec::new();
    for to in 0..n {
        let inputs = rng.gen_range(0..=2usize);
        for _ in 0..inputs {
            let from = rng.gen_range(0..n);
            let delayed = from >= to || rng.gen_bool(0.3);
            if from == to && !delayed {
                continue;
            }
            let port = reactors[to].inputs.len();
            reactors[to].inputs.push(format!("in{port}"));
            let delay = delayed.then(|| TimeValue::us(25 * rng.gen_range(1..=8)));
            connections.push(ConnectionDef {
                from: PortRef { reactor: from, port: 0 },
                to: PortRef { reactor: to, port },
                delay,
            });
        }
    }

    let mut max_period = TimeValue::ZERO;
    for (k, r) in reactors.iter_mut().enumerate() {
        let wcet = |rng: &mut StdRng| TimeValue::ns(rng.gen_range(1..=cfg.max_wcet.as_ns().max(1)));
        let mut prio = 1;
        let mut push = |r: &mut ReactorDef, rng: &mut StdRng, triggers: Vec<TriggerRef>, emits: bool| {
            let w = wcet(rng);
            let mut body = vec![BodyOp::BusySpin(TimeValue::ns(rng.gen_range(0..=w.as_ns())))];
            if emits && rng.gen_bool(cfg.emit_probability) {
                body.push(BodyOp::Emit { port: 0, value: rng.gen_range(0..100) });
            }
            r.reactions.push(ReactionDef {
                priority: prio,
                triggers,
                effects: if emits { vec![0] } else { vec![] },
                wcet: w,
                body,
            });
            prio += 1;
        };
        if k == 0 || rng.gen_bool(0.6) {
            let period = cfg.periods[rng.gen_range(0..cfg.periods.len())];
            max_period = max_period.max(period);
            let offset = TimeValue::us(25 * rng.gen_range(0..=2));
            r.timers.push(TimerDef { name: "t".into(), offset, period });
            push(r, &mut rng, vec![TriggerRef::Timer(0)], true);
        }
        for p in 0..r.inputs.len() {
            let emits = rng.gen_bool(0.5);
            push(r, &mut rng, vec![TriggerRef::Input(p)], emits);
        }
        if rng.gen_bool(0.2) {
            push(r, &mut rng, vec![TriggerRef::Startup], false);
        }
        if rng.gen_bool(0.2) {
            push(r, &mut rng, vec![TriggerRef::Shutdown], false);
        }
        if r.reactions.is_empty() {
            push(r, &mut rng, vec![TriggerRef::Startup], true);
        }
    }
    let timeout = cfg.timeout_periods.map(|k| {
        let base = if max_period > TimeValue::ZERO { max_period } else { TimeValue::us(100) };
        TimeValue::ns(base.as_ns() * k + 25_000 * rng.gen_range(0..=3))
    });
    ProgramDef { reactors, connections, timeout }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::has_errors;

    #[test]
    fn generated_programs_validate_and_round_trip() {
        for seed in 0..200 {
            let p = random_program(seed, &GenConfig::default());
            let d = validate(&p);
            assert!(!has_errors(&d), "seed {seed}: {d:?}");
            assert_eq!(parse_program(&print_program(&p)).unwrap(), p, "seed {seed}");
        }
    }

    #[test]
    fn same_seed_same_program() {
        assert_eq!(random_program(7, &GenConfig::default()), random_program(7, &GenConfig::default()));
    }
}

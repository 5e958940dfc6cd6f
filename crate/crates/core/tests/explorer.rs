mod common;

use qsvm::explorer::{default_horizon, explore, replay, Guard, PhaseKind};
use qsvm::model::*;
use qsvm::oracle::simulate;

fn names(p: &ProgramDef, ids: &[ReactionId]) -> Vec<String> {
    let idx = p.index();
    ids.iter().map(|&r| p.reaction_name(&idx, r)).collect()
}

#[test]
fn reaction_wheel_has_three_phases() {
    let p = common::fixture("reaction_wheel.rx");
    let ex = explore(&p, default_horizon(&p));
    assert!(ex.diagnostics.is_empty(), "{:?}", ex.diagnostics);
    let kinds: Vec<PhaseKind> = ex.phases.iter().map(|ph| ph.kind).collect();
    assert_eq!(kinds, [PhaseKind::Initialization, PhaseKind::Periodic, PhaseKind::Shutdown]);
    let counts: Vec<usize> = ex.phases.iter().map(|ph| ph.nodes.len()).collect();
    assert_eq!(counts, [1, 3, 1]);

    let periodic = ex.phase(PhaseKind::Periodic).unwrap();
    assert_eq!(periodic.hyperperiod, Some(TimeValue::us(150)));
    assert_eq!(periodic.start, TimeValue::secs(5));
    let rel: Vec<i64> = periodic.nodes.iter().map(|n| (n.tag.time - periodic.start).as_ns()).collect();
    assert_eq!(rel, [0, 75_000, 100_000]);
    assert_eq!(
        names(&p, &periodic.nodes[0].invoked),
        ["Gyroscope.1", "AngularRateSensor.1", "Controller.1", "Controller.2"]
    );
    assert_eq!(names(&p, &periodic.nodes[1].invoked), ["AngularRateSensor.1", "Controller.1"]);
    assert_eq!(names(&p, &periodic.nodes[2].invoked), ["Controller.3", "Motor.2"]);
}

#[test]
fn reaction_wheel_transitions() {
    let p = common::fixture("reaction_wheel.rx");
    let ex = explore(&p, default_horizon(&p));
    let init_to_periodic = ex.transitions.iter().find(|t| t.from == 0 && t.to == 1).unwrap();
    assert_eq!(init_to_periodic.guard, Guard::Default);
    assert_eq!(init_to_periodic.time_increment, TimeValue::secs(5));

    let self_loop = ex.transitions.iter().find(|t| t.from == 1 && t.to == 1).unwrap();
    assert_eq!(self_loop.guard, Guard::Default);
    assert_eq!(self_loop.time_increment, TimeValue::us(150));

    // The guarded exit fires at the last tag: 5 s plus three hyperperiods.
    let exit = ex.transitions.iter().find(|t| t.from == 1 && t.to == 2).unwrap();
    assert_eq!(exit.guard, Guard::TimeGeq(TimeValue::us(5_000_450)));
    // Guards are tried before the default.
    let order: Vec<usize> = ex.transitions.iter().filter(|t| t.from == 1).map(|t| t.to).collect();
    assert_eq!(order, [2, 1]);

    let shutdown = ex.phase(PhaseKind::Shutdown).unwrap();
    assert_eq!(
        names(&p, &shutdown.nodes[0].invoked),
        ["Gyroscope.1", "AngularRateSensor.1", "Controller.1", "Controller.2", "Controller.4"]
    );
}

#[test]
fn oracle_matches_hand_trace_of_first_hyperperiod() {
    let p = common::fixture("reaction_wheel.rx");
    let t = simulate(&p, TimeValue::us(5_000_150));
    let got: Vec<(i64, String)> = t
        .entries
        .iter()
        .map(|e| (e.tag.time.as_ns(), names(&p, &[e.reaction]).remove(0)))
        .collect();
    let s = 5_000_000_000;
    let want: Vec<(i64, &str)> = vec![
        (0, "Motor.1"),
        (s, "Gyroscope.1"),
        (s, "AngularRateSensor.1"),
        (s, "Controller.1"),
        (s, "Controller.2"),
        (s + 75_000, "AngularRateSensor.1"),
        (s + 75_000, "Controller.1"),
        (s + 100_000, "Controller.3"),
        (s + 100_000, "Motor.2"),
        (s + 150_000, "Gyroscope.1"),
        (s + 150_000, "AngularRateSensor.1"),
        (s + 150_000, "Controller.1"),
        (s + 150_000, "Controller.2"),
    ];
    let want: Vec<(i64, String)> = want.into_iter().map(|(a, b)| (a, b.to_string())).collect();
    assert_eq!(got, want);
    assert!(t.entries.iter().all(|e| e.tag.microstep == 0));
}

#[test]
fn oracle_stops_at_timeout() {
    let p = common::fixture("reaction_wheel.rx");
    let t = simulate(&p, TimeValue::secs(100));
    let last = t.entries.last().unwrap();
    assert_eq!(last.tag.time, TimeValue::us(5_000_450));
    assert_eq!(t.len(), 30);
}

/// The explorer assumes every declared effect fires, so its replay covers the
/// actual trace; they coincide when every declared effect is emitted.
#[test]
fn replayed_phases_cover_oracle_on_every_fixture() {
    for (name, p) in common::all_fixtures() {
        let ex = explore(&p, default_horizon(&p));
        assert!(!qsvm::diag::has_errors(&ex.diagnostics), "{name}: {:?}", ex.diagnostics);
        let limit = p.timeout.unwrap_or(TimeValue::ms(2));
        let got: Vec<(Tag, ReactionId)> = replay(&ex, limit);
        let want: Vec<(Tag, ReactionId)> = simulate(&p, limit).entries.iter().map(|e| (e.tag, e.reaction)).collect();
        let mut rest = got.iter();
        for w in &want {
            assert!(rest.any(|g| g == w), "{name}: {w:?} missing from the replay");
        }
        if name != "coop_schedule.rx" {
            assert_eq!(got, want, "{name}");
        } else {
            assert!(got.len() > want.len());
        }
    }
}

#[test]
fn ring_without_timeout_explores_to_a_loop() {
    let mut p = common::fixture("thread_ring.rx");
    p.timeout = None;
    let ex = explore(&p, default_horizon(&p));
    assert!(!qsvm::diag::has_errors(&ex.diagnostics), "{:?}", ex.diagnostics);
    let periodic = ex.phase(PhaseKind::Periodic).unwrap();
    // Four hops of 25 us each bring the token back to Node0.
    assert_eq!(periodic.hyperperiod, Some(TimeValue::us(100)));
    assert!(ex.phase(PhaseKind::Shutdown).is_none());
}

mod common;

use proptest::prelude::*;
use qsvm::diag::has_errors;
use qsvm::model::*;
use qsvm::random::{random_program, GenConfig};

#[test]
fn fixtures_parse_validate_and_round_trip() {
    for (name, p) in common::all_fixtures() {
        let d = validate(&p);
        assert!(!has_errors(&d), "{name}: {d:?}");
        let again = parse_program(&print_program(&p)).unwrap();
        assert_eq!(again, p, "{name}");
    }
}

#[test]
fn reaction_wheel_shape() {
    let p = common::fixture("reaction_wheel.rx");
    assert_eq!(p.reactors.len(), 4);
    assert_eq!(p.reaction_count(), 8);
    assert_eq!(p.connections.len(), 4);
    assert_eq!(p.timeout, Some(TimeValue::us(5_000_450)));
    let c = &p.connections[2];
    assert_eq!(c.delay, Some(TimeValue::us(100)));
    assert_eq!(p.reactors[c.from.reactor].name, "Controller");
}

#[test]
fn durations_parse_with_units() {
    assert_eq!("5s".parse::<TimeValue>().unwrap(), TimeValue::secs(5));
    assert_eq!("150us".parse::<TimeValue>().unwrap(), TimeValue::ns(150_000));
    assert_eq!("2ms".parse::<TimeValue>().unwrap(), TimeValue::us(2_000));
    assert_eq!("7ns".parse::<TimeValue>().unwrap(), TimeValue::ns(7));
    assert!("5".parse::<TimeValue>().is_err());
    assert!("5 parsecs".parse::<TimeValue>().is_err());
}

#[test]
fn unknown_port_is_a_parse_error() {
    let src = "reactor A { output o; reaction 1 triggers(startup) effects(nope) wcet 1us body { } }";
    assert!(matches!(parse_program(src), Err(ParseError::Unknown { .. })));
}

#[test]
fn duplicate_priority_is_rejected() {
    let src = "reactor A {
  reaction 1 triggers(startup) wcet 1us body { }
  reaction 1 triggers(shutdown) wcet 1us body { }
}";
    assert!(matches!(parse_program(src), Err(ParseError::DuplicatePriority { priority: 1, .. })));
}

#[test]
fn zero_delay_loop_is_a_causality_cycle() {
    let src = "reactor A { input i; output o; reaction 1 triggers(i) effects(o) wcet 1us body { emit o 1; } }
reactor B { input i; output o; reaction 1 triggers(i) effects(o) wcet 1us body { emit o 1; } }
connection A.o -> B.i;
connection B.o -> A.i;";
    let p = parse_program(src).unwrap();
    let d = validate(&p);
    assert!(d.iter().any(|x| x.code == "causality-cycle" && x.is_error()), "{d:?}");
}

#[test]
fn delay_breaks_the_cycle() {
    let src = "reactor A { input i; output o; reaction 1 triggers(i) effects(o) wcet 1us body { emit o 1; } }
reactor B { input i; output o; reaction 1 triggers(i) effects(o) wcet 1us body { emit o 1; } }
connection A.o -> B.i;
connection B.o -> A.i after 10us;";
    let p = parse_program(src).unwrap();
    assert!(!has_errors(&validate(&p)));
}

#[test]
fn second_connection_into_one_input_is_rejected() {
    let src = "reactor A { output o; reaction 1 triggers(startup) effects(o) wcet 1us body { } }
reactor B { input i; reaction 1 triggers(i) wcet 1us body { } }
connection A.o -> B.i;
connection A.o -> B.i after 5us;";
    let p = parse_program(src).unwrap();
    assert!(validate(&p).iter().any(|x| x.code == "multiple-inputs"));
}

#[test]
fn ranks_respect_precedence() {
    let p = common::fixture("reaction_wheel.rx");
    let ranks = reaction_ranks(&p).unwrap();
    for (from, succs) in precedence_graph(&p).iter().enumerate() {
        for to in succs {
            assert!(ranks[from] < ranks[to.0], "{from} -> {}", to.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn generated_programs_round_trip(seed in 0u64..10_000) {
        let p = random_program(seed, &GenConfig::default());
        prop_assert!(!has_errors(&validate(&p)));
        prop_assert_eq!(parse_program(&print_program(&p)).unwrap(), p);
    }
}

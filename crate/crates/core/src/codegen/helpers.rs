use crate::explorer::{Exploration, Guard, PhaseKind};
use crate::model::*;

use super::destination_triggers;

/// Circular buffer size of every connection: `ceil(delay / gap) + 1` where
/// `gap` is the smallest distance between two pushes, raised if needed to
/// the most pushes that fall in a closed window of length `delay` (a push at
/// the same tag as a pop may run before it). Zero-delay connections and
/// connections whose destination triggers nothing get 0.
pub fn buffer_capacities(program: &ProgramDef, ex: &Exploration) -> Vec<usize> {
    let idx = program.index();
    program
        .connections
        .iter()
        .map(|c| {
            let Some(d) = c.delay.filter(|d| *d > TimeValue::ZERO) else { return 0 };
            if !destination_triggers(program, c) {
                return 0;
            }
            let writes = |node: &crate::explorer::StateSpaceNode| {
                node.invoked.iter().any(|&r| {
                    idx.reactions[r.0].0 == c.from.reactor
                        && program.reaction(&idx, r).effects.contains(&c.from.port)
                })
            };
            let mut seqs = push_sequences(ex, d, &writes);
            seqs.iter_mut().for_each(|s| s.sort());
            let gap = seqs
                .iter()
                .flat_map(|s| s.windows(2).map(|w| w[1] - w[0]))
                .filter(|g| *g > TimeValue::ZERO)
                .min();
            let by_gap = match gap {
                Some(g) => (d.as_ns() + g.as_ns() - 1) / g.as_ns() + 1,
                None => 1,
            } as usize;
            seqs.iter().map(|s| window_max(s, d)).fold(by_gap, usize::max)
        })
        .collect()
}

fn window_max(times: &[TimeValue], d: TimeValue) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi].saturating_sub(times[lo]) > d {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

/// Absolute push times around each phase boundary, periodic instances
/// unrolled far enough to cover one delay on either side.
fn push_sequences(
    ex: &Exploration,
    d: TimeValue,
    writes: &dyn Fn(&crate::explorer::StateSpaceNode) -> bool,
) -> Vec<Vec<TimeValue>> {
    let times = |kind: PhaseKind, shift: i64| -> Vec<TimeValue> {
        ex.phase(kind)
            .map(|ph| {
                ph.nodes
                    .iter()
                    .filter(|n| writes(n))
                    .map(|n| TimeValue::ns(n.tag.time.as_ns().saturating_add(shift)))
                    .collect()
            })
            .unwrap_or_default()
    };
    let init = times(PhaseKind::Initialization, 0);
    let shut = times(PhaseKind::Shutdown, 0);
    let Some(periodic) = ex.phase(PhaseKind::Periodic) else {
        let mut all = init;
        all.extend(shut);
        return vec![all];
    };
    let h = periodic.hyperperiod.expect("periodic phase has a hyperperiod").as_ns();
    let copies = (d.as_ns() / h.max(1)) + 2;
    let mut head = init;
    for k in 0..copies {
        head.extend(times(PhaseKind::Periodic, k * h));
    }
    let mut seqs = vec![head];
    if let Some(sd) = ex.phase(PhaseKind::Shutdown) {
        let boundary = ex
            .transitions
            .iter()
            .find_map(|t| match t.guard {
                Guard::TimeGeq(b) => Some(b),
                Guard::Default => None,
            })
            .unwrap_or(sd.start);
        let mut tail = Vec::new();
        for k in (1..=copies).rev() {
            let shift = boundary.as_ns() - k * h - periodic.start.as_ns();
            tail.extend(times(PhaseKind::Periodic, shift));
        }
        tail.extend(shut);
        seqs.push(tail);
    }
    seqs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts_closed_interval() {
        let t = |v: &[i64]| v.iter().map(|&x| TimeValue::ns(x)).collect::<Vec<_>>();
        assert_eq!(window_max(&t(&[0, 10, 20]), TimeValue::ns(10)), 2);
        assert_eq!(window_max(&t(&[0, 10, 20]), TimeValue::ns(9)), 1);
        assert_eq!(window_max(&t(&[0, 1, 2, 3]), TimeValue::ns(100)), 4);
        assert_eq!(window_max(&[], TimeValue::ns(5)), 0);
    }
}

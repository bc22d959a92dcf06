use crate::channel::is_candidate;
use crate::mobility::{VcSnapshot, VehicleId};
use crate::sched::{
    commit_or_fail, compute_time, start, Assignment, Failure, FailureCause, Problem, ScheduleState, Scheduler, SimRng,
};

use super::{blind_choice_failure, heft_rank, lowest_rank, reachable, st_of};

/// HEFT ordering with one-step lookahead: each vehicle is judged by the worst, over the
/// successors, of their best achievable finish time if the subtask ran there.
#[derive(Debug, Clone, Default)]
pub struct Lookahead;

/// Best finish time of successor `s` assuming `n` finishes at `eft_n` on `p`. Predecessors of
/// `s` that are still unscheduled are ignored.
fn best_successor_eft(
    s: usize,
    n: usize,
    p: VehicleId,
    eft_n: f64,
    state: &ScheduleState<'_>,
    problem: &Problem<'_>,
) -> f64 {
    let dag = problem.dag;
    let known: Vec<(VehicleId, f64, f64)> = dag
        .preds(s)
        .iter()
        .filter_map(|&(j, bits)| {
            if j == n {
                Some((p, eft_n, bits))
            } else {
                state.assignment().get(j).map(|pl| (pl.vehicle, pl.eft, bits))
            }
        })
        .collect();
    let st = known.iter().map(|k| k.1).fold(0.0, f64::max);
    let snap = problem.snapshot(st);
    let mut best = f64::INFINITY;
    for q in problem.trace.vehicle_ids() {
        if !snap.is_present(q) {
            continue;
        }
        let mut rt: f64 = 0.0;
        for &(src, aft, bits) in &known {
            match problem.channel.tt(bits, src, q, &snap) {
                Some(tt) => rt = rt.max(aft + tt),
                None => rt = f64::INFINITY,
            }
        }
        let avail = if q == p { eft_n.max(state.avail(q)) } else { state.avail(q) };
        best = best.min(avail.max(rt) + compute_time(dag, problem.trace, s, q));
    }
    best
}

impl Scheduler for Lookahead {
    fn name(&self) -> &str {
        "la"
    }

    fn schedule(&self, problem: &Problem<'_>, _rng: &mut SimRng) -> Result<Assignment, Failure> {
        let Problem { dag, trace, channel } = *problem;
        let mut state = ScheduleState::new(dag, trace);
        start(&mut state, channel)?;
        let ranks = heft_rank(dag, &problem.snapshot(0.0), channel);
        while !state.is_complete() {
            let n = lowest_rank(&state, &ranks);
            let st = st_of(n, &state);
            let snap: VcSnapshot<'_> = problem.snapshot(st);
            let pool = reachable(n, &state, &snap, problem);
            if pool.is_empty() {
                return Err(Failure::new(n, st, FailureCause::EmptyCandidateSet));
            }
            let mut best: Option<(f64, VehicleId)> = None;
            for &(p, _, eft) in &pool {
                let succs = dag.succs(n);
                let score = if succs.is_empty() {
                    eft
                } else {
                    succs.iter().map(|&(s, _)| best_successor_eft(s, n, p, eft, &state, problem)).fold(f64::NEG_INFINITY, f64::max)
                };
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, p));
                }
            }
            let (_, p) = best.expect("pool is nonempty");
            if !is_candidate(n, p, &state, &snap, dag, channel) {
                return Err(blind_choice_failure(n, &state, &snap, problem));
            }
            commit_or_fail(n, p, &mut state, &snap, channel)?;
        }
        Ok(state.into_assignment())
    }
}

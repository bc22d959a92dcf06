use crate::channel::{is_candidate, Channel};
use crate::dag::Dag;
use crate::mobility::VcSnapshot;
use crate::sched::{commit_or_fail, start, Assignment, Failure, FailureCause, Problem, ScheduleState, Scheduler, SimRng};

use super::{blind_choice_failure, lowest_rank, min_eft, reachable, st_of};

/// Static downward rank: mean computation time over the vehicles present in `snap` plus
/// transfer time at the mean link rate, accumulated from the entry.
pub fn heft_rank(dag: &Dag, snap: &VcSnapshot<'_>, channel: &Channel) -> Vec<f64> {
    let trace = snap.trace();
    let present = snap.present();
    let inv_speed = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|&p| 1.0 / trace.vehicle(p).cpu_hz).sum::<f64>() / present.len() as f64
    };
    let rate = channel.mean_rate(snap);
    let mut rank = vec![0.0; dag.len()];
    for &n in dag.topo_order() {
        let ct = dag.workload(n) * inv_speed;
        rank[n] = dag
            .preds(n)
            .iter()
            .map(|&(j, bits)| rank[j] + ct + rate.map_or(0.0, |r| bits / r))
            .fold(0.0, f64::max);
    }
    rank
}

/// Static-rank list scheduling onto the earliest-finishing reachable vehicle, blind to link
/// reliability; an unreliable choice fails the trial.
#[derive(Debug, Clone, Default)]
pub struct Heft;

impl Scheduler for Heft {
    fn name(&self) -> &str {
        "heft"
    }

    fn schedule(&self, problem: &Problem<'_>, _rng: &mut SimRng) -> Result<Assignment, Failure> {
        let Problem { dag, trace, channel } = *problem;
        let mut state = ScheduleState::new(dag, trace);
        start(&mut state, channel)?;
        let ranks = heft_rank(dag, &problem.snapshot(0.0), channel);
        while !state.is_complete() {
            let n = lowest_rank(&state, &ranks);
            let st = st_of(n, &state);
            let snap = problem.snapshot(st);
            let pool = reachable(n, &state, &snap, problem);
            let Some(p) = min_eft(&pool) else {
                return Err(Failure::new(n, st, FailureCause::EmptyCandidateSet));
            };
            if !is_candidate(n, p, &state, &snap, dag, channel) {
                return Err(blind_choice_failure(n, &state, &snap, problem));
            }
            commit_or_fail(n, p, &mut state, &snap, channel)?;
        }
        Ok(state.into_assignment())
    }
}

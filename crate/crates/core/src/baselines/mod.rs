//! Reference schedulers: HEFT, one-step lookahead, a genetic algorithm and an exhaustive
//! search oracle for small instances.

mod brute_force;
mod heft;
mod lookahead;
mod mga;

pub use brute_force::{brute_force_schedule, BruteForce, BruteForceError, MAX_SUBTASKS, MAX_VEHICLES};
pub use heft::{heft_rank, Heft};
pub use lookahead::Lookahead;
pub use mga::{Chromosome, Mga, MgaConfig, MgaError};

use crate::channel::candidate_set;
use crate::mobility::{VcSnapshot, VehicleId};
use crate::sched::{
    est_eft, scheduling_time, Failure, FailureCause, Problem, ScheduleState,
};

/// Picks the ready subtask with the lowest static rank, ties going to the lower index.
fn lowest_rank(state: &ScheduleState<'_>, ranks: &[f64]) -> usize {
    let mut pick: Option<usize> = None;
    for &n in state.ready() {
        if pick.is_none_or(|b| ranks[n] < ranks[b]) {
            pick = Some(n);
        }
    }
    pick.expect("ready set is nonempty while incomplete")
}

/// Vehicles in one-hop range of every predecessor host of `n`, with their `(est, eft)`,
/// ignoring link reliability.
fn reachable(n: usize, state: &ScheduleState<'_>, snap: &VcSnapshot<'_>, problem: &Problem<'_>) -> Vec<(VehicleId, f64, f64)> {
    problem
        .trace
        .vehicle_ids()
        .filter_map(|p| est_eft(n, p, state, snap, problem.channel).ok().map(|(s, f)| (p, s, f)))
        .collect()
}

/// Failure for a reliability-blind choice of `p` that turns out not to be a candidate.
fn blind_choice_failure(n: usize, state: &ScheduleState<'_>, snap: &VcSnapshot<'_>, problem: &Problem<'_>) -> Failure {
    let cause = if candidate_set(n, state, snap, problem.dag, problem.channel).is_empty() {
        FailureCause::EmptyCandidateSet
    } else {
        FailureCause::LinkInfeasible
    };
    Failure::new(n, snap.time(), cause)
}

/// Scheduling time of a ready subtask.
fn st_of(n: usize, state: &ScheduleState<'_>) -> f64 {
    scheduling_time(n, state).expect("ready subtask")
}

/// Earliest-finishing vehicle of a pool, ties going to the first listed.
fn min_eft(pool: &[(VehicleId, f64, f64)]) -> Option<VehicleId> {
    let mut best: Option<(f64, VehicleId)> = None;
    for &(p, _, eft) in pool {
        if best.is_none_or(|(b, _)| eft < b) {
            best = Some((eft, p));
        }
    }
    best.map(|(_, p)| p)
}

use thiserror::Error;

use crate::sched::{commit, scheduling_time, start, Assignment, Failure, FailureCause, Problem, ScheduleState, Scheduler, SimRng};

pub const MAX_SUBTASKS: usize = 7;
pub const MAX_VEHICLES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum BruteForceError {
    #[error("instance with {n_subtasks} subtasks and {n_vehicles} vehicles exceeds the exhaustive search limit")]
    InstanceTooLarge { n_subtasks: usize, n_vehicles: usize },
}

/// Exhaustive search over every commit order consistent with precedence and every vehicle
/// choice, keeping the feasible schedule of least completion time. Ties keep the first found.
pub fn brute_force_schedule(problem: &Problem<'_>) -> Result<Result<Assignment, Failure>, BruteForceError> {
    let (n_subtasks, n_vehicles) = (problem.dag.len(), problem.trace.len());
    if n_subtasks > MAX_SUBTASKS || n_vehicles > MAX_VEHICLES {
        return Err(BruteForceError::InstanceTooLarge { n_subtasks, n_vehicles });
    }
    let mut state = ScheduleState::new(problem.dag, problem.trace);
    if let Err(f) = start(&mut state, problem.channel) {
        return Ok(Err(f));
    }
    let mut best: Option<(f64, Assignment)> = None;
    search(problem, &state, &mut best);
    Ok(match best {
        Some((_, a)) => Ok(a),
        None => Err(Failure::new(problem.dag.exit(), 0.0, FailureCause::EmptyCandidateSet)),
    })
}

fn search(problem: &Problem<'_>, state: &ScheduleState<'_>, best: &mut Option<(f64, Assignment)>) {
    if state.is_complete() {
        let otc = state.assignment().otc(problem.dag).expect("complete");
        if best.as_ref().is_none_or(|(b, _)| otc < *b) {
            *best = Some((otc, state.assignment().clone()));
        }
        return;
    }
    for &n in state.ready() {
        let st = scheduling_time(n, state).expect("ready");
        let snap = problem.snapshot(st);
        for p in problem.trace.vehicle_ids() {
            let mut next = state.clone();
            let Ok(pl) = commit(n, p, &mut next, &snap, problem.channel) else {
                continue;
            };
            // Finish times only grow along paths to the exit.
            if best.as_ref().is_some_and(|(b, _)| pl.eft >= *b) {
                continue;
            }
            search(problem, &next, best);
        }
    }
}

/// Exhaustive oracle as a scheduler; oversized instances fail at the entry.
#[derive(Debug, Clone, Default)]
pub struct BruteForce;

impl Scheduler for BruteForce {
    fn name(&self) -> &str {
        "brute_force"
    }

    fn schedule(&self, problem: &Problem<'_>, _rng: &mut SimRng) -> Result<Assignment, Failure> {
        brute_force_schedule(problem)
            .unwrap_or_else(|_| Err(Failure::new(problem.dag.entry(), 0.0, FailureCause::EmptyCandidateSet)))
    }
}

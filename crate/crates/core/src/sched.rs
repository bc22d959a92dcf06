//! Scheduling calculus shared by every scheduler: scheduling and ready times, EST/EFT,
//! ordered commits, the ready frontier, post-hoc schedule validation and trial driving.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{is_candidate, Channel};
use crate::dag::Dag;
use crate::mobility::{MobilityTrace, VcSnapshot, VehicleId, OWNER};

pub type SimRng = ChaCha8Rng;

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("predecessor {pred} of subtask {subtask} is unassigned")]
    PredecessorUnassigned { subtask: usize, pred: usize },
    #[error("vehicle {0} is not present at t = {1}")]
    VehicleAbsent(VehicleId, f64),
    #[error("no link from {from} to {to} at t = {at}")]
    NoLink { from: VehicleId, to: VehicleId, at: f64 },
    #[error("subtask {0} is already assigned")]
    AlreadyAssigned(usize),
    #[error("vehicle {vehicle} cannot reliably receive the inputs of subtask {subtask}")]
    InfeasibleVehicle { subtask: usize, vehicle: VehicleId },
    #[error("vehicle {vehicle} leaves at {depart} before subtask {subtask} finishes at {eft}")]
    Departed { subtask: usize, vehicle: VehicleId, depart: f64, eft: f64 },
}

/// One committed subtask. The actual finish time equals `eft`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub subtask: usize,
    pub vehicle: VehicleId,
    pub st: f64,
    pub est: f64,
    pub eft: f64,
}

impl Placement {
    pub fn aft(&self) -> f64 {
        self.eft
    }
}

/// Placements in commit order, indexed by subtask.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    placements: Vec<Placement>,
    slots: Vec<Option<usize>>,
}

impl Assignment {
    pub fn new(n_subtasks: usize) -> Self {
        Self { placements: Vec::with_capacity(n_subtasks), slots: vec![None; n_subtasks] }
    }

    /// Builds an assignment from raw placements without any checks. A repeated subtask keeps
    /// its first placement in the index but stays visible in `placements`.
    pub fn from_placements(n_subtasks: usize, placements: Vec<Placement>) -> Self {
        let mut a = Self::new(n_subtasks);
        for p in placements {
            a.push(p);
        }
        a
    }

    fn push(&mut self, p: Placement) {
        if p.subtask >= self.slots.len() {
            self.slots.resize(p.subtask + 1, None);
        }
        if self.slots[p.subtask].is_none() {
            self.slots[p.subtask] = Some(self.placements.len());
        }
        self.placements.push(p);
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn get(&self, subtask: usize) -> Option<&Placement> {
        self.slots.get(subtask).copied().flatten().map(|i| &self.placements[i])
    }

    pub fn host(&self, subtask: usize) -> Option<VehicleId> {
        self.get(subtask).map(|p| p.vehicle)
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    /// Overall completion time: the finish time of the exit subtask.
    pub fn otc(&self, dag: &Dag) -> Option<f64> {
        self.get(dag.exit()).map(Placement::aft)
    }

    pub fn makespan(&self) -> f64 {
        self.placements.iter().map(|p| p.eft).fold(0.0, f64::max)
    }

    /// Vehicle per subtask in subtask order, `None` for unassigned ones.
    pub fn vehicle_map(&self) -> Vec<Option<VehicleId>> {
        (0..self.slots.len()).map(|n| self.host(n)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    EmptyCandidateSet,
    OwnerAbsent,
    ExecutorDeparted,
    /// A scheduler that ignores link reliability chose a vehicle whose inputs cannot be
    /// delivered with the required probability.
    LinkInfeasible,
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureCause::EmptyCandidateSet => "empty_candidate_set",
            FailureCause::OwnerAbsent => "owner_absent",
            FailureCause::ExecutorDeparted => "executor_departed",
            FailureCause::LinkInfeasible => "link_infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub subtask: usize,
    pub time: f64,
    pub cause: FailureCause,
}

impl Failure {
    pub fn new(subtask: usize, time: f64, cause: FailureCause) -> Self {
        Self { subtask, time, cause }
    }
}

/// Mutable state of one scheduling run.
#[derive(Debug, Clone)]
pub struct ScheduleState<'a> {
    dag: &'a Dag,
    trace: &'a MobilityTrace,
    assignment: Assignment,
    avail: Vec<f64>,
    missing: Vec<usize>,
    ready: BTreeSet<usize>,
    failed: Option<Failure>,
}

impl<'a> ScheduleState<'a> {
    pub fn new(dag: &'a Dag, trace: &'a MobilityTrace) -> Self {
        let avail = trace.vehicle_ids().map(|v| trace.join_time(v).unwrap_or(0.0).max(0.0)).collect();
        let missing: Vec<usize> = (0..dag.len()).map(|n| dag.preds(n).len()).collect();
        let ready = (0..dag.len()).filter(|&n| missing[n] == 0).collect();
        Self { dag, trace, assignment: Assignment::new(dag.len()), avail, missing, ready, failed: None }
    }

    pub fn dag(&self) -> &'a Dag {
        self.dag
    }

    pub fn trace(&self) -> &'a MobilityTrace {
        self.trace
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn into_assignment(self) -> Assignment {
        self.assignment
    }

    pub fn host(&self, n: usize) -> Option<VehicleId> {
        self.assignment.host(n)
    }

    pub fn aft(&self, n: usize) -> Option<f64> {
        self.assignment.get(n).map(Placement::aft)
    }

    pub fn is_assigned(&self, n: usize) -> bool {
        self.assignment.get(n).is_some()
    }

    /// Earliest instant `v` is idle.
    pub fn avail(&self, v: VehicleId) -> f64 {
        self.avail[v.0]
    }

    pub fn ready(&self) -> &BTreeSet<usize> {
        &self.ready
    }

    pub fn is_complete(&self) -> bool {
        self.assignment.len() == self.dag.len()
    }

    pub fn failure(&self) -> Option<Failure> {
        self.failed
    }

    pub fn fail(&mut self, failure: Failure) {
        self.failed.get_or_insert(failure);
    }

    fn place(&mut self, p: Placement) {
        self.avail[p.vehicle.0] = p.eft;
        self.ready.remove(&p.subtask);
        for &(s, _) in self.dag.succs(p.subtask) {
            self.missing[s] -= 1;
            if self.missing[s] == 0 {
                self.ready.insert(s);
            }
        }
        self.assignment.push(p);
    }
}

fn assigned_preds<'s>(
    n: usize,
    state: &'s ScheduleState<'_>,
) -> impl Iterator<Item = Result<(usize, f64, &'s Placement), SchedError>> + 's {
    state.dag.preds(n).iter().map(move |&(j, bits)| {
        state.assignment.get(j).map(|p| (j, bits, p)).ok_or(SchedError::PredecessorUnassigned { subtask: n, pred: j })
    })
}

/// Latest finish time over the predecessors of `n`; zero for a subtask without any.
pub fn scheduling_time(n: usize, state: &ScheduleState<'_>) -> Result<f64, SchedError> {
    let mut st: f64 = 0.0;
    for r in assigned_preds(n, state) {
        st = st.max(r?.2.aft());
    }
    Ok(st)
}

/// Instant at which every input of `n` has arrived at `p`, with transfers priced on `snap`
/// (taken at the scheduling time of `n`).
pub fn ready_time(
    n: usize,
    p: VehicleId,
    state: &ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<f64, SchedError> {
    if !snap.is_present(p) {
        return Err(SchedError::VehicleAbsent(p, snap.time()));
    }
    let mut rt: f64 = 0.0;
    for r in assigned_preds(n, state) {
        let (_, bits, pl) = r?;
        let tt = channel
            .tt(bits, pl.vehicle, p, snap)
            .ok_or(SchedError::NoLink { from: pl.vehicle, to: p, at: snap.time() })?;
        rt = rt.max(pl.aft() + tt);
    }
    Ok(rt)
}

pub fn compute_time(dag: &Dag, trace: &MobilityTrace, n: usize, p: VehicleId) -> f64 {
    dag.workload(n) / trace.vehicle(p).cpu_hz
}

/// `(est, eft)` of `n` on `p`, given its ready time there.
pub fn est_eft_from_rt(n: usize, p: VehicleId, rt: f64, state: &ScheduleState<'_>) -> (f64, f64) {
    let est = state.avail(p).max(rt);
    (est, est + compute_time(state.dag, state.trace, n, p))
}

pub fn est_eft(
    n: usize,
    p: VehicleId,
    state: &ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<(f64, f64), SchedError> {
    let rt = ready_time(n, p, state, snap, channel)?;
    Ok(est_eft_from_rt(n, p, rt, state))
}

/// Assigns `n` to `p` and advances the frontier. `snap` must be taken at the scheduling time
/// of `n`; `p` must reliably receive every input of `n` and stay until `n` finishes.
pub fn commit(
    n: usize,
    p: VehicleId,
    state: &mut ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<Placement, SchedError> {
    if state.is_assigned(n) {
        return Err(SchedError::AlreadyAssigned(n));
    }
    let st = scheduling_time(n, state)?;
    if !snap.is_present(p) {
        return Err(SchedError::VehicleAbsent(p, st));
    }
    if !is_candidate(n, p, state, snap, state.dag, channel) {
        return Err(SchedError::InfeasibleVehicle { subtask: n, vehicle: p });
    }
    let (est, eft) = est_eft(n, p, state, snap, channel)?;
    let depart = state.trace.depart_time(p).unwrap_or(f64::NEG_INFINITY);
    if depart < eft {
        return Err(SchedError::Departed { subtask: n, vehicle: p, depart, eft });
    }
    let placement = Placement { subtask: n, vehicle: p, st, est, eft };
    state.place(placement);
    Ok(placement)
}

/// Converts a commit error into the trial failure it represents.
pub fn failure_from(err: &SchedError, n: usize, at: f64) -> Failure {
    let cause = match err {
        SchedError::Departed { .. } => FailureCause::ExecutorDeparted,
        SchedError::VehicleAbsent(v, _) if *v == OWNER => FailureCause::OwnerAbsent,
        SchedError::VehicleAbsent(..) => FailureCause::EmptyCandidateSet,
        _ => FailureCause::LinkInfeasible,
    };
    Failure::new(n, at, cause)
}

/// Commits `n` to `p`, recording a failure in `state` when that is impossible.
pub fn commit_or_fail(
    n: usize,
    p: VehicleId,
    state: &mut ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<Placement, Failure> {
    commit(n, p, state, snap, channel).map_err(|e| {
        let f = failure_from(&e, n, snap.time());
        state.fail(f);
        f
    })
}

/// Schedules the entry subtask on the task owner at time zero.
pub fn start(state: &mut ScheduleState<'_>, channel: &Channel) -> Result<Placement, Failure> {
    let entry = state.dag.entry();
    let snap = VcSnapshot::new(state.trace, 0.0, channel.radius());
    if !snap.is_present(OWNER) {
        let f = Failure::new(entry, 0.0, FailureCause::OwnerAbsent);
        state.fail(f);
        return Err(f);
    }
    commit_or_fail(entry, OWNER, state, &snap, channel)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// C1: a subtask placed more than once.
    DuplicateAssignment { subtask: usize },
    Unassigned { subtask: usize },
    EntryNotOnOwner { vehicle: VehicleId },
    /// A placement committed before one of its predecessors.
    CommitOrder { subtask: usize, pred: usize },
    /// C2: a subtask starts before an input is available.
    Precedence { subtask: usize, pred: usize },
    /// C3: an input transfer is not reliable enough.
    LinkInfeasible { subtask: usize, pred: usize, from: VehicleId, to: VehicleId },
    VehicleAbsent { subtask: usize, vehicle: VehicleId },
    Departed { subtask: usize, vehicle: VehicleId },
    Overlap { vehicle: VehicleId, first: usize, second: usize },
    TimingMismatch { subtask: usize, field: &'static str, stored: f64, recomputed: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleReport {
    pub violations: Vec<Violation>,
    /// Recomputed placements in commit order.
    pub recomputed: Vec<Placement>,
}

impl ScheduleReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn otc(&self, dag: &Dag) -> Option<f64> {
        self.recomputed.iter().find(|p| p.subtask == dag.exit()).map(|p| p.eft)
    }
}

/// Replays an assignment from its commit order and vehicle choices alone, recomputing every
/// time, and reports each constraint violation found.
pub fn validate_schedule(
    assignment: &Assignment,
    dag: &Dag,
    trace: &MobilityTrace,
    channel: &Channel,
) -> ScheduleReport {
    let mut report = ScheduleReport::default();
    let v = &mut report.violations;
    let mut seen = vec![false; dag.len()];
    let mut aft = vec![f64::NAN; dag.len()];
    let mut host = vec![None; dag.len()];
    let mut avail: Vec<f64> = trace.vehicle_ids().map(|p| trace.join_time(p).unwrap_or(0.0).max(0.0)).collect();
    let mut intervals: Vec<(VehicleId, f64, f64, usize)> = Vec::new();

    for pl in assignment.placements() {
        let n = pl.subtask;
        if n >= dag.len() || pl.vehicle.0 >= trace.len() {
            v.push(Violation::Unassigned { subtask: n });
            continue;
        }
        if seen[n] {
            v.push(Violation::DuplicateAssignment { subtask: n });
            continue;
        }
        seen[n] = true;
        if n == dag.entry() && pl.vehicle != OWNER {
            v.push(Violation::EntryNotOnOwner { vehicle: pl.vehicle });
        }
        let mut st: f64 = 0.0;
        let mut ordered = true;
        for &(j, _) in dag.preds(n) {
            if host[j].is_none() {
                v.push(Violation::CommitOrder { subtask: n, pred: j });
                ordered = false;
            } else {
                st = st.max(aft[j]);
            }
        }
        if !ordered {
            continue;
        }
        let p = pl.vehicle;
        let snap = VcSnapshot::new(trace, st, channel.radius());
        if !snap.is_present(p) {
            v.push(Violation::VehicleAbsent { subtask: n, vehicle: p });
        }
        let mut rt: f64 = 0.0;
        for &(j, bits) in dag.preds(n) {
            let src = host[j].expect("checked");
            match channel.tt(bits, src, p, &snap) {
                Some(tt) => rt = rt.max(aft[j] + tt),
                None => rt = f64::INFINITY,
            }
            if !channel.link_feasible(bits, src, p, &snap) {
                v.push(Violation::LinkInfeasible { subtask: n, pred: j, from: src, to: p });
            }
        }
        let est = avail[p.0].max(rt);
        let eft = est + compute_time(dag, trace, n, p);
        for (field, stored, recomputed) in [("st", pl.st, st), ("est", pl.est, est), ("eft", pl.eft, eft)] {
            if !((stored - recomputed).abs() <= TIME_TOL) {
                v.push(Violation::TimingMismatch { subtask: n, field, stored, recomputed });
            }
        }
        for &(j, _) in dag.preds(n) {
            if pl.est + TIME_TOL < aft[j] {
                v.push(Violation::Precedence { subtask: n, pred: j });
            }
        }
        if trace.depart_time(p).is_none_or(|d| d < eft) {
            v.push(Violation::Departed { subtask: n, vehicle: p });
        }
        avail[p.0] = eft;
        aft[n] = eft;
        host[n] = Some(p);
        intervals.push((p, pl.est, pl.eft, n));
        report.recomputed.push(Placement { subtask: n, vehicle: p, st, est, eft });
    }
    for (n, s) in seen.iter().enumerate() {
        if !s {
            v.push(Violation::Unassigned { subtask: n });
        }
    }
    intervals.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    for w in intervals.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Zero-length intervals never overlap anything.
        if a.0 == b.0 && b.1 + TIME_TOL < a.2 && a.2 > a.1 && b.2 > b.1 {
            v.push(Violation::Overlap { vehicle: a.0, first: a.3, second: b.3 });
        }
    }
    report
}

/// Everything a scheduler needs to know about one instance.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub dag: &'a Dag,
    pub trace: &'a MobilityTrace,
    pub channel: &'a Channel,
}

impl<'a> Problem<'a> {
    pub fn new(dag: &'a Dag, trace: &'a MobilityTrace, channel: &'a Channel) -> Self {
        Self { dag, trace, channel }
    }

    pub fn snapshot(&self, t: f64) -> VcSnapshot<'a> {
        VcSnapshot::new(self.trace, t, self.channel.radius())
    }
}

pub trait Scheduler: Send + Sync {
    fn name(&self) -> &str;

    fn schedule(&self, problem: &Problem<'_>, rng: &mut SimRng) -> Result<Assignment, Failure>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub otc: Option<f64>,
    pub success: bool,
    pub failure: Option<Failure>,
    pub sched_runtime_s: f64,
    pub assignment: Option<Assignment>,
}

impl TrialOutcome {
    pub fn failure_cause(&self) -> Option<FailureCause> {
        self.failure.map(|f| f.cause)
    }
}

/// Runs one scheduler on one instance, timing only the scheduling decisions.
pub fn run_trial(problem: &Problem<'_>, scheduler: &dyn Scheduler, rng: &mut SimRng) -> TrialOutcome {
    let t0 = Instant::now();
    let result = scheduler.schedule(problem, rng);
    let sched_runtime_s = t0.elapsed().as_secs_f64();
    match result {
        Ok(a) => match a.otc(problem.dag) {
            Some(otc) => TrialOutcome { otc: Some(otc), success: true, failure: None, sched_runtime_s, assignment: Some(a) },
            None => TrialOutcome {
                otc: None,
                success: false,
                failure: Some(Failure::new(problem.dag.exit(), a.makespan(), FailureCause::EmptyCandidateSet)),
                sched_runtime_s,
                assignment: None,
            },
        },
        Err(f) => TrialOutcome { otc: None, success: false, failure: Some(f), sched_runtime_s, assignment: None },
    }
}

/// File form of an assignment, addressing subtasks and vehicles by their external names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub placements: Vec<PlacementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub subtask: String,
    pub vehicle: String,
    pub st: f64,
    pub est: f64,
    pub eft: f64,
}

impl ScheduleFile {
    pub fn from_assignment(a: &Assignment, dag: &Dag, trace: &MobilityTrace) -> Self {
        let placements = a
            .placements()
            .iter()
            .map(|p| PlacementRecord {
                subtask: dag.id(p.subtask).to_string(),
                vehicle: trace.vehicle(p.vehicle).label.clone(),
                st: p.st,
                est: p.est,
                eft: p.eft,
            })
            .collect();
        Self { placements }
    }

    pub fn to_assignment(&self, dag: &Dag, trace: &MobilityTrace) -> Result<Assignment, String> {
        let mut out = Vec::with_capacity(self.placements.len());
        for r in &self.placements {
            let subtask = dag.index_of(&r.subtask).ok_or_else(|| format!("unknown subtask {}", r.subtask))?;
            let vehicle = trace
                .vehicles()
                .iter()
                .position(|v| v.label == r.vehicle)
                .map(VehicleId)
                .ok_or_else(|| format!("unknown vehicle {}", r.vehicle))?;
            out.push(Placement { subtask, vehicle, st: r.st, est: r.est, eft: r.eft });
        }
        Ok(Assignment::from_placements(dag.len(), out))
    }
}

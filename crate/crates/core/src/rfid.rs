//! Ranking and foresight-integrated dynamic scheduling.
//!
//! Each step ranks the ready subtasks by a dynamic downward rank computed over their current
//! candidate vehicles, adjusts it by how much finish time a subtask loses if it misses its
//! preferred vehicle, and places the winner on the candidate with the lowest weighted finish
//! time, where the weight rewards hosts that many vehicles could reliably hear.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{candidate_set, degree_set, Channel};
use crate::dag::Dag;
use crate::mobility::{MobilityTrace, VcSnapshot, VehicleId};
use crate::sched::{
    commit_or_fail, compute_time, est_eft_from_rt, ready_time, scheduling_time, start, Assignment, Failure,
    FailureCause, Problem, ScheduleState, Scheduler, SimRng,
};

#[derive(Debug, Error, PartialEq)]
pub enum RfidError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("invalid rfid configuration: {0}")]
    InvalidConfig(String),
}

/// How the completion time increment enters the priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtiMode {
    /// `rank - |cti|`: the larger the loss from missing the preferred vehicle, the earlier.
    #[default]
    Absolute,
    /// `rank - cti` with the increment taken literally (never positive).
    AsPrinted,
    /// Increment ignored; priority is the dynamic rank alone.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfidConfig {
    pub alpha_t: f64,
    pub alpha_r: f64,
    pub phi_scale: f64,
    pub cti_sign_mode: CtiMode,
}

impl Default for RfidConfig {
    fn default() -> Self {
        Self { alpha_t: 1.0, alpha_r: 0.01, phi_scale: 0.5, cti_sign_mode: CtiMode::Absolute }
    }
}

impl RfidConfig {
    pub fn check(&self) -> Result<(), RfidError> {
        if !(self.alpha_t >= 0.0 && self.alpha_r >= 0.0) || (self.alpha_t == 0.0 && self.alpha_r == 0.0) {
            return Err(RfidError::InvalidConfig("alpha_t and alpha_r must be non-negative and not both zero".into()));
        }
        if !(self.phi_scale > 0.0) {
            return Err(RfidError::InvalidConfig("phi_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Mean computation time of `n` over the candidate vehicles.
pub fn dyn_avg_ct(n: usize, cand: &[VehicleId], dag: &Dag, trace: &MobilityTrace) -> Result<f64, RfidError> {
    if cand.is_empty() {
        return Err(RfidError::EmptyCandidateSet);
    }
    Ok(cand.iter().map(|&p| compute_time(dag, trace, n, p)).sum::<f64>() / cand.len() as f64)
}

/// Mean transfer time of `bits` from `src` to each candidate, priced on `snap`.
pub fn dyn_avg_tt(
    bits: f64,
    src: VehicleId,
    cand: &[VehicleId],
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<f64, RfidError> {
    if cand.is_empty() {
        return Err(RfidError::EmptyCandidateSet);
    }
    let total: f64 = cand.iter().map(|&p| channel.tt(bits, src, p, snap).unwrap_or(f64::INFINITY)).sum();
    Ok(total / cand.len() as f64)
}

/// Dynamic downward rank of a ready subtask. `ranks` holds the frozen ranks of committed
/// subtasks.
pub fn rank_d(
    n: usize,
    state: &ScheduleState<'_>,
    ranks: &[f64],
    cand: &[VehicleId],
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<f64, RfidError> {
    let dag = state.dag();
    if dag.preds(n).is_empty() {
        return Ok(0.0);
    }
    let ct = dyn_avg_ct(n, cand, dag, state.trace())?;
    let mut best = f64::NEG_INFINITY;
    for &(j, bits) in dag.preds(n) {
        let src = state.host(j).expect("ready subtask has assigned predecessors");
        let tt = dyn_avg_tt(bits, src, cand, snap, channel)?;
        best = best.max(ranks[j] + ct + tt);
    }
    Ok(best)
}

/// Best finish time minus the runner-up over the candidates; `-inf` for a sole candidate.
pub fn cti_from_efts(efts: &[f64]) -> Result<f64, RfidError> {
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    for &e in efts {
        if e < best {
            second = best;
            best = e;
        } else if e < second {
            second = e;
        }
    }
    match efts.len() {
        0 => Err(RfidError::EmptyCandidateSet),
        1 => Ok(f64::NEG_INFINITY),
        _ => Ok(best - second),
    }
}

/// Completion time increment of `n` over `cand`.
pub fn cti(
    n: usize,
    cand: &[VehicleId],
    state: &ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    channel: &Channel,
) -> Result<f64, RfidError> {
    let efts: Vec<f64> = cand
        .iter()
        .map(|&p| {
            let rt = ready_time(n, p, state, snap, channel).unwrap_or(f64::INFINITY);
            est_eft_from_rt(n, p, rt, state).1
        })
        .collect();
    cti_from_efts(&efts)
}

pub fn rs_rank(rank: f64, cti: f64, mode: CtiMode) -> f64 {
    match mode {
        CtiMode::Absolute => rank - cti.abs(),
        CtiMode::AsPrinted => rank - cti,
        CtiMode::Off => rank,
    }
}

pub fn weighted_eft(eft: f64, degree: usize, config: &RfidConfig) -> f64 {
    config.alpha_t * eft - config.alpha_r * config.phi_scale * degree as f64
}

/// Per ready subtask data that stays fixed until it is committed.
#[derive(Debug, Clone)]
struct ReadyEntry {
    st: f64,
    cand: Vec<VehicleId>,
    rts: Vec<f64>,
    rank: f64,
}

/// One priority evaluation of a ready subtask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priority {
    pub subtask: usize,
    pub rank_d: f64,
    pub cti: f64,
    pub rs_rank: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Rfid {
    pub config: RfidConfig,
}

impl Rfid {
    pub fn new(config: RfidConfig) -> Self {
        Self { config }
    }

    /// Runs the scheduler, also returning the priority table seen at every step.
    pub fn schedule_traced(&self, problem: &Problem<'_>) -> (Result<Assignment, Failure>, Vec<Vec<Priority>>) {
        let mut log = Vec::new();
        let r = self.run(problem, Some(&mut log));
        (r, log)
    }

    fn run(&self, problem: &Problem<'_>, mut log: Option<&mut Vec<Vec<Priority>>>) -> Result<Assignment, Failure> {
        let Problem { dag, trace, channel } = *problem;
        let mut state = ScheduleState::new(dag, trace);
        start(&mut state, channel)?;
        let mut ranks = vec![f64::NAN; dag.len()];
        ranks[dag.entry()] = 0.0;
        let mut entries: Vec<Option<ReadyEntry>> = vec![None; dag.len()];

        while !state.is_complete() {
            let ready: Vec<usize> = state.ready().iter().copied().collect();
            for &n in &ready {
                if entries[n].is_some() {
                    continue;
                }
                let st = scheduling_time(n, &state).expect("ready");
                let snap = problem.snapshot(st);
                let cand = candidate_set(n, &state, &snap, dag, channel);
                if cand.is_empty() {
                    let f = Failure::new(n, st, FailureCause::EmptyCandidateSet);
                    state.fail(f);
                    return Err(f);
                }
                let rts = cand.iter().map(|&p| ready_time(n, p, &state, &snap, channel).expect("candidate")).collect();
                let rank = rank_d(n, &state, &ranks, &cand, &snap, channel).expect("nonempty");
                entries[n] = Some(ReadyEntry { st, cand, rts, rank });
            }

            let mut table = Vec::with_capacity(ready.len());
            let mut pick: Option<(f64, usize)> = None;
            for &n in &ready {
                let e = entries[n].as_ref().expect("filled above");
                let c = if self.config.cti_sign_mode == CtiMode::Off {
                    0.0
                } else {
                    let efts: Vec<f64> =
                        e.cand.iter().zip(&e.rts).map(|(&p, &rt)| est_eft_from_rt(n, p, rt, &state).1).collect();
                    cti_from_efts(&efts).expect("nonempty")
                };
                let rs = rs_rank(e.rank, c, self.config.cti_sign_mode);
                table.push(Priority { subtask: n, rank_d: e.rank, cti: c, rs_rank: rs });
                if pick.is_none_or(|(best, _)| rs < best) {
                    pick = Some((rs, n));
                }
            }
            if let Some(log) = log.as_deref_mut() {
                log.push(table);
            }
            let (_, n) = pick.expect("ready set is nonempty while incomplete");
            let e = entries[n].take().expect("filled above");
            let snap = problem.snapshot(e.st);
            let mut best: Option<(f64, VehicleId)> = None;
            for (&p, &rt) in e.cand.iter().zip(&e.rts) {
                let eft = est_eft_from_rt(n, p, rt, &state).1;
                let degree = if self.config.alpha_r == 0.0 { 0 } else { degree_set(n, p, &snap, dag, channel).len() };
                let score = weighted_eft(eft, degree, &self.config);
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, p));
                }
            }
            let (_, p) = best.expect("candidate set is nonempty");
            commit_or_fail(n, p, &mut state, &snap, channel)?;
            ranks[n] = e.rank;
        }
        Ok(state.into_assignment())
    }
}

impl Scheduler for Rfid {
    fn name(&self) -> &str {
        "rfid"
    }

    fn schedule(&self, problem: &Problem<'_>, _rng: &mut SimRng) -> Result<Assignment, Failure> {
        self.run(problem, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::dag::{validate, DagTask};
    use crate::mobility::{ContactModel, Vehicle, OWNER};

    fn trace(cpus: &[f64], xs: &[f64]) -> MobilityTrace {
        let vs = cpus
            .iter()
            .enumerate()
            .map(|(i, &c)| Vehicle { label: format!("v{i}"), cpu_hz: c, antenna_m: 1.5 })
            .collect();
        let pos: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
        MobilityTrace::stationary(vs, &pos, 1000.0).unwrap()
    }

    fn channel() -> Channel {
        Channel::new(ChannelParams::default(), ContactModel::Constant { mu: 0.01 })
    }

    #[test]
    fn average_computation_time() {
        let dag = validate(&DagTask::new().with_subtask("a", 3e6)).unwrap();
        let tr = trace(&[20e6, 30e6], &[0.0, 10.0]);
        assert!((dyn_avg_ct(0, &[VehicleId(0)], &dag, &tr).unwrap() - 0.15).abs() < 1e-15);
        let both = dyn_avg_ct(0, &[VehicleId(0), VehicleId(1)], &dag, &tr).unwrap();
        assert!((both - 0.125).abs() < 1e-15);
        assert_eq!(dyn_avg_ct(0, &[], &dag, &tr), Err(RfidError::EmptyCandidateSet));
    }

    #[test]
    fn average_transfer_time() {
        let tr = trace(&[20e6, 20e6], &[0.0, 300.0]);
        let ch = channel();
        let snap = VcSnapshot::new(&tr, 0.0, 500.0);
        assert_eq!(dyn_avg_tt(1e6, OWNER, &[OWNER], &snap, &ch).unwrap(), 0.0);
        let remote = ch.tt(1e6, OWNER, VehicleId(1), &snap).unwrap();
        let mixed = dyn_avg_tt(1e6, OWNER, &[OWNER, VehicleId(1)], &snap, &ch).unwrap();
        assert!((mixed - remote / 2.0).abs() < 1e-15);
        assert_eq!(dyn_avg_tt(0.0, OWNER, &[OWNER, VehicleId(1)], &snap, &ch).unwrap(), 0.0);
    }

    #[test]
    fn completion_time_increment() {
        assert_eq!(cti_from_efts(&[4.0, 6.0]).unwrap(), -2.0);
        assert_eq!(cti_from_efts(&[6.0, 4.0, 9.0]).unwrap(), -2.0);
        assert_eq!(cti_from_efts(&[3.0, 3.0]).unwrap(), 0.0);
        assert_eq!(cti_from_efts(&[3.0]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(cti_from_efts(&[]), Err(RfidError::EmptyCandidateSet));
    }

    #[test]
    fn priority_modes() {
        assert_eq!(rs_rank(1.0, -2.0, CtiMode::Absolute), -1.0);
        assert_eq!(rs_rank(1.0, -2.0, CtiMode::AsPrinted), 3.0);
        assert_eq!(rs_rank(1.0, -2.0, CtiMode::Off), 1.0);
        assert_eq!(rs_rank(1.0, f64::NEG_INFINITY, CtiMode::Absolute), f64::NEG_INFINITY);
    }

    #[test]
    fn weighted_finish_time() {
        let cfg = RfidConfig { alpha_t: 1.0, alpha_r: 1.0, ..Default::default() };
        assert_eq!(weighted_eft(3.0, 4, &cfg), 1.0);
        let no_r = RfidConfig { alpha_r: 0.0, ..cfg.clone() };
        assert_eq!(weighted_eft(3.0, 4, &no_r), 3.0);
        assert!(weighted_eft(3.0, 5, &cfg) < weighted_eft(3.0, 2, &cfg));
    }

    #[test]
    fn config_checks() {
        assert!(RfidConfig::default().check().is_ok());
        assert!(RfidConfig { alpha_t: 0.0, alpha_r: 0.0, ..Default::default() }.check().is_err());
        assert!(RfidConfig { phi_scale: 0.0, ..Default::default() }.check().is_err());
    }

    #[test]
    fn owner_only_chain_runs_locally() {
        let dag = validate(
            &DagTask::new()
                .with_subtask("a", 2e6)
                .with_subtask("b", 4e6)
                .with_subtask("c", 6e6)
                .with_edge("a", "b", 1e6)
                .with_edge("b", "c", 1e6),
        )
        .unwrap();
        let tr = MobilityTrace::stationary(
            vec![Vehicle { label: "o".into(), cpu_hz: 20e6, antenna_m: 1.5 }],
            &[(0.0, 0.0)],
            100.0,
        )
        .unwrap();
        let ch = channel();
        let a = Rfid::default().schedule(&Problem::new(&dag, &tr, &ch), &mut rand::SeedableRng::seed_from_u64(0)).unwrap();
        assert!(a.placements().iter().all(|p| p.vehicle == OWNER));
        assert!((a.otc(&dag).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rank_of_entry_child() {
        let dag = validate(&DagTask::new().with_subtask("a", 3e6).with_subtask("b", 3e6).with_edge("a", "b", 1e6)).unwrap();
        let tr = trace(&[20e6, 30e6], &[0.0, 200.0]);
        let ch = channel();
        let mut state = ScheduleState::new(&dag, &tr);
        start(&mut state, &ch).unwrap();
        let snap = VcSnapshot::new(&tr, 0.15, 500.0);
        let cand = candidate_set(1, &state, &snap, &dag, &ch);
        assert_eq!(cand.len(), 2);
        let ranks = [0.0, f64::NAN];
        let r = rank_d(1, &state, &ranks, &cand, &snap, &ch).unwrap();
        let ct = (0.15 + 0.1) / 2.0;
        let tt = ch.tt(1e6, OWNER, VehicleId(1), &snap).unwrap() / 2.0;
        assert!((r - (ct + tt)).abs() < 1e-12);
    }
}

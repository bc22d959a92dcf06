//! V2V link layer: dual-slope path loss, transmission time, contact survival and the
//! reliability-filtered vehicle sets used for scheduling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::Dag;
use crate::mobility::{ContactModel, MobilityTrace, VcSnapshot, VehicleId};
use crate::sched::ScheduleState;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("breakpoint distance {0} m is not above the 1 m reference distance")]
    NonPositiveResult(f64),
    #[error("distance {0} m is below the 1 m model range")]
    DistanceBelowModelRange(f64),
    #[error("vehicle {0} is not present")]
    VehicleAbsent(VehicleId),
    #[error("vehicles {0} and {1} are {2} m apart, beyond the communication radius")]
    LinkOutOfRange(VehicleId, VehicleId, f64),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
}

/// Path-loss constants, the affine seconds-per-data-unit map and link QoS settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub l_b_db: f64,
    /// Loss at the 1 m reference distance.
    pub pl_d0_db: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Signal power fluctuation factor from surrounding objects.
    pub delta: f64,
    pub wavelength_m: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    /// Scale applied to the path-loss term of the affine map; data sizes enter in Mbit.
    pub gamma_scale: f64,
    pub radius_m: f64,
    pub theta: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            l_b_db: 20.0,
            pl_d0_db: 46.4,
            eta1: 2.0,
            eta2: 4.0,
            delta: 0.05,
            wavelength_m: 0.0508,
            gamma_a: 0.15,
            gamma_b: 0.001,
            gamma_scale: 1.0 / 60.0,
            radius_m: 500.0,
            theta: 0.9,
        }
    }
}

impl ChannelParams {
    pub fn check(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidParams(m));
        if self.eta1 != 2.0 {
            return bad(format!("eta1 must be 2, got {}", self.eta1));
        }
        if !(self.eta2 >= self.eta1) {
            return bad(format!("eta2 must be >= eta1, got {}", self.eta2));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta must lie in (0, 1], got {}", self.theta));
        }
        if !(self.gamma_a > 0.0 && self.gamma_b >= 0.0 && self.gamma_scale > 0.0) {
            return bad("gamma_a and gamma_scale must be positive, gamma_b non-negative".into());
        }
        if !(self.radius_m > 0.0 && self.delta > 0.0 && self.wavelength_m > 0.0) {
            return bad("radius, delta and wavelength must be positive".into());
        }
        Ok(())
    }

    /// Seconds needed per bit at a given path loss.
    pub fn seconds_per_bit(&self, pl_db: f64) -> f64 {
        (self.gamma_a * self.gamma_scale * pl_db + self.gamma_b) / 1.0e6
    }
}

pub fn breakpoint_distance(h_t: f64, h_r: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    let d = 4.0 * h_t * h_r / params.delta - params.wavelength_m / 4.0;
    if d > 1.0 {
        Ok(d)
    } else {
        Err(ChannelError::NonPositiveResult(d))
    }
}

/// Dual-slope loss in dB: slope `eta1` up to the breakpoint, `eta2` beyond it.
pub fn path_loss(d: f64, d_brk: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    if !(d >= 1.0) {
        return Err(ChannelError::DistanceBelowModelRange(d));
    }
    Ok(path_loss_unchecked(d, d_brk, params))
}

fn path_loss_unchecked(d: f64, d_brk: f64, p: &ChannelParams) -> f64 {
    if d <= d_brk {
        p.l_b_db + 10.0 * p.eta1 * d.log10() + p.pl_d0_db
    } else {
        p.l_b_db + 10.0 * (p.eta1 - p.eta2) * d_brk.log10() + 10.0 * p.eta2 * d.log10() + p.pl_d0_db
    }
}

/// Probability that a link with exponential contact duration of rate `mu` lasts beyond `t`.
pub fn contact_survival(t: f64, mu: f64) -> f64 {
    (-t * mu).exp()
}

/// Link-layer model over a mobility trace: path loss, rates and QoS threshold together.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Channel {
    pub params: ChannelParams,
    pub contact: ContactModel,
}

impl Channel {
    pub fn new(params: ChannelParams, contact: ContactModel) -> Self {
        Self { params, contact }
    }

    /// Rejects parameter combinations that would make some pair's breakpoint invalid.
    pub fn check(&self, trace: &MobilityTrace) -> Result<(), ChannelError> {
        self.params.check()?;
        let heights = trace.vehicles().iter().map(|v| v.antenna_m);
        let lowest = heights.fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            breakpoint_distance(lowest, lowest, &self.params)?;
        }
        match self.contact {
            ContactModel::Constant { mu } if !(mu > 0.0) => {
                Err(ChannelError::InvalidParams(format!("constant mu must be positive, got {mu}")))
            }
            ContactModel::Kinematic { mu_floor, epsilon } if !(mu_floor > 0.0 && epsilon > 0.0) => {
                Err(ChannelError::InvalidParams("mu_floor and epsilon must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn radius(&self) -> f64 {
        self.params.radius_m
    }

    pub fn theta(&self) -> f64 {
        self.params.theta
    }

    /// Path loss between two present, distinct vehicles; distances under 1 m are clamped.
    pub fn pair_loss(&self, snap: &VcSnapshot<'_>, a: VehicleId, b: VehicleId) -> Option<f64> {
        let d = snap.distance(a, b)?;
        let trace = snap.trace();
        let d_brk = 4.0 * trace.vehicle(a).antenna_m * trace.vehicle(b).antenna_m / self.params.delta
            - self.params.wavelength_m / 4.0;
        Some(path_loss_unchecked(d.max(1.0), d_brk, &self.params))
    }

    /// Transfer time of `bits` from `src` to `dst` at the snapshot instant. `None` when a
    /// vehicle is absent or the pair is out of one-hop range.
    pub fn tt(&self, bits: f64, src: VehicleId, dst: VehicleId, snap: &VcSnapshot<'_>) -> Option<f64> {
        if src == dst {
            return snap.is_present(src).then_some(0.0);
        }
        if !snap.is_linked(src, dst) {
            return None;
        }
        let pl = self.pair_loss(snap, src, dst)?;
        Some(bits * self.params.seconds_per_bit(pl))
    }

    /// Survival probability of the link for the duration of the transfer, or `None` when no
    /// link exists.
    pub fn survival(&self, bits: f64, src: VehicleId, dst: VehicleId, snap: &VcSnapshot<'_>) -> Option<f64> {
        let tt = self.tt(bits, src, dst, snap)?;
        if src == dst || tt == 0.0 {
            return Some(1.0);
        }
        Some(contact_survival(tt, self.contact.rate_in(snap, src, dst)))
    }

    pub fn link_feasible(&self, bits: f64, src: VehicleId, dst: VehicleId, snap: &VcSnapshot<'_>) -> bool {
        self.survival(bits, src, dst, snap).is_some_and(|s| s >= self.params.theta)
    }

    /// Average effective rate (bits/s) over all linked pairs of the snapshot.
    pub fn mean_rate(&self, snap: &VcSnapshot<'_>) -> Option<f64> {
        let links = snap.links();
        if links.is_empty() {
            return None;
        }
        let total: f64 = links
            .iter()
            .map(|&(a, b)| 1.0 / self.params.seconds_per_bit(self.pair_loss(snap, a, b).expect("linked pair")))
            .sum();
        Some(total / links.len() as f64)
    }
}

/// Checked transfer time at time `t` over `trace`.
pub fn transmission_time(
    bits: f64,
    src: VehicleId,
    dst: VehicleId,
    t: f64,
    trace: &MobilityTrace,
    channel: &Channel,
) -> Result<f64, ChannelError> {
    let snap = VcSnapshot::new(trace, t, channel.radius());
    for v in [src, dst] {
        if !snap.is_present(v) {
            return Err(ChannelError::VehicleAbsent(v));
        }
    }
    if src != dst {
        let d = snap.distance(src, dst).expect("both present");
        if d > channel.radius() {
            return Err(ChannelError::LinkOutOfRange(src, dst, d));
        }
        let trace = snap.trace();
        breakpoint_distance(trace.vehicle(src).antenna_m, trace.vehicle(dst).antenna_m, &channel.params)?;
    }
    Ok(channel.tt(bits, src, dst, &snap).expect("checked above"))
}

/// Vehicles present at the snapshot that can reliably receive the output of every assigned
/// predecessor of `n`. The snapshot must be taken at the scheduling time of `n`.
pub fn candidate_set(
    n: usize,
    state: &ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    dag: &Dag,
    channel: &Channel,
) -> Vec<VehicleId> {
    snap.trace()
        .vehicle_ids()
        .filter(|&p| is_candidate(n, p, state, snap, dag, channel))
        .collect()
}

pub fn is_candidate(
    n: usize,
    p: VehicleId,
    state: &ScheduleState<'_>,
    snap: &VcSnapshot<'_>,
    dag: &Dag,
    channel: &Channel,
) -> bool {
    snap.is_present(p)
        && dag.preds(n).iter().all(|&(j, bits)| match state.host(j) {
            Some(src) => channel.link_feasible(bits, src, p, snap),
            None => false,
        })
}

/// Vehicles that could reliably receive the largest output of `n` from `host`. Empty for a
/// subtask without successors.
pub fn degree_set(n: usize, host: VehicleId, snap: &VcSnapshot<'_>, dag: &Dag, channel: &Channel) -> Vec<VehicleId> {
    let Some(c_max) = dag.succs(n).iter().map(|&(_, b)| b).reduce(f64::max) else {
        return Vec::new();
    };
    snap.trace()
        .vehicle_ids()
        .filter(|&q| channel.link_feasible(c_max, host, q, snap))
        .collect()
}

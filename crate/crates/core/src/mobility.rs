//! Vehicle mobility traces and the time-varying connectivity graph they induce.

use std::cell::OnceCell;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::positive_normal;

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("time {t} outside trace horizon [{start}, {end}]")]
    TimeOutOfHorizon { t: f64, start: f64, end: f64 },
    #[error("vehicle {0} is not present at t = {1}")]
    VehicleAbsent(VehicleId, f64),
    #[error("vehicles {0} and {1} are not linked at t = {2}")]
    NotLinked(VehicleId, VehicleId, f64),
    #[error("invalid trace parameters: {0}")]
    InvalidParams(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense vehicle index. `VehicleId(0)` is the task owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub usize);

pub const OWNER: VehicleId = VehicleId(0);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub label: String,
    pub cpu_hz: f64,
    pub antenna_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Time-ordered position samples for a set of vehicles. A vehicle is present between its first
/// and last sample; positions in between are piecewise-linear.
#[derive(Debug, Clone)]
pub struct MobilityTrace {
    vehicles: Vec<Vehicle>,
    tracks: Vec<Vec<Sample>>,
    horizon: (f64, f64),
}

impl MobilityTrace {
    pub fn new(vehicles: Vec<Vehicle>, tracks: Vec<Vec<Sample>>, horizon: (f64, f64)) -> Result<Self, MobilityError> {
        if vehicles.len() != tracks.len() {
            return Err(MobilityError::InvalidParams("one track per vehicle required".into()));
        }
        if !(horizon.0.is_finite() && horizon.1.is_finite() && horizon.0 <= horizon.1) {
            return Err(MobilityError::InvalidParams(format!("bad horizon {horizon:?}")));
        }
        for (v, veh) in vehicles.iter().enumerate() {
            if !(veh.cpu_hz > 0.0 && veh.antenna_m > 0.0) {
                return Err(MobilityError::InvalidParams(format!(
                    "vehicle {} needs positive cpu_hz and antenna_m",
                    veh.label
                )));
            }
            let track = &tracks[v];
            for w in track.windows(2) {
                if w[1].t <= w[0].t {
                    return Err(MobilityError::InvalidParams(format!(
                        "sample times of vehicle {} are not strictly increasing",
                        veh.label
                    )));
                }
            }
            for s in track {
                if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite()) {
                    return Err(MobilityError::InvalidParams(format!("non-finite sample for {}", veh.label)));
                }
                if s.t < horizon.0 || s.t > horizon.1 {
                    return Err(MobilityError::InvalidParams(format!(
                        "sample at t = {} of {} lies outside the horizon",
                        s.t, veh.label
                    )));
                }
            }
        }
        Ok(Self { vehicles, tracks, horizon })
    }

    /// Vehicles parked at fixed positions for the whole horizon.
    pub fn stationary(vehicles: Vec<Vehicle>, positions: &[(f64, f64)], horizon: f64) -> Result<Self, MobilityError> {
        let tracks = positions
            .iter()
            .map(|&(x, y)| vec![Sample { t: 0.0, x, y }, Sample { t: horizon, x, y }])
            .collect();
        Self::new(vehicles, tracks, (0.0, horizon))
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, v: VehicleId) -> &Vehicle {
        &self.vehicles[v.0]
    }

    pub fn vehicle_ids(&self) -> impl Iterator<Item = VehicleId> {
        (0..self.vehicles.len()).map(VehicleId)
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    pub fn track(&self, v: VehicleId) -> &[Sample] {
        &self.tracks[v.0]
    }

    pub fn join_time(&self, v: VehicleId) -> Option<f64> {
        self.tracks[v.0].first().map(|s| s.t)
    }

    pub fn depart_time(&self, v: VehicleId) -> Option<f64> {
        self.tracks[v.0].last().map(|s| s.t)
    }

    pub fn is_present(&self, v: VehicleId, t: f64) -> bool {
        match (self.join_time(v), self.depart_time(v)) {
            (Some(a), Some(b)) => a <= t && t <= b,
            _ => false,
        }
    }

    /// Interpolated position and velocity. At a sample instant the velocity is that of the
    /// following segment (the preceding one at the final sample).
    pub fn kinematics(&self, v: VehicleId, t: f64) -> Option<Kinematics> {
        let track = &self.tracks[v.0];
        if !self.is_present(v, t) {
            return None;
        }
        if track.len() == 1 {
            let s = track[0];
            return Some(Kinematics { x: s.x, y: s.y, vx: 0.0, vy: 0.0 });
        }
        let k = track.partition_point(|s| s.t <= t);
        let i = k.saturating_sub(1).min(track.len() - 2);
        let (a, b) = (track[i], track[i + 1]);
        let dt = b.t - a.t;
        let (vx, vy) = ((b.x - a.x) / dt, (b.y - a.y) / dt);
        if t == a.t {
            return Some(Kinematics { x: a.x, y: a.y, vx, vy });
        }
        if t == b.t {
            return Some(Kinematics { x: b.x, y: b.y, vx, vy });
        }
        let f = (t - a.t) / dt;
        Some(Kinematics { x: a.x + f * (b.x - a.x), y: a.y + f * (b.y - a.y), vx, vy })
    }

    pub fn position(&self, v: VehicleId, t: f64) -> Option<(f64, f64)> {
        self.kinematics(v, t).map(|k| (k.x, k.y))
    }

    pub fn distance(&self, a: VehicleId, b: VehicleId, t: f64) -> Result<f64, MobilityError> {
        let pa = self.position(a, t).ok_or(MobilityError::VehicleAbsent(a, t))?;
        let pb = self.position(b, t).ok_or(MobilityError::VehicleAbsent(b, t))?;
        Ok(((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt())
    }

    /// Connectivity graph at `t` for communication radius `radius`.
    pub fn snapshot(&self, t: f64, radius: f64) -> Result<VcSnapshot<'_>, MobilityError> {
        let (start, end) = self.horizon;
        if !(start..=end).contains(&t) {
            return Err(MobilityError::TimeOutOfHorizon { t, start, end });
        }
        Ok(VcSnapshot::new(self, t, radius))
    }

    /// Samples as CSV rows ordered by time then vehicle.
    pub fn rows(&self) -> Vec<(f64, VehicleId, f64, f64)> {
        let mut rows: Vec<_> = self
            .tracks
            .iter()
            .enumerate()
            .flat_map(|(v, tr)| tr.iter().map(move |s| (s.t, VehicleId(v), s.x, s.y)))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        rows
    }
}

/// The VC graph at one instant. Positions are interpolated lazily and cached, so building a
/// snapshot is cheap when only a few vehicles are consulted.
pub struct VcSnapshot<'a> {
    trace: &'a MobilityTrace,
    time: f64,
    radius: f64,
    cache: Vec<OnceCell<Option<Kinematics>>>,
}

impl<'a> VcSnapshot<'a> {
    pub fn new(trace: &'a MobilityTrace, time: f64, radius: f64) -> Self {
        Self { trace, time, radius, cache: (0..trace.len()).map(|_| OnceCell::new()).collect() }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn trace(&self) -> &'a MobilityTrace {
        self.trace
    }

    pub fn kinematics(&self, v: VehicleId) -> Option<Kinematics> {
        *self.cache[v.0].get_or_init(|| self.trace.kinematics(v, self.time))
    }

    pub fn position(&self, v: VehicleId) -> Option<(f64, f64)> {
        self.kinematics(v).map(|k| (k.x, k.y))
    }

    pub fn is_present(&self, v: VehicleId) -> bool {
        self.trace.is_present(v, self.time)
    }

    pub fn present(&self) -> Vec<VehicleId> {
        self.trace.vehicle_ids().filter(|&v| self.is_present(v)).collect()
    }

    pub fn distance(&self, a: VehicleId, b: VehicleId) -> Option<f64> {
        let (pa, pb) = (self.position(a)?, self.position(b)?);
        Some(((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt())
    }

    /// Magnitude of the relative velocity of two present vehicles.
    pub fn relative_speed(&self, a: VehicleId, b: VehicleId) -> Option<f64> {
        let (ka, kb) = (self.kinematics(a)?, self.kinematics(b)?);
        Some(((ka.vx - kb.vx).powi(2) + (ka.vy - kb.vy).powi(2)).sqrt())
    }

    pub fn is_linked(&self, a: VehicleId, b: VehicleId) -> bool {
        a != b && self.distance(a, b).is_some_and(|d| d <= self.radius)
    }

    /// Every linked unordered pair `(a, b)` with `a < b`.
    pub fn links(&self) -> Vec<(VehicleId, VehicleId)> {
        let present = self.present();
        let mut out = Vec::new();
        for (i, &a) in present.iter().enumerate() {
            for &b in &present[i + 1..] {
                if self.is_linked(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// How the exponential contact-duration rate of a link is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ContactModel {
    /// The same rate for every link.
    Constant { mu: f64 },
    /// `max(mu_floor, v_rel / max(epsilon, R - d))`: relative speed over remaining link margin.
    Kinematic { mu_floor: f64, epsilon: f64 },
}

impl Default for ContactModel {
    fn default() -> Self {
        ContactModel::Kinematic { mu_floor: 0.01, epsilon: 1.0 }
    }
}

impl ContactModel {
    /// Rate for a linked pair in `snap`. Callers must have checked the link.
    pub fn rate_in(&self, snap: &VcSnapshot<'_>, a: VehicleId, b: VehicleId) -> f64 {
        match *self {
            ContactModel::Constant { mu } => mu,
            ContactModel::Kinematic { mu_floor, epsilon } => {
                let d = snap.distance(a, b).unwrap_or(f64::INFINITY);
                let v = snap.relative_speed(a, b).unwrap_or(0.0);
                (v / (snap.radius() - d).max(epsilon)).max(mu_floor)
            }
        }
    }
}

pub fn contact_rate(
    trace: &MobilityTrace,
    a: VehicleId,
    b: VehicleId,
    t: f64,
    radius: f64,
    model: &ContactModel,
) -> Result<f64, MobilityError> {
    let snap = VcSnapshot::new(trace, t, radius);
    if !snap.is_linked(a, b) {
        return Err(MobilityError::NotLinked(a, b, t));
    }
    Ok(model.rate_in(&snap, a, b))
}

/// Synthetic random-waypoint trace settings. The first `n_vehicles` vehicles are present from
/// the start; vehicle 0 is the task owner and never leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTraceParams {
    pub n_vehicles: usize,
    pub region_w_m: f64,
    pub region_h_m: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub horizon_s: f64,
    pub sample_dt_s: f64,
    pub cpu_mean_hz: f64,
    /// Relative: the cpu speed standard deviation is `cpu_var * cpu_mean_hz`.
    pub cpu_var: f64,
    pub antenna_m: f64,
    /// Poisson arrivals of new vehicles, per second.
    pub arrival_rate: f64,
    /// Per-vehicle departure rate, per second (exponential residence time).
    pub departure_rate: f64,
}

impl Default for SyntheticTraceParams {
    fn default() -> Self {
        Self {
            n_vehicles: 30,
            region_w_m: 1000.0,
            region_h_m: 1000.0,
            speed_min: 5.0,
            speed_max: 15.0,
            horizon_s: 300.0,
            sample_dt_s: 1.0,
            cpu_mean_hz: 20.0e6,
            cpu_var: 0.2,
            antenna_m: 1.5,
            arrival_rate: 0.0,
            departure_rate: 0.0,
        }
    }
}

impl SyntheticTraceParams {
    pub fn check(&self) -> Result<(), MobilityError> {
        let bad = |m: &str| Err(MobilityError::InvalidParams(m.to_string()));
        if self.n_vehicles < 2 {
            return bad("n_vehicles must be at least 2 (owner plus one provider)");
        }
        if !(self.region_w_m > 0.0 && self.region_h_m > 0.0) {
            return bad("region must have positive extent");
        }
        if !(self.speed_min >= 0.0 && self.speed_max >= self.speed_min) {
            return bad("speed range must satisfy 0 <= min <= max");
        }
        if !(self.horizon_s > 0.0 && self.sample_dt_s > 0.0) {
            return bad("horizon and sample_dt must be positive");
        }
        if !(self.cpu_mean_hz > 0.0 && self.cpu_var >= 0.0 && self.antenna_m > 0.0) {
            return bad("cpu mean and antenna height must be positive");
        }
        if !(self.arrival_rate >= 0.0 && self.departure_rate >= 0.0) {
            return bad("arrival/departure rates must be non-negative");
        }
        Ok(())
    }
}

fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

pub fn generate_synthetic_trace<R: Rng + ?Sized>(
    params: &SyntheticTraceParams,
    rng: &mut R,
) -> Result<MobilityTrace, MobilityError> {
    params.check()?;
    let horizon = params.horizon_s;

    let mut windows: Vec<(f64, f64)> = Vec::new();
    for v in 0..params.n_vehicles {
        let stay = if v == 0 { f64::INFINITY } else { exponential(rng, params.departure_rate) };
        windows.push((0.0, stay.min(horizon)));
    }
    let mut t = exponential(rng, params.arrival_rate);
    while t < horizon {
        let stay = exponential(rng, params.departure_rate);
        windows.push((t, (t + stay).min(horizon)));
        t += exponential(rng, params.arrival_rate);
    }

    let mut vehicles = Vec::with_capacity(windows.len());
    let mut tracks = Vec::with_capacity(windows.len());
    for (v, &(join, leave)) in windows.iter().enumerate() {
        let cpu_hz = positive_normal(rng, params.cpu_mean_hz, params.cpu_var);
        vehicles.push(Vehicle { label: (v + 1).to_string(), cpu_hz, antenna_m: params.antenna_m });
        tracks.push(random_waypoint(params, join, leave, rng));
    }
    MobilityTrace::new(vehicles, tracks, (0.0, horizon))
}

fn random_point<R: Rng + ?Sized>(params: &SyntheticTraceParams, rng: &mut R) -> (f64, f64) {
    (rng.random_range(0.0..params.region_w_m), rng.random_range(0.0..params.region_h_m))
}

fn random_waypoint<R: Rng + ?Sized>(params: &SyntheticTraceParams, join: f64, leave: f64, rng: &mut R) -> Vec<Sample> {
    let mut pos = random_point(params, rng);
    let mut legs: Vec<(f64, (f64, f64))> = vec![(join, pos)];
    if params.speed_max > 0.0 {
        let mut t = join;
        while t < leave {
            let dest = random_point(params, rng);
            let speed = if params.speed_max > params.speed_min {
                rng.random_range(params.speed_min..params.speed_max)
            } else {
                params.speed_max
            };
            let len = ((dest.0 - pos.0).powi(2) + (dest.1 - pos.1).powi(2)).sqrt();
            if speed <= 0.0 || len == 0.0 {
                continue;
            }
            t += len / speed;
            legs.push((t, dest));
            pos = dest;
        }
    }
    let at = |t: f64| -> (f64, f64) {
        let k = legs.partition_point(|l| l.0 <= t);
        if k >= legs.len() {
            return legs[legs.len() - 1].1;
        }
        if k == 0 {
            return legs[0].1;
        }
        let (ta, a) = legs[k - 1];
        let (tb, b) = legs[k];
        let f = (t - ta) / (tb - ta);
        (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
    };

    let mut times = vec![join];
    let mut k = (join / params.sample_dt_s).floor() + 1.0;
    loop {
        let t = k * params.sample_dt_s;
        if t >= leave {
            break;
        }
        times.push(t);
        k += 1.0;
    }
    if leave > join {
        times.push(leave);
    }
    times
        .into_iter()
        .map(|t| {
            let (x, y) = at(t);
            Sample { t, x, y }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    t: f64,
    vehicle_id: String,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct VehicleRow {
    vehicle_id: String,
    cpu_hz: f64,
    antenna_m: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> MobilityError {
    let location = match e.position() {
        Some(p) => format!("{} line {}", path.display(), p.line()),
        None => path.display().to_string(),
    };
    MobilityError::Parse { location, message: e.to_string() }
}

fn check_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<(), MobilityError> {
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(MobilityError::Parse {
            location: format!("{} line 1", path.display()),
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub fn load_vehicles_csv(path: impl AsRef<Path>) -> Result<Vec<Vehicle>, MobilityError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    check_header(path, &mut reader, &["vehicle_id", "cpu_hz", "antenna_m"])?;
    let mut out: Vec<Vehicle> = Vec::new();
    for row in reader.deserialize::<VehicleRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if out.iter().any(|v| v.label == row.vehicle_id) {
            return Err(MobilityError::Parse {
                location: path.display().to_string(),
                message: format!("duplicate vehicle id {:?}", row.vehicle_id),
            });
        }
        out.push(Vehicle { label: row.vehicle_id, cpu_hz: row.cpu_hz, antenna_m: row.antenna_m });
    }
    if out.is_empty() {
        return Err(MobilityError::Parse { location: path.display().to_string(), message: "no vehicles".into() });
    }
    Ok(out)
}

/// Reads a `t,vehicle_id,x,y` trace. The first vehicle of `vehicles` is the task owner.
pub fn load_trace_csv(path: impl AsRef<Path>, vehicles: Vec<Vehicle>) -> Result<MobilityTrace, MobilityError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    check_header(path, &mut reader, &["t", "vehicle_id", "x", "y"])?;
    let mut tracks: Vec<Vec<Sample>> = vec![Vec::new(); vehicles.len()];
    let mut last_t = f64::NEG_INFINITY;
    let mut rows = 0usize;
    for row in reader.deserialize::<TraceRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        rows += 1;
        let line = rows + 1;
        let at = || format!("{} line {line}", path.display());
        let Some(v) = vehicles.iter().position(|veh| veh.label == row.vehicle_id) else {
            return Err(MobilityError::Parse { location: at(), message: format!("unknown vehicle {:?}", row.vehicle_id) });
        };
        if !(row.t.is_finite() && row.x.is_finite() && row.y.is_finite()) {
            return Err(MobilityError::Parse { location: at(), message: "non-finite value".into() });
        }
        if row.t < last_t || tracks[v].last().is_some_and(|s| s.t >= row.t) {
            return Err(MobilityError::Parse { location: at(), message: format!("timestamp {} out of order", row.t) });
        }
        last_t = row.t;
        tracks[v].push(Sample { t: row.t, x: row.x, y: row.y });
    }
    if rows == 0 {
        return Err(MobilityError::Parse { location: path.display().to_string(), message: "trace has no samples".into() });
    }
    let start = tracks.iter().filter_map(|t| t.first()).map(|s| s.t).fold(f64::INFINITY, f64::min);
    let end = tracks.iter().filter_map(|t| t.last()).map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    MobilityTrace::new(vehicles, tracks, (start, end))
}

pub fn save_trace_csv(trace: &MobilityTrace, path: impl AsRef<Path>) -> Result<(), MobilityError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["t", "vehicle_id", "x", "y"]).map_err(|e| csv_err(path, e))?;
    for (t, v, x, y) in trace.rows() {
        let label = &trace.vehicle(v).label;
        w.write_record([t.to_string(), label.clone(), x.to_string(), y.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_vehicles_csv(vehicles: &[Vehicle], path: impl AsRef<Path>) -> Result<(), MobilityError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for v in vehicles {
        w.serialize(VehicleRow { vehicle_id: v.label.clone(), cpu_hz: v.cpu_hz, antenna_m: v.antenna_m })
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

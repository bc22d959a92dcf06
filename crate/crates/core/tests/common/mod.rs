#![allow(dead_code)]

use dagvc::baselines::{Heft, Lookahead, Mga, MgaConfig};
use dagvc::channel::{Channel, ChannelParams};
use dagvc::dag::{generate_random_dag, validate, Dag, DagGenParams, DagTask};
use dagvc::mobility::{generate_synthetic_trace, ContactModel, MobilityTrace, SyntheticTraceParams, Vehicle, VehicleId};
use dagvc::rfid::{CtiMode, Rfid, RfidConfig};
use dagvc::sched::{Assignment, Placement, Problem, Scheduler, SimRng};
use rand::{Rng, SeedableRng};

pub struct Instance {
    pub dag: Dag,
    pub trace: MobilityTrace,
    pub channel: Channel,
}

impl Instance {
    pub fn problem(&self) -> Problem<'_> {
        Problem::new(&self.dag, &self.trace, &self.channel)
    }
}

pub fn vehicle(label: &str, mhz: f64) -> Vehicle {
    Vehicle { label: label.into(), cpu_hz: mhz * 1e6, antenna_m: 1.5 }
}

/// Stationary vehicles `p1, p2, ...` given as `(MHz, x, y)`.
pub fn static_trace(fleet: &[(f64, f64, f64)]) -> MobilityTrace {
    let vehicles = fleet.iter().enumerate().map(|(i, s)| vehicle(&format!("p{}", i + 1), s.0)).collect();
    let pos: Vec<(f64, f64)> = fleet.iter().map(|s| (s.1, s.2)).collect();
    MobilityTrace::stationary(vehicles, &pos, 1000.0).unwrap()
}

pub fn constant_channel(mu: f64, theta: f64) -> Channel {
    Channel::new(ChannelParams { theta, ..Default::default() }, ContactModel::Constant { mu })
}

/// Seconds per Mbit at a distance, evaluated from the channel formulas directly.
pub fn secs_per_mbit(d: f64) -> f64 {
    let d = d.max(1.0);
    let d_brk = 4.0 * 1.5 * 1.5 / 0.05 - 0.0508 / 4.0;
    let pl = if d <= d_brk {
        20.0 + 46.4 + 20.0 * d.log10()
    } else {
        20.0 + 46.4 + 20.0 * d_brk.log10() + 40.0 * (d / d_brk).log10()
    };
    0.15 / 60.0 * pl + 0.001
}

/// Diamond `n1 -> {n2, n3} -> n4`.
fn diamond(w: [f64; 4], bits: [f64; 4]) -> Dag {
    validate(
        &DagTask::new()
            .with_subtask("n1", w[0])
            .with_subtask("n2", w[1])
            .with_subtask("n3", w[2])
            .with_subtask("n4", w[3])
            .with_edge("n1", "n2", bits[0])
            .with_edge("n1", "n3", bits[1])
            .with_edge("n2", "n4", bits[2])
            .with_edge("n3", "n4", bits[3]),
    )
    .unwrap()
}

/// Two ready subtasks that both prefer the fast vehicle near the owner. `n2` has the lower
/// dynamic rank, but `n3`'s large input only reaches the owner and that vehicle, so losing it
/// costs `n3` far more than it costs `n2`, which has an almost as fast fallback further away.
pub fn scarce_candidates() -> Instance {
    Instance {
        dag: diamond([2e6, 100e6, 100e6, 1e6], [0.2e6, 4e6, 0.2e6, 0.2e6]),
        trace: static_trace(&[(20.0, 0.0, 0.0), (100.0, 20.0, 0.0), (90.0, 300.0, 0.0)]),
        channel: constant_channel(0.1, 0.9),
    }
}

/// Two fast vehicles on opposite sides of a slow owner and two moderate vehicles next to it.
/// Greedy finish-time choices split the middle subtasks across the far pair, whose large
/// outputs cannot then be reliably gathered anywhere.
pub fn split_join() -> Instance {
    Instance {
        dag: diamond([1e6, 30e6, 30e6, 3e6], [0.5e6, 0.5e6, 3.8e6, 3.8e6]),
        trace: static_trace(&[
            (5.0, 0.0, 0.0),
            (100.0, -400.0, 0.0),
            (30.0, 10.0, 0.0),
            (100.0, 400.0, 0.0),
            (30.0, -10.0, 0.0),
        ]),
        channel: constant_channel(0.1, 0.9),
    }
}

/// Random instance with mobility, arrivals, departures and varied channel settings.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = SimRng::seed_from_u64(seed);
    let n_layers = rng.random_range(3..=8);
    let n_subtasks = rng.random_range(n_layers..=n_layers + 20);
    let dag_params = DagGenParams {
        n_subtasks,
        n_layers,
        ccr: rng.random_range(0.3..2.0),
        max_preds: rng.random_range(1..=3),
        ..Default::default()
    };
    let dynamic = rng.random_bool(0.5);
    let vc = SyntheticTraceParams {
        n_vehicles: rng.random_range(2..=12),
        region_w_m: rng.random_range(200.0..1200.0),
        region_h_m: rng.random_range(200.0..1200.0),
        speed_min: 0.0,
        speed_max: rng.random_range(0.0..30.0),
        horizon_s: 120.0,
        arrival_rate: if dynamic { 0.2 } else { 0.0 },
        departure_rate: if dynamic { 0.05 } else { 0.0 },
        ..Default::default()
    };
    let contact = if rng.random_bool(0.5) {
        ContactModel::default()
    } else {
        ContactModel::Constant { mu: rng.random_range(0.01..0.2) }
    };
    let params = ChannelParams {
        theta: rng.random_range(0.6..0.99),
        radius_m: rng.random_range(200.0..600.0),
        ..Default::default()
    };
    let dag = validate(&generate_random_dag(&dag_params, &mut rng).unwrap()).unwrap();
    let trace = generate_synthetic_trace(&vc, &mut rng).unwrap();
    Instance { dag, trace, channel: Channel::new(params, contact) }
}

/// Random instance with at most 6 subtasks and 4 vehicles.
pub fn tiny_instance(seed: u64) -> Instance {
    let mut rng = SimRng::seed_from_u64(seed ^ 0x7f4a_7c15);
    let n_subtasks = rng.random_range(3..=6);
    let n_layers = rng.random_range(3..=n_subtasks);
    let dag_params = DagGenParams { n_subtasks, n_layers, ccr: rng.random_range(0.5..2.0), ..Default::default() };
    let vc = SyntheticTraceParams {
        n_vehicles: rng.random_range(2..=4),
        region_w_m: 600.0,
        region_h_m: 600.0,
        horizon_s: 60.0,
        departure_rate: if rng.random_bool(0.3) { 0.5 } else { 0.0 },
        ..Default::default()
    };
    let params = ChannelParams { theta: rng.random_range(0.8..0.97), ..Default::default() };
    let dag = validate(&generate_random_dag(&dag_params, &mut rng).unwrap()).unwrap();
    let trace = generate_synthetic_trace(&vc, &mut rng).unwrap();
    Instance { dag, trace, channel: Channel::new(params, ContactModel::default()) }
}

pub fn small_mga() -> Mga {
    Mga::new(MgaConfig { population: 30, generations: 40, ..Default::default() })
}

/// Every scheduler under test, including non-default RFID modes.
pub fn all_schedulers() -> Vec<Box<dyn Scheduler>> {
    vec![
        Box::new(Rfid::default()),
        Box::new(Rfid::new(RfidConfig { alpha_r: 1.0, ..Default::default() })),
        Box::new(Rfid::new(RfidConfig { alpha_r: 0.0, cti_sign_mode: CtiMode::Off, ..Default::default() })),
        Box::new(Rfid::new(RfidConfig { cti_sign_mode: CtiMode::AsPrinted, ..Default::default() })),
        Box::new(Heft),
        Box::new(Lookahead),
        Box::new(small_mga()),
    ]
}

/// Recomputes every placement from the commit order and vehicle choices alone, using only
/// pairwise transfer times, and returns `(st, est, eft)` per placement.
pub fn recompute(a: &Assignment, problem: &Problem<'_>) -> Vec<(f64, f64, f64)> {
    let dag = problem.dag;
    let trace = problem.trace;
    let mut aft: Vec<Option<(VehicleId, f64)>> = vec![None; dag.len()];
    let mut avail: Vec<f64> = trace.vehicle_ids().map(|p| trace.join_time(p).unwrap().max(0.0)).collect();
    let mut out = Vec::new();
    for pl in a.placements() {
        let preds = dag.preds(pl.subtask);
        let st = preds.iter().map(|&(j, _)| aft[j].unwrap().1).fold(0.0, f64::max);
        let snap = problem.snapshot(st);
        let mut rt: f64 = 0.0;
        for &(j, bits) in preds {
            let (src, f) = aft[j].unwrap();
            rt = rt.max(f + problem.channel.tt(bits, src, pl.vehicle, &snap).unwrap());
        }
        let est = avail[pl.vehicle.0].max(rt);
        let eft = est + dag.workload(pl.subtask) / trace.vehicle(pl.vehicle).cpu_hz;
        avail[pl.vehicle.0] = eft;
        aft[pl.subtask] = Some((pl.vehicle, eft));
        out.push((st, est, eft));
    }
    out
}

pub fn hosts(a: &Assignment, dag: &Dag) -> Vec<usize> {
    (0..dag.len()).map(|n| a.host(n).unwrap().0).collect()
}

pub fn placement_of(a: &Assignment, subtask: usize) -> Placement {
    *a.get(subtask).unwrap()
}

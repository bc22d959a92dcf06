mod common;

use std::collections::{BTreeSet, VecDeque};

use common::{constant_channel, static_trace, vehicle};
use dagvc::channel::{
    breakpoint_distance, candidate_set, contact_survival, degree_set, path_loss, transmission_time, Channel,
    ChannelParams,
};
use dagvc::dag::{generate_random_dag, layer_index, realized_ccr, validate, DagError, DagGenParams, DagTask};
use dagvc::mobility::{
    contact_rate, generate_synthetic_trace, ContactModel, MobilityTrace, SyntheticTraceParams, VcSnapshot, VehicleId,
    OWNER,
};
use dagvc::sched::{commit, start, ScheduleState, SimRng};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng as _};

fn kahn_acyclic(k: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0; k];
    for &(_, b) in edges {
        indeg[b] += 1;
    }
    let mut queue: VecDeque<usize> = (0..k).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop_front() {
        seen += 1;
        for &(a, b) in edges {
            if a == v {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    queue.push_back(b);
                }
            }
        }
    }
    seen == k
}

#[test]
fn validation_agrees_with_topological_sort() {
    let mut rng = SimRng::seed_from_u64(11);
    let mut cyclic = 0;
    for _ in 0..1000 {
        let k = rng.random_range(4..14);
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 1..k - 1 {
            edges.insert((0, i));
            edges.insert((i, k - 1));
        }
        for _ in 0..rng.random_range(0..2 * k) {
            let (a, b) = (rng.random_range(1..k - 1), rng.random_range(1..k - 1));
            if a < b {
                edges.insert((a, b));
            }
        }
        if rng.random_bool(0.5) {
            let (a, b) = (rng.random_range(1..k - 1), rng.random_range(1..k - 1));
            if a != b {
                edges.insert((a.max(b), a.min(b)));
            }
        }
        let edges: Vec<(usize, usize)> = edges.into_iter().collect();
        let mut task = DagTask::new();
        for i in 0..k {
            task = task.with_subtask(&format!("v{i}"), 1.0);
        }
        for &(a, b) in &edges {
            task = task.with_edge(&format!("v{a}"), &format!("v{b}"), 1.0);
        }
        let acyclic = kahn_acyclic(k, &edges);
        match validate(&task) {
            Ok(_) => assert!(acyclic),
            Err(DagError::CycleDetected(_)) => {
                assert!(!acyclic);
                cyclic += 1;
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
    assert!(cyclic > 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn generated_dags_are_layered_and_reproducible(seed in any::<u64>(), n in 3usize..80, layers in 3usize..12) {
        prop_assume!(layers <= n);
        let params = DagGenParams { n_subtasks: n, n_layers: layers, ..Default::default() };
        let a = generate_random_dag(&params, &mut SimRng::seed_from_u64(seed)).unwrap();
        let b = generate_random_dag(&params, &mut SimRng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.edge_set(), b.edge_set());
        let dag = validate(&a).unwrap();
        prop_assert_eq!(dag.len(), n);
        let layer = layer_index(&dag);
        for u in 0..dag.len() {
            for &(v, _) in dag.succs(u) {
                prop_assert!(layer[u] < layer[v]);
            }
        }
        // The cap yields only to the exit, which joins the whole last layer, and to layers
        // already full when a dangling subtask needs a successor.
        for v in 0..dag.len() {
            if v != dag.exit() && dag.preds(v).len() > params.max_preds {
                prop_assert!((0..dag.len()).filter(|&u| layer[u] == layer[v]).all(|u| dag.preds(u).len() >= params.max_preds));
            }
        }
        prop_assert_eq!(layer.iter().filter(|&&l| l == 0).count(), 1);
        prop_assert_eq!(layer[dag.exit()], layers - 1);
        prop_assert_eq!(layer.iter().filter(|&&l| l == layers - 1).count(), 1);
    }

    #[test]
    fn path_loss_is_continuous_at_the_breakpoint(
        ht in 0.5f64..5.0, hr in 0.5f64..5.0, delta in 0.01f64..0.5, eta2 in 2.0f64..6.0, l_b in 0.0f64..40.0,
    ) {
        let params = ChannelParams { delta, eta2, l_b_db: l_b, ..Default::default() };
        let d_brk = breakpoint_distance(ht, hr, &params).unwrap();
        prop_assume!(d_brk > 1.0);
        let near = params.l_b_db + params.pl_d0_db + 10.0 * params.eta1 * d_brk.log10();
        let far = params.l_b_db + params.pl_d0_db + 10.0 * params.eta1 * d_brk.log10() + 10.0 * eta2 * (d_brk / d_brk).log10();
        prop_assert!((near - far).abs() < 1e-9);
        let at = path_loss(d_brk, d_brk, &params).unwrap();
        prop_assert!((at - near).abs() < 1e-9);
        let above = path_loss(d_brk * (1.0 + 1e-12), d_brk, &params).unwrap();
        prop_assert!((above - at).abs() < 1e-9);
    }

    #[test]
    fn survival_is_a_decreasing_probability(t in 0.0f64..50.0, mu in 0.001f64..2.0, dt in 0.01f64..5.0) {
        let s = contact_survival(t, mu);
        prop_assert!(s > 0.0 && s <= 1.0);
        prop_assert!(contact_survival(t + dt, mu) < s);
        prop_assert!(contact_survival(t + 0.1, mu * 1.5) < contact_survival(t + 0.1, mu));
    }

    #[test]
    fn transfer_time_is_linear_in_size(d in 0.0f64..500.0, c in 0.0f64..1e7) {
        let trace = static_trace(&[(20.0, 0.0, 0.0), (20.0, d, 0.0)]);
        let ch = constant_channel(0.1, 0.9);
        let (a, b) = (OWNER, VehicleId(1));
        prop_assert_eq!(transmission_time(0.0, a, b, 0.0, &trace, &ch).unwrap(), 0.0);
        let one = transmission_time(c, a, b, 0.0, &trace, &ch).unwrap();
        let two = transmission_time(2.0 * c, a, b, 0.0, &trace, &ch).unwrap();
        prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two.max(1.0));
        prop_assert!((one - c / 1e6 * common::secs_per_mbit(d)).abs() <= 1e-9 * one.max(1.0));
    }
}

#[test]
fn path_loss_grows_with_distance() {
    let params = ChannelParams::default();
    let d_brk = breakpoint_distance(1.5, 1.5, &params).unwrap();
    let mut last = f64::NEG_INFINITY;
    for d in 1..=2000 {
        let pl = path_loss(d as f64, d_brk, &params).unwrap();
        assert!(pl >= last);
        last = pl;
    }
}

#[test]
fn generated_ccr_tracks_the_request() {
    let cpu = 20e6;
    for ccr in [0.5, 1.0, 1.2] {
        let params = DagGenParams { ccr, ..Default::default() };
        let mean = (0..100)
            .map(|seed| {
                let dag = validate(&generate_random_dag(&params, &mut SimRng::seed_from_u64(seed)).unwrap()).unwrap();
                realized_ccr(&dag, params.reference_rate_bps(cpu), cpu)
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean / ccr - 1.0).abs() < 0.1, "ccr {ccr}: {mean}");
    }
}

fn moving_trace(seed: u64) -> MobilityTrace {
    let params = SyntheticTraceParams {
        n_vehicles: 12,
        horizon_s: 60.0,
        speed_max: 25.0,
        arrival_rate: 0.1,
        departure_rate: 0.02,
        ..Default::default()
    };
    generate_synthetic_trace(&params, &mut SimRng::seed_from_u64(seed)).unwrap()
}

#[test]
fn snapshots_are_symmetric_and_monotone_in_radius() {
    let mut rng = SimRng::seed_from_u64(3);
    for seed in 0..100 {
        let trace = moving_trace(seed);
        let t = rng.random_range(0.0..60.0);
        let (r1, r2) = (rng.random_range(50.0..400.0), rng.random_range(400.0..900.0));
        let small = VcSnapshot::new(&trace, t, r1);
        let large = VcSnapshot::new(&trace, t, r2);
        let links: BTreeSet<_> = large.links().into_iter().collect();
        for (a, b) in small.links() {
            assert!(links.contains(&(a, b)));
        }
        for a in trace.vehicle_ids() {
            for b in trace.vehicle_ids() {
                assert_eq!(large.is_linked(a, b), large.is_linked(b, a));
                if large.is_linked(a, b) && a != b {
                    let model = ContactModel::default();
                    let ab = contact_rate(&trace, a, b, t, r2, &model).unwrap();
                    let ba = contact_rate(&trace, b, a, t, r2, &model).unwrap();
                    assert!(ab > 0.0 && (ab - ba).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn sample_instants_use_sampled_positions() {
    let trace = moving_trace(5);
    for (t, v, x, y) in trace.rows() {
        let (px, py) = trace.position(v, t).unwrap();
        assert_eq!((px, py), (x, y));
    }
}

#[test]
fn interpolated_distance_matches_dense_resampling() {
    let trace = moving_trace(8);
    let (a, b) = (OWNER, VehicleId(1));
    let (ka, kb) = (trace.track(a), trace.track(b));
    // Independent piecewise-linear lookup on the raw samples.
    let lerp = |track: &[dagvc::mobility::Sample], t: f64| {
        let i = track.iter().rposition(|s| s.t <= t).unwrap();
        let (s0, s1) = (track[i], track[(i + 1).min(track.len() - 1)]);
        if s1.t == s0.t {
            return (s0.x, s0.y);
        }
        let u = (t - s0.t) / (s1.t - s0.t);
        (s0.x + u * (s1.x - s0.x), s0.y + u * (s1.y - s0.y))
    };
    let end = ka.last().unwrap().t.min(kb.last().unwrap().t);
    let mut t = 0.0;
    while t <= end {
        let (pa, pb) = (lerp(ka, t), lerp(kb, t));
        let want = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
        assert!((trace.distance(a, b, t).unwrap() - want).abs() < 1e-9);
        t += 0.01;
    }
}

/// Owner plus four vehicles, with `p3` linked but too far for a reliable 3.5 Mbit transfer.
fn star() -> (dagvc::dag::Dag, MobilityTrace) {
    let dag = validate(
        &DagTask::new()
            .with_subtask("n1", 1e6)
            .with_subtask("n2", 1e6)
            .with_subtask("n3", 1e6)
            .with_subtask("n4", 1e6)
            .with_edge("n1", "n2", 3.5e6)
            .with_edge("n1", "n3", 0.5e6)
            .with_edge("n2", "n4", 3.5e6)
            .with_edge("n3", "n4", 3.5e6),
    )
    .unwrap();
    let trace = static_trace(&[
        (20.0, 0.0, 0.0),
        (20.0, 50.0, 0.0),
        (20.0, 480.0, 0.0),
        (20.0, 0.0, -120.0),
        (20.0, -60.0, 40.0),
    ]);
    (dag, trace)
}

#[test]
fn far_linked_vehicle_is_not_a_candidate() {
    let (dag, trace) = star();
    let ch = constant_channel(0.1, 0.9);
    let mut state = ScheduleState::new(&dag, &trace);
    start(&mut state, &ch).unwrap();
    let snap = VcSnapshot::new(&trace, state.aft(0).unwrap(), ch.radius());
    assert!(snap.is_linked(OWNER, VehicleId(2)));
    let cand = candidate_set(1, &state, &snap, &dag, &ch);
    assert_eq!(cand, vec![VehicleId(0), VehicleId(1), VehicleId(3), VehicleId(4)]);
}

#[test]
fn candidate_sets_intersect_per_predecessor_and_shrink_with_qos() {
    let (dag, trace) = star();
    let base = constant_channel(0.1, 0.9);
    for h2 in 0..5 {
        for h3 in 0..5 {
            let mut state = ScheduleState::new(&dag, &trace);
            start(&mut state, &base).unwrap();
            let snap0 = VcSnapshot::new(&trace, state.aft(0).unwrap(), 500.0);
            let loose = constant_channel(1e-9, 0.01);
            if commit(1, VehicleId(h2), &mut state, &snap0, &loose).is_err()
                || commit(2, VehicleId(h3), &mut state, &snap0, &loose).is_err()
            {
                continue;
            }
            let st = state.aft(1).unwrap().max(state.aft(2).unwrap());
            let snap = VcSnapshot::new(&trace, st, 500.0);
            let mut prev: Option<Vec<VehicleId>> = None;
            for theta in [0.5, 0.8, 0.9, 0.95, 0.99] {
                let ch = constant_channel(0.1, theta);
                let cand = candidate_set(3, &state, &snap, &dag, &ch);
                let brute: Vec<VehicleId> = trace
                    .vehicle_ids()
                    .filter(|&p| {
                        [(1usize, 3.5e6), (2usize, 3.5e6)].iter().all(|&(j, bits)| {
                            let src = state.host(j).unwrap();
                            match ch.tt(bits, src, p, &snap) {
                                Some(tt) => (-tt * 0.1f64).exp() >= theta,
                                None => false,
                            }
                        })
                    })
                    .collect();
                assert_eq!(cand, brute);
                if let Some(p) = &prev {
                    assert!(cand.iter().all(|v| p.contains(v)));
                }
                prev = Some(cand);
            }
        }
    }
}

#[test]
fn single_predecessor_host_is_always_a_candidate() {
    for seed in 0..40 {
        let inst = common::random_instance(seed);
        let mut state = ScheduleState::new(&inst.dag, &inst.trace);
        if start(&mut state, &inst.channel).is_err() {
            continue;
        }
        let st = state.aft(inst.dag.entry()).unwrap();
        let snap = VcSnapshot::new(&inst.trace, st, inst.channel.radius());
        for &n in state.ready() {
            let cand = candidate_set(n, &state, &snap, &inst.dag, &inst.channel);
            assert!(cand.contains(&OWNER));
        }
    }
    // With two predecessors on different hosts, neither host is guaranteed.
    let (dag, trace) = star();
    let ch = constant_channel(0.1, 0.9);
    let mut state = ScheduleState::new(&dag, &trace);
    start(&mut state, &ch).unwrap();
    let loose = constant_channel(1e-9, 0.01);
    let snap0 = VcSnapshot::new(&trace, state.aft(0).unwrap(), 500.0);
    commit(1, VehicleId(2), &mut state, &snap0, &loose).unwrap();
    commit(2, VehicleId(3), &mut state, &snap0, &loose).unwrap();
    let snap = VcSnapshot::new(&trace, state.aft(1).unwrap().max(state.aft(2).unwrap()), 500.0);
    let cand = candidate_set(3, &state, &snap, &dag, &ch);
    assert!(!cand.contains(&VehicleId(2)) && !cand.contains(&VehicleId(3)));
}

#[test]
fn degree_set_on_a_line() {
    let dag = validate(
        &DagTask::new()
            .with_subtask("a", 1e6)
            .with_subtask("b", 1e6)
            .with_subtask("c", 1e6)
            .with_edge("a", "b", 1e6)
            .with_edge("b", "c", 3e6),
    )
    .unwrap();
    let trace = MobilityTrace::stationary(
        (1..=5).map(|i| vehicle(&format!("p{i}"), 20.0)).collect(),
        &[(0.0, 0.0), (90.0, 0.0), (180.0, 0.0), (270.0, 0.0), (360.0, 0.0)],
        100.0,
    )
    .unwrap();
    for theta in [0.5, 0.75, 0.9, 0.95] {
        let ch = Channel::new(ChannelParams { theta, ..Default::default() }, ContactModel::Constant { mu: 0.1 });
        let snap = VcSnapshot::new(&trace, 1.0, 500.0);
        for host in trace.vehicle_ids() {
            let got = degree_set(1, host, &snap, &dag, &ch);
            let hp = snap.position(host).unwrap();
            let want: Vec<VehicleId> = trace
                .vehicle_ids()
                .filter(|&q| {
                    let d = (snap.position(q).unwrap().0 - hp.0).abs();
                    let tt = if q == host { 0.0 } else { 3.0 * common::secs_per_mbit(d) };
                    d <= 500.0 && (-tt * 0.1f64).exp() >= theta
                })
                .collect();
            assert_eq!(got, want);
            assert!(got.contains(&host));
            assert!(degree_set(2, host, &snap, &dag, &ch).is_empty());
        }
    }
}

mod common;

use std::collections::BTreeSet;

use common::{all_schedulers, random_instance, recompute};
use dagvc::dag::{generate_random_dag, validate, DagGenParams};
use dagvc::mobility::{VehicleId, OWNER};
use dagvc::sched::{commit, run_trial, scheduling_time, start, validate_schedule, ScheduleState, SimRng};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng as _, SeedableRng as _};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ready_set_matches_definition(seed in any::<u64>(), n in 3usize..40, layers in 3usize..10) {
        prop_assume!(layers <= n);
        let mut rng = SimRng::seed_from_u64(seed);
        let params = DagGenParams { n_subtasks: n, n_layers: layers, ..Default::default() };
        let dag = validate(&generate_random_dag(&params, &mut rng).unwrap()).unwrap();
        let trace = common::static_trace(&[(20.0, 0.0, 0.0), (30.0, 50.0, 0.0)]);
        let channel = common::constant_channel(0.01, 0.5);
        let mut state = ScheduleState::new(&dag, &trace);
        start(&mut state, &channel).unwrap();
        while !state.is_complete() {
            let expected: BTreeSet<usize> = (0..dag.len())
                .filter(|&m| !state.is_assigned(m) && dag.preds(m).iter().all(|&(j, _)| state.is_assigned(j)))
                .collect();
            prop_assert_eq!(state.ready(), &expected);
            for &a in state.ready() {
                for &(b, _) in dag.succs(a) {
                    prop_assert!(!state.ready().contains(&b));
                }
            }
            let before: Vec<Option<f64>> = (0..dag.len()).map(|m| state.aft(m)).collect();
            let ready: Vec<usize> = state.ready().iter().copied().collect();
            let m = *ready.choose(&mut rng).unwrap();
            let st = scheduling_time(m, &state).unwrap();
            let snap = dagvc::mobility::VcSnapshot::new(&trace, st, channel.radius());
            let p = if rng.random_bool(0.5) { OWNER } else { VehicleId(1) };
            commit(m, p, &mut state, &snap, &channel).unwrap();
            for (k, b) in before.iter().enumerate() {
                if let Some(v) = b {
                    prop_assert_eq!(state.aft(k), Some(*v));
                }
            }
        }
        prop_assert!(state.ready().is_empty());
    }
}

#[test]
fn successful_schedules_recompute_exactly() {
    let scheds = all_schedulers();
    let mut checked = 0;
    for seed in 0..150 {
        let inst = random_instance(seed);
        let problem = inst.problem();
        for s in &scheds {
            let out = run_trial(&problem, s.as_ref(), &mut SimRng::seed_from_u64(seed));
            let Some(a) = out.assignment else { continue };
            let report = validate_schedule(&a, &inst.dag, &inst.trace, &inst.channel);
            assert!(report.is_valid(), "{} seed {seed}: {:?}", s.name(), report.violations);
            for (pl, (st, est, eft)) in a.placements().iter().zip(recompute(&a, &problem)) {
                assert!((pl.st - st).abs() < 1e-9 && (pl.est - est).abs() < 1e-9 && (pl.eft - eft).abs() < 1e-9);
            }
            let max_aft = a.placements().iter().map(|p| p.eft).fold(0.0, f64::max);
            assert_eq!(out.otc, Some(max_aft));
            checked += 1;
        }
    }
    assert!(checked > 300, "only {checked} successful schedules");
}

#[test]
fn trials_are_deterministic() {
    for seed in 0..20 {
        let inst = random_instance(seed);
        let problem = inst.problem();
        for s in all_schedulers() {
            let a = run_trial(&problem, s.as_ref(), &mut SimRng::seed_from_u64(9));
            let b = run_trial(&problem, s.as_ref(), &mut SimRng::seed_from_u64(9));
            assert_eq!(a.assignment, b.assignment, "{}", s.name());
            assert_eq!(a.failure, b.failure, "{}", s.name());
            assert_eq!(a.otc.map(f64::to_bits), b.otc.map(f64::to_bits));
        }
    }
}

//! Randomized invariants of the analysis pipeline, driven by seeds so
//! every failure replays deterministically.

use mmdf_core::analysis::{analyze, arrival_curves, mig_cost, thr_require, ThrRequire};
use mmdf_core::ga::rename_processors;
use mmdf_core::rational::{ceil_u64, rat, Rational};
use mmdf_core::schedule::DEFAULT_UNROLL;
use mmdf_core::sim::{simulate, worst_case_trace};
use mmdf_testkit as testkit;
use num_traits::Zero;
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(64))]

    /// The steady interval can beat neither the busiest processor nor be
    /// worse than running the whole iteration back to back.
    #[test]
    fn initiation_interval_is_bounded_by_load_and_serial_time(seed in any::<u64>()) {
        let mut r = testkit::rng(seed);
        let spec = testkit::random_spec(&mut r);
        let sol = testkit::random_solution(&mut r, &spec);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        for mode in spec.mode_names() {
            let reps = spec.repetition_vector(mode).unwrap();
            let mut load = vec![0u64; spec.processor_pool];
            for t in 0..spec.tasks.len() {
                for inst in 0..reps[t] {
                    load[sol.mapping(mode).proc_of(t, inst)] += spec.wcet(t, mode);
                }
            }
            let busiest = *load.iter().max().unwrap();
            let serial: u64 = (0..spec.tasks.len())
                .map(|t| spec.wcet(t, mode) * reps[t])
                .sum();
            let ii = a.schedules[mode].initiation_interval;
            prop_assert!(ii >= Rational::from_integer(busiest as i128));
            prop_assert!(ii <= Rational::from_integer(serial as i128));
            prop_assert!(a.schedules[mode].latency as i128 <= serial as i128);
        }
    }

    /// Tightening kicks in exactly when a transition delay exists: with
    /// zero delay the requirement is the constraint itself, and it only
    /// grows as the delay grows.
    #[test]
    fn requirement_grows_with_delay(num in 1i128..50, den in 1i128..200, mrc in 1u64..12, d1 in 0i128..400, d2 in 0i128..400) {
        let thr = rat(num, num * den);
        let (lo, hi) = (d1.min(d2), d1.max(d2));
        let at = |d: i128| thr_require(thr, mrc, rat(d, 1));
        match (at(lo), at(hi)) {
            (ThrRequire::Finite(a), ThrRequire::Finite(b)) => prop_assert!(a <= b),
            (ThrRequire::Finite(_), ThrRequire::Infeasible) => {}
            (ThrRequire::Infeasible, ThrRequire::Infeasible) => {}
            (ThrRequire::Infeasible, ThrRequire::Finite(_)) => {
                prop_assert!(false, "requirement recovered as the delay grew")
            }
        }
        if let ThrRequire::Finite(a) = at(lo) {
            prop_assert!(a >= thr);
            prop_assert_eq!(a == thr, lo == 0);
        }
    }

    /// More minimum iterations per stay dilute the same delay.
    #[test]
    fn requirement_shrinks_with_residency(den in 2i128..300, delay in 0i128..400, m1 in 1u64..12, m2 in 1u64..12) {
        let thr = rat(1, den);
        let (lo, hi) = (m1.min(m2), m1.max(m2));
        match (thr_require(thr, lo, rat(delay, 1)), thr_require(thr, hi, rat(delay, 1))) {
            (ThrRequire::Finite(a), ThrRequire::Finite(b)) => prop_assert!(a >= b),
            (ThrRequire::Infeasible, _) => {}
            (ThrRequire::Finite(_), ThrRequire::Infeasible) => {
                prop_assert!(false, "requirement collapsed as residency grew")
            }
        }
    }

    /// The curve gap is the closed-form buffer bound, and it cannot
    /// shrink when the silence before the first output grows.
    #[test]
    fn curve_gap_grows_with_delay(seed in any::<u64>(), extra in 0i128..60) {
        let mut r = testkit::rng(seed);
        let c = testkit::random_curve_config(&mut r);
        let base = arrival_curves(c.mrc, c.ii, c.max_delay, c.thr).max_vertical_gap();
        prop_assert_eq!(base, ceil_u64((c.max_delay + c.ii) * c.thr).max(1));
        let widened = arrival_curves(c.mrc, c.ii, c.max_delay + rat(extra, 7), c.thr)
            .max_vertical_gap();
        prop_assert!(widened >= base);
    }

    /// With one gene per task, the tasks that moved between two modes are
    /// the same set read from either side.
    #[test]
    fn migration_cost_is_symmetric_for_task_level_mappings(seed in any::<u64>()) {
        let mut r = testkit::rng(seed);
        let spec = testkit::random_spec(&mut r);
        let sol = testkit::random_solution(&mut r, &spec);
        for a in spec.mode_names() {
            for b in spec.mode_names() {
                prop_assert_eq!(mig_cost(&spec, &sol, a, b), mig_cost(&spec, &sol, b, a));
            }
        }
    }

    /// Relabeling processors may only reduce the migration bill, and must
    /// not touch any schedule.
    #[test]
    fn renaming_never_worsens(seed in any::<u64>()) {
        let mut r = testkit::rng(seed);
        let spec = testkit::random_spec(&mut r);
        let sol = testkit::random_solution(&mut r, &spec);
        let before = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        let renamed = rename_processors(&spec, &sol);
        let after = analyze(&spec, &renamed, DEFAULT_UNROLL).unwrap();
        prop_assert!(after.mig_cost_total <= before.mig_cost_total);
        for mode in spec.mode_names() {
            prop_assert_eq!(after.schedules[mode].latency, before.schedules[mode].latency);
            prop_assert_eq!(
                after.schedules[mode].initiation_interval,
                before.schedules[mode].initiation_interval
            );
            prop_assert_eq!(
                after.schedules[mode].used_processors().len(),
                before.schedules[mode].used_processors().len()
            );
        }
    }

    /// The adversarial walk is well formed and locally greedy: every step
    /// takes the worst available transition.
    #[test]
    fn worst_case_walk_is_valid_and_locally_maximal(seed in any::<u64>(), len in 1usize..10) {
        let mut r = testkit::rng(seed);
        let (spec, sol) = testkit::random_feasible_instance(&mut r);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        let trace = worst_case_trace(&spec, &a.trans_delay, len);
        trace.validate(&spec).unwrap();
        prop_assert!(trace.stays.len() <= len);
        for w in trace.stays.windows(2) {
            let taken = a.trans_delay[&(w[0].0.clone(), w[1].0.clone())];
            let best = spec
                .mtg
                .transitions
                .iter()
                .filter(|(cm, _)| *cm == w[0].0)
                .map(|key| a.trans_delay[&key.clone()])
                .max()
                .unwrap();
            prop_assert_eq!(taken, best);
        }
    }

    /// End to end: a feasible solution survives its own worst-case walk
    /// with the buffer the analysis sized for it.
    #[test]
    fn feasible_solutions_survive_their_worst_walk(seed in any::<u64>()) {
        let mut r = testkit::rng(seed);
        let (spec, sol) = testkit::random_feasible_instance(&mut r);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        let trace = worst_case_trace(&spec, &a.trans_delay, 24);
        let sim = simulate(&spec, &a, &trace, a.output_buffer_size).unwrap();
        prop_assert!(sim.pass, "underflow at {:?}", sim.first_underflow);
    }

    /// Buffer sizes stay positive and production throughput of a feasible
    /// mode covers its tightened requirement.
    #[test]
    fn feasible_modes_meet_their_requirement(seed in any::<u64>()) {
        let mut r = testkit::rng(seed);
        let (spec, sol) = testkit::random_feasible_instance(&mut r);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        prop_assert!(a.output_buffer_size >= 1);
        for mode in spec.mode_names() {
            let req = a.thr_require[mode].as_finite().unwrap();
            prop_assert!(req >= spec.throughput_constraint);
            prop_assert!(a.schedules[mode].throughput() >= req);
            prop_assert!(!a.schedules[mode].initiation_interval.is_zero());
        }
    }
}

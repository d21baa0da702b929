//! Brute-force oracles and random instance generators for testing the
//! main crate.
//!
//! Everything here trades speed for independence: exhaustive enumeration
//! where the optimizer searches, a from-scratch token replayer where the
//! scheduler plans, and generators that construct instances known to be
//! consistent by construction rather than by validation.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use mmdf_core::analysis::{analyze, max_trans_delay, mig_cost_total, MappingSolution};
use mmdf_core::ga::{evaluate, Fitness, GeneLayout};
use mmdf_core::model::{
    ChannelSpec, MmdfSpec, ModeSpec, ModeTransitionGraph, PortDirection, PortRef, PortSpec,
    TaskSpec,
};
use mmdf_core::rational::{ceil_u64, rat, Rational};
use mmdf_core::schedule::{ModeMapping, ModeSchedule, ProcId, DEFAULT_UNROLL};
use num_integer::Integer;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a test seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Size ranges for generated instances.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub tasks: RangeInclusive<usize>,
    pub modes: RangeInclusive<usize>,
    pub pool: RangeInclusive<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            tasks: 2..=5,
            modes: 1..=3,
            pool: 2..=4,
        }
    }
}

/// Builds a random application that is consistent by construction: tasks
/// get per-mode firing counts first and channel rates are derived from
/// them, so every mode has a repetition vector; channels only run from
/// lower to higher task index, so every mode is live; modes are joined in
/// a cycle, so every mode can be entered. The throughput constraint is a
/// loose placeholder the caller may tighten.
pub fn random_spec_with(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> MmdfSpec {
    let n = rng.random_range(cfg.tasks.clone());
    let k = rng.random_range(cfg.modes.clone());
    let pool = rng.random_range(cfg.pool.clone());
    let mode_names: Vec<String> = (1..=k).map(|i| format!("M{i}")).collect();

    let firings: Vec<Vec<u64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.random_range(1..=3)).collect())
        .collect();

    let mut tasks: Vec<TaskSpec> = (0..n)
        .map(|t| TaskSpec {
            name: format!("T{}", t + 1),
            ports: Vec::new(),
            wcet: mode_names
                .iter()
                .map(|m| (m.clone(), rng.random_range(1..=12)))
                .collect(),
            migration_cost: rng.random_range(0..=6),
        })
        .collect();

    let mut channels = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() >= 0.45 {
                continue;
            }
            let c = channels.len();
            let mut prod = BTreeMap::new();
            let mut cons = BTreeMap::new();
            for (m, name) in mode_names.iter().enumerate() {
                let g = firings[i][m].gcd(&firings[j][m]);
                prod.insert(name.clone(), firings[j][m] / g);
                cons.insert(name.clone(), firings[i][m] / g);
            }
            let initial_tokens = if rng.random::<f64>() < 0.15 {
                cons.clone()
            } else {
                BTreeMap::new()
            };
            tasks[i].ports.push(PortSpec {
                name: format!("o{c}"),
                direction: PortDirection::Output,
                rates: prod,
            });
            tasks[j].ports.push(PortSpec {
                name: format!("i{c}"),
                direction: PortDirection::Input,
                rates: cons,
            });
            channels.push(ChannelSpec {
                src: PortRef {
                    task: tasks[i].name.clone(),
                    port: format!("o{c}"),
                },
                dst: PortRef {
                    task: tasks[j].name.clone(),
                    port: format!("i{c}"),
                },
                initial_tokens,
            });
        }
    }

    let mut transitions = Vec::new();
    if k >= 2 {
        for i in 0..k {
            transitions.push((mode_names[i].clone(), mode_names[(i + 1) % k].clone()));
        }
        for a in 0..k {
            for b in 0..k {
                let pair = (mode_names[a].clone(), mode_names[b].clone());
                if a != b && !transitions.contains(&pair) && rng.random::<f64>() < 0.2 {
                    transitions.push(pair);
                }
            }
        }
    }

    let spec = MmdfSpec {
        tasks,
        channels,
        mtg: ModeTransitionGraph {
            modes: mode_names
                .iter()
                .map(|m| ModeSpec {
                    name: m.clone(),
                    mrc: rng.random_range(1..=5),
                })
                .collect(),
            transitions,
        },
        throughput_constraint: rat(1, 1000),
        processor_pool: pool,
        instance_mapping: false,
    };
    spec.validate().expect("generated instance must be valid");
    spec
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> MmdfSpec {
    random_spec_with(rng, &GenConfig::default())
}

/// Uniformly random processor assignment for every gene of the instance.
pub fn random_solution(rng: &mut ChaCha8Rng, spec: &MmdfSpec) -> MappingSolution {
    let layout = GeneLayout::new(spec).expect("layout");
    let genes: Vec<ProcId> = (0..layout.total_genes())
        .map(|_| rng.random_range(0..spec.processor_pool))
        .collect();
    layout.decode(spec, &genes)
}

/// Generates an instance together with a mapping that satisfies it: the
/// constraint is set to the exact sustainable rate of a random mapping
/// (with extra slack half the time), so the returned pair always analyzes
/// as feasible.
pub fn random_feasible_instance_with(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> (MmdfSpec, MappingSolution) {
    let mut spec = random_spec_with(rng, cfg);
    let solution = random_solution(rng, &spec);
    let a = analyze(&spec, &solution, DEFAULT_UNROLL).expect("analysis");

    let mut bound = Rational::zero();
    for mode in spec.mode_names() {
        let m = spec.mode(mode).unwrap();
        let d = max_trans_delay(&a.trans_delay, mode);
        let per_mode = a.schedules[mode].initiation_interval
            + d / Rational::from_integer(m.mrc as i128);
        bound = bound.max(per_mode);
    }
    let mut den = ceil_u64(bound).max(1);
    if rng.random::<f64>() < 0.5 {
        den += rng.random_range(1..=15);
    }
    spec.throughput_constraint = rat(1, den as i128);

    let a = analyze(&spec, &solution, DEFAULT_UNROLL).expect("analysis");
    assert!(
        a.feasible,
        "constraint derived from the mapping's own rate must be satisfiable"
    );
    (spec, solution)
}

pub fn random_feasible_instance(rng: &mut ChaCha8Rng) -> (MmdfSpec, MappingSolution) {
    random_feasible_instance_with(rng, &GenConfig::default())
}

/// All `n!` orderings of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let n = used.len();
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                go(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Applies a processor relabeling to one mode's mapping.
pub fn relabel(mapping: &ModeMapping, perm: &[ProcId]) -> ModeMapping {
    ModeMapping {
        per_task: mapping
            .per_task
            .iter()
            .map(|v| v.iter().map(|&p| perm[p]).collect())
            .collect(),
    }
}

/// True minimum total migration cost over every per-mode processor
/// relabeling, by trying all `pool!` permutations for each mode after the
/// first (relabeling all modes identically changes nothing, so the first
/// mode can stay fixed).
pub fn exhaustive_min_migration(spec: &MmdfSpec, solution: &MappingSolution) -> u64 {
    let modes: Vec<String> = spec.mode_names().iter().map(|s| s.to_string()).collect();
    if modes.len() <= 1 {
        return mig_cost_total(spec, solution);
    }
    let perms = permutations(spec.processor_pool);
    let free = modes.len() - 1;
    let mut choice = vec![0usize; free];
    let mut best = u64::MAX;
    loop {
        let mut cand = solution.clone();
        for (i, mode) in modes.iter().skip(1).enumerate() {
            let renamed = relabel(&cand.per_mode[mode], &perms[choice[i]]);
            cand.per_mode.insert(mode.clone(), renamed);
        }
        best = best.min(mig_cost_total(spec, &cand));

        let mut i = 0;
        loop {
            if i == free {
                return best;
            }
            choice[i] += 1;
            if choice[i] < perms.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Best achievable fitness over every mapping in the search space, by
/// plain enumeration. Exponential in genes; callers keep instances small.
pub fn exhaustive_best(spec: &MmdfSpec, unroll: u64) -> (Fitness, MappingSolution) {
    let layout = GeneLayout::new(spec).expect("layout");
    let num_genes = layout.total_genes();
    let pool = spec.processor_pool;
    let mut genes = vec![0usize; num_genes];
    let mut best: Option<(Fitness, MappingSolution)> = None;
    loop {
        let sol = layout.decode(spec, &genes);
        let (fit, _) = evaluate(spec, &sol, unroll).expect("evaluate");
        if best.as_ref().is_none_or(|(b, _)| fit < *b) {
            best = Some((fit, sol));
        }
        let mut i = 0;
        loop {
            if i == num_genes {
                return best.unwrap();
            }
            genes[i] += 1;
            if genes[i] < pool {
                break;
            }
            genes[i] = 0;
            i += 1;
        }
    }
}

/// Like [`exhaustive_best`] but restricted to mappings that are identical
/// in every mode, the search space of a no-migration strategy.
pub fn exhaustive_best_uniform(spec: &MmdfSpec, unroll: u64) -> (Fitness, MappingSolution) {
    let n = spec.tasks.len();
    let pool = spec.processor_pool;
    let mut genes = vec![0usize; n];
    let mut best: Option<(Fitness, MappingSolution)> = None;
    loop {
        let sol = MappingSolution::uniform(spec, &genes);
        let (fit, _) = evaluate(spec, &sol, unroll).expect("evaluate");
        if best.as_ref().is_none_or(|(b, _)| fit < *b) {
            best = Some((fit, sol));
        }
        let mut i = 0;
        loop {
            if i == n {
                return best.unwrap();
            }
            genes[i] += 1;
            if genes[i] < pool {
                break;
            }
            genes[i] = 0;
            i += 1;
        }
    }
}

/// Checks a produced schedule against the graph from first principles:
/// instance counts match the repetition vector, runs last exactly one
/// worst-case execution time, sit on the mapped processor, never overlap
/// on a processor, same-task instances start in index order, and a token
/// replay of the placements never drives any channel negative.
pub fn verify_schedule(
    spec: &MmdfSpec,
    mode: &str,
    mapping: &ModeMapping,
    sched: &ModeSchedule,
) -> Result<(), String> {
    let reps = spec.repetition_vector(mode).map_err(|e| e.to_string())?;
    let ends = spec.channel_ends().map_err(|e| e.to_string())?;
    let n = spec.tasks.len();

    let mut seen: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); n];
    for p in &sched.placements {
        if p.task >= n {
            return Err(format!("placement names unknown task {}", p.task));
        }
        let w = spec.wcet(p.task, mode);
        if p.finish != p.start + w {
            return Err(format!(
                "{}.{} runs [{}, {}) but its execution time is {w}",
                spec.tasks[p.task].name, p.instance, p.start, p.finish
            ));
        }
        if p.instance >= reps[p.task] {
            return Err(format!(
                "{}.{} exceeds the repetition count {}",
                spec.tasks[p.task].name, p.instance, reps[p.task]
            ));
        }
        if p.proc != mapping.proc_of(p.task, p.instance) {
            return Err(format!(
                "{}.{} placed on processor {} against its mapping",
                spec.tasks[p.task].name, p.instance, p.proc
            ));
        }
        if !seen[p.task].insert(p.instance) {
            return Err(format!(
                "{}.{} is scheduled twice",
                spec.tasks[p.task].name, p.instance
            ));
        }
    }
    for t in 0..n {
        if seen[t].len() as u64 != reps[t] {
            return Err(format!(
                "task {} fired {} times, repetition vector says {}",
                spec.tasks[t].name,
                seen[t].len(),
                reps[t]
            ));
        }
    }

    let mut by_proc: BTreeMap<ProcId, Vec<(u64, u64)>> = BTreeMap::new();
    let mut starts: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n];
    for p in &sched.placements {
        by_proc.entry(p.proc).or_default().push((p.start, p.finish));
        starts[p.task].push((p.instance, p.start));
    }
    for (proc, mut windows) in by_proc {
        windows.sort();
        for w in windows.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(format!("overlapping executions on processor {proc}"));
            }
        }
    }
    for (t, list) in starts.iter_mut().enumerate() {
        list.sort();
        for w in list.windows(2) {
            if w[0].1 > w[1].1 {
                return Err(format!(
                    "instances of task {} start out of order",
                    spec.tasks[t].name
                ));
            }
        }
    }

    // Token replay: consumption at start, production at finish, finishes
    // settle before starts at the same instant.
    let mut events: Vec<(u64, u8, usize)> = Vec::new();
    for (i, p) in sched.placements.iter().enumerate() {
        events.push((p.finish, 0, i));
        events.push((p.start, 1, i));
    }
    events.sort();
    let mut tokens: Vec<i64> = (0..spec.channels.len())
        .map(|c| spec.channel_initial(c, mode) as i64)
        .collect();
    for (_, kind, i) in events {
        let p = &sched.placements[i];
        for (ci, e) in ends.iter().enumerate() {
            let (pr, co) = spec.channel_rates(e, mode);
            if kind == 1 && e.dst_task == p.task {
                tokens[ci] -= co as i64;
                if tokens[ci] < 0 {
                    return Err(format!(
                        "{}.{} starts at {} without enough input on channel {}",
                        spec.tasks[p.task].name, p.instance, p.start, ci
                    ));
                }
            }
            if kind == 0 && e.src_task == p.task {
                tokens[ci] += pr as i64;
            }
        }
    }
    Ok(())
}

/// Minimum one-iteration makespan over every task priority order, each
/// replayed with an independent greedy executor. With few tasks this
/// searches all `n!` orders.
pub fn min_first_iteration_makespan(spec: &MmdfSpec, mode: &str, mapping: &ModeMapping) -> u64 {
    let n = spec.tasks.len();
    permutations(n)
        .iter()
        .map(|order| makespan_with_priority(spec, mode, mapping, order))
        .min()
        .expect("at least one task")
}

fn makespan_with_priority(
    spec: &MmdfSpec,
    mode: &str,
    mapping: &ModeMapping,
    priority: &[usize],
) -> u64 {
    let reps = spec.repetition_vector(mode).expect("valid mode");
    let ends = spec.channel_ends().expect("valid channels");
    let n = spec.tasks.len();
    let mut tokens: Vec<u64> = (0..spec.channels.len())
        .map(|c| spec.channel_initial(c, mode))
        .collect();
    let mut started = vec![0u64; n];
    let mut busy = vec![false; spec.processor_pool];
    // Running executions as (finish, task, proc), popped in time order.
    let mut running: BTreeSet<(u64, usize, ProcId)> = BTreeSet::new();
    let mut now = 0u64;
    let mut makespan = 0u64;

    loop {
        'starts: loop {
            for &t in priority {
                if started[t] >= reps[t] {
                    continue;
                }
                let proc = mapping.proc_of(t, started[t]);
                if busy[proc] {
                    continue;
                }
                let ready = ends.iter().enumerate().all(|(ci, e)| {
                    e.dst_task != t || tokens[ci] >= spec.channel_rates(e, mode).1
                });
                if !ready {
                    continue;
                }
                for (ci, e) in ends.iter().enumerate() {
                    if e.dst_task == t {
                        tokens[ci] -= spec.channel_rates(e, mode).1;
                    }
                }
                started[t] += 1;
                busy[proc] = true;
                running.insert((now + spec.wcet(t, mode), t, proc));
                continue 'starts;
            }
            break;
        }
        let Some(&(finish, _, _)) = running.iter().next() else {
            break;
        };
        now = finish;
        makespan = makespan.max(now);
        while let Some(&ev @ (f, t, proc)) = running.iter().next() {
            if f != now {
                break;
            }
            running.remove(&ev);
            busy[proc] = false;
            for (ci, e) in ends.iter().enumerate() {
                if e.src_task == t {
                    tokens[ci] += spec.channel_rates(e, mode).0;
                }
            }
        }
    }
    assert!(
        (0..n).all(|t| started[t] == reps[t]),
        "iteration stalled under priority order {priority:?}"
    );
    makespan
}

/// Every mode walk of at most `steps` stays from the initial mode,
/// shorter only when it hits a mode with no way out.
pub fn all_walks(spec: &MmdfSpec, steps: usize) -> Vec<Vec<String>> {
    fn go(spec: &MmdfSpec, walk: &mut Vec<String>, steps: usize, out: &mut Vec<Vec<String>>) {
        if walk.len() == steps {
            out.push(walk.clone());
            return;
        }
        let current = walk.last().unwrap().clone();
        let nexts: Vec<&String> = spec
            .mtg
            .transitions
            .iter()
            .filter(|(cm, _)| *cm == current)
            .map(|(_, nm)| nm)
            .collect();
        if nexts.is_empty() {
            out.push(walk.clone());
            return;
        }
        for nm in nexts {
            walk.push(nm.clone());
            go(spec, walk, steps, out);
            walk.pop();
        }
    }
    let mut out = Vec::new();
    let mut walk = vec![spec.mtg.modes[0].name.clone()];
    go(spec, &mut walk, steps, &mut out);
    out
}

/// Total transition delay along a mode walk.
pub fn walk_delay_sum(
    walk: &[String],
    delays: &BTreeMap<(String, String), Rational>,
) -> Rational {
    walk.windows(2)
        .map(|w| delays[&(w[0].clone(), w[1].clone())])
        .fold(Rational::zero(), |acc, d| acc + d)
}

/// Random parameters for one output-interface configuration whose
/// long-run production rate can sustain the constraint.
#[derive(Debug, Clone)]
pub struct CurveConfig {
    pub mrc: u64,
    pub ii: Rational,
    pub max_delay: Rational,
    pub thr: Rational,
}

pub fn random_curve_config(rng: &mut ChaCha8Rng) -> CurveConfig {
    let mrc = rng.random_range(1..=8u64);
    let ii = rat(rng.random_range(5..=60), rng.random_range(1..=4));
    let max_delay = if rng.random::<f64>() < 0.2 {
        Rational::zero()
    } else {
        rat(rng.random_range(0..=80), rng.random_range(1..=4))
    };
    let budget = ii + max_delay / Rational::from_integer(mrc as i128);
    let mut den = ceil_u64(budget).max(1);
    if rng.random::<f64>() < 0.5 {
        den += rng.random_range(1..=20);
    }
    CurveConfig {
        mrc,
        ii,
        max_delay,
        thr: rat(1, den as i128),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmdf_core::schedule::list_schedule;

    fn motiv() -> MmdfSpec {
        MmdfSpec::from_json_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/motiv.json"
        ))
        .unwrap()
    }

    #[test]
    fn generated_specs_validate_and_schedule() {
        let mut r = rng(11);
        for _ in 0..40 {
            let spec = random_spec(&mut r);
            let sol = random_solution(&mut r, &spec);
            let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
            for mode in spec.mode_names() {
                verify_schedule(&spec, mode, sol.mapping(mode), &a.schedules[mode]).unwrap();
            }
        }
    }

    #[test]
    fn feasible_instances_are_feasible() {
        let mut r = rng(5);
        for _ in 0..25 {
            let (spec, sol) = random_feasible_instance(&mut r);
            let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
            assert!(a.feasible, "violations: {:?}", a.violations);
        }
    }

    #[test]
    fn permutation_count_and_distinctness() {
        let perms = permutations(4);
        assert_eq!(perms.len(), 24);
        let distinct: BTreeSet<_> = perms.iter().collect();
        assert_eq!(distinct.len(), 24);
    }

    #[test]
    fn replayer_accepts_engine_schedules_on_the_bundled_graph() {
        let spec = motiv();
        for genes in [[0, 0, 1, 1], [0, 1, 2, 0], [0, 0, 0, 0]] {
            let sol = MappingSolution::uniform(&spec, &genes);
            for mode in spec.mode_names() {
                let sched = list_schedule(&spec, mode, sol.mapping(mode)).unwrap();
                verify_schedule(&spec, mode, sol.mapping(mode), &sched).unwrap();
            }
        }
    }

    #[test]
    fn replayer_rejects_a_tampered_schedule() {
        let spec = motiv();
        let sol = MappingSolution::uniform(&spec, &[0, 0, 1, 1]);
        let mut sched = list_schedule(&spec, "M1", sol.mapping("M1")).unwrap();
        sched.placements[0].start += 1;
        sched.placements[0].finish += 1;
        assert!(verify_schedule(&spec, "M1", sol.mapping("M1"), &sched).is_err());
    }

    #[test]
    fn brute_force_makespan_matches_hand_analysis() {
        let spec = motiv();
        let split = ModeMapping::uniform(&[0, 0, 1, 1]);
        assert_eq!(min_first_iteration_makespan(&spec, "M1", &split), 47);
        let sched = list_schedule(&spec, "M1", &split).unwrap();
        assert_eq!(sched.latency, 47);

        let heavy = ModeMapping::uniform(&[0, 0, 0, 1]);
        assert_eq!(min_first_iteration_makespan(&spec, "M2", &heavy), 60);
    }

    #[test]
    fn exhaustive_search_on_the_bundled_graph() {
        let spec = motiv();
        let (best, sol) = exhaustive_best(&spec, DEFAULT_UNROLL);
        assert!(best.feasible);
        assert_eq!(best.processors, 3);
        assert_eq!(best.mig_cost_total, 0);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        assert!(a.feasible);

        let (uniform_best, _) = exhaustive_best_uniform(&spec, DEFAULT_UNROLL);
        assert!(uniform_best.feasible);
        assert_eq!(uniform_best.processors, 3);
    }

    #[test]
    fn relabeling_oracle_finds_the_zero_migration_alignment() {
        let spec = motiv();
        let mut sol = MappingSolution::uniform(&spec, &[0, 0, 1, 2]);
        // Rotate the second mode's labels: same partition, nonzero cost.
        let rotated = relabel(&sol.per_mode["M2"], &[1, 2, 0]);
        sol.per_mode.insert("M2".to_string(), rotated);
        assert!(mig_cost_total(&spec, &sol) > 0);
        assert_eq!(exhaustive_min_migration(&spec, &sol), 0);
    }

    #[test]
    fn walks_cover_the_alternating_graph() {
        let spec = motiv();
        let walks = all_walks(&spec, 4);
        assert_eq!(
            walks,
            vec![vec![
                "M1".to_string(),
                "M2".to_string(),
                "M1".to_string(),
                "M2".to_string()
            ]]
        );
    }

    #[test]
    fn curve_configs_have_sustainable_slopes() {
        let mut r = rng(3);
        for _ in 0..200 {
            let c = random_curve_config(&mut r);
            let period = c.max_delay + Rational::from_integer(c.mrc as i128) * c.ii;
            let rate = Rational::from_integer(c.mrc as i128) / period;
            assert!(c.thr <= rate);
        }
    }
}

//! Mode-transition analysis.
//!
//! A mode switch is blocking: the old mode drains, migrated task state is
//! copied (paying each moved task's migration cost), and only then does the
//! new mode start filling its pipeline. The output therefore goes silent
//! for the migration time plus the new mode's fill time (latency minus
//! initiation interval). This module computes those per-transition delays,
//! the worst-case delay into each mode, the tightened per-mode throughput
//! each mode must sustain so the long-run average still meets the
//! constraint, and the output buffer size that rides out the silence.
//!
//! Everything is exact rational arithmetic; ceilings are taken on exact
//! values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MmdfSpec, ModelError};
use crate::rational::{ceil_u64, Rational, RationalRepr};
use crate::schedule::{list_schedule_unrolled, ModeMapping, ModeSchedule, ProcId, ScheduleError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("failed to parse mapping: {0}")]
    Parse(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("mapping does not fit the graph: {0}")]
    Solution(String),
}

/// Processor assignments for every mode, the unit the optimizer searches
/// over and the analysis consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingSolution {
    pub per_mode: BTreeMap<String, ModeMapping>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Assignment {
    Single(ProcId),
    PerInstance(Vec<ProcId>),
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    modes: BTreeMap<String, BTreeMap<String, Assignment>>,
}

impl MappingSolution {
    pub fn mapping(&self, mode: &str) -> &ModeMapping {
        &self.per_mode[mode]
    }

    /// Same processor vector for every task in every mode.
    pub fn uniform(spec: &MmdfSpec, assign: &[ProcId]) -> Self {
        let per_mode = spec
            .mode_names()
            .into_iter()
            .map(|m| (m.to_string(), ModeMapping::uniform(assign)))
            .collect();
        MappingSolution { per_mode }
    }

    pub fn from_json_str(spec: &MmdfSpec, s: &str) -> Result<Self, AnalysisError> {
        let file: SolutionFile =
            serde_json::from_str(s).map_err(|e| AnalysisError::Parse(e.to_string()))?;
        let mut per_mode = BTreeMap::new();
        for mode in spec.mode_names() {
            let tasks = file.modes.get(mode).ok_or_else(|| {
                AnalysisError::Solution(format!("no assignment for mode {mode}"))
            })?;
            let mut per_task = Vec::with_capacity(spec.tasks.len());
            for task in &spec.tasks {
                let procs = match tasks.get(&task.name) {
                    Some(Assignment::Single(p)) => vec![*p],
                    Some(Assignment::PerInstance(ps)) => ps.clone(),
                    None => {
                        return Err(AnalysisError::Solution(format!(
                            "mode {mode}: no processor for task {}",
                            task.name
                        )))
                    }
                };
                per_task.push(procs);
            }
            per_mode.insert(mode.to_string(), ModeMapping { per_task });
        }
        for mode in file.modes.keys() {
            if spec.mode_index(mode).is_none() {
                return Err(AnalysisError::Solution(format!("unknown mode {mode}")));
            }
        }
        for (mode, tasks) in &file.modes {
            for name in tasks.keys() {
                if spec.task_index(name).is_none() {
                    return Err(AnalysisError::Solution(format!(
                        "mode {mode}: unknown task {name}"
                    )));
                }
            }
        }
        Ok(MappingSolution { per_mode })
    }

    pub fn from_json_file(spec: &MmdfSpec, path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(spec, &text)
    }

    pub fn to_json_string(&self, spec: &MmdfSpec) -> String {
        let modes = self
            .per_mode
            .iter()
            .map(|(mode, mapping)| {
                let tasks = spec
                    .tasks
                    .iter()
                    .enumerate()
                    .map(|(t, task)| {
                        let procs = &mapping.per_task[t];
                        let value = if procs.len() == 1 {
                            Assignment::Single(procs[0])
                        } else {
                            Assignment::PerInstance(procs.clone())
                        };
                        (task.name.clone(), value)
                    })
                    .collect();
                (mode.clone(), tasks)
            })
            .collect();
        serde_json::to_string_pretty(&SolutionFile { modes }).expect("mapping serializes")
    }

    /// Tasks with at least one firing on `proc` in `mode` (the mapping set
    /// the migration-cost and similarity definitions range over).
    pub fn map_set(&self, mode: &str, proc: ProcId) -> BTreeSet<usize> {
        self.per_mode[mode]
            .per_task
            .iter()
            .enumerate()
            .filter(|(_, procs)| procs.contains(&proc))
            .map(|(t, _)| t)
            .collect()
    }

    fn check(&self, spec: &MmdfSpec) -> Result<(), AnalysisError> {
        for mode in spec.mode_names() {
            if !self.per_mode.contains_key(mode) {
                return Err(AnalysisError::Solution(format!(
                    "no assignment for mode {mode}"
                )));
            }
        }
        Ok(())
    }
}

/// Total migration cost paid when switching from `cm` to `nm`: for every
/// processor, each task present there in the next mode but not in the
/// current one must have its state moved in.
pub fn mig_cost(spec: &MmdfSpec, solution: &MappingSolution, cm: &str, nm: &str) -> u64 {
    let from = solution.mapping(cm);
    let to = solution.mapping(nm);
    let mut total = 0;
    for p in 0..spec.processor_pool {
        for t in 0..spec.tasks.len() {
            if to.per_task[t].contains(&p) && !from.per_task[t].contains(&p) {
                total += spec.tasks[t].migration_cost;
            }
        }
    }
    total
}

/// Number of tasks mapped on processor `p_i` in mode `cm` that are also
/// mapped on `p_j` in mode `nm`.
pub fn similarity(
    spec: &MmdfSpec,
    solution: &MappingSolution,
    cm: &str,
    p_i: ProcId,
    nm: &str,
    p_j: ProcId,
) -> usize {
    let from = solution.mapping(cm);
    let to = solution.mapping(nm);
    (0..spec.tasks.len())
        .filter(|&t| from.per_task[t].contains(&p_i) && to.per_task[t].contains(&p_j))
        .count()
}

/// Sum of per-transition migration costs over every edge of the mode
/// transition graph.
pub fn mig_cost_total(spec: &MmdfSpec, solution: &MappingSolution) -> u64 {
    spec.mtg
        .transitions
        .iter()
        .map(|(cm, nm)| mig_cost(spec, solution, cm, nm))
        .sum()
}

/// Output silence caused by one transition: migration time plus the fill
/// time of the target mode's pipeline (latency minus initiation interval).
pub fn trans_delay(mig: u64, sched_nm: &ModeSchedule) -> Rational {
    let latency = Rational::from_integer(sched_nm.latency as i128);
    debug_assert!(latency >= sched_nm.initiation_interval);
    Rational::from_integer(mig as i128) + latency - sched_nm.initiation_interval
}

/// Worst-case transition delay into `mode` over its incoming transitions.
/// A mode nothing transitions into pays no entry cost.
pub fn max_trans_delay(delays: &BTreeMap<(String, String), Rational>, mode: &str) -> Rational {
    delays
        .iter()
        .filter(|((_, nm), _)| nm == mode)
        .map(|(_, d)| *d)
        .max()
        .unwrap_or_else(|| Rational::from_integer(0))
}

/// Throughput a mode must sustain while resident so the long-run average
/// still meets the constraint despite losing `max_delay` per stay of
/// `mrc` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThrRequire {
    Finite(Rational),
    /// The transition delay eats the mode's entire time budget; no
    /// schedule of the mode can compensate.
    Infeasible,
}

impl ThrRequire {
    pub fn as_finite(&self) -> Option<Rational> {
        match self {
            ThrRequire::Finite(r) => Some(*r),
            ThrRequire::Infeasible => None,
        }
    }
}

impl fmt::Display for ThrRequire {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThrRequire::Finite(r) => write!(f, "{r}"),
            ThrRequire::Infeasible => write!(f, "infeasible"),
        }
    }
}

impl Serialize for ThrRequire {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ThrRequire::Finite(r) => RationalRepr::from(*r).serialize(s),
            ThrRequire::Infeasible => s.serialize_str("infeasible"),
        }
    }
}

impl<'de> Deserialize<'de> for ThrRequire {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl<'de> serde::de::Visitor<'de> for Visitor {
            type Value = ThrRequire;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a {num, den} rational or the string \"infeasible\"")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == "infeasible" {
                    Ok(ThrRequire::Infeasible)
                } else {
                    Err(E::custom(format!(
                        "unknown throughput requirement marker `{v}`"
                    )))
                }
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(
                self,
                map: A,
            ) -> Result<Self::Value, A::Error> {
                let repr =
                    RationalRepr::deserialize(serde::de::value::MapAccessDeserializer::new(map))?;
                Rational::try_from(repr)
                    .map(ThrRequire::Finite)
                    .map_err(serde::de::Error::custom)
            }
        }

        d.deserialize_any(Visitor)
    }
}

pub fn thr_require(thr_const: Rational, mrc: u64, max_delay: Rational) -> ThrRequire {
    let mrc = Rational::from_integer(mrc as i128);
    let budget = mrc - max_delay * thr_const;
    if budget <= Rational::from_integer(0) {
        ThrRequire::Infeasible
    } else {
        ThrRequire::Finite(thr_const * mrc / budget)
    }
}

/// Longest output silence plus the following output interval, maximized
/// over all transitions; the buffer must cover this span at the consumer's
/// drain rate. Without transitions the steady interval itself governs.
pub fn max_interval_overall(
    schedules: &BTreeMap<String, ModeSchedule>,
    delays: &BTreeMap<(String, String), Rational>,
) -> Rational {
    let steady = schedules
        .values()
        .map(|s| s.initiation_interval)
        .max()
        .unwrap_or_else(|| Rational::from_integer(0));
    delays
        .iter()
        .map(|((_, nm), d)| *d + schedules[nm].initiation_interval)
        .max()
        .unwrap_or(steady)
}

/// Minimum output buffer size: the ceiling of the worst production gap
/// times the consumer rate.
pub fn buffer_size(
    thr_const: Rational,
    schedules: &BTreeMap<String, ModeSchedule>,
    delays: &BTreeMap<(String, String), Rational>,
) -> u64 {
    ceil_u64(max_interval_overall(schedules, delays) * thr_const).max(1)
}

/// Full analysis of one mapping solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub schedules: BTreeMap<String, ModeSchedule>,
    pub trans_delay: BTreeMap<(String, String), Rational>,
    pub max_trans_delay: BTreeMap<String, Rational>,
    pub thr_require: BTreeMap<String, ThrRequire>,
    pub mig_cost_total: u64,
    pub output_buffer_size: u64,
    pub max_interval_overall: Rational,
    pub processors: usize,
    pub feasible: bool,
    pub violations: Vec<String>,
}

/// Wire form of an [`Analysis`], written as the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionAnalysisReport {
    pub trans_delay: BTreeMap<String, RationalRepr>,
    pub max_trans_delay: BTreeMap<String, RationalRepr>,
    pub thr_require: BTreeMap<String, ThrRequire>,
    pub mig_cost_total: u64,
    pub output_buffer_size: u64,
    pub max_interval_overall: RationalRepr,
    pub modes: BTreeMap<String, ModeReportEntry>,
    pub processors: usize,
    pub feasible: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReportEntry {
    pub latency: u64,
    pub initiation_interval: RationalRepr,
    pub used_processors: Vec<ProcId>,
}

impl Analysis {
    pub fn report(&self) -> TransitionAnalysisReport {
        TransitionAnalysisReport {
            trans_delay: self
                .trans_delay
                .iter()
                .map(|((cm, nm), d)| (format!("{cm}->{nm}"), RationalRepr::from(*d)))
                .collect(),
            max_trans_delay: self
                .max_trans_delay
                .iter()
                .map(|(m, d)| (m.clone(), RationalRepr::from(*d)))
                .collect(),
            thr_require: self.thr_require.clone(),
            mig_cost_total: self.mig_cost_total,
            output_buffer_size: self.output_buffer_size,
            max_interval_overall: RationalRepr::from(self.max_interval_overall),
            modes: self
                .schedules
                .iter()
                .map(|(m, s)| {
                    (
                        m.clone(),
                        ModeReportEntry {
                            latency: s.latency,
                            initiation_interval: RationalRepr::from(s.initiation_interval),
                            used_processors: s.used_processors().into_iter().collect(),
                        },
                    )
                })
                .collect(),
            processors: self.processors,
            feasible: self.feasible,
            violations: self.violations.clone(),
        }
    }
}

/// Schedules every mode of `solution`, derives all transition delays and
/// requirements, and checks feasibility of the whole multi-mode system.
pub fn analyze(
    spec: &MmdfSpec,
    solution: &MappingSolution,
    unroll: u64,
) -> Result<Analysis, AnalysisError> {
    solution.check(spec)?;
    let mut schedules = BTreeMap::new();
    for mode in spec.mode_names() {
        let sched = list_schedule_unrolled(spec, mode, solution.mapping(mode), unroll)?;
        schedules.insert(mode.to_string(), sched);
    }

    let mut delays = BTreeMap::new();
    for (cm, nm) in &spec.mtg.transitions {
        let mig = mig_cost(spec, solution, cm, nm);
        delays.insert((cm.clone(), nm.clone()), trans_delay(mig, &schedules[nm]));
    }

    let mut max_delays = BTreeMap::new();
    let mut requirements = BTreeMap::new();
    let mut violations = Vec::new();
    for mode in spec.mode_names() {
        let d = max_trans_delay(&delays, mode);
        max_delays.insert(mode.to_string(), d);
        let mrc = spec.mode(mode).expect("validated mode").mrc;
        let req = thr_require(spec.throughput_constraint, mrc, d);
        match req {
            ThrRequire::Finite(r) => {
                let thr = schedules[mode].throughput();
                if thr < r {
                    violations.push(format!(
                        "mode {mode}: schedule throughput {thr} is below the required {r}"
                    ));
                }
            }
            ThrRequire::Infeasible => {
                violations.push(format!(
                    "mode {mode}: transition delay consumes the entire throughput budget"
                ));
            }
        }
        requirements.insert(mode.to_string(), req);
    }

    let processors = schedules
        .values()
        .map(|s| s.used_processors().len())
        .max()
        .unwrap_or(0);

    Ok(Analysis {
        max_interval_overall: max_interval_overall(&schedules, &delays),
        output_buffer_size: buffer_size(spec.throughput_constraint, &schedules, &delays),
        mig_cost_total: mig_cost_total(spec, solution),
        processors,
        feasible: violations.is_empty(),
        violations,
        trans_delay: delays,
        max_trans_delay: max_delays,
        thr_require: requirements,
        schedules,
    })
}

/// Periods of the worst-case production pattern covered by generated
/// arrival curves.
pub const CURVE_PERIODS: u64 = 4;

/// Cumulative-count staircases over window length: the fewest samples the
/// application is guaranteed to produce, against the most the consumer can
/// drain. Both are right-continuous breakpoint lists (window length,
/// count).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalCurves {
    pub input_min: Vec<(Rational, u64)>,
    pub output_max: Vec<(Rational, u64)>,
}

/// Builds the two curves for a mode that stays `mrc` iterations, produces
/// every `ii` after an entry silence of `max_delay`, and feeds a consumer
/// draining at `thr`. The worst window starts right after the production
/// preceding the silence; the pattern repeats every `max_delay + mrc*ii`.
/// Curves are truncated after [`CURVE_PERIODS`] patterns, enough to expose
/// the worst gap whenever the production slope keeps up with the consumer.
pub fn arrival_curves(
    mrc: u64,
    ii: Rational,
    max_delay: Rational,
    thr: Rational,
) -> ArrivalCurves {
    let period = max_delay + Rational::from_integer(mrc as i128) * ii;
    let horizon = Rational::from_integer(CURVE_PERIODS as i128) * period;

    let mut input_min = vec![(Rational::from_integer(0), 0)];
    let mut count = 0;
    for j in 0..CURVE_PERIODS {
        let base = Rational::from_integer(j as i128) * period + max_delay;
        for k in 1..=mrc {
            count += 1;
            input_min.push((base + Rational::from_integer(k as i128) * ii, count));
        }
    }

    let mut output_max = Vec::new();
    let mut j = 0u64;
    loop {
        let t = Rational::from_integer(j as i128) / thr;
        if t > horizon {
            break;
        }
        output_max.push((t, j + 1));
        j += 1;
    }

    ArrivalCurves {
        input_min,
        output_max,
    }
}

impl ArrivalCurves {
    fn value_at(curve: &[(Rational, u64)], t: Rational, strictly_before: bool) -> u64 {
        curve
            .iter()
            .take_while(|(bp, _)| if strictly_before { *bp < t } else { *bp <= t })
            .last()
            .map(|(_, v)| *v)
            .unwrap_or(0)
    }

    /// Largest vertical distance by which consumption can exceed
    /// production; the buffer must pre-hold this many samples.
    pub fn max_vertical_gap(&self) -> u64 {
        let mut gap = 0i128;
        for (t, _) in self.input_min.iter().skip(1) {
            let out = Self::value_at(&self.output_max, *t, true) as i128;
            let inp = Self::value_at(&self.input_min, *t, true) as i128;
            gap = gap.max(out - inp);
        }
        for (t, v) in &self.output_max {
            let inp = Self::value_at(&self.input_min, *t, false) as i128;
            gap = gap.max(*v as i128 - inp);
        }
        u64::try_from(gap.max(0)).expect("gap fits u64")
    }
}

//! Per-mode list scheduling and steady-state timing.
//!
//! Given a mapping of task firings to processors, `list_schedule` builds
//! the static schedule of one graph iteration: firings become ready when
//! their input tokens exist, and each free processor runs the ready firing
//! with the highest priority. Priority is the static upward rank (longest
//! WCET path to a sink over channels that carry no initial tokens), with
//! ties broken by task name, so results are fully deterministic.
//!
//! The initiation interval is measured by replaying the fixed per-processor
//! firing order for `unroll` iterations self-timed, letting iterations
//! overlap, and detecting when the gaps between iteration completions
//! become periodic. The interval between consecutive iteration completions
//! is what the output observes, so that gap is the schedule's steady-state
//! output spacing. If no period shows up within the unroll window the
//! latency is used instead, which never overstates throughput.

use std::collections::BTreeSet;

use num_traits::Zero;
use thiserror::Error;

use crate::model::{ChannelEnds, MmdfSpec, ModelError};
use crate::rational::Rational;

pub type ProcId = usize;

/// Iterations replayed when measuring the initiation interval.
pub const DEFAULT_UNROLL: u64 = 20;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("mapping invalid: {0}")]
    InvalidMapping(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mode {0}: execution stalled, no firing can make progress")]
    Stalled(String),
}

/// Processor assignment for every firing of a mode.
///
/// `per_task[t]` holds either one processor (all firings of task `t` share
/// it) or one processor per firing of the iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeMapping {
    pub per_task: Vec<Vec<ProcId>>,
}

impl ModeMapping {
    /// One shared processor per task.
    pub fn uniform(assign: &[ProcId]) -> Self {
        ModeMapping {
            per_task: assign.iter().map(|&p| vec![p]).collect(),
        }
    }

    pub fn proc_of(&self, task: usize, instance: u64) -> ProcId {
        let procs = &self.per_task[task];
        if procs.len() == 1 {
            procs[0]
        } else {
            procs[instance as usize]
        }
    }

    fn check(&self, spec: &MmdfSpec, reps: &[u64]) -> Result<(), ScheduleError> {
        if self.per_task.len() != spec.tasks.len() {
            return Err(ScheduleError::InvalidMapping(format!(
                "mapping covers {} tasks, spec has {}",
                self.per_task.len(),
                spec.tasks.len()
            )));
        }
        for (t, procs) in self.per_task.iter().enumerate() {
            let n = procs.len() as u64;
            if n != 1 && n != reps[t] {
                return Err(ScheduleError::InvalidMapping(format!(
                    "task {} needs 1 or {} processor entries, got {}",
                    spec.tasks[t].name, reps[t], n
                )));
            }
            for &p in procs {
                if p >= spec.processor_pool {
                    return Err(ScheduleError::InvalidMapping(format!(
                        "task {} mapped to processor {} outside pool of {}",
                        spec.tasks[t].name, p, spec.processor_pool
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One executed firing in the static schedule of a single iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub task: usize,
    pub instance: u64,
    pub proc: ProcId,
    pub start: u64,
    pub finish: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSchedule {
    pub mode: String,
    /// Sorted by (proc, start).
    pub placements: Vec<Placement>,
    /// Time from iteration start to its last finish; the delay until the
    /// mode's first output after entering it.
    pub latency: u64,
    /// Steady-state spacing between iteration completions.
    pub initiation_interval: Rational,
}

impl ModeSchedule {
    pub fn used_processors(&self) -> BTreeSet<ProcId> {
        self.placements.iter().map(|p| p.proc).collect()
    }

    pub fn throughput(&self) -> Rational {
        self.initiation_interval.recip()
    }
}

/// Rates, tokens and priorities of one mode, resolved to indices.
struct ModeCtx {
    ends: Vec<ChannelEnds>,
    reps: Vec<u64>,
    prod: Vec<u64>,
    cons: Vec<u64>,
    initial: Vec<u64>,
    wcet: Vec<u64>,
    in_channels: Vec<Vec<usize>>,
    rank: Vec<u64>,
}

impl ModeCtx {
    fn build(spec: &MmdfSpec, mode: &str) -> Result<Self, ScheduleError> {
        if spec.mode_index(mode).is_none() {
            return Err(ScheduleError::InvalidParameter(format!("unknown mode {mode}")));
        }
        let ends = spec.channel_ends()?;
        let reps = spec.repetition_vector(mode)?;
        let n = spec.tasks.len();
        let mut prod = Vec::with_capacity(ends.len());
        let mut cons = Vec::with_capacity(ends.len());
        let mut initial = Vec::with_capacity(ends.len());
        let mut in_channels: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (ci, e) in ends.iter().enumerate() {
            let (p, c) = spec.channel_rates(e, mode);
            prod.push(p);
            cons.push(c);
            initial.push(spec.channel_initial(ci, mode));
            in_channels[e.dst_task].push(ci);
        }
        let wcet: Vec<u64> = (0..n).map(|t| spec.wcet(t, mode)).collect();
        let rank = upward_rank(n, &ends, &initial, &wcet);
        Ok(ModeCtx {
            ends,
            reps,
            prod,
            cons,
            initial,
            wcet,
            in_channels,
            rank,
        })
    }

    fn tokens_ready(&self, task: usize, tokens: &[u64]) -> bool {
        self.in_channels[task]
            .iter()
            .all(|&ci| tokens[ci] >= self.cons[ci])
    }

    fn consume(&self, task: usize, tokens: &mut [u64]) {
        for &ci in &self.in_channels[task] {
            tokens[ci] -= self.cons[ci];
        }
    }

    fn produce(&self, task: usize, tokens: &mut [u64]) {
        for (ci, e) in self.ends.iter().enumerate() {
            if e.src_task == task {
                tokens[ci] += self.prod[ci];
            }
        }
    }
}

/// Longest WCET path to a sink over channels without initial tokens.
/// Channels holding tokens impose no start-of-iteration ordering, so they
/// are skipped; validation guarantees the remaining edges form a DAG.
fn upward_rank(n: usize, ends: &[ChannelEnds], initial: &[u64], wcet: &[u64]) -> Vec<u64> {
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (ci, e) in ends.iter().enumerate() {
        if initial[ci] == 0 && e.src_task != e.dst_task {
            succ[e.src_task].push(e.dst_task);
            indeg[e.dst_task] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&t| indeg[t] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let t = order[head];
        head += 1;
        for &s in &succ[t] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                order.push(s);
            }
        }
    }
    let mut rank = wcet.to_vec();
    for &t in order.iter().rev() {
        let best_succ = succ[t].iter().map(|&s| rank[s]).max().unwrap_or(0);
        rank[t] = wcet[t] + best_succ;
    }
    rank
}

pub fn list_schedule(
    spec: &MmdfSpec,
    mode: &str,
    mapping: &ModeMapping,
) -> Result<ModeSchedule, ScheduleError> {
    list_schedule_unrolled(spec, mode, mapping, DEFAULT_UNROLL)
}

pub fn list_schedule_unrolled(
    spec: &MmdfSpec,
    mode: &str,
    mapping: &ModeMapping,
    unroll: u64,
) -> Result<ModeSchedule, ScheduleError> {
    if unroll < 2 {
        return Err(ScheduleError::InvalidParameter(
            "unroll must be at least 2".to_string(),
        ));
    }
    let ctx = ModeCtx::build(spec, mode)?;
    mapping.check(spec, &ctx.reps)?;

    let placements = schedule_first_iteration(spec, &ctx, mapping, mode)?;
    let latency = placements.iter().map(|p| p.finish).max().unwrap_or(0);

    let mut orders: Vec<Vec<(usize, u64)>> = vec![Vec::new(); spec.processor_pool];
    for p in &placements {
        orders[p.proc].push((p.task, p.instance));
    }
    let completions = replay_fixed_order(&ctx, &orders, unroll, mode)?;
    let initiation_interval = detect_interval(&completions, latency);

    Ok(ModeSchedule {
        mode: mode.to_string(),
        placements,
        latency,
        initiation_interval,
    })
}

/// Latency and initiation interval of the mapping's schedule, with an
/// explicit unroll depth for the steady-state measurement.
pub fn steady_state_metrics(
    spec: &MmdfSpec,
    mode: &str,
    mapping: &ModeMapping,
    unroll: u64,
) -> Result<(u64, Rational), ScheduleError> {
    let s = list_schedule_unrolled(spec, mode, mapping, unroll)?;
    Ok((s.latency, s.initiation_interval))
}

fn schedule_first_iteration(
    spec: &MmdfSpec,
    ctx: &ModeCtx,
    mapping: &ModeMapping,
    mode: &str,
) -> Result<Vec<Placement>, ScheduleError> {
    let n = spec.tasks.len();
    let mut tokens = ctx.initial.clone();
    let mut next_instance = vec![0u64; n];
    let mut busy_until = vec![0u64; spec.processor_pool];
    let mut pending: Vec<(u64, usize)> = Vec::new(); // (finish, task)
    let mut placements = Vec::new();
    let mut remaining: u64 = ctx.reps.iter().sum();
    let mut now = 0u64;

    while remaining > 0 {
        loop {
            // Highest-priority firing that has tokens and a free processor.
            let candidate = (0..n)
                .filter(|&t| next_instance[t] < ctx.reps[t])
                .filter(|&t| busy_until[mapping.proc_of(t, next_instance[t])] <= now)
                .filter(|&t| ctx.tokens_ready(t, &tokens))
                .max_by(|&a, &b| {
                    ctx.rank[a]
                        .cmp(&ctx.rank[b])
                        .then_with(|| spec.tasks[b].name.cmp(&spec.tasks[a].name))
                });
            let Some(t) = candidate else { break };
            let instance = next_instance[t];
            let proc = mapping.proc_of(t, instance);
            ctx.consume(t, &mut tokens);
            let finish = now + ctx.wcet[t];
            busy_until[proc] = finish;
            pending.push((finish, t));
            placements.push(Placement {
                task: t,
                instance,
                proc,
                start: now,
                finish,
            });
            next_instance[t] += 1;
            remaining -= 1;
        }
        if remaining == 0 {
            break;
        }
        let Some(&(next_time, _)) = pending.iter().min_by_key(|(f, _)| *f) else {
            return Err(ScheduleError::Stalled(mode.to_string()));
        };
        now = next_time;
        let mut i = 0;
        while i < pending.len() {
            if pending[i].0 <= now {
                let (_, t) = pending.swap_remove(i);
                ctx.produce(t, &mut tokens);
            } else {
                i += 1;
            }
        }
    }
    placements.sort_by_key(|p| (p.proc, p.start));
    Ok(placements)
}

/// Replays the per-processor firing order over `unroll` iterations with
/// tokens carried across iteration boundaries, and returns the completion
/// time of each iteration.
fn replay_fixed_order(
    ctx: &ModeCtx,
    orders: &[Vec<(usize, u64)>],
    unroll: u64,
    mode: &str,
) -> Result<Vec<u64>, ScheduleError> {
    let procs = orders.len();
    let mut tokens = ctx.initial.clone();
    let mut head = vec![0usize; procs]; // position within the unrolled stream
    let mut busy_until = vec![0u64; procs];
    // (finish, task, iteration)
    let mut pending: Vec<(u64, usize, u64)> = Vec::new();
    let mut completion = vec![0u64; unroll as usize];
    let mut now = 0u64;
    let total: usize = orders.iter().map(|o| o.len() * unroll as usize).sum();
    let mut done = 0usize;

    while done < total {
        let mut started = true;
        while started {
            started = false;
            for p in 0..procs {
                if orders[p].is_empty() || busy_until[p] > now {
                    continue;
                }
                let pos = head[p];
                if pos >= orders[p].len() * unroll as usize {
                    continue;
                }
                let iteration = (pos / orders[p].len()) as u64;
                let (task, _instance) = orders[p][pos % orders[p].len()];
                if !ctx.tokens_ready(task, &tokens) {
                    continue;
                }
                ctx.consume(task, &mut tokens);
                let finish = now + ctx.wcet[task];
                busy_until[p] = finish;
                pending.push((finish, task, iteration));
                head[p] = pos + 1;
                started = true;
            }
        }
        if done == total {
            break;
        }
        let Some(&(next_time, _, _)) = pending.iter().min_by_key(|(f, _, _)| *f) else {
            if done < total {
                return Err(ScheduleError::Stalled(mode.to_string()));
            }
            break;
        };
        now = next_time;
        let mut i = 0;
        while i < pending.len() {
            if pending[i].0 <= now {
                let (finish, task, iteration) = pending.swap_remove(i);
                ctx.produce(task, &mut tokens);
                let slot = &mut completion[iteration as usize];
                *slot = (*slot).max(finish);
                done += 1;
            } else {
                i += 1;
            }
        }
    }
    Ok(completion)
}

/// Finds the smallest period `q` over which the completion gaps repeat in
/// the tail of the replay and returns their mean. Falls back to `latency`
/// when nothing periodic shows up or the detected interval exceeds it.
fn detect_interval(completions: &[u64], latency: u64) -> Rational {
    let diffs: Vec<u64> = completions.windows(2).map(|w| w[1] - w[0]).collect();
    let latency_r = Rational::from_integer(latency as i128);
    if diffs.is_empty() {
        return latency_r;
    }
    let m = diffs.len();
    for q in 1..=m / 2 {
        let window = &diffs[m - 2 * q..];
        if (0..q).all(|i| window[i] == window[i + q]) {
            let sum: u64 = window[q..].iter().sum();
            let ii = Rational::new(sum as i128, q as i128);
            if ii <= latency_r && !ii.is_zero() {
                return ii;
            }
        }
    }
    latency_r
}

/// Plain-text Gantt rendering of one mode's schedule. One line per used
/// processor; every firing appears as `Task.instance[start,finish)`.
pub fn gantt_text(spec: &MmdfSpec, schedule: &ModeSchedule) -> String {
    let mut out = String::new();
    out.push_str(&format!("mode {}\n", schedule.mode));
    out.push_str(&format!("latency {}\n", schedule.latency));
    out.push_str(&format!("initiation_interval {}\n", schedule.initiation_interval));
    for proc in schedule.used_processors() {
        let entries: Vec<String> = schedule
            .placements
            .iter()
            .filter(|p| p.proc == proc)
            .map(|p| {
                format!(
                    "{}.{}[{},{})",
                    spec.tasks[p.task].name, p.instance, p.start, p.finish
                )
            })
            .collect();
        out.push_str(&format!("p{}: {}\n", proc, entries.join(" ")));
    }
    out
}

/// SVG rendering of one mode's schedule, one row per used processor.
pub fn gantt_svg(spec: &MmdfSpec, schedule: &ModeSchedule) -> String {
    const PALETTE: [&str; 8] = [
        "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
    ];
    let row_h = 28u64;
    let label_w = 40u64;
    let span = schedule.latency.max(1);
    let procs: Vec<ProcId> = schedule.used_processors().into_iter().collect();
    let height = row_h * (procs.len() as u64 + 1);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" font-family=\"monospace\" font-size=\"10\">\n",
        label_w + span + 10,
        height
    ));
    svg.push_str(&format!(
        "<text x=\"2\" y=\"12\">mode {} latency {} ii {}</text>\n",
        schedule.mode, schedule.latency, schedule.initiation_interval
    ));
    for (row, &proc) in procs.iter().enumerate() {
        let y = row_h * (row as u64 + 1);
        svg.push_str(&format!(
            "<text x=\"2\" y=\"{}\">p{}</text>\n",
            y + row_h / 2 + 4,
            proc
        ));
        for p in schedule.placements.iter().filter(|p| p.proc == proc) {
            let color = PALETTE[p.task % PALETTE.len()];
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#333\"/>\n",
                label_w + p.start,
                y + 2,
                p.finish - p.start,
                row_h - 4,
                color
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"#fff\">{}.{}</text>\n",
                label_w + p.start + 2,
                y + row_h / 2 + 4,
                spec.tasks[p.task].name,
                p.instance
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MmdfSpec;
    use crate::rational::rat;

    fn single_task() -> MmdfSpec {
        MmdfSpec::from_json_str(
            r#"{
  "tasks": [{"name": "T", "wcet": {"M": 10}}],
  "channels": [],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 20},
  "processor_pool": 1
}"#,
        )
        .unwrap()
    }

    fn two_independent() -> MmdfSpec {
        MmdfSpec::from_json_str(
            r#"{
  "tasks": [
    {"name": "A", "wcet": {"M": 5}},
    {"name": "B", "wcet": {"M": 7}}
  ],
  "channels": [],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 20},
  "processor_pool": 2
}"#,
        )
        .unwrap()
    }

    fn chain_10_10() -> MmdfSpec {
        MmdfSpec::from_json_str(
            r#"{
  "tasks": [
    {"name": "A", "wcet": {"M": 10},
     "ports": [{"name": "out", "direction": "output", "rates": {"M": 1}}]},
    {"name": "B", "wcet": {"M": 10},
     "ports": [{"name": "in", "direction": "input", "rates": {"M": 1}}]}
  ],
  "channels": [{"src": "A.out", "dst": "B.in"}],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 20},
  "processor_pool": 2
}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_task_latency_equals_interval() {
        let spec = single_task();
        let s = list_schedule(&spec, "M", &ModeMapping::uniform(&[0])).unwrap();
        assert_eq!(s.latency, 10);
        assert_eq!(s.initiation_interval, rat(10, 1));
        assert_eq!(s.placements.len(), 1);
        assert_eq!(s.placements[0].start, 0);
    }

    #[test]
    fn independent_tasks_on_two_processors() {
        let spec = two_independent();
        let (latency, ii) = steady_state_metrics(&spec, "M", &ModeMapping::uniform(&[0, 1]), 20).unwrap();
        assert_eq!(latency, 7);
        assert_eq!(ii, rat(7, 1));
    }

    #[test]
    fn pipelined_chain_overlaps_iterations() {
        let spec = chain_10_10();
        let (latency, ii) = steady_state_metrics(&spec, "M", &ModeMapping::uniform(&[0, 1]), 20).unwrap();
        assert_eq!(latency, 20);
        assert_eq!(ii, rat(10, 1));
    }

    #[test]
    fn serial_mapping_cannot_overlap() {
        let spec = chain_10_10();
        let s = list_schedule(&spec, "M", &ModeMapping::uniform(&[0, 0])).unwrap();
        assert_eq!(s.latency, 20);
        assert_eq!(s.initiation_interval, rat(20, 1));
    }

    #[test]
    fn schedule_is_deterministic() {
        let spec = chain_10_10();
        let m = ModeMapping::uniform(&[0, 1]);
        let a = list_schedule(&spec, "M", &m).unwrap();
        let b = list_schedule(&spec, "M", &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unroll_below_two_rejected() {
        let spec = single_task();
        let err = steady_state_metrics(&spec, "M", &ModeMapping::uniform(&[0]), 1).unwrap_err();
        assert!(matches!(err, ScheduleError::InvalidParameter(_)));
    }

    #[test]
    fn mapping_outside_pool_rejected() {
        let spec = single_task();
        let err = list_schedule(&spec, "M", &ModeMapping::uniform(&[3])).unwrap_err();
        assert!(matches!(err, ScheduleError::InvalidMapping(_)));
    }

    #[test]
    fn gantt_text_layout_is_frozen() {
        let spec = chain_10_10();
        let s = list_schedule(&spec, "M", &ModeMapping::uniform(&[0, 1])).unwrap();
        let text = gantt_text(&spec, &s);
        assert_eq!(
            text,
            "mode M\nlatency 20\ninitiation_interval 10\np0: A.0[0,10)\np1: B.0[10,20)\n"
        );
    }
}

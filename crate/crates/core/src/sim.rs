//! Discrete-event validation of a solved system against a periodic
//! consumer.
//!
//! The simulator replays a sequence of mode stays: within a stay the
//! application completes one iteration (one output sample) every
//! initiation interval after the mode's entry silence; between stays the
//! output is silent for the transition delay, with the migration window
//! marked explicitly and producing nothing. A consumer starts draining one
//! sample per constraint period once the buffer has filled to the
//! computed size, and the run fails the moment a consume would underflow
//! the buffer. This checks the analytical buffer size and the tightened
//! per-mode rates end to end against first-principles event replay.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Analysis;
use crate::model::MmdfSpec;
use crate::rational::Rational;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    Trace(String),
}

/// A sequence of (mode, iteration count) stays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTrace {
    pub stays: Vec<(String, u64)>,
}

impl ModeTrace {
    /// Checks modes exist, stays respect each mode's minimum residency,
    /// and consecutive stays follow declared transitions.
    pub fn validate(&self, spec: &MmdfSpec) -> Result<(), SimError> {
        if self.stays.is_empty() {
            return Err(SimError::Trace("trace has no stays".to_string()));
        }
        for (mode, count) in &self.stays {
            let Some(m) = spec.mode(mode) else {
                return Err(SimError::Trace(format!("unknown mode {mode}")));
            };
            if *count < m.mrc {
                return Err(SimError::Trace(format!(
                    "stay of {count} iterations in mode {mode} is below its minimum of {}",
                    m.mrc
                )));
            }
        }
        for pair in self.stays.windows(2) {
            let (cm, nm) = (&pair[0].0, &pair[1].0);
            if !spec
                .mtg
                .transitions
                .iter()
                .any(|(a, b)| a == cm && b == nm)
            {
                return Err(SimError::Trace(format!(
                    "no transition from {cm} to {nm} is declared"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the adversarial trace the buffer bound guards against: start in
/// the first declared mode, stay exactly the minimum residency, and at
/// each step take the outgoing transition with the largest delay (ties go
/// to the alphabetically first target). Truncates early at a mode with no
/// outgoing transitions.
pub fn worst_case_trace(
    spec: &MmdfSpec,
    delays: &BTreeMap<(String, String), Rational>,
    length: usize,
) -> ModeTrace {
    assert!(length > 0, "trace length must be positive");
    let mut current = spec.mtg.modes[0].name.clone();
    let mut stays = Vec::with_capacity(length);
    loop {
        stays.push((current.clone(), spec.mode(&current).expect("known mode").mrc));
        if stays.len() == length {
            break;
        }
        let next = spec
            .mtg
            .transitions
            .iter()
            .filter(|(cm, _)| *cm == current)
            .max_by(|(_, a), (_, b)| {
                delays[&(current.clone(), a.clone())]
                    .cmp(&delays[&(current.clone(), b.clone())])
                    .then_with(|| b.cmp(a))
            })
            .map(|(_, nm)| nm.clone());
        match next {
            Some(nm) => current = nm,
            None => break,
        }
    }
    ModeTrace { stays }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Produce,
    Consume,
    TransitionStart,
    TransitionEnd,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EventKind::Produce => "produce",
            EventKind::Consume => "consume",
            EventKind::TransitionStart => "transition_start",
            EventKind::TransitionEnd => "transition_end",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: Rational,
    pub kind: EventKind,
    /// Buffer occupancy after the event took effect.
    pub occupancy: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub events: Vec<SimEvent>,
    pub pass: bool,
    pub first_underflow: Option<Rational>,
}

/// Replays `trace` with the production timing of `analysis` against a
/// consumer that drains one sample per constraint period after the buffer
/// first fills to `buffer`. Simultaneous events settle in system order:
/// migration markers, then the produce, then any consume. The run is
/// evaluated up to the final production instant.
pub fn simulate(
    spec: &MmdfSpec,
    analysis: &Analysis,
    trace: &ModeTrace,
    buffer: u64,
) -> Result<SimTrace, SimError> {
    trace.validate(spec)?;
    assert!(buffer > 0, "buffer must hold at least one sample");

    // Lay out productions and migration windows along the timeline.
    let mut pending: Vec<(Rational, EventKind)> = Vec::new();
    let mut now = Rational::from_integer(0);
    for (i, (mode, count)) in trace.stays.iter().enumerate() {
        let sched = &analysis.schedules[mode];
        let ii = sched.initiation_interval;
        let delay = if i == 0 {
            // Initial pipeline fill: first output after one latency.
            Rational::from_integer(sched.latency as i128) - ii
        } else {
            let cm = trace.stays[i - 1].0.clone();
            analysis.trans_delay[&(cm, mode.clone())]
        };
        for k in 1..=*count {
            pending.push((
                now + delay + Rational::from_integer(k as i128) * ii,
                EventKind::Produce,
            ));
        }
        let exit = now + delay + Rational::from_integer(*count as i128) * ii;
        if let Some((nm, _)) = trace.stays.get(i + 1) {
            let next_delay = analysis.trans_delay[&(mode.clone(), nm.clone())];
            let fill =
                Rational::from_integer(analysis.schedules[nm].latency as i128)
                    - analysis.schedules[nm].initiation_interval;
            let mig = next_delay - fill;
            pending.push((exit, EventKind::TransitionStart));
            pending.push((exit + mig, EventKind::TransitionEnd));
        }
        now = exit;
    }
    let horizon = now;
    // A stay's final output leaves the system before its migration window
    // opens, so produces settle first at equal instants.
    let order = |k: &EventKind| match k {
        EventKind::Produce => 0,
        EventKind::TransitionStart => 1,
        EventKind::TransitionEnd => 2,
        EventKind::Consume => 3,
    };
    pending.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| order(&a.1).cmp(&order(&b.1))));

    let period = spec.throughput_constraint.recip();
    let mut events = Vec::new();
    let mut occupancy: i64 = 0;
    let mut next_consume: Option<Rational> = None;
    let mut first_underflow = None;

    let consume_until = |bound: Rational,
                             inclusive: bool,
                             occupancy: &mut i64,
                             next_consume: &mut Option<Rational>,
                             events: &mut Vec<SimEvent>|
     -> Option<Rational> {
        while let Some(c) = *next_consume {
            if c > bound || (!inclusive && c == bound) {
                break;
            }
            *occupancy -= 1;
            events.push(SimEvent {
                time: c,
                kind: EventKind::Consume,
                occupancy: *occupancy,
            });
            if *occupancy < 0 {
                return Some(c);
            }
            *next_consume = Some(c + period);
        }
        None
    };

    'replay: for (t, kind) in pending {
        if let Some(c) =
            consume_until(t, false, &mut occupancy, &mut next_consume, &mut events)
        {
            first_underflow = Some(c);
            break 'replay;
        }
        match kind {
            EventKind::Produce => {
                occupancy += 1;
                events.push(SimEvent {
                    time: t,
                    kind,
                    occupancy,
                });
                if next_consume.is_none() && occupancy >= buffer as i64 {
                    next_consume = Some(t);
                }
            }
            other => events.push(SimEvent {
                time: t,
                kind: other,
                occupancy,
            }),
        }
    }
    if first_underflow.is_none() {
        first_underflow =
            consume_until(horizon, true, &mut occupancy, &mut next_consume, &mut events);
    }

    Ok(SimTrace {
        pass: first_underflow.is_none(),
        first_underflow,
        events,
    })
}

/// Line-oriented rendering of a simulation for plotting and diffing.
pub fn trace_text(trace: &SimTrace) -> String {
    let mut out = String::new();
    for e in &trace.events {
        out.push_str(&format!(
            "time={} event={} occupancy={}\n",
            e.time, e.kind, e.occupancy
        ));
    }
    out.push_str(&format!(
        "result={}\n",
        if trace.pass { "pass" } else { "fail" }
    ));
    if let Some(t) = trace.first_underflow {
        out.push_str(&format!("first_underflow={t}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze, MappingSolution};
    use crate::rational::rat;
    use crate::schedule::DEFAULT_UNROLL;

    fn motiv() -> MmdfSpec {
        MmdfSpec::from_json_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/motiv.json"
        ))
        .unwrap()
    }

    fn single_mode() -> MmdfSpec {
        MmdfSpec::from_json_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/single_mode.json"
        ))
        .unwrap()
    }

    fn motiv_analysis(genes_m1: &[usize], genes_m2: &[usize]) -> (MmdfSpec, Analysis) {
        let spec = motiv();
        let mut sol = MappingSolution::uniform(&spec, genes_m1);
        sol.per_mode.insert(
            "M2".to_string(),
            crate::schedule::ModeMapping::uniform(genes_m2),
        );
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        (spec, a)
    }

    #[test]
    fn single_mode_with_unit_buffer_passes() {
        let spec = single_mode();
        let sol = MappingSolution::uniform(&spec, &[0, 0, 0]);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        assert!(a.feasible);
        assert_eq!(a.output_buffer_size, 1);
        let trace = ModeTrace {
            stays: vec![("M".to_string(), 40)],
        };
        let sim = simulate(&spec, &a, &trace, 1).unwrap();
        assert!(sim.pass, "underflow at {:?}", sim.first_underflow);
    }

    #[test]
    fn untightened_two_processor_mapping_accumulates_and_underflows() {
        // Both modes individually meet the raw constraint (interval 30 vs
        // 35) but transitions every five iterations bleed 27..40 time
        // units each, which no slack absorbs forever.
        let (spec, a) = motiv_analysis(&[0, 0, 1, 1], &[0, 0, 0, 1]);
        assert!(!a.feasible);
        let trace = worst_case_trace(&spec, &a.trans_delay, 40);
        let sim = simulate(&spec, &a, &trace, a.output_buffer_size).unwrap();
        assert!(!sim.pass);
        assert!(sim.first_underflow.is_some());
    }

    #[test]
    fn tightened_three_processor_solution_passes_with_computed_buffer() {
        let (spec, a) = motiv_analysis(&[0, 0, 1, 2], &[0, 0, 1, 2]);
        assert!(a.feasible);
        assert_eq!(a.output_buffer_size, 2);
        let trace = worst_case_trace(&spec, &a.trans_delay, 40);
        let sim = simulate(&spec, &a, &trace, a.output_buffer_size).unwrap();
        assert!(sim.pass, "underflow at {:?}", sim.first_underflow);
    }

    #[test]
    fn no_production_during_migration_windows() {
        let (spec, a) = motiv_analysis(&[0, 0, 1, 1], &[0, 0, 0, 1]);
        let trace = worst_case_trace(&spec, &a.trans_delay, 12);
        let sim = simulate(&spec, &a, &trace, 4).unwrap();
        let mut migrating = false;
        for e in &sim.events {
            match e.kind {
                EventKind::TransitionStart => migrating = true,
                EventKind::TransitionEnd => migrating = false,
                EventKind::Produce => assert!(!migrating, "produce inside migration at {}", e.time),
                EventKind::Consume => {}
            }
        }
    }

    #[test]
    fn long_run_rate_composes_stay_times_exactly() {
        let (spec, a) = motiv_analysis(&[0, 0, 1, 2], &[0, 0, 1, 2]);
        let trace = worst_case_trace(&spec, &a.trans_delay, 16);
        let sim = simulate(&spec, &a, &trace, a.output_buffer_size).unwrap();
        let produced: i128 = sim
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Produce)
            .count() as i128;
        let horizon = sim
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Produce)
            .map(|e| e.time)
            .max()
            .unwrap();

        let mut expected_time = Rational::from_integer(0);
        let mut expected_count = 0i128;
        for (i, (mode, count)) in trace.stays.iter().enumerate() {
            let sched = &a.schedules[mode];
            let delay = if i == 0 {
                Rational::from_integer(sched.latency as i128) - sched.initiation_interval
            } else {
                a.trans_delay[&(trace.stays[i - 1].0.clone(), mode.clone())]
            };
            expected_time +=
                delay + Rational::from_integer(*count as i128) * sched.initiation_interval;
            expected_count += *count as i128;
        }
        assert_eq!(produced, expected_count);
        assert_eq!(horizon, expected_time);
    }

    #[test]
    fn alternating_worst_case_trace_structure() {
        let (spec, a) = motiv_analysis(&[0, 0, 1, 2], &[0, 0, 1, 2]);
        let trace = worst_case_trace(&spec, &a.trans_delay, 6);
        assert_eq!(
            trace.stays,
            vec![
                ("M1".to_string(), 5),
                ("M2".to_string(), 5),
                ("M1".to_string(), 5),
                ("M2".to_string(), 5),
                ("M1".to_string(), 5),
                ("M2".to_string(), 5),
            ]
        );
        trace.validate(&spec).unwrap();
    }

    #[test]
    fn single_mode_trace_truncates_at_sink() {
        let spec = single_mode();
        let sol = MappingSolution::uniform(&spec, &[0, 0, 0]);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        let trace = worst_case_trace(&spec, &a.trans_delay, 9);
        assert_eq!(trace.stays, vec![("M".to_string(), 1)]);
    }

    #[test]
    fn trace_validation_rejects_undeclared_transitions() {
        let spec = motiv();
        let trace = ModeTrace {
            stays: vec![("M1".to_string(), 5), ("M1".to_string(), 5)],
        };
        assert!(matches!(trace.validate(&spec), Err(SimError::Trace(_))));
        let short = ModeTrace {
            stays: vec![("M1".to_string(), 3)],
        };
        assert!(matches!(short.validate(&spec), Err(SimError::Trace(_))));
    }

    #[test]
    fn underflow_is_detected_at_the_exact_consume_instant() {
        // Single task, one sample per 10 time units, consumer wants one
        // per 8: occupancy drifts down and crosses zero.
        let text = r#"{
  "tasks": [{"name": "T", "wcet": {"M": 10}}],
  "channels": [],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 8},
  "processor_pool": 1
}"#;
        let spec = MmdfSpec::from_json_str(text).unwrap();
        let sol = MappingSolution::uniform(&spec, &[0]);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        assert!(!a.feasible);
        let trace = ModeTrace {
            stays: vec![("M".to_string(), 30)],
        };
        let sim = simulate(&spec, &a, &trace, 1).unwrap();
        assert!(!sim.pass);
        // Production k lands at 10k, consumes start at 10 and repeat
        // every 8: the consume at 18 already finds the buffer empty.
        assert_eq!(sim.first_underflow, Some(rat(18, 1)));
    }

    #[test]
    fn trace_text_is_line_oriented() {
        let spec = single_mode();
        let sol = MappingSolution::uniform(&spec, &[0, 0, 0]);
        let a = analyze(&spec, &sol, DEFAULT_UNROLL).unwrap();
        let trace = ModeTrace {
            stays: vec![("M".to_string(), 2)],
        };
        let sim = simulate(&spec, &a, &trace, 1).unwrap();
        let text = trace_text(&sim);
        // The consume due at 38 falls past the final production and is
        // outside the evaluated horizon.
        assert_eq!(
            text,
            "time=18 event=produce occupancy=1\n\
             time=18 event=consume occupancy=0\n\
             time=36 event=produce occupancy=1\n\
             result=pass\n"
        );
    }
}

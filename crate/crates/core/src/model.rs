//! Graph model: tasks, ports, channels and the mode transition graph.
//!
//! A spec describes one application. Every task carries a worst-case
//! execution time and every port a production/consumption rate *per mode*,
//! so the same task graph can behave like a different dataflow graph in
//! each mode. The loader validates structural rules up front so that the
//! scheduler and analysis can index freely without re-checking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use num_integer::Integer;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{rational_serde, Rational};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to parse graph: {0}")]
    Parse(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{entity}: {message}")]
    Validation { entity: String, message: String },
    #[error("mode {mode}: no repetition vector exists, channel {channel} breaks the rate balance ({detail})")]
    InconsistentRates {
        mode: String,
        channel: String,
        detail: String,
    },
    #[error("mode {mode}: one graph iteration deadlocks, {stuck} firings can never obtain their input tokens")]
    Deadlock { mode: String, stuck: u64 },
}

fn invalid(entity: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Validation {
        entity: entity.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    Input,
    Output,
}

/// A named port of a task with one rate per mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub direction: PortDirection,
    pub rates: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub ports: Vec<PortSpec>,
    /// Worst-case execution time per mode, in abstract time units.
    pub wcet: BTreeMap<String, u64>,
    /// Cost of moving this task to another processor at a mode switch.
    #[serde(default)]
    pub migration_cost: u64,
}

/// Reference to a task port, written `Task.port` in graph files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PortRef {
    pub task: String,
    pub port: String,
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.task, self.port)
    }
}

impl From<PortRef> for String {
    fn from(p: PortRef) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for PortRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.split_once('.') {
            Some((task, port)) if !task.is_empty() && !port.is_empty() => Ok(PortRef {
                task: task.to_string(),
                port: port.to_string(),
            }),
            _ => Err(format!("port reference `{s}` is not of the form Task.port")),
        }
    }
}

/// A FIFO channel between an output port and an input port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub src: PortRef,
    pub dst: PortRef,
    /// Tokens present on the channel when a mode starts. Modes missing
    /// from the map start with an empty channel.
    #[serde(default)]
    pub initial_tokens: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub name: String,
    /// Minimum number of iterations the application stays in this mode
    /// once entered.
    pub mrc: u64,
}

/// Modes plus the directed transitions allowed between them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTransitionGraph {
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub transitions: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmdfSpec {
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(flatten)]
    pub mtg: ModeTransitionGraph,
    /// Required long-run output rate, in iterations per time unit.
    #[serde(with = "rational_serde")]
    pub throughput_constraint: Rational,
    pub processor_pool: usize,
    /// When set, every firing of a task within one iteration gets its own
    /// mapping gene, so data-parallel firings may spread over processors.
    #[serde(default)]
    pub instance_mapping: bool,
}

/// Channel endpoints resolved to task/port indices.
#[derive(Debug, Clone, Copy)]
pub struct ChannelEnds {
    pub src_task: usize,
    pub src_port: usize,
    pub dst_task: usize,
    pub dst_port: usize,
}

impl MmdfSpec {
    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let spec: MmdfSpec =
            serde_json::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    pub fn mode_names(&self) -> Vec<&str> {
        self.mtg.modes.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn mode_index(&self, name: &str) -> Option<usize> {
        self.mtg.modes.iter().position(|m| m.name == name)
    }

    pub fn mode(&self, name: &str) -> Option<&ModeSpec> {
        self.mtg.modes.iter().find(|m| m.name == name)
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn wcet(&self, task: usize, mode: &str) -> u64 {
        self.tasks[task].wcet[mode]
    }

    /// Resolves all channel endpoints. Fails when a channel names an
    /// unknown task or port, or connects ports of the wrong direction.
    pub fn channel_ends(&self) -> Result<Vec<ChannelEnds>, ModelError> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let label = format!("channel {} -> {}", c.src, c.dst);
                let resolve = |r: &PortRef, want: PortDirection| {
                    let task = self
                        .task_index(&r.task)
                        .ok_or_else(|| invalid(&label, format!("unknown task {}", r.task)))?;
                    let port = self.tasks[task]
                        .ports
                        .iter()
                        .position(|p| p.name == r.port)
                        .ok_or_else(|| invalid(&label, format!("task {} has no port {}", r.task, r.port)))?;
                    if self.tasks[task].ports[port].direction != want {
                        return Err(invalid(
                            &label,
                            format!("port {r} has the wrong direction for this end"),
                        ));
                    }
                    Ok::<(usize, usize), ModelError>((task, port))
                };
                let (src_task, src_port) = resolve(&c.src, PortDirection::Output)?;
                let (dst_task, dst_port) = resolve(&c.dst, PortDirection::Input)?;
                let _ = i;
                Ok(ChannelEnds {
                    src_task,
                    src_port,
                    dst_task,
                    dst_port,
                })
            })
            .collect()
    }

    /// Production and consumption rate of channel `c` in `mode`.
    pub fn channel_rates(&self, ends: &ChannelEnds, mode: &str) -> (u64, u64) {
        let prod = self.tasks[ends.src_task].ports[ends.src_port].rates[mode];
        let cons = self.tasks[ends.dst_task].ports[ends.dst_port].rates[mode];
        (prod, cons)
    }

    pub fn channel_initial(&self, c: usize, mode: &str) -> u64 {
        self.channels[c]
            .initial_tokens
            .get(mode)
            .copied()
            .unwrap_or(0)
    }

    pub fn transitions_into<'a>(
        &'a self,
        mode: &'a str,
    ) -> impl Iterator<Item = &'a (String, String)> + 'a {
        self.mtg
            .transitions
            .iter()
            .filter(move |(_, nm)| nm == mode)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tasks.is_empty() {
            return Err(invalid("spec", "at least one task is required"));
        }
        if self.mtg.modes.is_empty() {
            return Err(invalid("spec", "at least one mode is required"));
        }
        if self.processor_pool == 0 {
            return Err(invalid("spec", "processor_pool must be positive"));
        }
        if self.throughput_constraint <= Rational::from_integer(0) {
            return Err(invalid("spec", "throughput_constraint must be positive"));
        }

        let mut mode_set = BTreeSet::new();
        for m in &self.mtg.modes {
            if m.name.is_empty() {
                return Err(invalid("mode", "mode names must be nonempty"));
            }
            if m.mrc == 0 {
                return Err(invalid(format!("mode {}", m.name), "mrc must be at least 1"));
            }
            if !mode_set.insert(m.name.as_str()) {
                return Err(invalid(format!("mode {}", m.name), "duplicate mode name"));
            }
        }

        let mut task_names = BTreeSet::new();
        for t in &self.tasks {
            let entity = format!("task {}", t.name);
            if t.name.is_empty() || t.name.contains('.') {
                return Err(invalid(&entity, "task names must be nonempty and free of `.`"));
            }
            if !task_names.insert(t.name.as_str()) {
                return Err(invalid(&entity, "duplicate task name"));
            }
            check_mode_cover(&entity, "wcet", &t.wcet, &mode_set)?;
            for (mode, w) in &t.wcet {
                if *w == 0 {
                    return Err(invalid(&entity, format!("wcet in mode {mode} must be positive")));
                }
            }
            let mut port_names = BTreeSet::new();
            for p in &t.ports {
                let pentity = format!("port {}.{}", t.name, p.name);
                if p.name.is_empty() || p.name.contains('.') {
                    return Err(invalid(&pentity, "port names must be nonempty and free of `.`"));
                }
                if !port_names.insert(p.name.as_str()) {
                    return Err(invalid(&pentity, "duplicate port name"));
                }
                check_mode_cover(&pentity, "rates", &p.rates, &mode_set)?;
                for (mode, r) in &p.rates {
                    if *r == 0 {
                        return Err(invalid(&pentity, format!("rate in mode {mode} must be positive")));
                    }
                }
            }
        }

        let ends = self.channel_ends()?;
        let mut used_ports = BTreeSet::new();
        for c in &self.channels {
            let entity = format!("channel {} -> {}", c.src, c.dst);
            if !used_ports.insert(c.src.clone()) {
                return Err(invalid(&entity, format!("port {} feeds more than one channel", c.src)));
            }
            if !used_ports.insert(c.dst.clone()) {
                return Err(invalid(&entity, format!("port {} is fed by more than one channel", c.dst)));
            }
            for mode in c.initial_tokens.keys() {
                if !mode_set.contains(mode.as_str()) {
                    return Err(invalid(&entity, format!("initial_tokens names unknown mode {mode}")));
                }
            }
        }

        let mut seen_transitions = BTreeSet::new();
        for (cm, nm) in &self.mtg.transitions {
            let entity = format!("transition {cm} -> {nm}");
            if !mode_set.contains(cm.as_str()) || !mode_set.contains(nm.as_str()) {
                return Err(invalid(&entity, "transition endpoint is not a declared mode"));
            }
            if cm == nm {
                return Err(invalid(&entity, "self-transitions are not allowed"));
            }
            if !seen_transitions.insert((cm.as_str(), nm.as_str())) {
                return Err(invalid(&entity, "duplicate transition"));
            }
        }

        for m in &self.mtg.modes {
            let reps = self.repetition_vector(&m.name)?;
            self.check_one_iteration_live(&m.name, &reps, &ends)?;
        }
        Ok(())
    }

    /// Minimal positive integer firing counts balancing every channel of
    /// `mode`: reps[src] * production_rate == reps[dst] * consumption_rate.
    /// Disconnected components are scaled independently.
    pub fn repetition_vector(&self, mode: &str) -> Result<Vec<u64>, ModelError> {
        if self.mode_index(mode).is_none() {
            return Err(invalid("repetition_vector", format!("unknown mode {mode}")));
        }
        let ends = self.channel_ends()?;
        let n = self.tasks.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (ci, e) in ends.iter().enumerate() {
            adj[e.src_task].push(ci);
            adj[e.dst_task].push(ci);
        }

        let mut ratio: Vec<Option<Rational>> = vec![None; n];
        let mut reps = vec![0u64; n];
        for start in 0..n {
            if ratio[start].is_some() {
                continue;
            }
            ratio[start] = Some(Rational::one());
            let mut component = vec![start];
            let mut queue = vec![start];
            while let Some(t) = queue.pop() {
                let here = ratio[t].unwrap();
                for &ci in &adj[t] {
                    let e = &ends[ci];
                    let (prod, cons) = self.channel_rates(e, mode);
                    let (other, expected) = if e.src_task == t {
                        (
                            e.dst_task,
                            here * Rational::new(prod as i128, cons as i128),
                        )
                    } else {
                        (
                            e.src_task,
                            here * Rational::new(cons as i128, prod as i128),
                        )
                    };
                    match ratio[other] {
                        None => {
                            ratio[other] = Some(expected);
                            component.push(other);
                            queue.push(other);
                        }
                        Some(found) if found != expected => {
                            return Err(ModelError::InconsistentRates {
                                mode: mode.to_string(),
                                channel: format!(
                                    "{} -> {}",
                                    self.channels[ci].src, self.channels[ci].dst
                                ),
                                detail: format!(
                                    "firing ratios {found} and {expected} for task {}",
                                    self.tasks[other].name
                                ),
                            });
                        }
                        Some(_) => {}
                    }
                }
            }
            let mut scale: i128 = 1;
            for &t in &component {
                scale = scale.lcm(ratio[t].unwrap().denom());
            }
            let mut gcd: i128 = 0;
            for &t in &component {
                let scaled = ratio[t].unwrap() * Rational::from_integer(scale);
                gcd = gcd.gcd(&scaled.to_integer());
            }
            for &t in &component {
                let scaled = ratio[t].unwrap() * Rational::from_integer(scale);
                reps[t] = u64::try_from(scaled.to_integer() / gcd).expect("repetition count fits u64");
            }
        }
        Ok(reps)
    }

    /// Simulates one iteration with unlimited processors, firing any task
    /// whose tokens suffice, to prove the iteration can always complete.
    fn check_one_iteration_live(
        &self,
        mode: &str,
        reps: &[u64],
        ends: &[ChannelEnds],
    ) -> Result<(), ModelError> {
        let mut tokens: Vec<u64> = (0..self.channels.len())
            .map(|c| self.channel_initial(c, mode))
            .collect();
        let mut remaining = reps.to_vec();
        let mut left: u64 = remaining.iter().sum();
        loop {
            let mut fired = false;
            for t in 0..self.tasks.len() {
                while remaining[t] > 0 && self.can_fire(t, &tokens, ends, mode) {
                    for (ci, e) in ends.iter().enumerate() {
                        let (prod, cons) = self.channel_rates(e, mode);
                        if e.dst_task == t {
                            tokens[ci] -= cons;
                        }
                        if e.src_task == t {
                            tokens[ci] += prod;
                        }
                    }
                    remaining[t] -= 1;
                    left -= 1;
                    fired = true;
                }
            }
            if left == 0 {
                return Ok(());
            }
            if !fired {
                return Err(ModelError::Deadlock {
                    mode: mode.to_string(),
                    stuck: left,
                });
            }
        }
    }

    fn can_fire(&self, task: usize, tokens: &[u64], ends: &[ChannelEnds], mode: &str) -> bool {
        ends.iter().enumerate().all(|(ci, e)| {
            if e.dst_task != task {
                return true;
            }
            let (_, cons) = self.channel_rates(e, mode);
            tokens[ci] >= cons
        })
    }
}

fn check_mode_cover(
    entity: &str,
    field: &str,
    map: &BTreeMap<String, u64>,
    modes: &BTreeSet<&str>,
) -> Result<(), ModelError> {
    for key in map.keys() {
        if !modes.contains(key.as_str()) {
            return Err(invalid(entity, format!("{field} names unknown mode {key}")));
        }
    }
    for mode in modes {
        if !map.contains_key(*mode) {
            return Err(invalid(entity, format!("{field} missing for mode {mode}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn chain_spec(prod: u64, cons: u64) -> String {
        format!(
            r#"{{
  "tasks": [
    {{"name": "P", "wcet": {{"M": 4}},
      "ports": [{{"name": "out", "direction": "output", "rates": {{"M": {prod}}}}}]}},
    {{"name": "Q", "wcet": {{"M": 3}},
      "ports": [{{"name": "in", "direction": "input", "rates": {{"M": {cons}}}}}]}}
  ],
  "channels": [{{"src": "P.out", "dst": "Q.in"}}],
  "modes": [{{"name": "M", "mrc": 2}}],
  "transitions": [],
  "throughput_constraint": {{"num": 1, "den": 100}},
  "processor_pool": 2
}}"#
        )
    }

    #[test]
    fn loads_minimal_spec() {
        let text = r#"{
  "tasks": [{"name": "T", "wcet": {"M": 5}}],
  "channels": [],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 10},
  "processor_pool": 1
}"#;
        let spec = MmdfSpec::from_json_str(text).unwrap();
        assert_eq!(spec.tasks.len(), 1);
        assert_eq!(spec.throughput_constraint, rat(1, 10));
        assert!(!spec.instance_mapping);
        assert_eq!(spec.repetition_vector("M").unwrap(), vec![1]);
    }

    #[test]
    fn round_trip_preserves_spec() {
        let spec = MmdfSpec::from_json_str(&chain_spec(2, 3)).unwrap();
        let again = MmdfSpec::from_json_str(&spec.to_json_string()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn chain_repetition_vector_matches_smallest_balanced_pair() {
        let spec = MmdfSpec::from_json_str(&chain_spec(2, 3)).unwrap();
        // Independent check: smallest (rp, rq) with rp*2 == rq*3.
        let mut expected = None;
        'outer: for rp in 1..=6u64 {
            for rq in 1..=6u64 {
                if rp * 2 == rq * 3 {
                    expected = Some(vec![rp, rq]);
                    break 'outer;
                }
            }
        }
        assert_eq!(spec.repetition_vector("M").unwrap(), expected.unwrap());
    }

    #[test]
    fn inconsistent_cycle_names_channel() {
        let text = r#"{
  "tasks": [
    {"name": "A", "wcet": {"M": 1}, "ports": [
      {"name": "out", "direction": "output", "rates": {"M": 2}},
      {"name": "in", "direction": "input", "rates": {"M": 1}}]},
    {"name": "B", "wcet": {"M": 1}, "ports": [
      {"name": "out", "direction": "output", "rates": {"M": 1}},
      {"name": "in", "direction": "input", "rates": {"M": 1}}]}
  ],
  "channels": [
    {"src": "A.out", "dst": "B.in"},
    {"src": "B.out", "dst": "A.in", "initial_tokens": {"M": 4}}
  ],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 10},
  "processor_pool": 1
}"#;
        let err = MmdfSpec::from_json_str(text).unwrap_err();
        match err {
            ModelError::InconsistentRates { mode, channel, .. } => {
                assert_eq!(mode, "M");
                assert!(channel.contains("->"), "channel cited: {channel}");
            }
            other => panic!("expected InconsistentRates, got {other}"),
        }
    }

    #[test]
    fn zero_token_cycle_deadlocks() {
        let text = r#"{
  "tasks": [
    {"name": "A", "wcet": {"M": 1}, "ports": [
      {"name": "out", "direction": "output", "rates": {"M": 1}},
      {"name": "in", "direction": "input", "rates": {"M": 1}}]},
    {"name": "B", "wcet": {"M": 1}, "ports": [
      {"name": "out", "direction": "output", "rates": {"M": 1}},
      {"name": "in", "direction": "input", "rates": {"M": 1}}]}
  ],
  "channels": [
    {"src": "A.out", "dst": "B.in"},
    {"src": "B.out", "dst": "A.in"}
  ],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 10},
  "processor_pool": 1
}"#;
        let err = MmdfSpec::from_json_str(text).unwrap_err();
        assert!(matches!(err, ModelError::Deadlock { .. }), "got {err}");
    }

    #[test]
    fn cycle_with_enough_tokens_is_live() {
        let text = r#"{
  "tasks": [
    {"name": "A", "wcet": {"M": 1}, "ports": [
      {"name": "out", "direction": "output", "rates": {"M": 1}},
      {"name": "in", "direction": "input", "rates": {"M": 1}}]},
    {"name": "B", "wcet": {"M": 1}, "ports": [
      {"name": "out", "direction": "output", "rates": {"M": 1}},
      {"name": "in", "direction": "input", "rates": {"M": 1}}]}
  ],
  "channels": [
    {"src": "A.out", "dst": "B.in"},
    {"src": "B.out", "dst": "A.in", "initial_tokens": {"M": 1}}
  ],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 10},
  "processor_pool": 1
}"#;
        assert!(MmdfSpec::from_json_str(text).is_ok());
    }

    #[test]
    fn missing_wcet_mode_is_rejected() {
        let text = r#"{
  "tasks": [{"name": "T", "wcet": {"M1": 5}}],
  "channels": [],
  "modes": [{"name": "M1", "mrc": 1}, {"name": "M2", "mrc": 1}],
  "transitions": [["M1", "M2"]],
  "throughput_constraint": {"num": 1, "den": 10},
  "processor_pool": 1
}"#;
        let err = MmdfSpec::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("missing for mode M2"), "got {err}");
    }

    #[test]
    fn self_transition_rejected() {
        let text = r#"{
  "tasks": [{"name": "T", "wcet": {"M": 5}}],
  "channels": [],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [["M", "M"]],
  "throughput_constraint": {"num": 1, "den": 10},
  "processor_pool": 1
}"#;
        assert!(MmdfSpec::from_json_str(text).is_err());
    }

    #[test]
    fn double_use_of_port_rejected() {
        let mut text = chain_spec(1, 1);
        text = text.replace(
            r#""channels": [{"src": "P.out", "dst": "Q.in"}]"#,
            r#""channels": [{"src": "P.out", "dst": "Q.in"}, {"src": "P.out", "dst": "Q.in"}]"#,
        );
        assert!(MmdfSpec::from_json_str(&text).is_err());
    }
}

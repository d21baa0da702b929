//! Comparison strategies: a single shared mapping (`fixed`) and
//! independent per-mode optimization with iterative requirement
//! tightening (`base`).
//!
//! `fixed` avoids migration entirely by using one mapping in every mode,
//! at the price of a compromise mapping. `base` first optimizes each mode
//! in isolation, then discovers the transition delays its choices induce,
//! tightens each mode's required throughput accordingly, and bumps
//! violating modes to schedules with more processors until the adjusted
//! requirements hold or the pool runs out.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::analysis::{AnalysisError, MappingSolution, ThrRequire};
use crate::ga::{evaluate, rename_processors, run_ga, EvolveResult, GaConfig};
use crate::model::MmdfSpec;
use crate::rational::Rational;
use crate::schedule::{list_schedule_unrolled, ModeMapping, ProcId};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("no feasible solution: {reason}")]
    NoFeasibleSolution { reason: String },
}

/// Searches one shared per-task mapping applied to every mode. Migration
/// cost is zero by construction; task firings never spread over extra
/// processors even under instance mapping, keeping the mapping mode-shape
/// independent.
pub fn run_fixed(
    spec: &MmdfSpec,
    config: &GaConfig,
    unroll: u64,
) -> Result<EvolveResult, AnalysisError> {
    config.validate().map_err(AnalysisError::Solution)?;
    let outcome = run_ga(
        config,
        spec.tasks.len(),
        spec.processor_pool,
        |genes| {
            let solution = MappingSolution::uniform(spec, &genes);
            let (fitness, _) = evaluate(spec, &solution, unroll)?;
            Ok::<_, AnalysisError>((genes, fitness))
        },
    )?;
    let solution = MappingSolution::uniform(spec, &outcome.genes);
    let (fitness, analysis) = evaluate(spec, &solution, unroll)?;
    Ok(EvolveResult {
        solution,
        fitness,
        analysis,
        history: outcome.history,
    })
}

/// One point of a per-mode front: the best schedule seen using a given
/// number of processors. Ordered by initiation interval, then latency
/// (a shorter pipeline fill costs less at transitions), then genes.
#[derive(Debug, Clone)]
struct ModePoint {
    ii: Rational,
    latency: u64,
    genes: Vec<ProcId>,
}

impl ModePoint {
    fn better_than(&self, other: &ModePoint) -> bool {
        (self.ii, self.latency, &self.genes) < (other.ii, other.latency, &other.genes)
    }
}

/// Relabels processors in first-use order so equivalent mappings collapse
/// to one representative.
fn canonicalize(genes: &[ProcId], pool: usize) -> Vec<ProcId> {
    let mut next = 0;
    let mut relabel = vec![usize::MAX; pool];
    genes
        .iter()
        .map(|&g| {
            if relabel[g] == usize::MAX {
                relabel[g] = next;
                next += 1;
            }
            relabel[g]
        })
        .collect()
}

fn mode_mapping(spec: &MmdfSpec, mode: &str, genes: &[ProcId]) -> Result<ModeMapping, AnalysisError> {
    if spec.instance_mapping {
        let reps = spec.repetition_vector(mode)?;
        let mut per_task = Vec::with_capacity(spec.tasks.len());
        let mut next = 0;
        for &r in &reps {
            per_task.push(genes[next..next + r as usize].to_vec());
            next += r as usize;
        }
        Ok(ModeMapping { per_task })
    } else {
        Ok(ModeMapping::uniform(genes))
    }
}

fn mode_gene_count(spec: &MmdfSpec, mode: &str) -> Result<usize, AnalysisError> {
    if spec.instance_mapping {
        Ok(spec.repetition_vector(mode)?.iter().map(|&r| r as usize).sum())
    } else {
        Ok(spec.tasks.len())
    }
}

/// Per-mode search: best initiation interval per processor count, found by
/// the same engine with a throughput-then-processors fitness. The archive
/// is fed by every evaluation, not only survivors.
fn mode_front(
    spec: &MmdfSpec,
    mode: &str,
    config: &GaConfig,
    unroll: u64,
    seed: u64,
) -> Result<BTreeMap<usize, ModePoint>, AnalysisError> {
    let mut archive: BTreeMap<usize, ModePoint> = BTreeMap::new();
    let mut cfg = config.clone();
    cfg.seed = seed;
    let num_genes = mode_gene_count(spec, mode)?;
    run_ga(&cfg, num_genes, spec.processor_pool, |genes| {
        let canonical = canonicalize(&genes, spec.processor_pool);
        let mapping = mode_mapping(spec, mode, &canonical)?;
        let sched = list_schedule_unrolled(spec, mode, &mapping, unroll)?;
        let used = sched.used_processors().len();
        let point = ModePoint {
            ii: sched.initiation_interval,
            latency: sched.latency,
            genes: canonical.clone(),
        };
        match archive.get(&used) {
            Some(existing) if !point.better_than(existing) => {}
            _ => {
                archive.insert(used, point);
            }
        }
        Ok::<_, AnalysisError>((canonical, (sched.initiation_interval, used)))
    })?;
    Ok(archive)
}

/// Result of the `base` strategy, with the processor count each mode used
/// in every tightening round for inspection.
#[derive(Debug, Clone)]
pub struct BaseOutcome {
    pub result: EvolveResult,
    pub rounds: Vec<BTreeMap<String, usize>>,
}

pub fn run_base(
    spec: &MmdfSpec,
    config: &GaConfig,
    unroll: u64,
) -> Result<BaseOutcome, BaselineError> {
    config
        .validate()
        .map_err(|m| BaselineError::Analysis(AnalysisError::Solution(m)))?;
    let modes: Vec<String> = spec.mode_names().iter().map(|m| m.to_string()).collect();
    let mut fronts = Vec::with_capacity(modes.len());
    for (mi, mode) in modes.iter().enumerate() {
        fronts.push(mode_front(
            spec,
            mode,
            config,
            unroll,
            config.seed.wrapping_add(mi as u64),
        )?);
    }

    let thr_const = spec.throughput_constraint;
    let mut chosen: Vec<usize> = Vec::with_capacity(modes.len());
    for (mi, mode) in modes.iter().enumerate() {
        let initial = fronts[mi]
            .iter()
            .find(|(_, p)| p.ii.recip() >= thr_const)
            .map(|(count, _)| *count);
        match initial {
            Some(c) => chosen.push(c),
            None => {
                return Err(BaselineError::NoFeasibleSolution {
                    reason: format!(
                        "mode {mode} cannot meet the throughput constraint with {} processors",
                        spec.processor_pool
                    ),
                })
            }
        }
    }

    let mut rounds = Vec::new();
    loop {
        rounds.push(
            modes
                .iter()
                .zip(&chosen)
                .map(|(m, c)| (m.clone(), *c))
                .collect::<BTreeMap<_, _>>(),
        );

        let mut per_mode = BTreeMap::new();
        for (mi, mode) in modes.iter().enumerate() {
            let point = &fronts[mi][&chosen[mi]];
            per_mode.insert(mode.clone(), mode_mapping(spec, mode, &point.genes)?);
        }
        let solution = rename_processors(spec, &MappingSolution { per_mode });
        let (fitness, analysis) = evaluate(spec, &solution, unroll)?;
        if analysis.feasible {
            return Ok(BaseOutcome {
                result: EvolveResult {
                    solution,
                    fitness,
                    analysis,
                    history: Vec::new(),
                },
                rounds,
            });
        }

        let mut upgraded = false;
        let mut exhausted_reason: Option<String> = None;
        for (mi, mode) in modes.iter().enumerate() {
            let violated = match analysis.thr_require[mode] {
                ThrRequire::Finite(req) => analysis.schedules[mode].throughput() < req,
                ThrRequire::Infeasible => true,
            };
            if !violated {
                continue;
            }
            match fronts[mi].range(chosen[mi] + 1..).next() {
                Some((count, _)) => {
                    chosen[mi] = *count;
                    upgraded = true;
                }
                None => {
                    let reason = match analysis.thr_require[mode] {
                        ThrRequire::Infeasible => format!(
                            "mode {mode}: transition delay consumes the entire throughput budget \
                             at every schedule within the pool"
                        ),
                        ThrRequire::Finite(_) => format!(
                            "pool exhausted: mode {mode} has no faster schedule left within {} processors",
                            spec.processor_pool
                        ),
                    };
                    exhausted_reason.get_or_insert(reason);
                }
            }
        }
        if let Some(reason) = exhausted_reason {
            return Err(BaselineError::NoFeasibleSolution { reason });
        }
        assert!(upgraded, "infeasible outcome must name a violating mode");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ga::evolve;
    use crate::schedule::DEFAULT_UNROLL;

    fn motiv() -> MmdfSpec {
        MmdfSpec::from_json_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/motiv.json"
        ))
        .unwrap()
    }

    fn motiv_with_mc(mc: u64) -> MmdfSpec {
        let mut spec = motiv();
        for t in &mut spec.tasks {
            t.migration_cost = mc;
        }
        spec
    }

    fn small_desk() -> GaConfig {
        let mut c = GaConfig::desk();
        c.population = 20;
        c.mu = 20;
        c.lambda = 20;
        c.max_generations = 120;
        c
    }

    #[test]
    fn fixed_needs_three_processors_on_motiv() {
        let r = run_fixed(&motiv(), &small_desk(), DEFAULT_UNROLL).unwrap();
        assert!(r.fitness.feasible);
        assert_eq!(r.fitness.processors, 3);
        assert_eq!(r.fitness.mig_cost_total, 0);
    }

    #[test]
    fn fixed_equals_evolve_on_single_mode() {
        let spec = MmdfSpec::from_json_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/single_mode.json"
        ))
        .unwrap();
        let config = small_desk();
        let fixed = run_fixed(&spec, &config, DEFAULT_UNROLL).unwrap();
        let proposed = evolve(&spec, &config, DEFAULT_UNROLL).unwrap();
        assert_eq!(fixed.solution, proposed.solution);
        assert_eq!(fixed.fitness, proposed.fitness);
    }

    #[test]
    fn fixed_respects_throughput_forced_parallelism() {
        let text = r#"{
  "tasks": [
    {"name": "A", "wcet": {"M": 10}},
    {"name": "B", "wcet": {"M": 10}}
  ],
  "channels": [],
  "modes": [{"name": "M", "mrc": 1}],
  "transitions": [],
  "throughput_constraint": {"num": 1, "den": 12},
  "processor_pool": 2
}"#;
        let spec = MmdfSpec::from_json_str(text).unwrap();
        let r = run_fixed(&spec, &small_desk(), DEFAULT_UNROLL).unwrap();
        assert!(r.fitness.feasible);
        assert_eq!(r.fitness.processors, 2);
    }

    #[test]
    fn base_matches_proposed_processor_count_without_migration_cost() {
        let spec = motiv_with_mc(0);
        let config = small_desk();
        let base = run_base(&spec, &config, DEFAULT_UNROLL).unwrap();
        assert!(base.result.fitness.feasible);
        let proposed = evolve(&spec, &config, DEFAULT_UNROLL).unwrap();
        assert!(proposed.fitness.feasible);
        assert_eq!(base.result.fitness.processors, proposed.fitness.processors);
        assert_eq!(base.result.fitness.processors, 3);
        assert!(base.rounds.len() > 1, "tightening had to upgrade a mode");
    }

    #[test]
    fn base_fails_on_motiv_at_default_migration_cost() {
        let err = run_base(&motiv(), &small_desk(), DEFAULT_UNROLL).unwrap_err();
        match err {
            BaselineError::NoFeasibleSolution { reason } => {
                assert!(reason.contains("pool exhausted"), "reason: {reason}");
            }
            other => panic!("expected NoFeasibleSolution, got {other}"),
        }
    }

    #[test]
    fn base_reports_budget_collapse_for_huge_migration_cost() {
        let err = run_base(&motiv_with_mc(10_000), &small_desk(), DEFAULT_UNROLL).unwrap_err();
        match err {
            BaselineError::NoFeasibleSolution { reason } => {
                assert!(reason.contains("throughput budget"), "reason: {reason}");
            }
            other => panic!("expected NoFeasibleSolution, got {other}"),
        }
    }

    #[test]
    fn base_succeeds_on_single_mode() {
        let spec = MmdfSpec::from_json_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/single_mode.json"
        ))
        .unwrap();
        let base = run_base(&spec, &small_desk(), DEFAULT_UNROLL).unwrap();
        assert!(base.result.fitness.feasible);
        assert_eq!(base.result.fitness.processors, 1);
        assert_eq!(base.rounds.len(), 1);
    }
}

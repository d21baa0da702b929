//! Genetic search over joint mode mappings.
//!
//! One chromosome assigns a processor to every (mode, task) slot — or to
//! every firing instance when the graph enables `instance_mapping` — so the
//! search explores all modes simultaneously and can trade migration cost
//! against processor count. Fitness is lexicographic: meet every mode's
//! throughput requirement first, then use fewer processors, then migrate
//! less, then (among infeasible candidates) miss the requirement by less.
//!
//! Because processors are homogeneous, relabeling the ids used by one mode
//! changes nothing about its schedule but can align it with the previous
//! mode's placement. `rename_processors` exploits this as the local
//! optimization step between variation and evaluation.

use std::collections::BTreeMap;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{analyze, mig_cost_total, similarity, Analysis, AnalysisError, MappingSolution, ThrRequire};
use crate::model::MmdfSpec;
use crate::rational::Rational;
use crate::schedule::{ModeMapping, ProcId};

/// Search parameters. `Default` is the full-strength configuration;
/// [`GaConfig::desk`] is a lighter profile for interactive runs and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub mu: usize,
    pub lambda: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub max_generations: u64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 100,
            mu: 100,
            lambda: 100,
            crossover_prob: 0.9,
            mutation_prob: 0.9,
            max_generations: 30000,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn desk() -> Self {
        GaConfig {
            population: 40,
            mu: 40,
            lambda: 40,
            crossover_prob: 0.9,
            mutation_prob: 0.9,
            max_generations: 500,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.population == 0 || self.mu == 0 || self.lambda == 0 {
            return Err("population, mu and lambda must be positive".to_string());
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Lexicographic fitness; smaller is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fitness {
    pub feasible: bool,
    pub processors: usize,
    pub mig_cost_total: u64,
    pub shortfall: Rational,
}

impl Ord for Fitness {
    // Feasible solutions always beat infeasible ones and compete on
    // resources. Infeasible ones compete on how far they miss first:
    // ranking them by processor count would reward emptying the machine
    // and strand the search away from feasibility.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (!self.feasible).cmp(&!other.feasible).then_with(|| {
            if self.feasible {
                (self.processors, self.mig_cost_total)
                    .cmp(&(other.processors, other.mig_cost_total))
            } else {
                (self.shortfall, self.processors, self.mig_cost_total).cmp(&(
                    other.shortfall,
                    other.processors,
                    other.mig_cost_total,
                ))
            }
        })
    }
}

impl PartialOrd for Fitness {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Maps chromosome positions to (mode, task, instance) slots.
#[derive(Debug, Clone)]
pub struct GeneLayout {
    /// Per mode (spec order): per task, number of genes (1, or the
    /// repetition count under instance mapping).
    slots: Vec<Vec<usize>>,
}

impl GeneLayout {
    pub fn new(spec: &MmdfSpec) -> Result<Self, AnalysisError> {
        let mut slots = Vec::new();
        for mode in spec.mode_names() {
            let reps = spec.repetition_vector(mode)?;
            let per_task = reps
                .iter()
                .map(|&r| if spec.instance_mapping { r as usize } else { 1 })
                .collect();
            slots.push(per_task);
        }
        Ok(GeneLayout { slots })
    }

    pub fn total_genes(&self) -> usize {
        self.slots.iter().flatten().sum()
    }

    pub fn decode(&self, spec: &MmdfSpec, genes: &[ProcId]) -> MappingSolution {
        assert_eq!(genes.len(), self.total_genes());
        let mut per_mode = BTreeMap::new();
        let mut next = 0;
        for (mi, mode) in spec.mode_names().into_iter().enumerate() {
            let mut per_task = Vec::with_capacity(spec.tasks.len());
            for &count in &self.slots[mi] {
                per_task.push(genes[next..next + count].to_vec());
                next += count;
            }
            per_mode.insert(mode.to_string(), ModeMapping { per_task });
        }
        MappingSolution { per_mode }
    }

    pub fn encode(&self, spec: &MmdfSpec, solution: &MappingSolution) -> Vec<ProcId> {
        let mut genes = Vec::with_capacity(self.total_genes());
        for (mi, mode) in spec.mode_names().into_iter().enumerate() {
            let mapping = solution.mapping(mode);
            for (t, &count) in self.slots[mi].iter().enumerate() {
                let procs = &mapping.per_task[t];
                if procs.len() == count {
                    genes.extend_from_slice(procs);
                } else {
                    assert_eq!(procs.len(), 1, "mapping width mismatches gene layout");
                    genes.extend(std::iter::repeat(procs[0]).take(count));
                }
            }
        }
        genes
    }
}

/// Scores one solution: schedules every mode, derives the tightened
/// requirements, and folds any misses into the shortfall tail key.
pub fn evaluate(
    spec: &MmdfSpec,
    solution: &MappingSolution,
    unroll: u64,
) -> Result<(Fitness, Analysis), AnalysisError> {
    let a = analyze(spec, solution, unroll)?;
    let mut shortfall = Rational::zero();
    for mode in spec.mode_names() {
        match a.thr_require[mode] {
            ThrRequire::Finite(req) => {
                let thr = a.schedules[mode].throughput();
                if thr < req {
                    shortfall += req - thr;
                }
            }
            ThrRequire::Infeasible => {
                // Exceeds any finite miss: one whole unit plus how far the
                // delay overruns the mode's residency budget.
                let mrc = spec.mode(mode).expect("validated mode").mrc;
                let overrun = a.max_trans_delay[mode] * spec.throughput_constraint
                    - Rational::from_integer(mrc as i128);
                shortfall += Rational::from_integer(1) + overrun;
            }
        }
    }
    let fitness = Fitness {
        feasible: a.feasible,
        processors: a.processors,
        mig_cost_total: a.mig_cost_total,
        shortfall,
    };
    Ok((fitness, a))
}

/// Relabels each mode's processor ids to mimic the mode it is entered
/// from: per transition, every current-mode processor claims the unclaimed
/// next-mode processor holding the most tasks in common. A relabeling is
/// kept only if it does not increase the total migration cost, so the
/// result never ranks worse than the input. Per-mode co-residency, and
/// hence every schedule, is untouched.
pub fn rename_processors(spec: &MmdfSpec, solution: &MappingSolution) -> MappingSolution {
    let mut sol = solution.clone();
    let mut transitions = spec.mtg.transitions.clone();
    transitions.sort();
    let pool = spec.processor_pool;
    for (cm, nm) in &transitions {
        let mut claimed = vec![false; pool];
        let mut relabel = vec![0; pool];
        for c_id in 0..pool {
            let mut best_n = usize::MAX;
            let mut best_sim = 0;
            for n_id in 0..pool {
                if claimed[n_id] {
                    continue;
                }
                let s = similarity(spec, &sol, cm, c_id, nm, n_id);
                if best_n == usize::MAX || s > best_sim {
                    best_n = n_id;
                    best_sim = s;
                }
            }
            claimed[best_n] = true;
            relabel[best_n] = c_id;
        }
        let mapping = sol.mapping(nm);
        let renamed = ModeMapping {
            per_task: mapping
                .per_task
                .iter()
                .map(|procs| procs.iter().map(|&p| relabel[p]).collect())
                .collect(),
        };
        let mut candidate = sol.clone();
        candidate.per_mode.insert(nm.clone(), renamed);
        if mig_cost_total(spec, &candidate) <= mig_cost_total(spec, &sol) {
            sol = candidate;
        }
    }
    sol
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationStat<F> {
    pub generation: u64,
    pub best: F,
    pub median: F,
}

pub struct GaOutcome<F> {
    pub genes: Vec<ProcId>,
    pub fitness: F,
    pub history: Vec<GenerationStat<F>>,
}

pub(crate) fn uniform_crossover(rng: &mut ChaCha8Rng, a: &mut [ProcId], b: &mut [ProcId]) {
    for i in 0..a.len() {
        if rng.random::<f64>() < 0.5 {
            std::mem::swap(&mut a[i], &mut b[i]);
        }
    }
}

fn mutate(rng: &mut ChaCha8Rng, genes: &mut [ProcId], pool: usize) {
    let rate = 1.0 / genes.len() as f64;
    for g in genes.iter_mut() {
        if rng.random::<f64>() < rate {
            *g = rng.random_range(0..pool);
        }
    }
}

fn tournament<F: Ord>(rng: &mut ChaCha8Rng, pop: &[(Vec<ProcId>, F)]) -> usize {
    let i = rng.random_range(0..pop.len());
    let j = rng.random_range(0..pop.len());
    match pop[i].1.cmp(&pop[j].1) {
        std::cmp::Ordering::Less => i,
        std::cmp::Ordering::Greater => j,
        std::cmp::Ordering::Equal => i.min(j),
    }
}

/// Elitist (mu + lambda) loop over flat genomes. `process` may repair or
/// locally optimize the genes before scoring and returns the genome
/// actually kept. Fully deterministic for a given seed: evaluation order
/// is serial and survivor sorting falls back to gene order on fitness
/// ties.
pub fn run_ga<F, E>(
    config: &GaConfig,
    num_genes: usize,
    pool: usize,
    mut process: impl FnMut(Vec<ProcId>) -> Result<(Vec<ProcId>, F), E>,
) -> Result<GaOutcome<F>, E>
where
    F: Ord + Clone,
{
    assert!(num_genes > 0, "empty genome");
    assert!(pool > 0, "empty processor pool");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pop: Vec<(Vec<ProcId>, F)> = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let genes: Vec<ProcId> = (0..num_genes).map(|_| rng.random_range(0..pool)).collect();
        pop.push(process(genes)?);
    }
    sort_population(&mut pop);

    let mut history = Vec::with_capacity(config.max_generations as usize + 1);
    history.push(stat_of(0, &pop));

    for generation in 1..=config.max_generations {
        let mut offspring = Vec::with_capacity(config.lambda);
        while offspring.len() < config.lambda {
            let pa = tournament(&mut rng, &pop);
            let pb = tournament(&mut rng, &pop);
            let mut ca = pop[pa].0.clone();
            let mut cb = pop[pb].0.clone();
            if rng.random::<f64>() < config.crossover_prob {
                uniform_crossover(&mut rng, &mut ca, &mut cb);
            }
            for child in [&mut ca, &mut cb] {
                if rng.random::<f64>() < config.mutation_prob {
                    mutate(&mut rng, child, pool);
                }
            }
            offspring.push(ca);
            if offspring.len() < config.lambda {
                offspring.push(cb);
            }
        }
        for genes in offspring {
            pop.push(process(genes)?);
        }
        sort_population(&mut pop);
        pop.truncate(config.mu);
        history.push(stat_of(generation, &pop));
    }

    let (genes, fitness) = pop.swap_remove(0);
    Ok(GaOutcome {
        genes,
        fitness,
        history,
    })
}

fn sort_population<F: Ord>(pop: &mut [(Vec<ProcId>, F)]) {
    pop.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
}

fn stat_of<F: Ord + Clone>(generation: u64, pop: &[(Vec<ProcId>, F)]) -> GenerationStat<F> {
    GenerationStat {
        generation,
        best: pop[0].1.clone(),
        median: pop[pop.len() / 2].1.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub solution: MappingSolution,
    pub fitness: Fitness,
    pub analysis: Analysis,
    pub history: Vec<GenerationStat<Fitness>>,
}

/// Runs the full search: random initial mappings, tournament selection,
/// uniform crossover, per-gene mutation, processor renaming as local
/// optimization, elitist replacement. Infeasibility is reported through
/// `fitness.feasible`, not as an error.
pub fn evolve(spec: &MmdfSpec, config: &GaConfig, unroll: u64) -> Result<EvolveResult, AnalysisError> {
    config.validate().map_err(AnalysisError::Solution)?;
    let layout = GeneLayout::new(spec)?;
    let outcome = run_ga(config, layout.total_genes(), spec.processor_pool, |genes| {
        let solution = layout.decode(spec, &genes);
        let renamed = rename_processors(spec, &solution);
        let (fitness, _) = evaluate(spec, &renamed, unroll)?;
        let genes = layout.encode(spec, &renamed);
        Ok::<_, AnalysisError>((genes, fitness))
    })?;
    let solution = layout.decode(spec, &outcome.genes);
    let (fitness, analysis) = evaluate(spec, &solution, unroll)?;
    debug_assert_eq!(fitness, outcome.fitness);
    Ok(EvolveResult {
        solution,
        fitness,
        analysis,
        history: outcome.history,
    })
}

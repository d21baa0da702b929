//! Command-line front end: analyze mappings, search for them, sweep
//! migration costs, and replay solutions against adversarial mode traces.
//!
//! Exit codes: 0 when the requested check or search succeeds, 2 when a
//! result is produced but fails its constraint (infeasible mapping, buffer
//! underflow, exhausted search), 1 for input or configuration errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdf_core::analysis::{analyze, Analysis, MappingSolution};
use mmdf_core::baselines::{run_base, run_fixed, BaseOutcome, BaselineError};
use mmdf_core::ga::{evolve, EvolveResult, Fitness, GaConfig, GenerationStat};
use mmdf_core::model::MmdfSpec;
use mmdf_core::schedule::{gantt_svg, gantt_text, DEFAULT_UNROLL};
use mmdf_core::sim::{simulate, trace_text, worst_case_trace, ModeTrace};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "mmdf",
    version,
    about = "Multiprocessor mapping of multi-mode dataflow applications under a throughput constraint"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analyze one mapping solution: schedules, transition delays,
    /// tightened per-mode requirements, buffer size, feasibility
    Analyze(AnalyzeArgs),
    /// Search for a mapping with the chosen strategy and write it out
    Schedule(ScheduleArgs),
    /// Run every strategy across a sweep of migration cost scales
    Compare(CompareArgs),
    /// Replay a mode trace against a solution and check the output buffer
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// Application graph (JSON)
    #[arg(long)]
    graph: PathBuf,
    /// Override the processor pool declared in the graph
    #[arg(long)]
    pool: Option<usize>,
    /// Multiply every task's migration cost by this factor
    #[arg(long)]
    mc_scale: Option<u64>,
    /// Iterations unrolled when measuring steady-state intervals
    #[arg(long)]
    unroll: Option<u64>,
}

#[derive(Args)]
struct SearchArgs {
    /// Search parameters (TOML); command-line flags win over the file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the search's random generator
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Mapping solution to analyze (JSON)
    #[arg(long)]
    mapping: PathBuf,
    /// Directory to write report.json and per-mode Gantt charts into
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    /// Genetic search over per-mode mappings with processor renaming
    Proposed,
    /// Per-mode searches stitched together, then tightened round by round
    Base,
    /// One mapping shared by every mode; migration never happens
    Fixed,
}

impl Strategy {
    fn name(self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::Base => "base",
            Strategy::Fixed => "fixed",
        }
    }
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, value_enum)]
    strategy: Strategy,
    /// Directory for mapping.json, report.json, gantt charts and the log
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Comma-separated migration cost scales, e.g. 0,10,100,1000
    #[arg(long)]
    mc_sweep: String,
    /// Directory for comparison.json
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Mapping solution to validate (JSON)
    #[arg(long)]
    solution: PathBuf,
    /// Mode trace to replay (JSON); mutually exclusive with --worst-case
    #[arg(long, conflicts_with = "worst_case")]
    trace: Option<PathBuf>,
    /// Replay the adversarial trace derived from the analysis
    #[arg(long)]
    worst_case: bool,
    /// Number of mode stays in the worst-case trace
    #[arg(long, default_value_t = 40)]
    length: usize,
    /// Override the analyzed output buffer size
    #[arg(long)]
    buffer: Option<u64>,
    /// Directory for trace.txt
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Schedule(a) => cmd_schedule(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

const CONSTRAINT_UNMET: u8 = 2;

fn load_spec(args: &GraphArgs) -> Result<MmdfSpec> {
    let mut spec = MmdfSpec::from_json_file(&args.graph)
        .with_context(|| format!("loading graph {}", args.graph.display()))?;
    if let Some(pool) = args.pool {
        spec.processor_pool = pool;
    }
    if let Some(scale) = args.mc_scale {
        for t in &mut spec.tasks {
            t.migration_cost = t.migration_cost.saturating_mul(scale);
        }
    }
    spec.validate()
        .with_context(|| format!("validating graph {}", args.graph.display()))?;
    Ok(spec)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    ga: GaSection,
    #[serde(default)]
    scheduler: SchedulerSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaSection {
    population: Option<usize>,
    mu: Option<usize>,
    lambda: Option<usize>,
    crossover_prob: Option<f64>,
    mutation_prob: Option<f64>,
    max_generations: Option<u64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulerSection {
    unroll: Option<u64>,
}

/// Search settings resolve in order: desk-scale defaults, then the config
/// file, then explicit flags.
fn resolve_config(search: &SearchArgs, graph: &GraphArgs) -> Result<(GaConfig, u64)> {
    let mut ga = GaConfig::desk();
    let mut unroll = DEFAULT_UNROLL;
    if let Some(path) = &search.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: ConfigFile = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let s = file.ga;
        ga.population = s.population.unwrap_or(ga.population);
        ga.mu = s.mu.unwrap_or(ga.mu);
        ga.lambda = s.lambda.unwrap_or(ga.lambda);
        ga.crossover_prob = s.crossover_prob.unwrap_or(ga.crossover_prob);
        ga.mutation_prob = s.mutation_prob.unwrap_or(ga.mutation_prob);
        ga.max_generations = s.max_generations.unwrap_or(ga.max_generations);
        ga.seed = s.seed.unwrap_or(ga.seed);
        unroll = file.scheduler.unroll.unwrap_or(unroll);
    }
    if let Some(seed) = search.seed {
        ga.seed = seed;
    }
    if let Some(u) = graph.unroll {
        unroll = u;
    }
    ga.validate().map_err(|m| anyhow::anyhow!(m))?;
    Ok((ga, unroll))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_analysis_outputs(
    dir: &Path,
    spec: &MmdfSpec,
    analysis: &Analysis,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = serde_json::to_string_pretty(&analysis.report()).expect("report serializes");
    write_file(dir, "report.json", &report)?;
    for (mode, sched) in &analysis.schedules {
        write_file(dir, &format!("gantt_{mode}.txt"), &gantt_text(spec, sched))?;
        write_file(dir, &format!("gantt_{mode}.svg"), &gantt_svg(spec, sched))?;
    }
    Ok(())
}

fn print_violations(analysis: &Analysis) {
    for v in &analysis.violations {
        eprintln!("violation: {v}");
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let spec = load_spec(&args.graph)?;
    let solution = MappingSolution::from_json_file(&spec, &args.mapping)
        .with_context(|| format!("loading mapping {}", args.mapping.display()))?;
    let unroll = args.graph.unroll.unwrap_or(DEFAULT_UNROLL);
    let analysis = analyze(&spec, &solution, unroll)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&analysis.report()).expect("report serializes")
    );
    if let Some(dir) = &args.out_dir {
        write_analysis_outputs(dir, &spec, &analysis)?;
    }
    if analysis.feasible {
        Ok(ExitCode::SUCCESS)
    } else {
        print_violations(&analysis);
        Ok(ExitCode::from(CONSTRAINT_UNMET))
    }
}

fn history_log(history: &[GenerationStat<Fitness>]) -> String {
    let mut out = String::new();
    for s in history {
        let _ = writeln!(
            out,
            "generation={} best_feasible={} best_processors={} best_migration_cost={} \
             best_shortfall={} median_feasible={} median_processors={} \
             median_migration_cost={} median_shortfall={}",
            s.generation,
            s.best.feasible,
            s.best.processors,
            s.best.mig_cost_total,
            s.best.shortfall,
            s.median.feasible,
            s.median.processors,
            s.median.mig_cost_total,
            s.median.shortfall,
        );
    }
    out
}

fn rounds_log(outcome: &BaseOutcome) -> String {
    let mut out = String::new();
    for (i, round) in outcome.rounds.iter().enumerate() {
        let counts: Vec<String> = round.iter().map(|(m, k)| format!("{m}={k}")).collect();
        let _ = writeln!(out, "round={} {}", i + 1, counts.join(" "));
    }
    out
}

fn cmd_schedule(args: ScheduleArgs) -> Result<ExitCode> {
    let spec = load_spec(&args.graph)?;
    let (config, unroll) = resolve_config(&args.search, &args.graph)?;

    let (result, log): (EvolveResult, String) = match args.strategy {
        Strategy::Proposed => {
            let r = evolve(&spec, &config, unroll)?;
            let log = history_log(&r.history);
            (r, log)
        }
        Strategy::Fixed => {
            let r = run_fixed(&spec, &config, unroll)?;
            let log = history_log(&r.history);
            (r, log)
        }
        Strategy::Base => match run_base(&spec, &config, unroll) {
            Ok(outcome) => {
                let log = rounds_log(&outcome);
                (outcome.result, log)
            }
            Err(BaselineError::NoFeasibleSolution { reason }) => {
                eprintln!("no feasible solution: {reason}");
                return Ok(ExitCode::from(CONSTRAINT_UNMET));
            }
            Err(BaselineError::Analysis(e)) => return Err(e.into()),
        },
    };

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    write_file(&args.out_dir, "mapping.json", &result.solution.to_json_string(&spec))?;
    write_file(&args.out_dir, "evolution.log", &log)?;
    write_analysis_outputs(&args.out_dir, &spec, &result.analysis)?;

    println!(
        "strategy={} feasible={} processors={} migration_cost={}",
        args.strategy.name(),
        result.fitness.feasible,
        result.fitness.processors,
        result.fitness.mig_cost_total,
    );
    if result.fitness.feasible {
        Ok(ExitCode::SUCCESS)
    } else {
        print_violations(&result.analysis);
        Ok(ExitCode::from(CONSTRAINT_UNMET))
    }
}

#[derive(Debug, Serialize)]
struct StrategyCell {
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    processors: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    migration_cost: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

impl StrategyCell {
    fn from_result(r: &EvolveResult) -> Self {
        StrategyCell {
            feasible: r.fitness.feasible,
            processors: Some(r.fitness.processors),
            migration_cost: Some(r.fitness.mig_cost_total),
            reason: None,
        }
    }

    fn infeasible(reason: String) -> Self {
        StrategyCell {
            feasible: false,
            processors: None,
            migration_cost: None,
            reason: Some(reason),
        }
    }

    fn display(&self) -> String {
        match (self.feasible, self.processors) {
            (true, Some(p)) => p.to_string(),
            _ => "inf".to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    mc_scale: u64,
    strategies: BTreeMap<&'static str, StrategyCell>,
}

#[derive(Debug, Serialize)]
struct Comparison {
    sweep: Vec<u64>,
    rows: Vec<ComparisonRow>,
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let sweep: Vec<u64> = args
        .mc_sweep
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .with_context(|| format!("invalid migration cost scale `{s}`"))
        })
        .collect::<Result<_>>()?;
    if sweep.is_empty() {
        bail!("--mc-sweep needs at least one scale, e.g. 0,10,100,1000");
    }
    let (config, unroll) = resolve_config(&args.search, &args.graph)?;

    let mut rows = Vec::new();
    for &scale in &sweep {
        let scaled = GraphArgs {
            graph: args.graph.graph.clone(),
            pool: args.graph.pool,
            mc_scale: Some(scale),
            unroll: args.graph.unroll,
        };
        let spec = load_spec(&scaled)?;

        let mut strategies = BTreeMap::new();
        let proposed = evolve(&spec, &config, unroll)?;
        strategies.insert("proposed", StrategyCell::from_result(&proposed));
        let fixed = run_fixed(&spec, &config, unroll)?;
        strategies.insert("fixed", StrategyCell::from_result(&fixed));
        let base = match run_base(&spec, &config, unroll) {
            Ok(outcome) => StrategyCell::from_result(&outcome.result),
            Err(BaselineError::NoFeasibleSolution { reason }) => {
                StrategyCell::infeasible(reason)
            }
            Err(BaselineError::Analysis(e)) => return Err(e.into()),
        };
        strategies.insert("base", base);

        println!(
            "mc_scale={scale} proposed={} base={} fixed={}",
            strategies["proposed"].display(),
            strategies["base"].display(),
            strategies["fixed"].display(),
        );
        rows.push(ComparisonRow {
            mc_scale: scale,
            strategies,
        });
    }

    let comparison = Comparison { sweep, rows };
    let text = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(dir, "comparison.json", &text)?;
    } else {
        println!("{text}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let spec = load_spec(&args.graph)?;
    let solution = MappingSolution::from_json_file(&spec, &args.solution)
        .with_context(|| format!("loading solution {}", args.solution.display()))?;
    let unroll = args.graph.unroll.unwrap_or(DEFAULT_UNROLL);
    let analysis = analyze(&spec, &solution, unroll)?;
    if !analysis.feasible {
        eprintln!("warning: solution fails the static analysis, replaying anyway");
        print_violations(&analysis);
    }

    let trace = if let Some(path) = &args.trace {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading trace {}", path.display()))?;
        let t: ModeTrace = serde_json::from_str(&text)
            .with_context(|| format!("parsing trace {}", path.display()))?;
        t.validate(&spec)?;
        t
    } else if args.worst_case {
        worst_case_trace(&spec, &analysis.trans_delay, args.length)
    } else {
        bail!("pass either --worst-case or --trace <file>");
    };

    let buffer = args.buffer.unwrap_or(analysis.output_buffer_size);
    let sim = simulate(&spec, &analysis, &trace, buffer)?;
    let text = trace_text(&sim);
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(dir, "trace.txt", &text)?;
    }

    println!(
        "buffer={buffer} stays={} events={} result={}",
        trace.stays.len(),
        sim.events.len(),
        if sim.pass { "pass" } else { "fail" },
    );
    if sim.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some(t) = sim.first_underflow {
            eprintln!("output buffer underflows at t={t}");
        }
        Ok(ExitCode::from(CONSTRAINT_UNMET))
    }
}

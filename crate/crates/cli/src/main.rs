use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ecoplan::format::sig6;
use ecoplan::heuristic::HeuristicKind;
use ecoplan::planner::{write_trajectory_csv, write_tree_csv};
use ecoplan::sim::{self, mean_std, Perturbation, RunOptions, Scenario, SimLog};

#[derive(Parser)]
#[command(name = "ecoplan", version, about = "Energy-optimal space-time motion planning and closed-loop simulation")]
struct Cli {
    /// Directory searched for `<name>.json` before the bundled scenarios
    #[arg(long, global = true, env = "ECOPLAN_SCENARIO_DIR")]
    scenario_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan once from the scenario's initial state
    Plan(PlanArgs),
    /// Run the closed-loop simulation
    Simulate(SimulateArgs),
    /// Compare heuristics over seeded perturbations
    Bench(BenchArgs),
    /// Dump the cost-to-go map as CSV
    Heatmap(HeatmapArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Heuristic {
    Dp,
    Mb,
    Zero,
}

impl From<Heuristic> for HeuristicKind {
    fn from(h: Heuristic) -> Self {
        match h {
            Heuristic::Dp => HeuristicKind::Dp,
            Heuristic::Mb => HeuristicKind::Mb,
            Heuristic::Zero => HeuristicKind::Zero,
        }
    }
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file, or name of a scenario in the scenario directory or bundled set
    #[arg(long, short = 's')]
    scenario: String,
}

#[derive(Args)]
struct Spread {
    /// Standard deviation of agent start positions [m]
    #[arg(long)]
    sigma_s: Option<f64>,
    /// Standard deviation of agent start velocities [m/s]
    #[arg(long)]
    sigma_v: Option<f64>,
}

impl Spread {
    fn resolve(&self) -> Option<Perturbation> {
        match (self.sigma_s, self.sigma_v) {
            (None, None) => None,
            (s, v) => Some(Perturbation { sigma_s: s.unwrap_or(0.0), sigma_v: v.unwrap_or(0.0) }),
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value = "dp")]
    heuristic: Heuristic,
    /// Output directory
    #[arg(long, short = 'o', default_value = "out")]
    out: PathBuf,
    /// Also write the closed nodes of the search tree
    #[arg(long)]
    dump_tree: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value = "dp")]
    heuristic: Heuristic,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    spread: Spread,
    /// Forbid lane changes
    #[arg(long)]
    lane_keeping: bool,
    #[arg(long, short = 'o', default_value = "out")]
    out: PathBuf,
    /// Also write wall-clock planning times (not reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Heuristics to compare (repeatable)
    #[arg(long, value_enum, required = true)]
    heuristic: Vec<Heuristic>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
    /// First seed; runs use seed, seed + 1, ...
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    spread: Spread,
    /// Directory for a per-run CSV log
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, short = 'o', default_value = "heatmap.csv")]
    out: PathBuf,
}

fn resolve_scenario(name: &str, dir: Option<&Path>) -> Result<Scenario> {
    let direct = Path::new(name);
    if direct.is_file() {
        return sim::load_scenario(direct).with_context(|| format!("loading {name}"));
    }
    if let Some(dir) = dir {
        let candidate = dir.join(format!("{name}.json"));
        if candidate.is_file() {
            return sim::load_scenario(&candidate).with_context(|| format!("loading {}", candidate.display()));
        }
    }
    sim::bundled(name).with_context(|| format!("scenario `{name}` is neither a file nor a known scenario"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_plan(args: &PlanArgs, dir: Option<&Path>) -> Result<bool> {
    let sc = resolve_scenario(&args.scenario.scenario, dir)?;
    let res = sim::plan_once(&sc, args.heuristic.into(), args.dump_tree)?;
    fs::create_dir_all(&args.out)?;
    write_trajectory_csv(&res.trajectory, create(&args.out.join("trajectory.csv"))?)?;
    if args.dump_tree {
        write_tree_csv(&res.tree, create(&args.out.join("tree.csv"))?)?;
    }
    let mut summary = create(&args.out.join("plan.txt"))?;
    writeln!(summary, "termination {}", res.termination.name())?;
    writeln!(summary, "nodes_expanded {}", res.nodes_expanded)?;
    writeln!(summary, "reached_progress {}", sig6(res.reached_progress))?;
    writeln!(summary, "total_cost_kj {}", sig6(res.trajectory.total_cost / 1000.0))?;
    writeln!(summary, "segments {}", res.trajectory.segments.len())?;
    summary.flush()?;
    println!(
        "{}: {} after {} expansions, cost {} kJ, planning time {} ms",
        sc.name,
        res.termination.name(),
        res.nodes_expanded,
        sig6(res.trajectory.total_cost / 1000.0),
        sig6(res.planning_time * 1000.0)
    );
    Ok(true)
}

fn cmd_simulate(args: &SimulateArgs, dir: Option<&Path>) -> Result<bool> {
    let sc = resolve_scenario(&args.scenario.scenario, dir)?;
    let opts = RunOptions {
        perturb: args.spread.resolve(),
        seed: args.seed,
        allow_lane_changes: args.lane_keeping.then_some(false),
        ..RunOptions::new(args.heuristic.into())
    };
    let log = sim::run_with(&sc, &opts)?;
    fs::create_dir_all(&args.out)?;
    let mut f = create(&args.out.join("summary.json"))?;
    f.write_all(log.summary_json().as_bytes())?;
    f.flush()?;
    log.write_ticks_csv(create(&args.out.join("ticks.csv"))?)?;
    if args.timing {
        log.write_timing_csv(create(&args.out.join("timing.csv"))?)?;
    }
    let m = &log.metrics;
    println!(
        "{} seed {}: {:?}, travel time {} s, energy {} kJ, {} cycles, {} fallbacks, nodes {} ± {}",
        log.scenario,
        log.seed,
        log.outcome,
        m.travel_time.map_or("-".into(), sig6),
        sig6(m.total_cost_kj),
        m.cycles,
        m.fallbacks,
        sig6(m.nodes_mean),
        sig6(m.nodes_std)
    );
    Ok(log.is_collision_free())
}

fn cmd_bench(args: &BenchArgs, dir: Option<&Path>) -> Result<bool> {
    let sc = resolve_scenario(&args.scenario.scenario, dir)?;
    let perturb = args.spread.resolve().or(sc.perturbation);
    let mut ok = true;
    let mut rows = Vec::new();
    let mut runs: Vec<(HeuristicKind, SimLog)> = Vec::new();
    for &h in &args.heuristic {
        let kind: HeuristicKind = h.into();
        let mut logs = Vec::new();
        for k in 0..args.repeats {
            let opts = RunOptions { perturb, seed: Some(args.seed + k), ..RunOptions::new(kind) };
            let log = sim::run_with(&sc, &opts)?;
            if !log.is_collision_free() {
                log::error!("{kind} seed {}: {:?}", log.seed, log.outcome);
                ok = false;
            }
            logs.push(log);
        }
        let per_cycle = |f: &dyn Fn(&SimLog) -> Vec<f64>| -> (f64, f64) { mean_std(&logs.iter().flat_map(f).collect::<Vec<_>>()) };
        let time = per_cycle(&|l| l.cycles.iter().map(|c| c.planning_time * 1000.0).collect());
        let nodes = per_cycle(&|l| l.cycles.iter().map(|c| c.nodes_expanded as f64).collect());
        let cost = mean_std(&logs.iter().map(|l| l.metrics.total_cost_kj).collect::<Vec<_>>());
        let travel = mean_std(&logs.iter().filter_map(|l| l.metrics.travel_time).collect::<Vec<_>>());
        rows.push((kind, time, nodes, cost, travel));
        runs.extend(logs.into_iter().map(|l| (kind, l)));
    }

    let pm = |(m, s): (f64, f64)| format!("{} ± {}", sig6(m), sig6(s));
    println!("{:<10}{:>26}{:>22}{:>22}{:>22}", "heuristic", "planning time [ms]", "nodes exp.", "cost [kJ]", "travel time [s]");
    for (kind, time, nodes, cost, travel) in &rows {
        println!("{:<10}{:>26}{:>22}{:>22}{:>22}", kind.name(), pm(*time), pm(*nodes), pm(*cost), pm(*travel));
    }

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        let mut f = create(&out.join("bench.csv"))?;
        writeln!(f, "heuristic,seed,outcome,cycles,nodes_mean,nodes_median,cost_kj,travel_time")?;
        for (kind, l) in &runs {
            let outcome = serde_outcome(l);
            let m = &l.metrics;
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                kind.name(),
                l.seed,
                outcome,
                m.cycles,
                sig6(m.nodes_mean),
                sig6(m.nodes_median),
                sig6(m.total_cost_kj),
                m.travel_time.map_or(String::new(), sig6)
            )?;
        }
        f.flush()?;
    }
    Ok(ok)
}

fn serde_outcome(l: &SimLog) -> &'static str {
    match l.outcome {
        sim::Outcome::Completed => "completed",
        sim::Outcome::TimeLimit => "time_limit",
        sim::Outcome::Collision { .. } => "collision",
        sim::Outcome::Aborted => "aborted",
    }
}

fn cmd_heatmap(args: &HeatmapArgs, dir: Option<&Path>) -> Result<bool> {
    let sc = resolve_scenario(&args.scenario.scenario, dir)?;
    let map = sim::route_map(&sc)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = create(&args.out)?;
    map.write_csv(&mut f)?;
    f.flush()?;
    println!("wrote {} rows x {} velocities to {}", map.rows(), map.n_v(), args.out.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let dir = cli.scenario_dir.as_deref();
    let result = match &cli.command {
        Command::Plan(a) => cmd_plan(a, dir),
        Command::Simulate(a) => cmd_simulate(a, dir),
        Command::Bench(a) => cmd_bench(a, dir),
        Command::Heatmap(a) => cmd_heatmap(a, dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

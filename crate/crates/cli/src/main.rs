//! `gridgame` command line: episodes, benchmarks, single solves and the
//! HTTP service.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gridgame::agents::{AgentKind, AgentSpec};
use gridgame::builtins;
use gridgame::chronics::{self, Chronic, InjectionSet};
use gridgame::environment::{solve_topology, EnvConfig};
use gridgame::grid_model::GridCase;
use gridgame::runner::{benchmark, run_episode};
use gridgame_service::ServiceConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gridgame", version, about = "Power grid operation game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one episode and print one JSON record per step.
    Run(RunArgs),
    /// Run several agents over several seeds on the same chronic.
    Benchmark(BenchArgs),
    /// Solve the reference state of a case and dump the flows.
    Solve(SolveArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Scenario {
    /// Builtin case name or MATPOWER file.
    #[arg(long, default_value = "case4gs")]
    case: String,
    /// Builtin chronic name or CSV file. Defaults to the case's first chronic.
    #[arg(long)]
    chronic: Option<String>,
    /// Environment settings, TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only play the first N steps of the chronic.
    #[arg(long)]
    steps: Option<usize>,
    /// Print aligned text instead of JSON lines.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: Scenario,
    #[arg(long, default_value = "do_nothing")]
    agent: AgentKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Let the greedy agent also consider doing nothing.
    #[arg(long)]
    with_noop: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: Scenario,
    /// Comma-separated agent kinds.
    #[arg(long, value_delimiter = ',', default_value = "do_nothing,random_line,random_split,greedy_line")]
    agents: Vec<AgentKind>,
    /// `A..B` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..3", value_parser = parse_seeds)]
    seeds: Seeds,
    #[arg(long)]
    with_noop: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    case: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Idle seconds before a session is dropped.
    #[arg(long, default_value_t = 3600)]
    session_ttl: u64,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |_| format!("bad seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(bad)?;
        let b: u64 = b.trim_start_matches('=').trim().parse().map_err(bad)?;
        if b < a {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    let seeds = s
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(bad)?;
    if seeds.is_empty() {
        return Err("no seeds".into());
    }
    Ok(Seeds(seeds))
}

fn load_config(path: Option<&Path>) -> Result<EnvConfig> {
    let Some(path) = path else {
        return Ok(EnvConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(config)
}

struct Loaded {
    grid: GridCase,
    chronic: Chronic,
    config: EnvConfig,
}

fn load(s: &Scenario) -> Result<Loaded> {
    let (case_id, grid) = builtins::load_case(&s.case).with_context(|| format!("loading case {}", s.case))?;
    let chronic_name = match &s.chronic {
        Some(c) => c.clone(),
        None => builtins::CHRONICS
            .iter()
            .find(|(_, case)| *case == case_id)
            .map(|(c, _)| c.to_string())
            .with_context(|| format!("case {case_id} has no builtin chronic, pass --chronic"))?,
    };
    if let Some(owner) = builtins::chronic_case(&chronic_name) {
        if owner != case_id {
            bail!("chronic {chronic_name} belongs to case {owner}, not {case_id}");
        }
    }
    let mut chronic = chronics::load_chronic(&chronic_name, &grid, &case_id)
        .with_context(|| format!("loading chronic {chronic_name}"))?;
    if let Some(n) = s.steps {
        chronic = chronic.truncated(n);
    }
    let config = load_config(s.config.as_deref())?;
    config.check(&config.prepare_grid(&grid)?)?;
    Ok(Loaded { grid, chronic, config })
}

fn run(args: RunArgs) -> Result<()> {
    let l = load(&args.scenario)?;
    let spec = AgentSpec {
        kind: args.agent,
        seed: args.seed,
        with_noop: args.with_noop,
    };
    let run = run_episode(&l.grid, l.chronic, spec, &l.config)?;
    let log = run.log;
    let mut out = io::stdout().lock();
    if args.scenario.table {
        write!(out, "{}", log.table())?;
        return Ok(());
    }
    for (r, dt) in log.records.iter().zip(&run.step_times) {
        let mut v = serde_json::to_value(r)?;
        v["record"] = json!("step");
        v["elapsed_ms"] = json!(dt.as_secs_f64() * 1e3);
        writeln!(out, "{v}")?;
    }
    let summary = json!({
        "record": "summary",
        "agent": log.agent,
        "seed": log.seed,
        "gamma": log.gamma,
        "steps": log.records.len(),
        "discounted_return": log.discounted_return,
        "epochs": log.epochs,
        "steps_survived": log.steps_survived,
        "mean_overflow_count": log.mean_overflow_count(),
    });
    writeln!(out, "{summary}")?;
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let l = load(&args.scenario)?;
    if args.agents.is_empty() {
        bail!("no agents given");
    }
    let agents: Vec<AgentSpec> = args
        .agents
        .iter()
        .map(|&kind| AgentSpec {
            kind,
            seed: 0,
            with_noop: args.with_noop,
        })
        .collect();
    let (table, _) = benchmark(&l.grid, &l.chronic, &agents, &args.seeds.0, &l.config)?;
    let mut out = io::stdout().lock();
    if args.scenario.table {
        write!(out, "{table}")?;
        return Ok(());
    }
    for row in &table.rows {
        let mut v = serde_json::to_value(row)?;
        v["record"] = json!("benchmark");
        v["seeds"] = json!(table.seeds);
        writeln!(out, "{v}")?;
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let (case_id, grid) = builtins::load_case(&args.case).with_context(|| format!("loading case {}", args.case))?;
    let inj = InjectionSet::from_case(&grid);
    let s = solve_topology(&grid, &grid.reference_topology, &inj)?;
    let branches: Vec<_> = grid
        .branches
        .iter()
        .enumerate()
        .map(|(k, b)| {
            json!({
                "branch": k,
                "from": grid.substations[b.origin].id,
                "to": grid.substations[b.extremity].id,
                "p_mw": s.branch_p[k],
                "loading": s.branch_current_proxy[k] / grid.thermal_limits[k],
            })
        })
        .collect();
    let dump = json!({
        "case": case_id,
        "substations": grid.n_substations(),
        "converged": s.converged,
        "theta": s.theta,
        "branches": branches,
    });
    println!("{}", serde_json::to_string_pretty(&dump)?);
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        let config = ServiceConfig {
            session_ttl: Duration::from_secs(args.session_ttl),
        };
        gridgame_service::serve(listener, config).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Benchmark(a) => bench(a),
        Command::Solve(a) => solve(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // A closed stdout, e.g. piped into `head`, is not a failure.
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Episode runner and benchmark harness.
//!
//! An episode plays a whole chronic. A load cut ends the current epoch; the
//! grid goes back to its reference topology and play continues with the next
//! timestep of the chronic.
//!
//! ```
//! use gridgame::{agents::{AgentKind, AgentSpec}, builtins, environment::EnvConfig, runner};
//!
//! let grid = builtins::grid("case4gs").unwrap();
//! let chronic = builtins::chronic("case4gs-crisis", &grid).unwrap().unwrap();
//! let run = runner::run_episode(&grid, chronic, AgentSpec::new(AgentKind::DoNothing, 0), &EnvConfig::default()).unwrap();
//! assert_eq!(run.log.records.len(), 2);
//! assert!(run.log.records[1].done);
//! ```

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError, AgentSpec};
use crate::chronics::Chronic;
use crate::environment::{EnvConfig, EnvError, Environment, RewardBreakdown};
use crate::grid_model::GridCase;

/// One LARSO cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub action: String,
    pub reward: RewardBreakdown,
    /// Lines overflowed right after the action, before the cascade.
    pub overflow_count: usize,
    /// Lines tripped by the cascade.
    pub tripped: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub agent: String,
    pub seed: u64,
    pub gamma: f64,
    pub records: Vec<StepRecord>,
    /// `sum_k gamma^k r_k` over the records, in order.
    pub discounted_return: f64,
    /// Epochs started, i.e. one plus the number of game overs followed by
    /// another step.
    pub epochs: usize,
    /// Steps that did not end in a load cut.
    pub steps_survived: usize,
}

impl EpisodeLog {
    pub fn mean_overflow_count(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.overflow_count as f64).sum::<f64>() / self.records.len() as f64
    }

    /// Aligned text table, one line per step.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:>5}  {:<24} {:>12} {:>12} {:>10} {:>8} {:>12} {:>4} {:>5}\n",
            "t", "action", "line_usage", "load_cut", "action", "dist", "total", "ovf", "done"
        );
        for r in &self.records {
            let mut action = r.action.clone();
            if action.len() > 24 {
                action.truncate(21);
                action.push_str("...");
            }
            out.push_str(&format!(
                "{:>5}  {:<24} {:>12.4} {:>12.1} {:>10.3} {:>8.1} {:>12.4} {:>4} {:>5}\n",
                r.t,
                action,
                r.reward.line_usage,
                r.reward.load_cut,
                r.reward.action_cost,
                r.reward.distance_to_reference,
                r.reward.total,
                r.overflow_count,
                r.done
            ));
        }
        out.push_str(&format!(
            "return G0 = {:.6} (gamma {}), epochs {}, steps survived {}/{}\n",
            self.discounted_return,
            self.gamma,
            self.epochs,
            self.steps_survived,
            self.records.len()
        ));
        out
    }
}

/// `sum_k gamma^k rewards[k]`, accumulated front to back.
pub fn discounted_return(rewards: impl IntoIterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// A log plus wall-clock times, kept apart so logs compare bit for bit.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub log: EpisodeLog,
    pub step_times: Vec<Duration>,
}

#[derive(Debug, Error)]
#[error("step {step}: {source}")]
pub struct RunError {
    pub step: usize,
    #[source]
    pub source: RunErrorKind,
}

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

fn at<E: Into<RunErrorKind>>(step: usize) -> impl FnOnce(E) -> RunError {
    move |e| RunError {
        step,
        source: e.into(),
    }
}

pub fn run_episode(grid: &GridCase, chronic: Chronic, spec: AgentSpec, config: &EnvConfig) -> Result<EpisodeRun, RunError> {
    let prepared = Arc::new(config.prepare_grid(grid).map_err(at(0))?);
    let mut agent = spec.build();
    run_prepared(prepared, chronic, agent.as_mut(), spec.seed, config)
}

/// Runs any agent, e.g. a scripted one.
pub fn run_episode_with(grid: &GridCase, chronic: Chronic, agent: &mut dyn Agent, config: &EnvConfig) -> Result<EpisodeRun, RunError> {
    let prepared = Arc::new(config.prepare_grid(grid).map_err(at(0))?);
    run_prepared(prepared, chronic, agent, 0, config)
}

fn run_prepared(
    grid: Arc<GridCase>,
    mut chronic: Chronic,
    agent: &mut dyn Agent,
    seed: u64,
    config: &EnvConfig,
) -> Result<EpisodeRun, RunError> {
    let mut log = EpisodeLog {
        agent: agent.name().to_string(),
        seed,
        gamma: config.gamma,
        records: Vec::new(),
        discounted_return: 0.0,
        epochs: 0,
        steps_survived: 0,
    };
    let mut step_times = Vec::new();
    let Some(first) = chronic.next() else {
        return Ok(EpisodeRun { log, step_times });
    };
    let mut env = Environment::with_prepared(grid, config.clone(), first).map_err(at(0))?;
    let mut observation = env.observe().map_err(at(0))?;
    log.epochs = 1;

    loop {
        let t = env.step_index();
        let started = Instant::now();
        let action = agent
            .act(&observation, env.grid(), Some(&env))
            .map_err(at(t))?;
        let next = chronic.next();
        let out = env.step(&action, next.as_ref()).map_err(at(t))?;
        step_times.push(started.elapsed());
        log.records.push(StepRecord {
            t,
            action: action.summary(),
            reward: out.reward,
            overflow_count: out.info.overflowed_after_action.len(),
            tripped: out
                .info
                .cascade_frames
                .iter()
                .map(|f| f.overflowed.len())
                .sum(),
            done: out.done,
        });
        let Some(next) = next else { break };
        observation = if out.done {
            log.epochs += 1;
            env.reset(next).map_err(at(t + 1))?
        } else {
            out.observation.expect("observation after a non-terminal step")
        };
    }

    log.discounted_return = discounted_return(log.records.iter().map(|r| r.reward.total), config.gamma);
    log.steps_survived = log.records.iter().filter(|r| !r.done).count();
    Ok(EpisodeRun { log, step_times })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub agent: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub mean_steps_survived: f64,
    pub mean_overflow_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<BenchmarkRow>,
}

impl fmt::Display for BenchmarkTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>8} {:>14} {:>14} {:>14} {:>10} {:>10}",
            "agent", "episodes", "mean G0", "min G0", "max G0", "survived", "overflows"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>8} {:>14.4} {:>14.4} {:>14.4} {:>10.2} {:>10.3}",
                r.agent, r.episodes, r.mean_return, r.min_return, r.max_return, r.mean_steps_survived, r.mean_overflow_count
            )?;
        }
        Ok(())
    }
}

/// Every agent against every seed on the same chronic, episodes in parallel.
///
/// Each agent spec is run once per seed with its seed replaced.
pub fn benchmark(
    grid: &GridCase,
    chronic: &Chronic,
    agents: &[AgentSpec],
    seeds: &[u64],
    config: &EnvConfig,
) -> Result<(BenchmarkTable, Vec<EpisodeLog>), RunError> {
    let prepared = Arc::new(config.prepare_grid(grid).map_err(at(0))?);
    let jobs: Vec<AgentSpec> = agents
        .iter()
        .flat_map(|a| seeds.iter().map(move |&seed| AgentSpec { seed, ..*a }))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|spec| {
            let mut agent = spec.build();
            let mut c = chronic.clone();
            c.rewind();
            run_prepared(Arc::clone(&prepared), c, agent.as_mut(), spec.seed, config).map(|r| r.log)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let rows = logs
        .chunks(seeds.len().max(1))
        .map(|chunk| {
            let n = chunk.len() as f64;
            let returns: Vec<f64> = chunk.iter().map(|l| l.discounted_return).collect();
            BenchmarkRow {
                agent: chunk[0].agent.clone(),
                episodes: chunk.len(),
                mean_return: returns.iter().sum::<f64>() / n,
                min_return: returns.iter().cloned().fold(f64::INFINITY, f64::min),
                max_return: returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean_steps_survived: chunk.iter().map(|l| l.steps_survived as f64).sum::<f64>() / n,
                mean_overflow_count: chunk.iter().map(EpisodeLog::mean_overflow_count).sum::<f64>() / n,
            }
        })
        .collect();
    Ok((
        BenchmarkTable {
            seeds: seeds.to_vec(),
            rows,
        },
        logs,
    ))
}

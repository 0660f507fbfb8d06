//! Baseline policies.
//!
//! Random agents draw from Xoshiro256++ seeded with `seed_from_u64`, and map
//! a 64-bit draw `u` to an index below `n` as `(u * n) >> 64` computed in 128
//! bits. Both are fully specified, so seeds reproduce across platforms.

use std::fmt;
use std::str::FromStr;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Action, EnvError, Environment, Observation, RewardBreakdown};
use crate::grid_model::GridCase;

/// Read-only access to the environment, as needed by look-ahead agents.
pub trait Simulator: Sync {
    fn grid(&self) -> &GridCase;
    fn simulate(&self, action: &Action) -> Result<RewardBreakdown, EnvError>;
}

impl Simulator for Environment {
    fn grid(&self) -> &GridCase {
        Environment::grid(self)
    }

    fn simulate(&self, action: &Action) -> Result<RewardBreakdown, EnvError> {
        Environment::simulate(self, action)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("this agent needs a simulator")]
    SimulateUnavailable,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("unknown agent kind `{0}`")]
    UnknownKind(String),
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    /// Chooses the next action. `sim` is `None` when the caller cannot
    /// offer look-ahead.
    fn act(&mut self, observation: &Observation, grid: &GridCase, sim: Option<&dyn Simulator>) -> Result<Action, AgentError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    DoNothing,
    RandomLine,
    RandomSplit,
    GreedyLine,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::DoNothing,
        AgentKind::RandomLine,
        AgentKind::RandomSplit,
        AgentKind::GreedyLine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::DoNothing => "do_nothing",
            AgentKind::RandomLine => "random_line",
            AgentKind::RandomSplit => "random_split",
            AgentKind::GreedyLine => "greedy_line",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, AgentError> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.as_str().replace('_', "-") == s)
            .ok_or_else(|| AgentError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    #[serde(default)]
    pub seed: u64,
    /// Greedy only: also consider doing nothing.
    #[serde(default)]
    pub with_noop: bool,
}

impl AgentSpec {
    pub fn new(kind: AgentKind, seed: u64) -> Self {
        AgentSpec {
            kind,
            seed,
            with_noop: false,
        }
    }

    pub fn build(&self) -> Box<dyn Agent> {
        match self.kind {
            AgentKind::DoNothing => Box::new(DoNothing),
            AgentKind::RandomLine => Box::new(RandomLine::new(self.seed)),
            AgentKind::RandomSplit => Box::new(RandomSplit::new(self.seed)),
            AgentKind::GreedyLine => Box::new(GreedyLine {
                with_noop: self.with_noop,
            }),
        }
    }
}

/// Uniform index below `n` from one 64-bit draw.
pub fn uniform_index(rng: &mut impl RngCore, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub struct DoNothing;

impl Agent for DoNothing {
    fn name(&self) -> &str {
        "do_nothing"
    }

    fn act(&mut self, _: &Observation, grid: &GridCase, _: Option<&dyn Simulator>) -> Result<Action, AgentError> {
        Ok(Action::do_nothing(grid))
    }
}

/// Keeps exactly one line out of service, a different one each step.
pub struct RandomLine {
    rng: Xoshiro256PlusPlus,
    last: Option<usize>,
}

impl RandomLine {
    pub fn new(seed: u64) -> Self {
        RandomLine {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            last: None,
        }
    }
}

impl Agent for RandomLine {
    fn name(&self) -> &str {
        "random_line"
    }

    fn act(&mut self, obs: &Observation, grid: &GridCase, _: Option<&dyn Simulator>) -> Result<Action, AgentError> {
        let n = grid.n_branches();
        let mut action = Action::do_nothing(grid);
        if n == 0 {
            return Ok(action);
        }
        let chosen = match self.last.filter(|_| n > 1) {
            Some(last) => {
                let k = uniform_index(&mut self.rng, n - 1);
                if k >= last {
                    k + 1
                } else {
                    k
                }
            }
            None => uniform_index(&mut self.rng, n),
        };
        // Everything else goes back in service, including lines tripped by
        // an earlier cascade.
        for (b, &status) in obs.line_status.iter().enumerate() {
            if b != chosen && status == 0 {
                action.line_switches[b] = 1;
            }
        }
        action.line_switches[chosen] = -1;
        self.last = Some(chosen);
        Ok(action)
    }
}

/// Sets one random substation to one random configuration.
pub struct RandomSplit {
    rng: Xoshiro256PlusPlus,
}

impl RandomSplit {
    pub fn new(seed: u64) -> Self {
        RandomSplit {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomSplit {
    fn name(&self) -> &str {
        "random_split"
    }

    fn act(&mut self, _: &Observation, grid: &GridCase, _: Option<&dyn Simulator>) -> Result<Action, AgentError> {
        let s = uniform_index(&mut self.rng, grid.n_substations());
        let id = uniform_index(&mut self.rng, grid.configuration_count(s));
        Ok(Action::set_configuration(grid, s, id))
    }
}

/// Simulates every single-line disconnection and plays the best one.
pub struct GreedyLine {
    pub with_noop: bool,
}

impl GreedyLine {
    /// Candidate actions in evaluation order.
    pub fn candidates(&self, grid: &GridCase) -> Vec<Action> {
        let mut c: Vec<Action> = (0..grid.n_branches())
            .map(|b| Action::switch_line(grid, b, -1))
            .collect();
        if self.with_noop {
            c.push(Action::do_nothing(grid));
        }
        c
    }

    /// Index of the largest total, first one on ties.
    pub fn argmax(rewards: &[RewardBreakdown]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in rewards.iter().enumerate() {
            if best.is_none_or(|b| r.total > rewards[b].total) {
                best = Some(i);
            }
        }
        best
    }
}

impl Agent for GreedyLine {
    fn name(&self) -> &str {
        "greedy_line"
    }

    fn act(&mut self, _: &Observation, grid: &GridCase, sim: Option<&dyn Simulator>) -> Result<Action, AgentError> {
        let sim = sim.ok_or(AgentError::SimulateUnavailable)?;
        let candidates = self.candidates(grid);
        let rewards = candidates
            .par_iter()
            .map(|a| sim.simulate(a))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match Self::argmax(&rewards) {
            Some(i) => candidates[i].clone(),
            None => Action::do_nothing(grid),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::environment::{apply_action, EnvConfig};

    fn env() -> Environment {
        let grid = builtins::grid("case4gs").unwrap();
        let mut c = builtins::chronic("case4gs-crisis", &grid).unwrap().unwrap();
        Environment::new(&grid, EnvConfig::default(), c.next().unwrap()).unwrap()
    }

    #[test]
    fn kinds_parse() {
        for k in AgentKind::ALL {
            assert_eq!(k.as_str().parse::<AgentKind>().unwrap(), k);
        }
        assert_eq!("greedy-line".parse::<AgentKind>().unwrap(), AgentKind::GreedyLine);
        assert!("clever".parse::<AgentKind>().is_err());
    }

    #[test]
    fn do_nothing_is_identity() {
        let e = env();
        let a = DoNothing.act(&e.observe().unwrap(), e.grid(), None).unwrap();
        assert!(a.is_do_nothing());
    }

    #[test]
    fn greedy_needs_simulator() {
        let e = env();
        let mut g = GreedyLine { with_noop: false };
        assert_eq!(
            g.act(&e.observe().unwrap(), e.grid(), None),
            Err(AgentError::SimulateUnavailable)
        );
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        let r = |t| RewardBreakdown { total: t, ..Default::default() };
        assert_eq!(GreedyLine::argmax(&[r(-2.0), r(-1.0), r(-1.0)]), Some(1));
        assert_eq!(GreedyLine::argmax(&[]), None);
    }

    #[test]
    fn random_line_keeps_one_line_out() {
        let e = env();
        let grid = e.grid();
        let mut agent = RandomLine::new(7);
        let mut topo = grid.reference_topology.clone();
        let mut obs = e.observe().unwrap();
        let mut previous = None;
        for _ in 0..10 {
            let a = agent.act(&obs, grid, None).unwrap();
            topo = apply_action(&topo, &a);
            assert_eq!(topo.line_status.iter().filter(|&&s| s == 0).count(), 1);
            let out = topo.line_status.iter().position(|&s| s == 0);
            assert_ne!(out, previous);
            previous = out;
            obs.line_status = topo.line_status.clone();
        }
    }

    #[test]
    fn seeds_reproduce() {
        let e = env();
        let obs = e.observe().unwrap();
        let run = |seed| {
            let mut a = RandomSplit::new(seed);
            (0..20).map(|_| a.act(&obs, e.grid(), None).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn uniform_index_stays_in_range() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
        let mut hits = [0usize; 5];
        for _ in 0..5000 {
            hits[uniform_index(&mut rng, 5)] += 1;
        }
        assert!(hits.iter().all(|&h| h > 800));
    }
}

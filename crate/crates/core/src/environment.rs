//! The game loop: action validation, cascading failures, reward and
//! observation.
//!
//! One call to [`Environment::step`] plays the second half of a timestep and
//! the first half of the next one:
//!
//! 1. the action is applied to the topology and the grid is solved with the
//!    current injections, tripping overflowed lines until the flows settle
//!    (the half-step state `s_{t+0.5}`);
//! 2. the reward is computed from that state and the action;
//! 3. unless load was cut, the next injections are loaded and the grid is
//!    solved again (`s_{t+1}`), which is what the returned observation shows.
//!
//! ```
//! use gridgame::{builtins, environment::{Action, EnvConfig, Environment}};
//!
//! let grid = builtins::grid("case4gs").unwrap();
//! let mut chronic = builtins::chronic("case4gs-crisis", &grid).unwrap().unwrap();
//! let first = chronic.next().unwrap();
//! let mut env = Environment::new(&grid, EnvConfig::default(), first).unwrap();
//!
//! let noop = Action::do_nothing(env.grid());
//! let out = env.step(&noop, chronic.next().as_ref()).unwrap();
//! assert!((out.reward.total + 2.468).abs() < 1e-3);
//! assert!(!out.done);
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chronics::InjectionSet;
use crate::dc_power_flow::{self, DcSolution, PowerFlowError};
use crate::grid_model::{self, ConfigurationCap, GridCase, GridError, TopologyState};

/// Slack used when comparing a loading ratio with 1.
pub const OVERFLOW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    /// Per branch: 1 switch on, -1 switch off, 0 leave as is.
    pub line_switches: Vec<i32>,
    /// Per substation: `None` to keep the configuration, or a one-hot vector
    /// over that substation's configurations.
    pub substation_choices: Vec<Option<Vec<i32>>>,
}

impl Action {
    pub fn do_nothing(grid: &GridCase) -> Self {
        Action {
            line_switches: vec![0; grid.n_branches()],
            substation_choices: vec![None; grid.n_substations()],
        }
    }

    pub fn switch_line(grid: &GridCase, branch: usize, value: i32) -> Self {
        let mut a = Action::do_nothing(grid);
        a.line_switches[branch] = value;
        a
    }

    pub fn set_configuration(grid: &GridCase, substation: usize, id: usize) -> Self {
        let mut a = Action::do_nothing(grid);
        let mut onehot = vec![0; grid.configuration_count(substation)];
        onehot[id] = 1;
        a.substation_choices[substation] = Some(onehot);
        a
    }

    pub fn is_do_nothing(&self) -> bool {
        self.line_switches.iter().all(|&v| v == 0) && self.substation_choices.iter().all(Option::is_none)
    }

    /// Short human-readable description, e.g. `off:3 on:1 sub2=5`.
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        for (i, &v) in self.line_switches.iter().enumerate() {
            match v {
                1 => parts.push(format!("on:{i}")),
                -1 => parts.push(format!("off:{i}")),
                _ => {}
            }
        }
        for (s, c) in self.substation_choices.iter().enumerate() {
            if let Some(onehot) = c {
                let id = onehot.iter().position(|&v| v == 1).unwrap_or(0);
                parts.push(format!("sub{s}={id}"));
            }
        }
        if parts.is_empty() {
            "noop".to_string()
        } else {
            parts.join(" ")
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("{field}: expected length {expected}, got {got}")]
    BadShape {
        field: String,
        expected: usize,
        got: usize,
    },
    #[error("line_switches[{branch}] = {value}, expected -1, 0 or 1")]
    BadValue { branch: usize, value: i32 },
    #[error("substation_choices[{substation}]: {reason}")]
    BadOneHot { substation: usize, reason: String },
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::BadShape { .. } => "bad_shape",
            ValidationError::BadValue { .. } => "bad_value",
            ValidationError::BadOneHot { .. } => "bad_one_hot",
        }
    }
}

/// Checks an action's shape and values. Flows are never consulted.
pub fn validate(grid: &GridCase, action: &Action) -> Result<(), ValidationError> {
    if action.line_switches.len() != grid.n_branches() {
        return Err(ValidationError::BadShape {
            field: "line_switches".into(),
            expected: grid.n_branches(),
            got: action.line_switches.len(),
        });
    }
    if action.substation_choices.len() != grid.n_substations() {
        return Err(ValidationError::BadShape {
            field: "substation_choices".into(),
            expected: grid.n_substations(),
            got: action.substation_choices.len(),
        });
    }
    if let Some((branch, &value)) = action
        .line_switches
        .iter()
        .enumerate()
        .find(|(_, v)| !(-1..=1).contains(*v))
    {
        return Err(ValidationError::BadValue { branch, value });
    }
    for (substation, choice) in action.substation_choices.iter().enumerate() {
        let Some(onehot) = choice else { continue };
        let bad = |reason: String| Err(ValidationError::BadOneHot { substation, reason });
        let count = grid.configuration_count(substation);
        if onehot.len() != count {
            return bad(format!("length {} but the substation has {count} configurations", onehot.len()));
        }
        if onehot.iter().any(|&v| v != 0 && v != 1) {
            return bad("entries must be 0 or 1".into());
        }
        let hot = onehot.iter().filter(|&&v| v == 1).count();
        if hot != 1 {
            return bad(format!("{hot} hot entries, expected exactly 1"));
        }
    }
    Ok(())
}

/// Applies a validated action to a topology.
pub fn apply_action(topology: &TopologyState, action: &Action) -> TopologyState {
    let mut next = topology.clone();
    for (status, &switch) in next.line_status.iter_mut().zip(&action.line_switches) {
        match switch {
            1 => *status = 1,
            -1 => *status = 0,
            _ => {}
        }
    }
    for (id, choice) in next.configuration_ids.iter_mut().zip(&action.substation_choices) {
        if let Some(onehot) = choice {
            *id = onehot.iter().position(|&v| v == 1).expect("validated one-hot");
        }
    }
    next
}

/// Number of atomic operations that actually change something.
pub fn effective_changes(topology: &TopologyState, action: &Action) -> usize {
    let after = apply_action(topology, action);
    let lines = topology
        .line_status
        .iter()
        .zip(&after.line_status)
        .filter(|(a, b)| a != b)
        .count();
    lines + grid_model::topology_distance(topology, &after).expect("same shape")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum OverflowExponent {
    Absolute,
    #[default]
    Square,
}

impl TryFrom<u8> for OverflowExponent {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(OverflowExponent::Absolute),
            2 => Ok(OverflowExponent::Square),
            _ => Err(format!("overflow_exponent must be 1 or 2, got {v}")),
        }
    }
}

impl From<OverflowExponent> for u8 {
    fn from(e: OverflowExponent) -> u8 {
        match e {
            OverflowExponent::Absolute => 1,
            OverflowExponent::Square => 2,
        }
    }
}

/// Whether a line loaded at exactly its limit counts as overflowed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowBoundary {
    /// Overflow when the loading ratio exceeds 1.
    #[default]
    Exclusive,
    /// Overflow when the loading ratio reaches 1.
    Inclusive,
}

impl OverflowBoundary {
    pub fn is_overflow(self, ratio: f64) -> bool {
        match self {
            OverflowBoundary::Exclusive => ratio > 1.0 + OVERFLOW_TOLERANCE,
            OverflowBoundary::Inclusive => ratio >= 1.0 - OVERFLOW_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitelistEntry {
    pub substation: usize,
    /// Allowed bus-B masks, in addition to the all-on-bus-A configuration.
    pub masks: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub action_unit_cost: f64,
    pub load_cut_reward: f64,
    pub cascade_max_iterations: usize,
    pub overflow_exponent: OverflowExponent,
    pub gamma: f64,
    pub thermal_limit_override: Option<Vec<f64>>,
    pub configuration_cap: ConfigurationCap,
    pub configuration_whitelist: Vec<WhitelistEntry>,
    pub overflow_boundary: OverflowBoundary,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            action_unit_cost: 0.1,
            load_cut_reward: -10_000.0,
            cascade_max_iterations: 100,
            overflow_exponent: OverflowExponent::Square,
            gamma: 0.99,
            thermal_limit_override: None,
            configuration_cap: ConfigurationCap::default(),
            configuration_whitelist: Vec::new(),
            overflow_boundary: OverflowBoundary::Exclusive,
        }
    }
}

impl EnvConfig {
    pub fn check(&self, grid: &GridCase) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::BadConfig(m));
        if !(self.action_unit_cost >= 0.0 && self.action_unit_cost.is_finite()) {
            return bad(format!("action_unit_cost must be >= 0, got {}", self.action_unit_cost));
        }
        if !(self.load_cut_reward <= 0.0 && self.load_cut_reward.is_finite()) {
            return bad(format!("load_cut_reward must be <= 0, got {}", self.load_cut_reward));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if let Some(limits) = &self.thermal_limit_override {
            if limits.len() != grid.n_branches() {
                return bad(format!(
                    "thermal_limit_override has {} entries for {} branches",
                    limits.len(),
                    grid.n_branches()
                ));
            }
            if let Some(v) = limits.iter().find(|v| v.is_nan() || **v <= 0.0) {
                return bad(format!("thermal limits must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// The grid with this config's configuration cap and whitelist applied.
    pub fn prepare_grid(&self, grid: &GridCase) -> Result<GridCase, EnvError> {
        self.check(grid)?;
        let mut prepared = if grid.cap() == &self.configuration_cap {
            grid.clone()
        } else {
            grid.with_cap(self.configuration_cap.clone())?
        };
        if !self.configuration_whitelist.is_empty() {
            let entries: Vec<(usize, Vec<u64>)> = self
                .configuration_whitelist
                .iter()
                .map(|e| (e.substation, e.masks.clone()))
                .collect();
            prepared = prepared.with_whitelist(&entries)?;
        }
        Ok(prepared)
    }

    pub fn thermal_limits(&self, grid: &GridCase) -> Vec<f64> {
        self.thermal_limit_override
            .clone()
            .unwrap_or_else(|| grid.thermal_limits.clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub line_usage: f64,
    pub load_cut: f64,
    pub action_cost: f64,
    pub distance_to_reference: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(line_usage: f64, load_cut: f64, action_cost: f64, distance_to_reference: f64) -> Self {
        RewardBreakdown {
            line_usage,
            load_cut,
            action_cost,
            distance_to_reference,
            total: line_usage + load_cut + action_cost + distance_to_reference,
        }
    }
}

/// `-sum (flow_i / th_i)^e` over the given flows.
pub fn line_usage(flows: &[f64], limits: &[f64], exponent: OverflowExponent) -> f64 {
    -flows
        .iter()
        .zip(limits)
        .map(|(f, th)| {
            let r = (f / th).abs();
            match exponent {
                OverflowExponent::Square => r * r,
                OverflowExponent::Absolute => r,
            }
        })
        .sum::<f64>()
}

/// The state right after the action and the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfState {
    pub topology: TopologyState,
    pub solution: Option<DcSolution>,
    pub load_was_cut: bool,
}

pub fn reward(
    config: &EnvConfig,
    limits: &[f64],
    reference: &TopologyState,
    previous: &TopologyState,
    action: &Action,
    half: &HalfState,
) -> RewardBreakdown {
    let usage = match (&half.solution, half.load_was_cut) {
        (Some(sol), false) => {
            let (flows, th): (Vec<f64>, Vec<f64>) = half
                .topology
                .line_status
                .iter()
                .enumerate()
                .filter(|(_, s)| **s == 1)
                .map(|(b, _)| (sol.branch_current_proxy[b], limits[b]))
                .unzip();
            line_usage(&flows, &th, config.overflow_exponent)
        }
        _ => 0.0,
    };
    let cut = if half.load_was_cut { config.load_cut_reward } else { 0.0 };
    let changes = effective_changes(previous, action);
    let cost = if changes == 0 { 0.0 } else { -config.action_unit_cost * changes as f64 };
    let distance = match grid_model::topology_distance(&half.topology, reference).expect("same shape") {
        0 => 0.0,
        d => -(d as f64),
    };
    RewardBreakdown::new(usage, cut, cost, distance)
}

/// One solve of the cascade, as shown to a replaying client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeFrame {
    pub line_status: Vec<u8>,
    pub branch_p: Vec<f64>,
    pub relative_thermal_limits: Vec<f64>,
    /// Lines overflowed in this solve, tripped before the next frame.
    pub overflowed: Vec<usize>,
    /// False when consumption could not be served in this solve.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("cascade did not settle within {0} iterations")]
    CascadeBudgetExceeded(usize),
    #[error(transparent)]
    Solver(#[from] PowerFlowError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub solution: Option<DcSolution>,
    pub topology: TopologyState,
    pub load_was_cut: bool,
    pub frames: Vec<CascadeFrame>,
    /// Set when the cascade ended on an error; always comes with a load cut.
    pub error: Option<CascadeError>,
}

impl CascadeOutcome {
    /// Overflows of the first solve, before anything tripped.
    pub fn initial_overflows(&self) -> &[usize] {
        self.frames.first().map(|f| f.overflowed.as_slice()).unwrap_or(&[])
    }
}

/// Expands, assembles and solves one topology.
pub fn solve_topology(
    grid: &GridCase,
    topology: &TopologyState,
    injections: &InjectionSet,
) -> Result<DcSolution, PowerFlowError> {
    let expanded = grid_model::expand(grid, topology).expect("topology checked against grid");
    let model = dc_power_flow::assemble(&expanded)?;
    let in_service: Vec<bool> = grid.generators.iter().map(|g| g.in_service).collect();
    let p = expanded.bus_injections(&injections.prod_p, &injections.load_p, &in_service);
    dc_power_flow::solve(&model, &p)
}

fn ratios(solution: &DcSolution, limits: &[f64], status: &[u8]) -> Vec<f64> {
    solution
        .branch_current_proxy
        .iter()
        .zip(limits)
        .zip(status)
        .map(|((f, th), s)| if *s == 1 { f / th } else { 0.0 })
        .collect()
}

/// Trips overflowed lines and re-solves until no overflow remains or load is
/// lost.
pub fn cascade(
    grid: &GridCase,
    topology: &TopologyState,
    injections: &InjectionSet,
    config: &EnvConfig,
    limits: &[f64],
) -> CascadeOutcome {
    let mut topo = topology.clone();
    let mut frames = Vec::new();
    let mut trips = 0;
    loop {
        let solution = match solve_topology(grid, &topo, injections) {
            Ok(s) => s,
            Err(e) => {
                return CascadeOutcome {
                    solution: None,
                    topology: topo,
                    load_was_cut: true,
                    frames,
                    error: Some(e.into()),
                }
            }
        };
        let r = ratios(&solution, limits, &topo.line_status);
        let overflowed: Vec<usize> = (0..r.len())
            .filter(|&b| topo.line_status[b] == 1 && config.overflow_boundary.is_overflow(r[b]))
            .collect();
        frames.push(CascadeFrame {
            line_status: topo.line_status.clone(),
            branch_p: solution.branch_p.clone(),
            relative_thermal_limits: r,
            overflowed: if solution.converged { overflowed.clone() } else { Vec::new() },
            converged: solution.converged,
        });
        if !solution.converged {
            return CascadeOutcome {
                solution: Some(solution),
                topology: topo,
                load_was_cut: true,
                frames,
                error: None,
            };
        }
        if overflowed.is_empty() {
            return CascadeOutcome {
                solution: Some(solution),
                topology: topo,
                load_was_cut: false,
                frames,
                error: None,
            };
        }
        if trips == config.cascade_max_iterations {
            return CascadeOutcome {
                solution: Some(solution),
                topology: topo,
                load_was_cut: true,
                frames,
                error: Some(CascadeError::CascadeBudgetExceeded(trips)),
            };
        }
        for b in overflowed {
            topo.line_status[b] = 0;
        }
        trips += 1;
    }
}

/// Fixed-size view of a solved state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Per generator `[P, Q, V]`.
    pub prod_pqv: Vec<[f64; 3]>,
    /// Per load `[P, Q, V]`.
    pub load_pqv: Vec<[f64; 3]>,
    pub line_pqv_origin: Vec<[f64; 3]>,
    pub line_pqv_extremity: Vec<[f64; 3]>,
    pub relative_thermal_limits: Vec<f64>,
    pub topology_onehot: Vec<u8>,
    pub line_status: Vec<u8>,
}

impl Observation {
    /// Configuration id per substation, decoded from the one-hot field.
    pub fn configuration_ids(&self, grid: &GridCase) -> Vec<usize> {
        let mut offset = 0;
        (0..grid.n_substations())
            .map(|s| {
                let n = grid.configuration_count(s);
                let id = self.topology_onehot[offset..offset + n]
                    .iter()
                    .position(|&v| v == 1)
                    .unwrap_or(0);
                offset += n;
                id
            })
            .collect()
    }
}

/// In-service lines in overflow under the default boundary.
pub fn overflow_count(observation: &Observation) -> usize {
    overflow_count_with(observation, OverflowBoundary::default())
}

pub fn overflow_count_with(observation: &Observation, boundary: OverflowBoundary) -> usize {
    observation
        .relative_thermal_limits
        .iter()
        .zip(&observation.line_status)
        .filter(|(r, s)| **s == 1 && boundary.is_overflow(**r))
        .count()
}

/// `sum floor(r_i)`, which equals the overflow count only while every ratio
/// is below 2.
pub fn overflow_count_floor(observation: &Observation) -> usize {
    observation
        .relative_thermal_limits
        .iter()
        .zip(&observation.line_status)
        .filter(|(_, s)| **s == 1)
        .map(|(r, _)| r.floor().max(0.0) as usize)
        .sum()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("the episode is finished, reset before stepping")]
    EpisodeFinished,
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("no solved state to observe")]
    NoSolution,
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("injections do not fit the grid: {0}")]
    BadInjections(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::EpisodeFinished => "episode_finished",
            EnvError::Validation(v) => v.code(),
            EnvError::NoSolution => "no_solution",
            EnvError::BadConfig(_) => "bad_config",
            EnvError::BadInjections(_) => "bad_injections",
            EnvError::Grid(_) => "grid_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub cascade_frames: Vec<CascadeFrame>,
    /// Lines overflowed right after the action, before any trip.
    pub overflowed_after_action: Vec<usize>,
    pub load_was_cut: bool,
    pub error: Option<CascadeError>,
    /// Number of load-flow solves performed by the step.
    pub solves: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `None` on game over or when no further injections were given.
    pub observation: Option<Observation>,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// Result of a what-if evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub reward: RewardBreakdown,
    pub cascade: CascadeOutcome,
}

#[derive(Debug, Clone)]
pub struct Environment {
    grid: Arc<GridCase>,
    config: EnvConfig,
    limits: Vec<f64>,
    topology: TopologyState,
    injections: InjectionSet,
    solution: Option<DcSolution>,
    step_index: usize,
    done: bool,
}

fn check_injections(grid: &GridCase, inj: &InjectionSet) -> Result<(), EnvError> {
    if inj.prod_p.len() != grid.generators.len() || inj.load_p.len() != grid.loads.len() {
        return Err(EnvError::BadInjections(format!(
            "{} productions and {} loads for a grid with {} and {}",
            inj.prod_p.len(),
            inj.load_p.len(),
            grid.generators.len(),
            grid.loads.len()
        )));
    }
    Ok(())
}

impl Environment {
    /// Starts at the reference topology with `injections` solved.
    pub fn new(grid: &GridCase, config: EnvConfig, injections: InjectionSet) -> Result<Self, EnvError> {
        let prepared = config.prepare_grid(grid)?;
        Self::with_prepared(Arc::new(prepared), config, injections)
    }

    /// Like [`Environment::new`] for a grid already prepared with
    /// [`EnvConfig::prepare_grid`], so many environments can share it.
    pub fn with_prepared(grid: Arc<GridCase>, config: EnvConfig, injections: InjectionSet) -> Result<Self, EnvError> {
        config.check(&grid)?;
        check_injections(&grid, &injections)?;
        let limits = config.thermal_limits(&grid);
        let topology = grid.reference_topology.clone();
        let mut env = Environment {
            grid,
            config,
            limits,
            topology,
            injections,
            solution: None,
            step_index: 0,
            done: false,
        };
        env.solution = solve_topology(&env.grid, &env.topology, &env.injections).ok();
        Ok(env)
    }

    pub fn grid(&self) -> &GridCase {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<GridCase> {
        Arc::clone(&self.grid)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn thermal_limits(&self) -> &[f64] {
        &self.limits
    }

    pub fn topology(&self) -> &TopologyState {
        &self.topology
    }

    pub fn injections(&self) -> &InjectionSet {
        &self.injections
    }

    pub fn solution(&self) -> Option<&DcSolution> {
        self.solution.as_ref()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn half_step(&self, action: &Action) -> Result<(Simulation, HalfState), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        validate(&self.grid, action)?;
        let after_action = apply_action(&self.topology, action);
        let outcome = cascade(&self.grid, &after_action, &self.injections, &self.config, &self.limits);
        let half = HalfState {
            topology: outcome.topology.clone(),
            solution: outcome.solution.clone(),
            load_was_cut: outcome.load_was_cut,
        };
        let reward = reward(
            &self.config,
            &self.limits,
            &self.grid.reference_topology,
            &self.topology,
            action,
            &half,
        );
        Ok((Simulation { reward, cascade: outcome }, half))
    }

    /// Reward the action would earn, without touching the state.
    pub fn simulate(&self, action: &Action) -> Result<RewardBreakdown, EnvError> {
        Ok(self.half_step(action)?.0.reward)
    }

    pub fn simulate_detailed(&self, action: &Action) -> Result<Simulation, EnvError> {
        Ok(self.half_step(action)?.0)
    }

    /// Plays `action`, then loads `next` if given.
    ///
    /// When `next` is `None` the chronic is over: the reward is still
    /// computed but no further solve happens and no observation is returned.
    pub fn step(&mut self, action: &Action, next: Option<&InjectionSet>) -> Result<StepOutcome, EnvError> {
        if let Some(inj) = next {
            check_injections(&self.grid, inj)?;
        }
        let (sim, half) = self.half_step(action)?;
        let mut solves = sim.cascade.frames.len();
        let mut info = StepInfo {
            overflowed_after_action: sim.cascade.initial_overflows().to_vec(),
            cascade_frames: sim.cascade.frames,
            load_was_cut: half.load_was_cut,
            error: sim.cascade.error,
            solves: 0,
        };
        self.step_index += 1;

        if half.load_was_cut {
            log::debug!("step {}: load cut, epoch over", self.step_index - 1);
            self.done = true;
            self.topology = self.grid.reference_topology.clone();
            self.solution = None;
            info.solves = solves;
            return Ok(StepOutcome {
                observation: None,
                reward: sim.reward,
                done: true,
                info,
            });
        }

        self.topology = half.topology;
        self.solution = half.solution;
        let observation = match next {
            Some(inj) => {
                self.injections = inj.clone();
                self.solution = solve_topology(&self.grid, &self.topology, &self.injections).ok();
                solves += 1;
                Some(self.observe()?)
            }
            None => None,
        };
        info.solves = solves;
        Ok(StepOutcome {
            observation,
            reward: sim.reward,
            done: false,
            info,
        })
    }

    /// Restores the reference topology and starts a new epoch on
    /// `injections`.
    pub fn reset(&mut self, injections: InjectionSet) -> Result<Observation, EnvError> {
        check_injections(&self.grid, &injections)?;
        self.topology = self.grid.reference_topology.clone();
        self.injections = injections;
        self.solution = solve_topology(&self.grid, &self.topology, &self.injections).ok();
        self.done = false;
        self.observe()
    }

    pub fn observe(&self) -> Result<Observation, EnvError> {
        let solution = self.solution.as_ref().ok_or(EnvError::NoSolution)?;
        Ok(build_observation(
            &self.grid,
            &self.topology,
            &self.injections,
            solution,
            &self.limits,
        ))
    }
}

/// Observation of a solved state. Q is 0 and V is 1 p.u. everywhere.
pub fn build_observation(
    grid: &GridCase,
    topology: &TopologyState,
    injections: &InjectionSet,
    solution: &DcSolution,
    limits: &[f64],
) -> Observation {
    let expanded = grid_model::expand(grid, topology).expect("topology checked against grid");
    let served = |bus: usize| {
        solution.islands.island_of[bus]
            .and_then(|i| solution.references[i])
            .is_some()
    };

    let mut prod: Vec<f64> = grid
        .generators
        .iter()
        .zip(&injections.prod_p)
        .enumerate()
        .map(|(g, (gen, &p))| {
            if gen.in_service && served(expanded.generator_bus[g]) {
                p
            } else {
                0.0
            }
        })
        .collect();
    // Each island's reference generator carries its mismatch.
    for (island, reference) in solution.references.iter().enumerate() {
        let Some(bus) = *reference else { continue };
        if let Some(g) = (0..grid.generators.len())
            .find(|&g| grid.generators[g].in_service && expanded.generator_bus[g] == bus)
        {
            prod[g] += solution.absorption[island];
        }
    }

    let pqv = |p: f64| [p, 0.0, 1.0];
    let mut onehot = Vec::with_capacity(grid.onehot_len());
    for (s, &id) in topology.configuration_ids.iter().enumerate() {
        let n = grid.configuration_count(s);
        onehot.extend((0..n).map(|k| u8::from(k == id)));
    }
    Observation {
        prod_pqv: prod.into_iter().map(pqv).collect(),
        load_pqv: injections
            .load_p
            .iter()
            .enumerate()
            .map(|(l, &p)| pqv(if served(expanded.load_bus[l]) { p } else { 0.0 }))
            .collect(),
        line_pqv_origin: solution.branch_p.iter().map(|&p| pqv(p)).collect(),
        line_pqv_extremity: solution.branch_p.iter().map(|&p| pqv(-p)).collect(),
        relative_thermal_limits: ratios(solution, limits, &topology.line_status),
        topology_onehot: onehot,
        line_status: topology.line_status.clone(),
    }
}

//! A power-grid operation game.
//!
//! The player is a grid dispatcher. At every timestep it may switch
//! transmission lines on or off and split substations into two electrical
//! buses. The engine then solves a DC load flow, trips overloaded lines until
//! the flows settle, scores the result and moves on to the next injections of
//! a chronic.
//!
//! Modules, bottom up:
//!
//! - [`case_io`] reads and writes MATPOWER case files;
//! - [`grid_model`] turns a case into substations and enumerates their
//!   configurations;
//! - [`dc_power_flow`] solves the DC equations;
//! - [`chronics`] holds injection schedules;
//! - [`environment`] plays the game loop;
//! - [`agents`] are the baseline policies;
//! - [`runner`] plays whole episodes and benchmarks;
//! - [`builtins`] bundles the example grids and schedules.

pub mod agents;
pub mod builtins;
pub mod case_io;
pub mod chronics;
pub mod dc_power_flow;
pub mod environment;
pub mod grid_model;
pub mod runner;

pub use agents::{Agent, AgentKind, AgentSpec, Simulator};
pub use chronics::{Chronic, InjectionSet};
pub use environment::{Action, EnvConfig, Environment, Observation, RewardBreakdown};
pub use grid_model::{GridCase, TopologyState};

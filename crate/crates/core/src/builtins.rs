//! Bundled cases, chronics and drawing layouts.
//!
//! | name             | kind    | grid    |
//! |------------------|---------|---------|
//! | `case4gs`        | case    |         |
//! | `case118`        | case    |         |
//! | `case4gs-crisis` | chronic | case4gs |
//! | `case4gs-relief` | chronic | case4gs |
//! | `case118-daily`  | chronic | case118 |

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::{self, CaseError, RawCase};
use crate::chronics::{self, Chronic, ChronicError, InjectionSet};
use crate::grid_model::{self, GridCase, GridError};

const CASE4GS: &str = include_str!("../data/case4gs.m");
const CASE118: &str = include_str!("../data/case118.m");
const CASE4GS_CRISIS: &str = include_str!("../data/case4gs-crisis.csv");
const CASE4GS_RELIEF: &str = include_str!("../data/case4gs-relief.csv");
const CASE4GS_LAYOUT: &str = include_str!("../data/case4gs.layout.json");

pub const CASES: [&str; 2] = ["case4gs", "case118"];

/// `(chronic name, case name)`.
pub const CHRONICS: [(&str, &str); 3] = [
    ("case4gs-crisis", "case4gs"),
    ("case4gs-relief", "case4gs"),
    ("case118-daily", "case118"),
];

/// Steps in the synthetic daily profile (15-minute resolution).
pub const DAILY_STEPS: usize = 96;

pub fn case_text(name: &str) -> Option<&'static str> {
    match name {
        "case4gs" => Some(CASE4GS),
        "case118" => Some(CASE118),
        _ => None,
    }
}

pub fn raw_case(name: &str) -> Option<RawCase> {
    case_text(name).map(|t| case_io::parse_case(t).expect("bundled case parses"))
}

/// Bundled grid with the default configuration cap.
pub fn grid(name: &str) -> Option<GridCase> {
    raw_case(name).map(|c| grid_model::build_grid(&c).expect("bundled case builds"))
}

/// Case name a builtin chronic belongs to.
pub fn chronic_case(name: &str) -> Option<&'static str> {
    CHRONICS.iter().find(|(c, _)| *c == name).map(|(_, g)| *g)
}

/// Builtin chronic checked against `grid`, `None` for unknown names.
pub fn chronic(name: &str, grid: &GridCase) -> Option<Result<Chronic, ChronicError>> {
    let case = chronic_case(name)?;
    Some(match name {
        "case4gs-crisis" => chronics::parse_chronic(CASE4GS_CRISIS, grid, case),
        "case4gs-relief" => chronics::parse_chronic(CASE4GS_RELIEF, grid, case),
        "case118-daily" => daily_profile(grid, DAILY_STEPS).map(|steps| {
            Chronic::new(case, steps).with_interval("15min")
        }),
        _ => unreachable!(),
    })
}

/// Loads scaled by a smooth daily curve, productions scaled to match.
///
/// Every load is scaled by `0.8 + 0.1 * (1 - cos(2 pi t / steps))`, which
/// peaks mid-horizon at the case-file value. Every generator keeps its share
/// of the case-file dispatch.
pub fn daily_profile(grid: &GridCase, steps: usize) -> Result<Vec<InjectionSet>, ChronicError> {
    let base = InjectionSet::from_case(grid);
    let dispatch: f64 = base.total_production();
    let out: Vec<InjectionSet> = (0..steps)
        .map(|t| {
            let phase = 2.0 * PI * t as f64 / steps as f64;
            let factor = 0.8 + 0.2 * (1.0 - phase.cos()) / 2.0;
            let load_p: Vec<f64> = base.load_p.iter().map(|p| p * factor).collect();
            let load_q: Vec<f64> = base.load_q.iter().map(|q| q * factor).collect();
            let demand: f64 = load_p.iter().sum();
            let mut prod_p: Vec<f64> = base.prod_p.iter().map(|p| p * demand / dispatch).collect();
            // Put the rounding residue on the largest unit.
            let residue = demand - prod_p.iter().sum::<f64>();
            if let Some(big) = (0..prod_p.len()).max_by(|&a, &b| prod_p[a].total_cmp(&prod_p[b])) {
                prod_p[big] += residue;
            }
            InjectionSet { prod_p, load_p, load_q }
        })
        .collect();
    for (t, s) in out.iter().enumerate() {
        s.check(grid, t)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstationPosition {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

/// Drawing coordinates, keyed by case-file bus id. Never used as physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub case: String,
    pub substations: Vec<SubstationPosition>,
}

/// Layout of a builtin case; cases without a layout file get a circle.
pub fn layout(name: &str, grid: &GridCase) -> Layout {
    if name == "case4gs" {
        return serde_json::from_str(CASE4GS_LAYOUT).expect("bundled layout parses");
    }
    circular_layout(name, grid)
}

pub fn circular_layout(name: &str, grid: &GridCase) -> Layout {
    let n = grid.n_substations().max(1) as f64;
    Layout {
        case: name.to_string(),
        substations: grid
            .substations
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let a = 2.0 * PI * i as f64 / n;
                SubstationPosition {
                    id: s.id,
                    x: a.cos(),
                    y: a.sin(),
                }
            })
            .collect(),
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Resolves a builtin case name or reads a case file.
///
/// Returns the case id (builtin name or file stem) with the grid.
pub fn load_case(name_or_path: &str) -> Result<(String, GridCase), LoadError> {
    if let Some(g) = grid(name_or_path) {
        return Ok((name_or_path.to_string(), g));
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(LoadError::UnknownCase(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    let raw = case_io::parse_case(&text)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| raw.name.clone());
    Ok((id, grid_model::build_grid(&raw)?))
}

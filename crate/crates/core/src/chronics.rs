//! Injection schedules.
//!
//! A chronic file is a CSV with one row per timestep and one column per
//! injection, named after the case-file bus id of the element:
//! `prod_p_<bus>` for generators, `load_p_<bus>` and `load_q_<bus>` for loads.
//! When several generators share a bus, later ones are suffixed `_2`, `_3`...
//! `load_q_*` columns are optional.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_model::GridCase;

/// Tolerance (MW) of the production/consumption balance check.
pub const BALANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSet {
    pub prod_p: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
}

impl InjectionSet {
    /// Injections written in the case file itself.
    pub fn from_case(grid: &GridCase) -> Self {
        InjectionSet {
            prod_p: grid.generators.iter().map(|g| g.p_mw).collect(),
            load_p: grid.loads.iter().map(|l| l.p_mw).collect(),
            load_q: grid.loads.iter().map(|l| l.q_mvar).collect(),
        }
    }

    pub fn total_production(&self) -> f64 {
        self.prod_p.iter().sum()
    }

    pub fn total_consumption(&self) -> f64 {
        self.load_p.iter().sum()
    }

    pub fn check(&self, grid: &GridCase, step: usize) -> Result<(), ChronicError> {
        for (what, got, expected) in [
            ("prod_p", self.prod_p.len(), grid.generators.len()),
            ("load_p", self.load_p.len(), grid.loads.len()),
            ("load_q", self.load_q.len(), grid.loads.len()),
        ] {
            if got != expected {
                return Err(ChronicError::LengthMismatch {
                    what: what.to_string(),
                    expected,
                    got,
                });
            }
        }
        let residual = self.total_production() - self.total_consumption();
        if residual.abs() > BALANCE_TOLERANCE {
            return Err(ChronicError::ImbalanceError { step, residual });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ChronicError {
    #[error("{what}: expected {expected} values, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("timestep {step}: production minus consumption is {residual} MW")]
    ImbalanceError { step: usize, residual: f64 },
    #[error("unknown chronic `{0}`")]
    UnknownChronic(String),
    #[error("timestep {step}: column `{column}` is not a number")]
    BadValue { step: usize, column: String },
    #[error("unexpected column `{0}`")]
    UnknownColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chronic {
    pub grid_id: String,
    pub steps: Vec<InjectionSet>,
    /// Interval between steps, e.g. "5min". Informational only.
    pub interval: Option<String>,
    cursor: usize,
}

impl Chronic {
    pub fn new(grid_id: impl Into<String>, steps: Vec<InjectionSet>) -> Self {
        Chronic {
            grid_id: grid_id.into(),
            steps,
            interval: None,
            cursor: 0,
        }
    }

    pub fn with_interval(mut self, interval: impl Into<String>) -> Self {
        self.interval = Some(interval.into());
        self
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.cursor
    }

    /// Returns the injections at the cursor and advances it, `None` once
    /// exhausted.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<InjectionSet> {
        let step = self.steps.get(self.cursor)?.clone();
        self.cursor += 1;
        Some(step)
    }

    pub fn peek(&self) -> Option<&InjectionSet> {
        self.steps.get(self.cursor)
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }

    /// First `n` steps only.
    pub fn truncated(mut self, n: usize) -> Self {
        self.steps.truncate(n);
        self.cursor = self.cursor.min(n);
        self
    }

    pub fn check(&self, grid: &GridCase) -> Result<(), ChronicError> {
        self.steps
            .iter()
            .enumerate()
            .try_for_each(|(t, s)| s.check(grid, t))
    }
}

/// Column names in file order, one per generator then loads.
pub fn column_names(grid: &GridCase) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut seen: HashMap<u32, usize> = HashMap::new();
    let prod = grid
        .generators
        .iter()
        .map(|g| {
            let id = grid.substations[g.substation].id;
            let k = seen.entry(id).or_insert(0);
            *k += 1;
            if *k == 1 {
                format!("prod_p_{id}")
            } else {
                format!("prod_p_{id}_{k}")
            }
        })
        .collect();
    let load_p = grid
        .loads
        .iter()
        .map(|l| format!("load_p_{}", grid.substations[l.substation].id))
        .collect();
    let load_q = grid
        .loads
        .iter()
        .map(|l| format!("load_q_{}", grid.substations[l.substation].id))
        .collect();
    (prod, load_p, load_q)
}

/// Parses chronic CSV text against a grid.
pub fn parse_chronic(text: &str, grid: &GridCase, grid_id: &str) -> Result<Chronic, ChronicError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let (prod, load_p, load_q) = column_names(grid);

    let find = |names: &[String], what: &str, required: bool| -> Result<Vec<Option<usize>>, ChronicError> {
        let cols: Vec<Option<usize>> = names.iter().map(|n| position.get(n.as_str()).copied()).collect();
        let found = cols.iter().filter(|c| c.is_some()).count();
        if (required || found > 0) && found != names.len() {
            return Err(ChronicError::LengthMismatch {
                what: what.to_string(),
                expected: names.len(),
                got: found,
            });
        }
        Ok(cols)
    };
    let prod_cols = find(&prod, "prod_p", true)?;
    let load_p_cols = find(&load_p, "load_p", true)?;
    let load_q_cols = find(&load_q, "load_q", false)?;
    let known = prod.len() + load_p.len() + load_q_cols.iter().flatten().count();
    if headers.len() != known {
        let all: Vec<&String> = prod.iter().chain(&load_p).chain(&load_q).collect();
        let extra = headers
            .iter()
            .find(|h| !all.iter().any(|n| n.as_str() == *h))
            .unwrap_or("?");
        return Err(ChronicError::UnknownColumn(extra.to_string()));
    }

    let mut steps = Vec::new();
    for (t, record) in reader.records().enumerate() {
        let record = record?;
        let value = |col: Option<usize>, name: &str| -> Result<f64, ChronicError> {
            match col {
                None => Ok(0.0),
                Some(c) => record
                    .get(c)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| ChronicError::BadValue {
                        step: t,
                        column: name.to_string(),
                    }),
            }
        };
        let collect = |cols: &[Option<usize>], names: &[String]| -> Result<Vec<f64>, ChronicError> {
            cols.iter().zip(names).map(|(&c, n)| value(c, n)).collect()
        };
        let set = InjectionSet {
            prod_p: collect(&prod_cols, &prod)?,
            load_p: collect(&load_p_cols, &load_p)?,
            load_q: collect(&load_q_cols, &load_q)?,
        };
        set.check(grid, t)?;
        steps.push(set);
    }
    Ok(Chronic::new(grid_id, steps))
}

/// Loads a builtin chronic by name, or a CSV file by path.
pub fn load_chronic(name_or_path: &str, grid: &GridCase, grid_id: &str) -> Result<Chronic, ChronicError> {
    if let Some(chronic) = crate::builtins::chronic(name_or_path, grid) {
        return chronic;
    }
    let path = Path::new(name_or_path);
    if path.extension().is_some_and(|e| e == "csv") || path.exists() {
        let text = std::fs::read_to_string(path)?;
        return parse_chronic(&text, grid, grid_id);
    }
    Err(ChronicError::UnknownChronic(name_or_path.to_string()))
}

/// Writes a chronic in the CSV layout read by [`parse_chronic`].
pub fn write_chronic(chronic: &Chronic, grid: &GridCase) -> Result<String, ChronicError> {
    let (prod, load_p, load_q) = column_names(grid);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(prod.iter().chain(&load_p).chain(&load_q))?;
    for s in &chronic.steps {
        let row: Vec<String> = s
            .prod_p
            .iter()
            .chain(&s.load_p)
            .chain(&s.load_q)
            .map(f64::to_string)
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

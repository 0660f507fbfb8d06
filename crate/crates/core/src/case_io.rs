//! Reading and writing MATPOWER version-2 case files.
//!
//! A case file is a small MATLAB script that assigns `mpc.version`,
//! `mpc.baseMVA` and three numeric matrices (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`). Rows are separated by `;` or newlines, entries by
//! whitespace or commas, and `%` starts a comment. Any other `mpc.*`
//! assignment (cost tables, bus names, ...) is skipped and reported as a
//! [`ParseWarning`].
//!
//! Column layouts are fixed: 13 columns per bus row, 10 per generator row and
//! 11 per branch row, optionally followed by the 4 steady-state flow columns
//! (P and Q at origin, P and Q at extremity). Flow columns are kept for
//! round-tripping but never used as physics.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

pub const BUS_COLUMNS: usize = 13;
pub const GEN_COLUMNS: usize = 10;
pub const BRANCH_COLUMNS: usize = 11;
pub const BRANCH_FLOW_COLUMNS: usize = 4;

/// Bus matrix column indices (0-based).
pub mod bus {
    pub const ID: usize = 0;
    pub const TYPE: usize = 1;
    pub const PD: usize = 2;
    pub const QD: usize = 3;
    pub const GS: usize = 4;
    pub const BS: usize = 5;
    pub const AREA: usize = 6;
    pub const VM: usize = 7;
    pub const VA: usize = 8;
    pub const BASE_KV: usize = 9;
    pub const ZONE: usize = 10;
    pub const VMAX: usize = 11;
    pub const VMIN: usize = 12;

    pub const TYPE_PQ: f64 = 1.0;
    pub const TYPE_PV: f64 = 2.0;
    pub const TYPE_REF: f64 = 3.0;
    pub const TYPE_ISOLATED: f64 = 4.0;
}

/// Generator matrix column indices (0-based).
pub mod gen {
    pub const BUS: usize = 0;
    pub const PG: usize = 1;
    pub const QG: usize = 2;
    pub const QMAX: usize = 3;
    pub const QMIN: usize = 4;
    pub const VG: usize = 5;
    pub const MBASE: usize = 6;
    pub const STATUS: usize = 7;
    pub const PMAX: usize = 8;
    pub const PMIN: usize = 9;
}

/// Branch matrix column indices (0-based).
pub mod branch {
    pub const F_BUS: usize = 0;
    pub const T_BUS: usize = 1;
    pub const R: usize = 2;
    pub const X: usize = 3;
    pub const B: usize = 4;
    pub const RATE_A: usize = 5;
    pub const RATE_B: usize = 6;
    pub const RATE_C: usize = 7;
    pub const TAP: usize = 8;
    pub const SHIFT: usize = 9;
    pub const STATUS: usize = 10;
}

pub type BusRow = [f64; BUS_COLUMNS];
pub type GenRow = [f64; GEN_COLUMNS];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchRow {
    pub params: [f64; BRANCH_COLUMNS],
    /// `[P origin, Q origin, P extremity, Q extremity]` when the file carries them.
    pub flows: Option<[f64; BRANCH_FLOW_COLUMNS]>,
}

impl BranchRow {
    pub fn from_bus(&self) -> u32 {
        self.params[branch::F_BUS] as u32
    }

    pub fn to_bus(&self) -> u32 {
        self.params[branch::T_BUS] as u32
    }

    pub fn in_service(&self) -> bool {
        self.params[branch::STATUS] == 1.0
    }
}

/// Case file content, validated but not interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCase {
    /// Name from the `function mpc = <name>` header, `"case"` when absent.
    pub name: String,
    pub version: String,
    pub base_mva: f64,
    pub bus: Vec<BusRow>,
    pub gen: Vec<GenRow>,
    pub branch: Vec<BranchRow>,
}

impl RawCase {
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.bus
            .iter()
            .enumerate()
            .map(|(i, r)| (r[bus::ID] as u32, i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Bus,
    Gen,
    Branch,
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Section::Bus => "bus",
            Section::Gen => "gen",
            Section::Branch => "branch",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing section mpc.{0}")]
    MissingSection(&'static str),
    #[error("{section} row {row}: expected {expected} columns, found {found}")]
    MalformedRow {
        section: Section,
        row: usize,
        expected: String,
        found: usize,
    },
    #[error("{section} row {row}: column {column} has invalid value {value}")]
    InvalidValue {
        section: Section,
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("base MVA must be positive, got {0}")]
    InvalidBaseMva(f64),
    #[error("duplicate bus id {0}")]
    DuplicateBusId(u32),
    #[error("{section} row {row} references unknown bus {bus}")]
    DanglingReference { section: Section, row: usize, bus: u32 },
    #[error("no reference (type 3) bus")]
    NoSlackBus,
    #[error("buses {0} and {1} are both reference buses of the same connected component")]
    MultipleSlackBuses(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

/// Parses case text, discarding warnings (they are still logged).
pub fn parse_case(text: &str) -> Result<RawCase, CaseError> {
    parse_case_with_warnings(text).map(|(case, _)| case)
}

pub fn parse_case_with_warnings(text: &str) -> Result<(RawCase, Vec<ParseWarning>), CaseError> {
    let mut scanner = Scanner::new(text);
    let mut warnings = Vec::new();
    let mut name = None;
    let mut version = None;
    let mut base_mva = None;
    let mut bus_rows = None;
    let mut gen_rows = None;
    let mut branch_rows = None;

    while let Some(stmt) = scanner.next_statement()? {
        match stmt {
            Statement::Function(n) => name = Some(n),
            Statement::Assign { field, line, value } => match (field.as_str(), value) {
                ("version", Value::Scalar(s)) => version = Some(unquote(&s)),
                ("baseMVA", Value::Scalar(s)) => {
                    let v: f64 = s.parse().map_err(|_| CaseError::Syntax {
                        line,
                        message: format!("baseMVA is not a number: {s}"),
                    })?;
                    base_mva = Some(v);
                }
                ("bus", Value::Matrix(rows)) => bus_rows = Some(rows),
                ("gen", Value::Matrix(rows)) => gen_rows = Some(rows),
                ("branch", Value::Matrix(rows)) => branch_rows = Some(rows),
                ("version" | "baseMVA" | "bus" | "gen" | "branch", _) => {
                    return Err(CaseError::Syntax {
                        line,
                        message: format!("mpc.{field} has the wrong shape"),
                    })
                }
                (other, _) => {
                    let message = format!("ignored section mpc.{other}");
                    log::warn!("line {line}: {message}");
                    warnings.push(ParseWarning { line, message });
                }
            },
        }
    }

    let base_mva = base_mva.ok_or(CaseError::MissingSection("baseMVA"))?;
    let bus_rows = bus_rows.ok_or(CaseError::MissingSection("bus"))?;
    let gen_rows = gen_rows.ok_or(CaseError::MissingSection("gen"))?;
    let branch_rows = branch_rows.ok_or(CaseError::MissingSection("branch"))?;

    let case = RawCase {
        name: name.unwrap_or_else(|| "case".to_string()),
        version: version.unwrap_or_else(|| "2".to_string()),
        base_mva,
        bus: fixed_rows(Section::Bus, bus_rows)?,
        gen: fixed_rows(Section::Gen, gen_rows)?,
        branch: branch_rows
            .into_iter()
            .enumerate()
            .map(|(row, values)| match values.len() {
                BRANCH_COLUMNS => Ok(BranchRow {
                    params: values.try_into().unwrap(),
                    flows: None,
                }),
                n if n == BRANCH_COLUMNS + BRANCH_FLOW_COLUMNS => Ok(BranchRow {
                    params: values[..BRANCH_COLUMNS].try_into().unwrap(),
                    flows: Some(values[BRANCH_COLUMNS..].try_into().unwrap()),
                }),
                found => Err(CaseError::MalformedRow {
                    section: Section::Branch,
                    row,
                    expected: format!("{BRANCH_COLUMNS} or {}", BRANCH_COLUMNS + BRANCH_FLOW_COLUMNS),
                    found,
                }),
            })
            .collect::<Result<_, _>>()?,
    };
    validate(&case)?;
    Ok((case, warnings))
}

fn fixed_rows<const N: usize>(
    section: Section,
    rows: Vec<Vec<f64>>,
) -> Result<Vec<[f64; N]>, CaseError> {
    rows.into_iter()
        .enumerate()
        .map(|(row, values)| {
            let found = values.len();
            values.try_into().map_err(|_| CaseError::MalformedRow {
                section,
                row,
                expected: N.to_string(),
                found,
            })
        })
        .collect()
}

fn is_positive_id(v: f64) -> bool {
    v.is_finite() && v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64
}

/// Checks every structural invariant of a [`RawCase`].
pub fn validate(case: &RawCase) -> Result<(), CaseError> {
    if !(case.base_mva > 0.0 && case.base_mva.is_finite()) {
        return Err(CaseError::InvalidBaseMva(case.base_mva));
    }
    let invalid = |section, row, column, value| CaseError::InvalidValue {
        section,
        row,
        column,
        value,
    };

    let mut ids = HashSet::new();
    for (row, r) in case.bus.iter().enumerate() {
        if let Some(c) = r.iter().position(|v| v.is_nan()) {
            return Err(invalid(Section::Bus, row, c, r[c]));
        }
        if !is_positive_id(r[bus::ID]) {
            return Err(invalid(Section::Bus, row, bus::ID, r[bus::ID]));
        }
        if ![1.0, 2.0, 3.0, 4.0].contains(&r[bus::TYPE]) {
            return Err(invalid(Section::Bus, row, bus::TYPE, r[bus::TYPE]));
        }
        if !ids.insert(r[bus::ID] as u32) {
            return Err(CaseError::DuplicateBusId(r[bus::ID] as u32));
        }
    }

    let has_bus = |v: f64| is_positive_id(v) && ids.contains(&(v as u32));
    for (row, r) in case.gen.iter().enumerate() {
        if let Some(c) = r.iter().position(|v| v.is_nan()) {
            return Err(invalid(Section::Gen, row, c, r[c]));
        }
        if !has_bus(r[gen::BUS]) {
            return Err(CaseError::DanglingReference {
                section: Section::Gen,
                row,
                bus: r[gen::BUS] as u32,
            });
        }
        if r[gen::STATUS] < 0.0 {
            return Err(invalid(Section::Gen, row, gen::STATUS, r[gen::STATUS]));
        }
    }
    for (row, r) in case.branch.iter().enumerate() {
        let all = r.params.iter().chain(r.flows.iter().flatten());
        if let Some((c, v)) = all.enumerate().find(|(_, v)| v.is_nan()) {
            return Err(invalid(Section::Branch, row, c, *v));
        }
        for c in [branch::F_BUS, branch::T_BUS] {
            if !has_bus(r.params[c]) {
                return Err(CaseError::DanglingReference {
                    section: Section::Branch,
                    row,
                    bus: r.params[c] as u32,
                });
            }
        }
        let status = r.params[branch::STATUS];
        if status != 0.0 && status != 1.0 {
            return Err(invalid(Section::Branch, row, branch::STATUS, status));
        }
    }

    // One reference bus per component of the in-service network.
    let index = case.bus_index();
    let mut parent: Vec<usize> = (0..case.bus.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for r in case.branch.iter().filter(|r| r.in_service()) {
        let a = find(&mut parent, index[&r.from_bus()]);
        let b = find(&mut parent, index[&r.to_bus()]);
        parent[a] = b;
    }
    let mut seen: HashMap<usize, u32> = HashMap::new();
    for (i, r) in case.bus.iter().enumerate() {
        if r[bus::TYPE] != bus::TYPE_REF {
            continue;
        }
        let root = find(&mut parent, i);
        if let Some(&other) = seen.get(&root) {
            return Err(CaseError::MultipleSlackBuses(other, r[bus::ID] as u32));
        }
        seen.insert(root, r[bus::ID] as u32);
    }
    if seen.is_empty() {
        return Err(CaseError::NoSlackBus);
    }
    Ok(())
}

/// Writes a case in the layout accepted by [`parse_case`].
///
/// Numbers use Rust's shortest round-trip formatting, so parsing the output
/// reproduces every value bit for bit.
pub fn serialize_case(case: &RawCase) -> String {
    let mut out = String::new();
    let row = |out: &mut String, values: &mut dyn Iterator<Item = &f64>| {
        out.push('\t');
        let cells: Vec<String> = values.map(|v| v.to_string()).collect();
        out.push_str(&cells.join("\t"));
        out.push_str(";\n");
    };
    let _ = writeln!(out, "function mpc = {}", case.name);
    let _ = writeln!(out, "mpc.version = '{}';", case.version);
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_mva);
    out.push_str("\n%% bus data\n");
    out.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n");
    out.push_str("mpc.bus = [\n");
    for r in &case.bus {
        row(&mut out, &mut r.iter());
    }
    out.push_str("];\n\n%% generator data\n");
    out.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n");
    out.push_str("mpc.gen = [\n");
    for r in &case.gen {
        row(&mut out, &mut r.iter());
    }
    out.push_str("];\n\n%% branch data\n");
    out.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\n");
    out.push_str("mpc.branch = [\n");
    for r in &case.branch {
        row(&mut out, &mut r.params.iter().chain(r.flows.iter().flatten()));
    }
    out.push_str("];\n");
    out
}

fn unquote(s: &str) -> String {
    s.trim().trim_matches(|c| c == '\'' || c == '"').to_string()
}

enum Value {
    Scalar(String),
    Matrix(Vec<Vec<f64>>),
    /// Cell arrays and anything else we do not interpret.
    Opaque,
}

enum Statement {
    Function(String),
    Assign {
        field: String,
        line: usize,
        value: Value,
    },
}

struct Scanner<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, strip_comment(l)))
            .collect();
        Self { lines, pos: 0 }
    }

    fn next_statement(&mut self) -> Result<Option<Statement>, CaseError> {
        while self.pos < self.lines.len() {
            let (line, raw) = self.lines[self.pos];
            self.pos += 1;
            let text = raw.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(rest) = text.strip_prefix("function") {
                let name = rest
                    .split('=')
                    .next_back()
                    .unwrap_or("")
                    .trim()
                    .to_string();
                return Ok(Some(Statement::Function(name)));
            }
            let Some((lhs, rhs)) = text.split_once('=') else {
                return Err(CaseError::Syntax {
                    line,
                    message: format!("expected an assignment, found `{text}`"),
                });
            };
            let field = lhs
                .trim()
                .split_once('.')
                .map(|(_, f)| f.trim().to_string())
                .ok_or_else(|| CaseError::Syntax {
                    line,
                    message: format!("expected mpc.<field>, found `{}`", lhs.trim()),
                })?;
            let rhs = rhs.trim_start();
            let value = if let Some(body) = rhs.strip_prefix('[') {
                Value::Matrix(self.matrix(line, body)?)
            } else if let Some(body) = rhs.strip_prefix('{') {
                self.skip_until(line, body, '}')?;
                Value::Opaque
            } else {
                Value::Scalar(rhs.trim_end().trim_end_matches(';').trim().to_string())
            };
            return Ok(Some(Statement::Assign { field, line, value }));
        }
        Ok(None)
    }

    fn skip_until(&mut self, line: usize, first: &str, close: char) -> Result<(), CaseError> {
        if first.contains(close) {
            return Ok(());
        }
        while self.pos < self.lines.len() {
            let (_, l) = self.lines[self.pos];
            self.pos += 1;
            if l.contains(close) {
                return Ok(());
            }
        }
        Err(CaseError::Syntax {
            line,
            message: format!("unterminated block, missing `{close}`"),
        })
    }

    fn matrix(&mut self, line: usize, first: &str) -> Result<Vec<Vec<f64>>, CaseError> {
        let mut rows = Vec::new();
        let mut current: Vec<f64> = Vec::new();
        let mut chunk = first;
        let mut chunk_line = line;
        loop {
            let (body, closed) = match chunk.find(']') {
                Some(i) => (&chunk[..i], true),
                None => (chunk, false),
            };
            for (k, segment) in body.split(';').enumerate() {
                if k > 0 && !current.is_empty() {
                    rows.push(std::mem::take(&mut current));
                }
                for token in segment.split(|c: char| c.is_whitespace() || c == ',') {
                    if token.is_empty() {
                        continue;
                    }
                    let v = token.parse::<f64>().map_err(|_| CaseError::Syntax {
                        line: chunk_line,
                        message: format!("not a number: `{token}`"),
                    })?;
                    current.push(v);
                }
            }
            // A newline also ends a row.
            if !current.is_empty() {
                rows.push(std::mem::take(&mut current));
            }
            if closed {
                return Ok(rows);
            }
            if self.pos >= self.lines.len() {
                return Err(CaseError::Syntax {
                    line,
                    message: "unterminated matrix, missing `]`".into(),
                });
            }
            let (l, text) = self.lines[self.pos];
            self.pos += 1;
            chunk = text;
            chunk_line = l;
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_quote = !in_quote,
            '%' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

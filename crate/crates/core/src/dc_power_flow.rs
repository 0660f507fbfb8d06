//! DC load flow.
//!
//! Under the DC assumptions (lossless lines, unit voltage magnitudes, small
//! angle differences) the real power leaving bus `i` is
//! `P_i = sum_k B_ik (theta_i - theta_k)` with `B_ik = 1/x_ik`. Stacking the
//! buses gives the Laplacian system `P = B theta`, made invertible by fixing
//! one reference angle per connected component.
//!
//! ```
//! use gridgame::{builtins, dc_power_flow, grid_model};
//!
//! let grid = builtins::grid("case4gs").unwrap();
//! let expanded = grid_model::expand(&grid, &grid.reference_topology).unwrap();
//! let model = dc_power_flow::assemble(&expanded).unwrap();
//! // G1 = 150, C2 = 50, C3 = 150, G4 = 50
//! let injections = [150.0, -50.0, -150.0, 50.0, 0.0, 0.0, 0.0, 0.0];
//! let solution = dc_power_flow::solve(&model, &injections).unwrap();
//! assert!((solution.branch_p[0] - 82.862).abs() < 1e-3);
//! ```

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{factorization::CscCholesky, CooMatrix, CscMatrix};
use serde::Serialize;
use thiserror::Error;

use crate::grid_model::{BusKind, ExpandedGrid};

/// Above this many unknowns the sparse factorization is used.
pub const DENSE_LIMIT: usize = 512;

/// Injections smaller than this (in MW) do not make a dead island a load cut.
const DEAD_ISLAND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("branch {branch} has non-positive reactance {x}")]
    NonpositiveReactance { branch: usize, x: f64 },
    #[error("reduced susceptance system is singular")]
    SingularSystem,
    #[error("expected {expected} bus injections, got {got}")]
    InjectionLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Island {
    pub buses: Vec<usize>,
    pub has_generation: bool,
    pub has_load: bool,
    pub has_slack: bool,
}

/// Connected components over the active branches. Isolated buses are not
/// part of any island.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Islands {
    pub island_of: Vec<Option<usize>>,
    pub islands: Vec<Island>,
}

#[derive(Debug, Clone)]
pub struct SusceptanceModel {
    pub n_buses: usize,
    pub per_unit_base: f64,
    pub slack_bus: usize,
    /// Full `n_buses x n_buses` matrix in per unit.
    pub matrix: CscMatrix<f64>,
    /// `(branch index, from bus, to bus, x)` for every active branch.
    pub branches: Vec<(usize, usize, usize, f64)>,
    pub n_branches: usize,
    pub islands: Islands,
    /// `(bus, p_max)` of in-service generators, in gen order.
    generators: Vec<(usize, f64)>,
}

impl SusceptanceModel {
    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_buses, self.n_buses);
        for (i, k, v) in self.matrix.triplet_iter() {
            m[(i, k)] += *v;
        }
        m
    }

    /// Reference bus chosen for each island, `None` for dead islands.
    pub fn references(&self) -> Vec<Option<usize>> {
        self.islands
            .islands
            .iter()
            .map(|island| {
                if island.has_slack {
                    return Some(self.slack_bus);
                }
                let mut best: Option<(usize, f64)> = None;
                for &(bus, p_max) in &self.generators {
                    if self.islands.island_of[bus].is_some()
                        && island.buses.binary_search(&bus).is_ok()
                        && best.is_none_or(|(_, p)| p_max > p)
                    {
                        best = Some((bus, p_max));
                    }
                }
                best.map(|(bus, _)| bus)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcSolution {
    /// Voltage angle per bus in radians.
    pub theta: Vec<f64>,
    /// Real power from origin to extremity in MW, 0 for inactive branches.
    pub branch_p: Vec<f64>,
    pub branch_current_proxy: Vec<f64>,
    /// False when some island with consumption has no generation.
    pub converged: bool,
    pub islands: Islands,
    pub references: Vec<Option<usize>>,
    /// Injection actually served at each bus (MW).
    pub realized_injection: Vec<f64>,
    /// Mismatch taken up by each island's reference bus (MW).
    pub absorption: Vec<f64>,
}

/// Connected components of the active part of an expanded grid.
pub fn find_islands(grid: &ExpandedGrid) -> Islands {
    let edges: Vec<(usize, usize)> = grid
        .active_branches
        .iter()
        .map(|&b| (grid.origin_bus[b], grid.extremity_bus[b]))
        .collect();
    let mut has_load = vec![false; grid.n_buses()];
    for &b in &grid.load_bus {
        has_load[b] = true;
    }
    let mut has_gen = vec![false; grid.n_buses()];
    for &(b, _) in &grid.generators {
        has_gen[b] = true;
    }
    components(
        grid.n_buses(),
        &grid.bus_kind,
        &edges,
        grid.slack_bus,
        &has_gen,
        &has_load,
    )
}

fn components(
    n: usize,
    kind: &[BusKind],
    edges: &[(usize, usize)],
    slack: usize,
    has_gen: &[bool],
    has_load: &[bool],
) -> Islands {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(a, b) in edges {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut island_of = vec![None; n];
    let mut islands: Vec<Island> = Vec::new();
    let mut by_root = vec![usize::MAX; n];
    for bus in 0..n {
        if kind[bus] == BusKind::Isolated {
            continue;
        }
        let r = root(&mut parent, bus);
        if by_root[r] == usize::MAX {
            by_root[r] = islands.len();
            islands.push(Island {
                buses: Vec::new(),
                has_generation: false,
                has_load: false,
                has_slack: false,
            });
        }
        let id = by_root[r];
        island_of[bus] = Some(id);
        let island = &mut islands[id];
        island.buses.push(bus);
        island.has_generation |= has_gen[bus];
        island.has_load |= has_load[bus];
        island.has_slack |= bus == slack;
    }
    Islands { island_of, islands }
}

/// Builds the susceptance matrix of the active branches.
pub fn assemble(grid: &ExpandedGrid) -> Result<SusceptanceModel, PowerFlowError> {
    let n = grid.n_buses();
    let mut coo = CooMatrix::new(n, n);
    let mut branches = Vec::with_capacity(grid.active_branches.len());
    for &b in &grid.active_branches {
        let x = grid.reactance[b];
        if x.is_nan() || x <= 0.0 {
            return Err(PowerFlowError::NonpositiveReactance { branch: b, x });
        }
        let (i, k) = (grid.origin_bus[b], grid.extremity_bus[b]);
        branches.push((b, i, k, x));
        if i == k {
            continue;
        }
        let y = 1.0 / x;
        coo.push(i, i, y);
        coo.push(k, k, y);
        coo.push(i, k, -y);
        coo.push(k, i, -y);
    }
    Ok(SusceptanceModel {
        n_buses: n,
        per_unit_base: grid.base_mva,
        slack_bus: grid.slack_bus,
        matrix: CscMatrix::from(&coo),
        branches,
        n_branches: grid.reactance.len(),
        islands: find_islands(grid),
        generators: grid.generators.clone(),
    })
}

/// Solves for angles and flows given per-bus net injections in MW.
///
/// Each island's reference bus absorbs that island's mismatch. Islands with
/// neither slack nor generation are left unsolved; if they carry any
/// injection the solution is flagged as not converged.
pub fn solve(model: &SusceptanceModel, injections: &[f64]) -> Result<DcSolution, PowerFlowError> {
    let n = model.n_buses;
    if injections.len() != n {
        return Err(PowerFlowError::InjectionLength {
            expected: n,
            got: injections.len(),
        });
    }
    let references = model.references();
    let islands = &model.islands;

    // Unknown angles: every bus of a live island except its reference.
    let mut unknown = vec![usize::MAX; n];
    let mut order = Vec::new();
    let mut converged = true;
    for (island, reference) in islands.islands.iter().zip(&references) {
        match reference {
            Some(r) => {
                for &bus in &island.buses {
                    if bus != *r {
                        unknown[bus] = order.len();
                        order.push(bus);
                    }
                }
            }
            None => {
                if island
                    .buses
                    .iter()
                    .any(|&b| injections[b].abs() > DEAD_ISLAND_TOLERANCE)
                {
                    converged = false;
                }
            }
        }
    }

    let m = order.len();
    let rhs = DVector::from_iterator(m, order.iter().map(|&b| injections[b] / model.per_unit_base));
    let mut reduced = CooMatrix::new(m, m);
    for &(_, i, k, x) in &model.branches {
        if i == k {
            continue;
        }
        let y = 1.0 / x;
        let (ui, uk) = (unknown[i], unknown[k]);
        if ui != usize::MAX {
            reduced.push(ui, ui, y);
        }
        if uk != usize::MAX {
            reduced.push(uk, uk, y);
        }
        if ui != usize::MAX && uk != usize::MAX {
            reduced.push(ui, uk, -y);
            reduced.push(uk, ui, -y);
        }
    }
    let x = if m == 0 {
        DVector::zeros(0)
    } else if m <= DENSE_LIMIT {
        solve_dense(&reduced, rhs)?
    } else {
        solve_sparse(&reduced, &rhs)?
    };

    let mut theta = vec![0.0; n];
    for (j, &bus) in order.iter().enumerate() {
        theta[bus] = x[j];
    }
    let mut branch_p = vec![0.0; model.n_branches];
    let mut outflow = vec![0.0; n];
    for &(b, i, k, x) in &model.branches {
        if i == k {
            continue;
        }
        let p = model.per_unit_base * (theta[i] - theta[k]) / x;
        branch_p[b] = p;
        outflow[i] += p;
        outflow[k] -= p;
    }

    let mut realized_injection = vec![0.0; n];
    let mut absorption = vec![0.0; islands.islands.len()];
    for (id, (island, reference)) in islands.islands.iter().zip(&references).enumerate() {
        let Some(r) = *reference else { continue };
        for &bus in &island.buses {
            realized_injection[bus] = if bus == r { outflow[bus] } else { injections[bus] };
        }
        absorption[id] = outflow[r] - injections[r];
    }

    Ok(DcSolution {
        branch_current_proxy: branch_p.iter().map(|p| p.abs()).collect(),
        theta,
        branch_p,
        converged,
        islands: islands.clone(),
        references,
        realized_injection,
        absorption,
    })
}

fn solve_dense(coo: &CooMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>, PowerFlowError> {
    let m = coo.nrows();
    let mut a = DMatrix::zeros(m, m);
    for (i, k, v) in coo.triplet_iter() {
        a[(i, k)] += *v;
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    a.lu().solve(&rhs).ok_or(PowerFlowError::SingularSystem)
}

fn solve_sparse(coo: &CooMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, PowerFlowError> {
    let csc = CscMatrix::from(coo);
    let chol = CscCholesky::factor(&csc).map_err(|_| PowerFlowError::SingularSystem)?;
    let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let x = chol.solve(&b);
    Ok(DVector::from_column_slice(x.as_slice()))
}

/// Flow magnitude per branch, the quantity compared to thermal limits.
///
/// With unit voltages and no reactive power, `|I| = |P|`.
pub fn current_proxy(solution: &DcSolution) -> Vec<f64> {
    solution.branch_p.iter().map(|p| p.abs()).collect()
}

//! Independent DC load-flow reference used to check the library solver.
//!
//! Shares no code with the crate: it reads the three matrices with its own
//! scanner, builds the reduced susceptance system by hand and solves it with
//! partial-pivot Gaussian elimination.

#![allow(dead_code)]

pub struct OracleCase {
    pub base_mva: f64,
    /// (bus id, type, Pd)
    pub buses: Vec<(i64, i64, f64)>,
    /// (bus id, Pg, Pmax)
    pub gens: Vec<(i64, f64, f64)>,
    /// (from, to, x, status)
    pub branches: Vec<(i64, i64, f64, f64)>,
}

fn matrix_rows(text: &str, key: &str) -> Vec<Vec<f64>> {
    let start = text.find(&format!("mpc.{key} = [")).expect("section present");
    let body = &text[start..];
    let open = body.find('[').unwrap();
    let close = body.find(']').unwrap();
    body[open + 1..close]
        .lines()
        .map(|l| l.split('%').next().unwrap().replace(';', " "))
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .filter(|r| !r.is_empty())
        .collect()
}

pub fn read_case(text: &str) -> OracleCase {
    let base_line = text
        .lines()
        .find(|l| l.trim_start().starts_with("mpc.baseMVA"))
        .unwrap();
    let base_mva = base_line
        .split('=')
        .nth(1)
        .unwrap()
        .trim()
        .trim_end_matches(';')
        .parse()
        .unwrap();
    OracleCase {
        base_mva,
        buses: matrix_rows(text, "bus")
            .into_iter()
            .map(|r| (r[0] as i64, r[1] as i64, r[2]))
            .collect(),
        gens: matrix_rows(text, "gen")
            .into_iter()
            .map(|r| (r[0] as i64, r[1], r[8]))
            .collect(),
        branches: matrix_rows(text, "branch")
            .into_iter()
            .map(|r| (r[0] as i64, r[1] as i64, r[3], r[10]))
            .collect(),
    }
}

/// Solves `a x = b` in place with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-12, "singular oracle system");
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Branch flows in MW (from -> to) for the given per-bus net injections in
/// MW, with every in-service branch connected and the type-3 bus as reference.
pub fn dc_flows(case: &OracleCase, injections_mw: &[f64]) -> Vec<f64> {
    let n = case.buses.len();
    let pos = |id: i64| case.buses.iter().position(|b| b.0 == id).unwrap();
    let slack = case.buses.iter().position(|b| b.1 == 3).unwrap();
    let mut b = vec![vec![0.0; n]; n];
    for &(f, t, x, st) in &case.branches {
        if st == 0.0 {
            continue;
        }
        let (i, k) = (pos(f), pos(t));
        b[i][i] += 1.0 / x;
        b[k][k] += 1.0 / x;
        b[i][k] -= 1.0 / x;
        b[k][i] -= 1.0 / x;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let reduced: Vec<Vec<f64>> = keep
        .iter()
        .map(|&i| keep.iter().map(|&k| b[i][k]).collect())
        .collect();
    let rhs: Vec<f64> = keep
        .iter()
        .map(|&i| injections_mw[i] / case.base_mva)
        .collect();
    let sol = gauss_solve(reduced, rhs);
    let mut theta = vec![0.0; n];
    for (j, &i) in keep.iter().enumerate() {
        theta[i] = sol[j];
    }
    case.branches
        .iter()
        .map(|&(f, t, x, st)| {
            if st == 0.0 {
                0.0
            } else {
                case.base_mva * (theta[pos(f)] - theta[pos(t)]) / x
            }
        })
        .collect()
}

/// Net injection per bus (file order) from generator Pg and bus Pd columns.
pub fn case_injections(case: &OracleCase) -> Vec<f64> {
    let mut p: Vec<f64> = case.buses.iter().map(|b| -b.2).collect();
    for &(bus, pg, _) in &case.gens {
        let i = case.buses.iter().position(|b| b.0 == bus).unwrap();
        p[i] += pg;
    }
    p
}

/// Connected components over the in-service branches, as lists of bus
/// positions.
pub fn components(case: &OracleCase, status: &[f64]) -> Vec<Vec<usize>> {
    let n = case.buses.len();
    let pos = |id: i64| case.buses.iter().position(|b| b.0 == id).unwrap();
    let mut adj = vec![Vec::new(); n];
    for (k, &(f, t, _, _)) in case.branches.iter().enumerate() {
        if status[k] == 1.0 {
            adj[pos(f)].push(pos(t));
            adj[pos(t)].push(pos(f));
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Flows with the given branch statuses, one reference per island: the
/// type-3 bus, else the largest generator. `None` when an island carrying
/// injection has no generator at all.
pub fn dc_flows_islanded(case: &OracleCase, status: &[f64], injections_mw: &[f64]) -> Option<Vec<f64>> {
    let n = case.buses.len();
    let pos = |id: i64| case.buses.iter().position(|b| b.0 == id).unwrap();
    let mut theta = vec![0.0; n];
    for comp in components(case, status) {
        let reference = comp.iter().copied().find(|&i| case.buses[i].1 == 3).or_else(|| {
            let mut best: Option<(usize, f64)> = None;
            for &(bus, _, pmax) in &case.gens {
                let i = pos(bus);
                if comp.contains(&i) && best.is_none_or(|(_, p)| pmax > p) {
                    best = Some((i, pmax));
                }
            }
            best.map(|b| b.0)
        });
        let Some(reference) = reference else {
            if comp.iter().any(|&i| injections_mw[i].abs() > 1e-9) {
                return None;
            }
            continue;
        };
        let keep: Vec<usize> = comp.iter().copied().filter(|&i| i != reference).collect();
        if keep.is_empty() {
            continue;
        }
        let mut a = vec![vec![0.0; keep.len()]; keep.len()];
        for (k, &(f, t, x, _)) in case.branches.iter().enumerate() {
            if status[k] != 1.0 {
                continue;
            }
            let (i, j) = (pos(f), pos(t));
            let (ki, kj) = (keep.iter().position(|&v| v == i), keep.iter().position(|&v| v == j));
            if let Some(ki) = ki {
                a[ki][ki] += 1.0 / x;
            }
            if let Some(kj) = kj {
                a[kj][kj] += 1.0 / x;
            }
            if let (Some(ki), Some(kj)) = (ki, kj) {
                a[ki][kj] -= 1.0 / x;
                a[kj][ki] -= 1.0 / x;
            }
        }
        let rhs = keep.iter().map(|&i| injections_mw[i] / case.base_mva).collect();
        let sol = gauss_solve(a, rhs);
        for (k, &i) in keep.iter().enumerate() {
            theta[i] = sol[k];
        }
    }
    Some(
        case.branches
            .iter()
            .enumerate()
            .map(|(k, &(f, t, x, _))| {
                if status[k] == 1.0 {
                    case.base_mva * (theta[pos(f)] - theta[pos(t)]) / x
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Reward of disconnecting `line` (or nothing) from the all-in-service
/// state: trip lines above `limit` until stable, then score.
pub fn disconnection_reward(
    case: &OracleCase,
    injections_mw: &[f64],
    line: Option<usize>,
    limit: f64,
    unit_cost: f64,
    load_cut: f64,
) -> f64 {
    let mut status: Vec<f64> = case.branches.iter().map(|b| b.3).collect();
    let mut cost = 0.0;
    if let Some(l) = line {
        if status[l] == 1.0 {
            cost = unit_cost;
        }
        status[l] = 0.0;
    }
    loop {
        let Some(flows) = dc_flows_islanded(case, &status, injections_mw) else {
            return load_cut - cost;
        };
        let over: Vec<usize> = (0..flows.len())
            .filter(|&k| status[k] == 1.0 && flows[k].abs() / limit > 1.0 + 1e-9)
            .collect();
        if over.is_empty() {
            let usage: f64 = (0..flows.len())
                .filter(|&k| status[k] == 1.0)
                .map(|k| (flows[k] / limit).powi(2))
                .sum();
            return -usage - cost;
        }
        for k in over {
            status[k] = 0.0;
        }
    }
}

#![allow(dead_code)]

pub mod oracle;

use gridgame::builtins;
use gridgame::case_io::{BranchRow, RawCase};
use gridgame::chronics::InjectionSet;
use gridgame::grid_model::{self, GridCase};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const CASE4GS: &str = include_str!("../../data/case4gs.m");
pub const CASE118: &str = include_str!("../../data/case118.m");

/// Flow magnitudes printed for the t = 0 crisis state.
pub const FIGURE_FLOWS: [f64; 5] = [82.86, 67.14, 45.13, 77.99, 72.01];

pub fn case4() -> GridCase {
    builtins::grid("case4gs").unwrap()
}

pub fn case118() -> GridCase {
    builtins::grid("case118").unwrap()
}

fn unit(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn below(rng: &mut Xoshiro256PlusPlus, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// A random connected case with 2 to 9 buses, a spanning tree plus a few
/// extra (possibly parallel) branches, and a load or generator on every bus.
pub fn random_case(seed: u64) -> RawCase {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = 2 + below(&mut rng, 8);
    let slack = below(&mut rng, n);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((below(&mut rng, i), i));
    }
    for _ in 0..below(&mut rng, n + 1) {
        let a = below(&mut rng, n);
        let b = below(&mut rng, n);
        if a != b {
            edges.push((a, b));
        }
    }
    let mut bus = Vec::new();
    let mut gen = Vec::new();
    for i in 0..n {
        let is_gen = i == slack || unit(&mut rng) < 0.3;
        let pd = if is_gen { 0.0 } else { (10.0 + 90.0 * unit(&mut rng)).round() };
        let kind = if i == slack { 3.0 } else if is_gen { 2.0 } else { 1.0 };
        bus.push([(i + 1) as f64, kind, pd, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 230.0, 1.0, 1.1, 0.9]);
        if is_gen {
            let pg = (100.0 * unit(&mut rng)).round();
            gen.push([(i + 1) as f64, pg, 0.0, 100.0, -100.0, 1.0, 100.0, 1.0, 50.0 + pg, 0.0]);
        }
    }
    let branch = edges
        .iter()
        .map(|&(a, b)| BranchRow {
            params: [
                (a + 1) as f64,
                (b + 1) as f64,
                0.0,
                0.01 + 0.5 * unit(&mut rng),
                0.0,
                100.0,
                100.0,
                100.0,
                0.0,
                0.0,
                1.0,
            ],
            flows: None,
        })
        .collect();
    RawCase {
        name: format!("random{seed}"),
        version: "2".into(),
        base_mva: 100.0,
        bus,
        gen,
        branch,
    }
}

pub fn random_grid(seed: u64) -> GridCase {
    grid_model::build_grid(&random_case(seed)).unwrap()
}

/// Random per-element injections, balanced when `balanced` is set.
pub fn random_injections(grid: &GridCase, seed: u64, balanced: bool) -> InjectionSet {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let load_p: Vec<f64> = grid.loads.iter().map(|_| 100.0 * unit(&mut rng)).collect();
    let mut prod_p: Vec<f64> = grid.generators.iter().map(|_| 100.0 * unit(&mut rng)).collect();
    if balanced && !prod_p.is_empty() {
        let gap = load_p.iter().sum::<f64>() - prod_p.iter().sum::<f64>();
        prod_p[0] += gap;
    }
    InjectionSet {
        load_q: vec![0.0; load_p.len()],
        prod_p,
        load_p,
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

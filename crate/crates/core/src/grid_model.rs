//! Substation-level grid model, configuration enumeration and node splitting.
//!
//! Every bus row of a case file becomes a [`Substation`]. The elements of a
//! substation are, in this fixed order: branch ends (in branch-row order),
//! generators (in gen-row order), then loads. A configuration assigns each
//! element to bus A or bus B of its substation and is stored as the bitmask of
//! the elements sitting on bus B; element 0 always stays on bus A.
//!
//! ```
//! use gridgame::grid_model::enumerate_configurations;
//!
//! let configs = enumerate_configurations(4).unwrap();
//! let masks: Vec<u64> = configs.iter().map(|c| c.bus_b).collect();
//! assert_eq!(masks, vec![0b0000, 0b0110, 0b1010, 0b1100]);
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::{self, RawCase};

/// Largest element count for which the full configuration list is built.
pub const MAX_ENUMERATED_ELEMENTS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ElementRef {
    /// Origin end of a branch.
    Origin(usize),
    /// Extremity end of a branch.
    Extremity(usize),
    Generator(usize),
    Load(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Substation {
    /// Bus id from the case file.
    pub id: u32,
    pub elements: Vec<ElementRef>,
}

impl Substation {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub origin: usize,
    pub extremity: usize,
    pub r: f64,
    /// Series reactance in per unit.
    pub x: f64,
    pub rate_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub substation: usize,
    pub p_mw: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub substation: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstationConfiguration {
    pub id: usize,
    /// Bit `i` set means element `i` sits on bus B.
    pub bus_b: u64,
}

impl SubstationConfiguration {
    pub fn uses_two_buses(&self) -> bool {
        self.bus_b != 0
    }
}

/// Restriction of the configurations offered at large substations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConfigurationCap {
    Uncapped,
    /// Substations with more than `above` elements only keep configurations
    /// whose smaller bus holds at most `max_side` elements.
    SmallSide { above: usize, max_side: usize },
}

impl Default for ConfigurationCap {
    fn default() -> Self {
        ConfigurationCap::SmallSide {
            above: 10,
            max_side: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyState {
    pub configuration_ids: Vec<usize>,
    /// 1 in service, 0 out of service.
    pub line_status: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("substation {id} hosts {n} element(s), at least 2 are required")]
    SubstationTooSmall { id: u32, n: usize },
    #[error("invalid element count {0}")]
    InvalidElementCount(usize),
    #[error("substation {substation}: configuration {id} out of range (count {count})")]
    ConfigurationIdOutOfRange {
        substation: usize,
        id: usize,
        count: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("whitelist for substation {substation} is invalid: {reason}")]
    BadWhitelist { substation: usize, reason: String },
}

/// Static grid description, shareable between environments.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub substations: Vec<Substation>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    /// One limit per branch, in MW like the flow proxy.
    pub thermal_limits: Vec<f64>,
    pub reference_topology: TopologyState,
    pub slack_substation: usize,
    /// Offered configurations per substation, id 0 first.
    configurations: Vec<Vec<SubstationConfiguration>>,
    cap: ConfigurationCap,
}

impl GridCase {
    pub fn n_substations(&self) -> usize {
        self.substations.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn configurations(&self, substation: usize) -> &[SubstationConfiguration] {
        &self.configurations[substation]
    }

    pub fn configuration_count(&self, substation: usize) -> usize {
        self.configurations[substation].len()
    }

    /// Length of the concatenated per-substation one-hot vectors.
    pub fn onehot_len(&self) -> usize {
        self.configurations.iter().map(Vec::len).sum()
    }

    pub fn cap(&self) -> &ConfigurationCap {
        &self.cap
    }

    pub fn substation_index(&self, bus_id: u32) -> Option<usize> {
        self.substations.iter().position(|s| s.id == bus_id)
    }

    /// Rebuilds the configuration lists under another cap.
    pub fn with_cap(&self, cap: ConfigurationCap) -> Result<GridCase, GridError> {
        let mut grid = self.clone();
        grid.configurations = self
            .substations
            .iter()
            .map(|s| enumerate_capped(s.n_elements(), &cap))
            .collect::<Result<_, _>>()?;
        grid.cap = cap;
        Ok(grid)
    }

    /// Replaces the configuration list of some substations by explicit
    /// bus-B masks. Id 0 (all on bus A) is always kept first.
    pub fn with_whitelist(&self, entries: &[(usize, Vec<u64>)]) -> Result<GridCase, GridError> {
        let mut grid = self.clone();
        for (substation, masks) in entries {
            let bad = |reason: String| GridError::BadWhitelist {
                substation: *substation,
                reason,
            };
            let sub = self
                .substations
                .get(*substation)
                .ok_or_else(|| bad("no such substation".into()))?;
            let n = sub.n_elements();
            let mut kept = vec![0u64];
            for &m in masks {
                if !is_canonical_partition(n, m) {
                    return Err(bad(format!("mask {m:#b} is not a legal configuration")));
                }
                kept.push(m);
            }
            kept.sort_unstable();
            kept.dedup();
            grid.configurations[*substation] = number(kept);
        }
        Ok(grid)
    }

    /// Bus-B mask of the configuration `id` at `substation`.
    pub fn partition(&self, substation: usize, id: usize) -> Result<u64, GridError> {
        self.configurations[substation]
            .get(id)
            .map(|c| c.bus_b)
            .ok_or(GridError::ConfigurationIdOutOfRange {
                substation,
                id,
                count: self.configurations[substation].len(),
            })
    }

    /// Checks a topology against the grid's shape and configuration counts.
    pub fn check_topology(&self, topo: &TopologyState) -> Result<(), GridError> {
        if topo.configuration_ids.len() != self.n_substations() {
            return Err(GridError::ShapeMismatch(format!(
                "{} configuration ids for {} substations",
                topo.configuration_ids.len(),
                self.n_substations()
            )));
        }
        if topo.line_status.len() != self.n_branches() {
            return Err(GridError::ShapeMismatch(format!(
                "{} line statuses for {} branches",
                topo.line_status.len(),
                self.n_branches()
            )));
        }
        for (s, &id) in topo.configuration_ids.iter().enumerate() {
            self.partition(s, id)?;
        }
        Ok(())
    }
}

/// Maps a case onto substations with the default configuration cap.
pub fn build_grid(case: &RawCase) -> Result<GridCase, GridError> {
    build_grid_with(case, ConfigurationCap::default())
}

pub fn build_grid_with(case: &RawCase, cap: ConfigurationCap) -> Result<GridCase, GridError> {
    use case_io::{branch, bus, gen};

    let index = case.bus_index();
    let mut substations: Vec<Substation> = case
        .bus
        .iter()
        .map(|r| Substation {
            id: r[bus::ID] as u32,
            elements: Vec::new(),
        })
        .collect();

    let mut branches = Vec::with_capacity(case.branch.len());
    for (i, row) in case.branch.iter().enumerate() {
        let origin = index[&row.from_bus()];
        let extremity = index[&row.to_bus()];
        substations[origin].elements.push(ElementRef::Origin(i));
        substations[extremity].elements.push(ElementRef::Extremity(i));
        branches.push(Branch {
            origin,
            extremity,
            r: row.params[branch::R],
            x: row.params[branch::X],
            rate_a: row.params[branch::RATE_A],
        });
    }

    let mut generators = Vec::with_capacity(case.gen.len());
    for (i, row) in case.gen.iter().enumerate() {
        let s = index[&(row[gen::BUS] as u32)];
        substations[s].elements.push(ElementRef::Generator(i));
        generators.push(Generator {
            substation: s,
            p_mw: row[gen::PG],
            p_max: row[gen::PMAX],
            p_min: row[gen::PMIN],
            in_service: row[gen::STATUS] > 0.0,
        });
    }

    let mut loads = Vec::new();
    for (s, row) in case.bus.iter().enumerate() {
        if row[bus::PD] != 0.0 {
            substations[s].elements.push(ElementRef::Load(loads.len()));
            loads.push(Load {
                substation: s,
                p_mw: row[bus::PD],
                q_mvar: row[bus::QD],
            });
        }
    }

    if let Some(s) = substations.iter().find(|s| s.n_elements() < 2) {
        return Err(GridError::SubstationTooSmall {
            id: s.id,
            n: s.n_elements(),
        });
    }

    let slack_substation = case
        .bus
        .iter()
        .position(|r| r[bus::TYPE] == bus::TYPE_REF)
        .expect("validated case has a reference bus");

    // A zero rating means "unlimited" in the case format.
    let thermal_limits = branches
        .iter()
        .map(|b| if b.rate_a > 0.0 { b.rate_a } else { f64::INFINITY })
        .collect();

    let configurations = substations
        .iter()
        .map(|s| enumerate_capped(s.n_elements(), &cap))
        .collect::<Result<_, _>>()?;

    let reference_topology = TopologyState {
        configuration_ids: vec![0; substations.len()],
        line_status: case
            .branch
            .iter()
            .map(|r| u8::from(r.in_service()))
            .collect(),
    };

    Ok(GridCase {
        name: case.name.clone(),
        base_mva: case.base_mva,
        substations,
        branches,
        generators,
        loads,
        thermal_limits,
        reference_topology,
        slack_substation,
        configurations,
        cap,
    })
}

fn is_canonical_partition(n: usize, bus_b: u64) -> bool {
    if n == 0 || n > 63 || bus_b >> n != 0 || bus_b & 1 != 0 {
        return false;
    }
    let k = bus_b.count_ones() as usize;
    k == 0 || (k >= 2 && n - k >= 2)
}

fn number(masks: Vec<u64>) -> Vec<SubstationConfiguration> {
    masks
        .into_iter()
        .enumerate()
        .map(|(id, bus_b)| SubstationConfiguration { id, bus_b })
        .collect()
}

/// All `k`-subsets of elements `1..n`, as masks, in ascending order.
fn subsets_of_size(n: usize, k: usize, out: &mut Vec<u64>) {
    let free = n - 1;
    if k == 0 || k > free {
        return;
    }
    // Gosper's hack over the `free` movable elements.
    let mut c: u64 = (1u64 << k) - 1;
    let limit: u64 = 1u64 << free;
    while c < limit {
        out.push(c << 1);
        let u = c & c.wrapping_neg();
        let v = c + u;
        c = v + (((v ^ c) / u) >> 2);
    }
}

/// Every canonical two-bus partition of `n` elements with no singleton bus.
///
/// Id 0 puts everything on bus A; the others follow ascending bus-B mask.
pub fn enumerate_configurations(n: usize) -> Result<Vec<SubstationConfiguration>, GridError> {
    enumerate_capped(n, &ConfigurationCap::Uncapped)
}

pub fn enumerate_capped(
    n: usize,
    cap: &ConfigurationCap,
) -> Result<Vec<SubstationConfiguration>, GridError> {
    if n < 2 {
        return Err(GridError::InvalidElementCount(n));
    }
    let max_side = match *cap {
        ConfigurationCap::SmallSide { above, max_side } if n > above => max_side,
        _ => {
            if n > MAX_ENUMERATED_ELEMENTS {
                return Err(GridError::InvalidElementCount(n));
            }
            n
        }
    };
    if n > 63 {
        return Err(GridError::InvalidElementCount(n));
    }
    let mut masks = vec![0u64];
    for k in 2..=n.saturating_sub(2) {
        if k.min(n - k) <= max_side {
            subsets_of_size(n, k, &mut masks);
        }
    }
    masks.sort_unstable();
    Ok(number(masks))
}

/// Closed-form configuration count, with the two-element special case.
pub fn configuration_count(n: usize) -> u64 {
    match n {
        0 | 1 => 0,
        2 => 1,
        _ => (1u64 << (n - 1)) - n as u64,
    }
}

/// Role of a solver bus after expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Active,
    /// No element attached; bus type 4 in the case-file vocabulary.
    Isolated,
}

/// Bus-level grid for one topology.
///
/// Solver bus `s` is bus A of substation `s`; bus `n_sub + s` is its bus B.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedGrid {
    pub n_substations: usize,
    pub base_mva: f64,
    pub bus_kind: Vec<BusKind>,
    pub origin_bus: Vec<usize>,
    pub extremity_bus: Vec<usize>,
    pub generator_bus: Vec<usize>,
    pub load_bus: Vec<usize>,
    /// Indices of the branches in service.
    pub active_branches: Vec<usize>,
    pub reactance: Vec<f64>,
    /// Reference bus of the whole grid.
    pub slack_bus: usize,
    /// `(bus, p_max)` of every in-service generator, in gen order.
    pub generators: Vec<(usize, f64)>,
}

impl ExpandedGrid {
    pub fn n_buses(&self) -> usize {
        self.bus_kind.len()
    }

    pub fn non_isolated_count(&self) -> usize {
        self.bus_kind.iter().filter(|k| **k == BusKind::Active).count()
    }

    /// Per-bus net injection in MW from per-generator and per-load values.
    pub fn bus_injections(&self, prod_p: &[f64], load_p: &[f64], gen_in_service: &[bool]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_buses()];
        for (g, &v) in prod_p.iter().enumerate() {
            if gen_in_service[g] {
                p[self.generator_bus[g]] += v;
            }
        }
        for (l, &v) in load_p.iter().enumerate() {
            p[self.load_bus[l]] -= v;
        }
        p
    }
}

/// Expands a topology into solver buses.
pub fn expand(grid: &GridCase, topo: &TopologyState) -> Result<ExpandedGrid, GridError> {
    grid.check_topology(topo)?;
    let partitions = topo
        .configuration_ids
        .iter()
        .enumerate()
        .map(|(s, &id)| grid.partition(s, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(expand_partitions(grid, &partitions, &topo.line_status))
}

/// Expansion from raw bus-B masks, canonical or not.
///
/// Used to check that relabeling the two buses of a substation changes
/// nothing physical.
pub fn expand_partitions(grid: &GridCase, bus_b: &[u64], line_status: &[u8]) -> ExpandedGrid {
    let n_sub = grid.n_substations();
    let mut origin_bus = vec![0; grid.n_branches()];
    let mut extremity_bus = vec![0; grid.n_branches()];
    let mut generator_bus = vec![0; grid.generators.len()];
    let mut load_bus = vec![0; grid.loads.len()];
    let mut bus_kind = vec![BusKind::Isolated; 2 * n_sub];

    for (s, sub) in grid.substations.iter().enumerate() {
        for (e, element) in sub.elements.iter().enumerate() {
            let bus = if bus_b[s] >> e & 1 == 1 { n_sub + s } else { s };
            bus_kind[bus] = BusKind::Active;
            match *element {
                ElementRef::Origin(b) => origin_bus[b] = bus,
                ElementRef::Extremity(b) => extremity_bus[b] = bus,
                ElementRef::Generator(g) => generator_bus[g] = bus,
                ElementRef::Load(l) => load_bus[l] = bus,
            }
        }
    }

    let slack_sub = grid.slack_substation;
    let slack_bus = grid
        .generators
        .iter()
        .enumerate()
        .find(|(_, g)| g.substation == slack_sub)
        .map(|(i, _)| generator_bus[i])
        .unwrap_or(if bus_b[slack_sub] & 1 == 1 { n_sub + slack_sub } else { slack_sub });
    let generators = grid
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.in_service)
        .map(|(i, g)| (generator_bus[i], g.p_max))
        .collect();

    ExpandedGrid {
        n_substations: n_sub,
        base_mva: grid.base_mva,
        bus_kind,
        origin_bus,
        extremity_bus,
        generator_bus,
        load_bus,
        active_branches: (0..grid.n_branches())
            .filter(|&b| line_status[b] == 1)
            .collect(),
        reactance: grid.branches.iter().map(|b| b.x).collect(),
        slack_bus,
        generators,
    }
}

/// Number of substations whose configuration differs.
pub fn topology_distance(a: &TopologyState, b: &TopologyState) -> Result<usize, GridError> {
    if a.configuration_ids.len() != b.configuration_ids.len() {
        return Err(GridError::ShapeMismatch(format!(
            "{} vs {} substations",
            a.configuration_ids.len(),
            b.configuration_ids.len()
        )));
    }
    Ok(a.configuration_ids
        .iter()
        .zip(&b.configuration_ids)
        .filter(|(x, y)| x != y)
        .count())
}

/// Element count per substation, keyed by bus id.
pub fn element_counts(grid: &GridCase) -> HashMap<u32, usize> {
    grid.substations
        .iter()
        .map(|s| (s.id, s.n_elements()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;

    fn case4() -> GridCase {
        builtins::grid("case4gs").unwrap()
    }

    /// Partitions of `n` labelled elements into at most two unlabelled
    /// non-singleton groups, by brute force over all assignments.
    fn brute_force_count(n: usize) -> usize {
        let mut seen = std::collections::HashSet::new();
        for assign in 0u32..(1 << n) {
            let b = assign.count_ones() as usize;
            if b == 1 || n - b == 1 {
                continue;
            }
            let canon = if assign & 1 == 1 { !assign & ((1 << n) - 1) } else { assign };
            seen.insert(canon);
        }
        seen.len()
    }

    #[test]
    fn small_counts() {
        assert_eq!(enumerate_configurations(2).unwrap().len(), 1);
        assert_eq!(enumerate_configurations(3).unwrap().len(), 1);
        assert_eq!(enumerate_configurations(4).unwrap().len(), 4);
        assert_eq!(
            enumerate_configurations(1),
            Err(GridError::InvalidElementCount(1))
        );
    }

    #[test]
    fn counts_match_brute_force() {
        for n in 2..=14 {
            let got = enumerate_configurations(n).unwrap().len();
            assert_eq!(got, brute_force_count(n), "n = {n}");
            assert_eq!(got as u64, configuration_count(n), "n = {n}");
        }
    }

    #[test]
    fn enumeration_is_canonical_and_ordered() {
        let configs = enumerate_configurations(7).unwrap();
        assert_eq!(configs[0].bus_b, 0);
        for (i, c) in configs.iter().enumerate() {
            assert_eq!(c.id, i);
            assert!(is_canonical_partition(7, c.bus_b));
        }
        assert!(configs.windows(2).all(|w| w[0].bus_b < w[1].bus_b));
        assert_eq!(configs, enumerate_configurations(7).unwrap());
    }

    #[test]
    fn small_side_cap() {
        let cap = ConfigurationCap::default();
        assert_eq!(enumerate_capped(10, &cap).unwrap().len(), 502);
        // 1 + C(13,2) + C(13,3) + C(13,11) + C(13,12)
        assert_eq!(enumerate_capped(14, &cap).unwrap().len(), 1 + 78 + 286 + 78 + 13);
        let capped = enumerate_capped(14, &cap).unwrap();
        assert!(capped.iter().all(|c| {
            let k = c.bus_b.count_ones() as usize;
            k == 0 || k.min(14 - k) <= 3
        }));
    }

    #[test]
    fn case4_structure() {
        let g = case4();
        assert_eq!(g.n_substations(), 4);
        let counts: Vec<usize> = g.substations.iter().map(Substation::n_elements).collect();
        assert_eq!(counts, vec![3, 4, 3, 4]);
        assert_eq!(g.generators.len(), 2);
        assert_eq!(g.loads.len(), 2);
        assert_eq!(g.thermal_limits, vec![100.0; 5]);
        assert_eq!(g.reference_topology.configuration_ids, vec![0; 4]);
        assert_eq!(g.onehot_len(), 1 + 4 + 1 + 4);
    }

    #[test]
    fn toy_two_bus_grid() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 1 1 1 1;\n2 1 10 0 0 0 1 1 0 1 1 1 1;\n];\n\
                    mpc.gen = [\n1 10 0 0 0 1 100 1 50 0;\n];\nmpc.branch = [\n1 2 0 0.1 0 50 50 50 0 0 1;\n];\n";
        let g = build_grid(&case_io::parse_case(text).unwrap()).unwrap();
        assert_eq!(g.n_substations(), 2);
        assert!(g.substations.iter().all(|s| s.n_elements() == 2));
    }

    #[test]
    fn lonely_element_is_rejected() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 1 1 1 1;\n2 1 0 0 0 0 1 1 0 1 1 1 1;\n];\n\
                    mpc.gen = [\n1 0 0 0 0 1 100 1 50 0;\n];\nmpc.branch = [\n1 2 0 0.1 0 50 50 50 0 0 1;\n];\n";
        assert_eq!(
            build_grid(&case_io::parse_case(text).unwrap()),
            Err(GridError::SubstationTooSmall { id: 2, n: 1 })
        );
    }

    #[test]
    fn expansion_counts() {
        let g = case4();
        let mut topo = g.reference_topology.clone();
        let e = expand(&g, &topo).unwrap();
        assert_eq!(e.non_isolated_count(), 4);
        assert_eq!(e.active_branches.len(), 5);

        topo.line_status[0] = 0;
        assert_eq!(expand(&g, &topo).unwrap().active_branches.len(), 4);

        topo.line_status[0] = 1;
        topo.configuration_ids[1] = 1;
        let e = expand(&g, &topo).unwrap();
        assert_eq!(e.non_isolated_count(), 5);
        // {line 1-2, load 2} stay on bus A; lines 2-3 and 2-4 move to bus B.
        assert_eq!(e.extremity_bus[0], 1);
        assert_eq!(e.load_bus[0], 1);
        assert_eq!(e.origin_bus[2], 5);
        assert_eq!(e.origin_bus[3], 5);

        topo.configuration_ids[1] = 4;
        assert!(matches!(
            expand(&g, &topo),
            Err(GridError::ConfigurationIdOutOfRange { substation: 1, id: 4, count: 4 })
        ));
    }

    #[test]
    fn distance_basics() {
        let g = case4();
        let a = g.reference_topology.clone();
        let mut b = a.clone();
        assert_eq!(topology_distance(&a, &a).unwrap(), 0);
        b.configuration_ids[3] = 2;
        b.line_status[0] = 0;
        assert_eq!(topology_distance(&a, &b).unwrap(), 1);
        let short = TopologyState {
            configuration_ids: vec![0],
            line_status: vec![],
        };
        assert!(topology_distance(&a, &short).is_err());
    }

    #[test]
    fn whitelist_replaces_list() {
        let g = case4().with_whitelist(&[(1, vec![0b1100])]).unwrap();
        assert_eq!(g.configuration_count(1), 2);
        assert_eq!(g.partition(1, 1).unwrap(), 0b1100);
        assert!(case4().with_whitelist(&[(1, vec![0b0010])]).is_err());
    }
}

//! Grid description, N-1 contingency enumeration, and DC power transfer
//! distribution factors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series reactance in p.u. on `base_mva`.
    pub reactance: f64,
    /// Flow limit in MW.
    pub p_l_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Reserve capacity limit in MW.
    pub r_max: f64,
    /// Energy cost [$/MWh].
    pub h: f64,
    /// Up-reserve procurement cost [$/MWh].
    pub h_plus: f64,
    /// Down-reserve procurement cost [$/MWh].
    pub h_minus: f64,
    /// Contingency-reserve procurement cost [$/MWh].
    pub h_con: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindUnit {
    pub id: String,
    pub bus: usize,
    /// Forecast in-feed in MW.
    pub p_w: f64,
    /// Lower truncation bound of the in-feed support in MW.
    pub support_lower: f64,
    /// Upper truncation bound of the in-feed support in MW.
    pub support_upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p_d: f64,
}

fn default_base_mva() -> f64 {
    100.0
}

/// Static grid description. Immutable after load; all operations on it are
/// pure functions, so it can be shared read-only across workers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkCase {
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub buses: Vec<usize>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub wind_units: Vec<WindUnit>,
    pub loads: Vec<Load>,
    /// Reference bus; defaults to the lowest-numbered bus with a generator.
    #[serde(default)]
    pub slack_bus: Option<usize>,
    /// Line ids excluded from contingency enumeration.
    #[serde(default)]
    pub excluded_lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Contingency {
    Intact,
    LineOut(String),
    GenOut(String),
}

impl fmt::Display for Contingency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contingency::Intact => write!(f, "intact"),
            Contingency::LineOut(id) => write!(f, "line-out:{id}"),
            Contingency::GenOut(id) => write!(f, "gen-out:{id}"),
        }
    }
}

/// Line-flow sensitivities for one contingency topology. Rows follow
/// `lines` (indices into `NetworkCase::lines`, case order), columns follow
/// `NetworkCase::buses`. Entry = MW on the line per MW injected at the bus
/// and withdrawn at the slack.
#[derive(Debug, Clone)]
pub struct PtdfMatrix {
    pub contingency: Contingency,
    pub lines: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case file: {0}")]
    ParseError(String),
    #[error("invalid case: {field}: {message}")]
    ValidationError { field: String, message: String },
    #[error("topology is disconnected under {0}")]
    SingularTopology(Contingency),
    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },
}

fn validation(field: impl Into<String>, message: impl Into<String>) -> NetworkError {
    NetworkError::ValidationError {
        field: field.into(),
        message: message.into(),
    }
}

impl NetworkCase {
    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, bus: usize) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }

    /// Resolved slack bus (declared, or lowest-numbered bus with a generator).
    pub fn slack(&self) -> usize {
        self.slack_bus.unwrap_or_else(|| {
            self.generators
                .iter()
                .map(|g| g.bus)
                .min()
                .unwrap_or(self.buses[0])
        })
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().map(|l| l.p_d).sum()
    }

    pub fn total_forecast(&self) -> f64 {
        self.wind_units.iter().map(|w| w.p_w).sum()
    }

    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn wind_index(&self, id: &str) -> Option<usize> {
        self.wind_units.iter().position(|w| w.id == id)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.buses.is_empty() {
            return Err(validation("buses", "at least one bus required"));
        }
        let mut seen = HashSet::new();
        for (i, b) in self.buses.iter().enumerate() {
            if !seen.insert(*b) {
                return Err(validation(format!("buses[{i}]"), format!("duplicate bus {b}")));
            }
        }
        let bus_set: HashSet<usize> = self.buses.iter().copied().collect();
        let mut line_ids = HashSet::new();
        for (i, l) in self.lines.iter().enumerate() {
            if !line_ids.insert(l.id.clone()) {
                return Err(validation(
                    format!("lines[{i}].id"),
                    format!("duplicate line id `{}`", l.id),
                ));
            }
            if !(l.reactance > 0.0) {
                return Err(validation(
                    format!("lines[{i}].reactance"),
                    format!("line `{}` must have reactance > 0, got {}", l.id, l.reactance),
                ));
            }
            if !(l.p_l_max > 0.0) {
                return Err(validation(
                    format!("lines[{i}].p_l_max"),
                    format!("line `{}` must have a positive flow limit", l.id),
                ));
            }
            for (end, bus) in [("from_bus", l.from_bus), ("to_bus", l.to_bus)] {
                if !bus_set.contains(&bus) {
                    return Err(validation(
                        format!("lines[{i}].{end}"),
                        format!("line `{}` references unknown bus {bus}", l.id),
                    ));
                }
            }
            if l.from_bus == l.to_bus {
                return Err(validation(
                    format!("lines[{i}]"),
                    format!("line `{}` is a self-loop", l.id),
                ));
            }
        }
        let mut gen_ids = HashSet::new();
        for (i, g) in self.generators.iter().enumerate() {
            if !gen_ids.insert(g.id.clone()) {
                return Err(validation(
                    format!("generators[{i}].id"),
                    format!("duplicate generator id `{}`", g.id),
                ));
            }
            if !bus_set.contains(&g.bus) {
                return Err(validation(
                    format!("generators[{i}].bus"),
                    format!("generator `{}` references unknown bus {}", g.id, g.bus),
                ));
            }
            if g.p_min > g.p_max {
                return Err(validation(
                    format!("generators[{i}]"),
                    format!("generator `{}` has p_min > p_max", g.id),
                ));
            }
            if g.r_max < 0.0 {
                return Err(validation(
                    format!("generators[{i}].r_max"),
                    format!("generator `{}` has negative r_max", g.id),
                ));
            }
        }
        let mut wind_ids = HashSet::new();
        for (i, w) in self.wind_units.iter().enumerate() {
            if !wind_ids.insert(w.id.clone()) {
                return Err(validation(
                    format!("wind_units[{i}].id"),
                    format!("duplicate wind id `{}`", w.id),
                ));
            }
            if !bus_set.contains(&w.bus) {
                return Err(validation(
                    format!("wind_units[{i}].bus"),
                    format!("wind unit `{}` references unknown bus {}", w.id, w.bus),
                ));
            }
            if w.support_lower > w.support_upper {
                return Err(validation(
                    format!("wind_units[{i}]"),
                    format!("wind unit `{}` has support_lower > support_upper", w.id),
                ));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if !bus_set.contains(&l.bus) {
                return Err(validation(
                    format!("loads[{i}].bus"),
                    format!("load references unknown bus {}", l.bus),
                ));
            }
            if l.p_d < 0.0 {
                return Err(validation(
                    format!("loads[{i}].p_d"),
                    "negative demand".to_string(),
                ));
            }
        }
        if !(self.total_demand() > 0.0) {
            return Err(validation("loads", "total demand must be positive"));
        }
        if let Some(s) = self.slack_bus {
            if !bus_set.contains(&s) {
                return Err(validation("slack_bus", format!("unknown bus {s}")));
            }
        }
        for (i, id) in self.excluded_lines.iter().enumerate() {
            if self.line_index(id).is_none() {
                return Err(validation(
                    format!("excluded_lines[{i}]"),
                    format!("unknown line id `{id}`"),
                ));
            }
        }
        if !is_connected(self, &(0..self.lines.len()).collect::<Vec<_>>()) {
            return Err(validation("lines", "grid graph is not connected"));
        }
        Ok(())
    }
}

/// Load and validate a case file (JSON, see the bundled `rts24.json`).
pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase, NetworkError> {
    let text = std::fs::read_to_string(path)?;
    let case: NetworkCase =
        serde_json::from_str(&text).map_err(|e| NetworkError::ParseError(e.to_string()))?;
    case.validate()?;
    Ok(case)
}

/// Connectivity of the graph restricted to `line_indices`.
fn is_connected(case: &NetworkCase, line_indices: &[usize]) -> bool {
    let n = case.buses.len();
    if n == 0 {
        return false;
    }
    let index: HashMap<usize, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, i))
        .collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &li in line_indices {
        let l = &case.lines[li];
        let (a, b) = (index[&l.from_bus], index[&l.to_bus]);
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

/// Whether removing one line keeps the grid connected.
fn survives_without(case: &NetworkCase, line_idx: usize) -> bool {
    let rest: Vec<usize> = (0..case.lines.len()).filter(|&i| i != line_idx).collect();
    is_connected(case, &rest)
}

/// Enumerate the N-1 contingency list: `Intact` first, then one `GenOut` per
/// generator, then one `LineOut` per line that is neither excluded nor a
/// bridge. Bridge lines are skipped with a logged notice since their outage
/// would split the grid.
pub fn enumerate_contingencies(
    case: &NetworkCase,
    excluded_lines: &HashSet<String>,
) -> Vec<Contingency> {
    let mut out = Vec::with_capacity(1 + case.generators.len() + case.lines.len());
    out.push(Contingency::Intact);
    for g in &case.generators {
        out.push(Contingency::GenOut(g.id.clone()));
    }
    for (i, l) in case.lines.iter().enumerate() {
        if excluded_lines.contains(&l.id) {
            continue;
        }
        if !survives_without(case, i) {
            log::info!("line `{}` is a bridge; excluded from contingency list", l.id);
            continue;
        }
        out.push(Contingency::LineOut(l.id.clone()));
    }
    out
}

/// Reduced nodal susceptance matrix (slack row/column removed) for the given
/// surviving lines, plus the map bus-position -> reduced index.
fn reduced_susceptance(
    case: &NetworkCase,
    line_indices: &[usize],
    slack_pos: usize,
) -> (DMatrix<f64>, Vec<Option<usize>>) {
    let n = case.buses.len();
    let mut red_index: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if i != slack_pos {
            red_index[i] = Some(next);
            next += 1;
        }
    }
    let mut b = DMatrix::<f64>::zeros(n - 1, n - 1);
    for &li in line_indices {
        let l = &case.lines[li];
        let susceptance = 1.0 / l.reactance;
        let f = case.bus_index(l.from_bus).unwrap();
        let t = case.bus_index(l.to_bus).unwrap();
        match (red_index[f], red_index[t]) {
            (Some(fi), Some(ti)) => {
                b[(fi, fi)] += susceptance;
                b[(ti, ti)] += susceptance;
                b[(fi, ti)] -= susceptance;
                b[(ti, fi)] -= susceptance;
            }
            (Some(fi), None) => b[(fi, fi)] += susceptance,
            (None, Some(ti)) => b[(ti, ti)] += susceptance,
            (None, None) => {}
        }
    }
    (b, red_index)
}

/// Surviving line indices for a contingency (line outages drop one line;
/// generator outages keep the intact topology).
pub fn surviving_lines(
    case: &NetworkCase,
    contingency: &Contingency,
) -> Result<Vec<usize>, NetworkError> {
    match contingency {
        Contingency::LineOut(id) => {
            let li = case.line_index(id).ok_or_else(|| NetworkError::UnknownId {
                kind: "line",
                id: id.clone(),
            })?;
            Ok((0..case.lines.len()).filter(|&i| i != li).collect())
        }
        Contingency::GenOut(id) => {
            if case.generator_index(id).is_none() {
                return Err(NetworkError::UnknownId {
                    kind: "generator",
                    id: id.clone(),
                });
            }
            Ok((0..case.lines.len()).collect())
        }
        Contingency::Intact => Ok((0..case.lines.len()).collect()),
    }
}

/// PTDF of one contingency topology. The reduced susceptance matrix is
/// factored once and solved per bus; the slack column is identically zero.
pub fn compute_ptdf(
    case: &NetworkCase,
    contingency: &Contingency,
) -> Result<PtdfMatrix, NetworkError> {
    let lines = surviving_lines(case, contingency)?;
    if !is_connected(case, &lines) {
        return Err(NetworkError::SingularTopology(contingency.clone()));
    }
    let n = case.buses.len();
    let slack_pos = case.bus_index(case.slack()).ok_or_else(|| {
        validation("slack_bus", format!("slack bus {} not in buses", case.slack()))
    })?;
    let (b, red_index) = reduced_susceptance(case, &lines, slack_pos);
    let lu = b.lu();

    // Angles per unit injection at each non-slack bus.
    let mut theta = DMatrix::<f64>::zeros(n - 1, n);
    for bus_pos in 0..n {
        let Some(ri) = red_index[bus_pos] else { continue };
        let mut e = DVector::<f64>::zeros(n - 1);
        e[ri] = 1.0;
        let col = lu
            .solve(&e)
            .ok_or_else(|| NetworkError::SingularTopology(contingency.clone()))?;
        theta.set_column(bus_pos, &col);
    }

    let mut matrix = DMatrix::<f64>::zeros(lines.len(), n);
    for (row, &li) in lines.iter().enumerate() {
        let l = &case.lines[li];
        let susceptance = 1.0 / l.reactance;
        let f = case.bus_index(l.from_bus).unwrap();
        let t = case.bus_index(l.to_bus).unwrap();
        for bus_pos in 0..n {
            let th_f = red_index[f].map_or(0.0, |ri| theta[(ri, bus_pos)]);
            let th_t = red_index[t].map_or(0.0, |ri| theta[(ri, bus_pos)]);
            matrix[(row, bus_pos)] = susceptance * (th_f - th_t);
        }
    }
    Ok(PtdfMatrix {
        contingency: contingency.clone(),
        lines,
        matrix,
    })
}

/// PTDFs aligned 1:1 with a contingency list. The intact factorization is
/// reused for `Intact` and every `GenOut` (same topology, identical matrix).
pub fn compute_all_ptdfs(
    case: &NetworkCase,
    contingencies: &[Contingency],
) -> Result<Vec<PtdfMatrix>, NetworkError> {
    let intact = compute_ptdf(case, &Contingency::Intact)?;
    contingencies
        .iter()
        .map(|c| match c {
            Contingency::Intact => Ok(intact.clone()),
            Contingency::GenOut(id) => {
                if case.generator_index(id).is_none() {
                    return Err(NetworkError::UnknownId {
                        kind: "generator",
                        id: id.clone(),
                    });
                }
                Ok(PtdfMatrix {
                    contingency: c.clone(),
                    ..intact.clone()
                })
            }
            Contingency::LineOut(_) => compute_ptdf(case, c),
        })
        .collect()
}

/// Direct DC power flow: solve `B theta = injections` on the reduced
/// topology and read line flows off the angles. Used as the independent
/// check against PTDF-implied flows.
pub fn dc_power_flow(
    case: &NetworkCase,
    line_indices: &[usize],
    injections: &[f64],
) -> Result<Vec<f64>, NetworkError> {
    let n = case.buses.len();
    assert_eq!(injections.len(), n, "injection vector length");
    if !is_connected(case, line_indices) {
        return Err(NetworkError::SingularTopology(Contingency::Intact));
    }
    let slack_pos = case.bus_index(case.slack()).unwrap();
    let (b, red_index) = reduced_susceptance(case, line_indices, slack_pos);
    let mut rhs = DVector::<f64>::zeros(n - 1);
    for (pos, &inj) in injections.iter().enumerate() {
        if let Some(ri) = red_index[pos] {
            rhs[ri] = inj;
        }
    }
    let theta = b
        .lu()
        .solve(&rhs)
        .ok_or(NetworkError::SingularTopology(Contingency::Intact))?;
    let flows = line_indices
        .iter()
        .map(|&li| {
            let l = &case.lines[li];
            let f = case.bus_index(l.from_bus).unwrap();
            let t = case.bus_index(l.to_bus).unwrap();
            let th_f = red_index[f].map_or(0.0, |ri| theta[ri]);
            let th_t = red_index[t].map_or(0.0, |ri| theta[ri]);
            (th_f - th_t) / l.reactance
        })
        .collect();
    Ok(flows)
}

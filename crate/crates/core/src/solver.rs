//! p-harmonic Dirichlet problems on weighted trees.
//!
//! The energy of a potential is `Σ_e |Δu|^p / r_e^{p-1}`; its minimizer has
//! zero p-flux `Σ_w φ(u_w - u_v) / r^{p-1}`, `φ(d) = sign(d)|d|^{p-1}`, at
//! every free vertex. Subtrees whose boundary data is a single value are
//! collapsed exactly into one equivalent p-resistor (series resistances add,
//! parallel ones combine as `(Σ R_i^{1-p})^{1/(1-p)}`), and only the
//! remaining free vertices are relaxed by nonlinear Gauss–Seidel. Collapsed
//! vertices are then recovered top-down: along a series chain the flux is
//! constant, so `u = b + (u_parent - b)·R/(r + R)` for any p.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::numeric::{log_add_exp, log_sum_exp, pairwise_sum, signed_pow};
use crate::quad;
use crate::tree::{VertexId, VertexSet};
use crate::weights::WeightConfig;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_SWEEPS: usize = 200_000;

/// Boundary values on a network; nodes without a value are free.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletProblem {
    network: Arc<Network>,
    fixed: Vec<Option<f64>>,
}

impl DirichletProblem {
    /// Pins every vertex of each plate to the plate's value. Plates must be
    /// disjoint; a plate given as a vertex list must only name vertices the
    /// network keeps exact.
    pub fn new(network: Arc<Network>, plates: &[(VertexSet, f64)]) -> Result<Self> {
        let k = network.branching();
        for v in plates.iter().filter_map(|(s, _)| s.listed()).flatten() {
            let i = network.node_of(*v)?;
            if network.node(i).members.count() > 1 {
                return Err(Error::InvalidProblem(format!(
                    "listed vertex {v} is lumped with {} others; build the network with it kept exact",
                    network.node(i).members.count() - 1
                )));
            }
        }
        let mut fixed = vec![None; network.len()];
        for (i, node) in network.nodes().iter().enumerate() {
            let rep = node.members.representative();
            for (set, value) in plates {
                if set.contains(k, rep) {
                    if fixed[i].is_some() {
                        return Err(Error::InvalidProblem(format!("plates overlap at {rep}")));
                    }
                    fixed[i] = Some(*value);
                }
            }
        }
        Self::checked(network, fixed)
    }

    /// Pins individual vertices.
    pub fn from_values(network: Arc<Network>, values: &BTreeMap<VertexId, f64>) -> Result<Self> {
        let mut fixed = vec![None; network.len()];
        for (v, value) in values {
            let i = network.node_of(*v)?;
            if network.node(i).members.count() > 1 {
                return Err(Error::InvalidProblem(format!("vertex {v} is lumped into a class; keep it exact")));
            }
            fixed[i] = Some(*value);
        }
        Self::checked(network, fixed)
    }

    /// Builds the network of X^depth for `config` (keeping listed plate
    /// vertices exact) and pins the plates.
    pub fn on_config(config: &WeightConfig, depth: u32, plates: &[(VertexSet, f64)], tail: bool) -> Result<Self> {
        let exact = plates.iter().filter_map(|(s, _)| s.listed()).flatten().copied().collect();
        let network = Network::from_config(config, depth, &exact, tail)?;
        Self::new(Arc::new(network), plates)
    }

    /// Pins nodes directly by position.
    pub fn from_node_values(network: Arc<Network>, fixed: Vec<Option<f64>>) -> Result<Self> {
        if fixed.len() != network.len() {
            return Err(Error::InvalidProblem(format!("{} node values for {} nodes", fixed.len(), network.len())));
        }
        Self::checked(network, fixed)
    }

    fn checked(network: Arc<Network>, fixed: Vec<Option<f64>>) -> Result<Self> {
        if fixed.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("boundary values must be finite".into()));
        }
        let grounded = network.nodes().iter().any(|n| n.tail.is_some());
        if fixed.iter().all(Option::is_none) && !grounded {
            return Err(Error::InvalidProblem("the boundary set is empty".into()));
        }
        Ok(DirichletProblem { network, fixed })
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.network
    }

    pub fn p(&self) -> f64 {
        self.network.p()
    }

    pub fn fixed(&self) -> &[Option<f64>] {
        &self.fixed
    }

    pub fn is_free(&self, node: usize) -> bool {
        self.fixed[node].is_none()
    }

    pub fn free_count(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_none()).count()
    }

    /// Smallest and largest boundary value, counting the ground at infinity.
    pub fn boundary_range(&self) -> (f64, f64) {
        let ground = self.network.nodes().iter().any(|n| n.tail.is_some()).then_some(0.0);
        self.fixed
            .iter()
            .flatten()
            .copied()
            .chain(ground)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Same network with boundary data `a·b + c`.
    pub fn affine(&self, a: f64, c: f64) -> Result<Self> {
        let fixed = self.fixed.iter().map(|f| f.map(|b| a * b + c)).collect();
        Self::checked(self.network.clone(), fixed)
    }
}

/// Vertex values of a potential with its energy and flux imbalance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialField {
    #[serde(skip)]
    network: Arc<Network>,
    #[serde(skip)]
    free: Vec<bool>,
    values: Vec<f64>,
    energy: f64,
    residual: f64,
    sweeps: usize,
}

/// One exported row per node: a vertex, or a class of equivalent vertices
/// sharing one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldRow {
    pub level: u32,
    pub index: u64,
    pub multiplicity: u64,
    pub value: f64,
}

impl PotentialField {
    /// A field with arbitrary node values on the problem's network.
    pub fn from_values(problem: &DirichletProblem, values: Vec<f64>) -> Result<Self> {
        if values.len() != problem.network.len() {
            return Err(Error::InvalidProblem(format!("{} values for {} nodes", values.len(), problem.network.len())));
        }
        Ok(Self::assemble(problem, values, 0))
    }

    /// The field equal to the boundary data where pinned and `free_value`
    /// elsewhere.
    pub fn constant_free(problem: &DirichletProblem, free_value: f64) -> Self {
        let values = problem.fixed.iter().map(|f| f.unwrap_or(free_value)).collect();
        Self::assemble(problem, values, 0)
    }

    fn assemble(problem: &DirichletProblem, values: Vec<f64>, sweeps: usize) -> Self {
        let net = &problem.network;
        let energy = energy_of(net, &values);
        let residual = (0..net.len())
            .filter(|&i| problem.is_free(i))
            .map(|i| flux_at(net, &values, i).abs())
            .fold(0.0, f64::max);
        PotentialField {
            network: net.clone(),
            free: problem.fixed.iter().map(Option::is_none).collect(),
            values,
            energy,
            residual,
            sweeps,
        }
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.network
    }

    /// Values per network node.
    pub fn node_values(&self) -> &[f64] {
        &self.values
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Largest absolute p-flux imbalance over free vertices.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn value(&self, v: VertexId) -> Result<f64> {
        Ok(self.values[self.network.node_of(v)?])
    }

    /// Value at fraction `s ∈ [0,1]` of the cumulative resistance along the
    /// edge from the parent of `v` to `v`.
    pub fn edge_value(&self, v: VertexId, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidParameter { field: "s".into(), reason: format!("must lie in [0, 1], got {s}") });
        }
        let i = self.network.node_of(v)?;
        let parent = self.network.node(i).parent.ok_or_else(|| Error::InvalidParameter {
            field: "edge".into(),
            reason: "the root has no incoming edge".into(),
        })?;
        Ok(self.values[parent] + s * (self.values[i] - self.values[parent]))
    }

    pub fn rows(&self) -> Vec<FieldRow> {
        self.network
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(n, &value)| {
                let rep = n.members.representative();
                FieldRow { level: rep.level, index: rep.index, multiplicity: n.members.count(), value }
            })
            .collect()
    }

    /// Every vertex with its value; `None` when more than `limit` vertices
    /// would be listed.
    pub fn vertex_values(&self, limit: u64) -> Option<Vec<(VertexId, f64)>> {
        if self.network.vertex_count() > limit {
            return None;
        }
        let mut out: Vec<(VertexId, f64)> = (0..self.network.len())
            .flat_map(|i| self.network.members_of(i).into_iter().map(move |v| (v, i)))
            .map(|(v, i)| (v, self.values[i]))
            .collect();
        out.sort_by_key(|(v, _)| *v);
        Some(out)
    }

    /// Copy with the value of one node replaced, energy and residual redone.
    pub fn with_node_value(&self, node: usize, value: f64) -> Self {
        let mut values = self.values.clone();
        values[node] = value;
        let mut out = PotentialField { values, ..self.clone() };
        out.energy = energy_of(&out.network, &out.values);
        out.residual = (0..out.network.len())
            .filter(|&i| out.free[i])
            .map(|i| flux_at(&out.network, &out.values, i).abs())
            .fold(0.0, f64::max);
        out
    }

    /// Minimum and maximum over all vertices.
    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn conductance(log_r: f64, p: f64) -> f64 {
    ((1.0 - p) * log_r).exp()
}

/// Total energy, each node's incoming edge weighted by the number of
/// vertices it stands for.
fn energy_of(net: &Network, values: &[f64]) -> f64 {
    let p = net.p();
    let terms: Vec<f64> = net
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let count = node.members.count() as f64;
            let mut e = 0.0;
            if let (Some(parent), Some(edge)) = (node.parent, node.edge) {
                e += (values[i] - values[parent]).abs().powf(p) * conductance(edge.log_resistance, p);
            }
            if let Some(t) = node.tail {
                e += values[i].abs().powf(p) * conductance(t, p);
            }
            count * e
        })
        .collect();
    pairwise_sum(&terms)
}

/// p-flux into one vertex of node `i`.
fn flux_at(net: &Network, values: &[f64], i: usize) -> f64 {
    let p = net.p();
    let node = net.node(i);
    let u = values[i];
    let mut terms = Vec::with_capacity(node.children.len() + 2);
    if let (Some(parent), Some(edge)) = (node.parent, node.edge) {
        terms.push(conductance(edge.log_resistance, p) * signed_pow(values[parent] - u, p - 1.0));
    }
    for &c in &node.children {
        let child = net.node(c);
        let edge = child.edge.expect("non-root");
        terms.push(child.copies as f64 * conductance(edge.log_resistance, p) * signed_pow(values[c] - u, p - 1.0));
    }
    if let Some(t) = node.tail {
        terms.push(conductance(t, p) * signed_pow(-u, p - 1.0));
    }
    pairwise_sum(&terms)
}

/// Per free vertex p-flux imbalance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxResidual {
    entries: Vec<(VertexId, u64, f64)>,
    #[serde(skip)]
    nodes: Vec<usize>,
}

impl FluxResidual {
    /// `(representative vertex, multiplicity, imbalance)` per free node.
    pub fn entries(&self) -> &[(VertexId, u64, f64)] {
        &self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.2.abs()).fold(0.0, f64::max)
    }

    /// Imbalance at the node holding `v`, if that node is free.
    pub fn at_node(&self, node: usize) -> Option<f64> {
        self.nodes.iter().position(|&n| n == node).map(|i| self.entries[i].2)
    }
}

pub fn flux_residual(field: &PotentialField, problem: &DirichletProblem) -> Result<FluxResidual> {
    if field.values.len() != problem.network.len() {
        return Err(Error::InvalidProblem("field and problem live on different networks".into()));
    }
    let net = &problem.network;
    let nodes: Vec<usize> = (0..net.len()).filter(|&i| problem.is_free(i)).collect();
    let entries = nodes
        .iter()
        .map(|&i| {
            let n = net.node(i);
            (n.members.representative(), n.members.count(), flux_at(net, &field.values, i))
        })
        .collect();
    Ok(FluxResidual { entries, nodes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Level-major, index-minor in-place updates.
    GaussSeidel,
    /// All updates computed from the previous sweep, in parallel.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub mode: SweepMode,
    /// Eliminate free subtrees that see a single boundary value in closed
    /// form instead of relaxing them.
    pub reduce: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: DEFAULT_TOL, max_sweeps: DEFAULT_MAX_SWEEPS, mode: SweepMode::GaussSeidel, reduce: true }
    }
}

/// Minimizes the energy with the boundary values pinned.
pub fn solve_dirichlet(problem: &DirichletProblem, tol: f64, max_sweeps: usize) -> Result<PotentialField> {
    solve_with(problem, SolveOptions { tol, max_sweeps, ..SolveOptions::default() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ports {
    Empty,
    One(f64),
    Mixed,
}

impl Ports {
    fn merge(self, other: Ports) -> Ports {
        match (self, other) {
            (Ports::Empty, x) | (x, Ports::Empty) => x,
            (Ports::One(a), Ports::One(b)) if a == b => Ports::One(a),
            _ => Ports::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Var(usize),
    Fixed(f64),
}

/// Flux balance of one relaxed vertex: normalized weights and endpoints.
#[derive(Debug, Clone)]
struct Balance {
    node: usize,
    weights: Vec<f64>,
    targets: Vec<Target>,
    /// `ln` of the factor the weights were divided by.
    log_scale: f64,
}

pub fn solve_with(problem: &DirichletProblem, opts: SolveOptions) -> Result<PotentialField> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter { field: "tol".into(), reason: format!("must be positive, got {}", opts.tol) });
    }
    let net = &problem.network;
    let p = net.p();
    let n = net.len();
    let log_r = |i: usize| net.node(i).edge.expect("non-root").log_resistance;

    // Boundary values visible from above each node.
    let mut ports = vec![Ports::Empty; n];
    for i in (0..n).rev() {
        ports[i] = match problem.fixed[i] {
            Some(b) => Ports::One(b),
            None => {
                let node = net.node(i);
                let start = if node.tail.is_some() { Ports::One(0.0) } else { Ports::Empty };
                node.children.iter().fold(start, |acc, &c| acc.merge(ports[c]))
            }
        };
    }
    let core: Vec<bool> = (0..n)
        .map(|i| problem.is_free(i) && (ports[i] == Ports::Mixed || (!opts.reduce && ports[i] != Ports::Empty)))
        .collect();
    let reducible = |i: usize| problem.is_free(i) && !core[i];

    // ln of the equivalent resistance from a reducible node down to its ports.
    let mut equiv = vec![f64::INFINITY; n];
    for i in (0..n).rev() {
        if !reducible(i) {
            continue;
        }
        let node = net.node(i);
        let mut logs: Vec<f64> = Vec::new();
        if let Some(t) = node.tail {
            logs.push((1.0 - p) * t);
        }
        for &c in &node.children {
            let through = match problem.fixed[c] {
                Some(_) => log_r(c),
                None => log_add_exp(log_r(c), equiv[c]),
            };
            if through.is_finite() {
                logs.push((net.node(c).copies as f64).ln() + (1.0 - p) * through);
            }
        }
        let g = log_sum_exp(&logs);
        equiv[i] = if g == f64::NEG_INFINITY { f64::INFINITY } else { g / (1.0 - p) };
    }

    let balances: Vec<Balance> = (0..n)
        .filter(|&i| core[i])
        .map(|i| {
            let node = net.node(i);
            let mut logs = Vec::new();
            let mut targets = Vec::new();
            if let Some(parent) = node.parent {
                logs.push((1.0 - p) * log_r(i));
                targets.push(match problem.fixed[parent] {
                    Some(b) => Target::Fixed(b),
                    None => Target::Var(parent),
                });
            }
            for &c in &node.children {
                let lc = (net.node(c).copies as f64).ln();
                match (problem.fixed[c], ports[c]) {
                    (Some(b), _) => {
                        logs.push(lc + (1.0 - p) * log_r(c));
                        targets.push(Target::Fixed(b));
                    }
                    _ if core[c] => {
                        logs.push(lc + (1.0 - p) * log_r(c));
                        targets.push(Target::Var(c));
                    }
                    (None, Ports::One(b)) => {
                        logs.push(lc + (1.0 - p) * log_add_exp(log_r(c), equiv[c]));
                        targets.push(Target::Fixed(b));
                    }
                    (None, _) => {}
                }
            }
            if let Some(t) = node.tail {
                logs.push((1.0 - p) * t);
                targets.push(Target::Fixed(0.0));
            }
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Balance { node: i, weights: logs.iter().map(|l| (l - top).exp()).collect(), targets, log_scale: top }
        })
        .collect();

    let (lo, hi) = problem.boundary_range();
    let span = hi - lo;
    let mut values: Vec<f64> = problem.fixed.iter().map(|f| f.unwrap_or(0.5 * (lo + hi))).collect();

    let endpoints = |b: &Balance, values: &[f64]| -> Vec<f64> {
        b.targets
            .iter()
            .map(|t| match t {
                Target::Var(j) => values[*j],
                Target::Fixed(v) => *v,
            })
            .collect()
    };
    let converged = |values: &[f64]| -> bool {
        balances.iter().all(|b| {
            let a = endpoints(b, values);
            let g = normalized_flux(&b.weights, &a, values[b.node], p);
            let total: f64 = b.weights.iter().sum();
            g.abs() <= opts.tol * (-b.log_scale).exp().min(total * span.powf(p - 1.0))
        })
    };

    let mut sweeps = 0;
    if !balances.is_empty() && span > 0.0 {
        while !converged(&values) {
            if sweeps >= opts.max_sweeps {
                let best = finish(problem, values, &ports, &core, &equiv, sweeps);
                let residual = best.residual;
                return Err(Error::NotConverged { sweeps, residual, tol: opts.tol, best: Box::new(best) });
            }
            match opts.mode {
                SweepMode::GaussSeidel => {
                    for b in &balances {
                        let a = endpoints(b, &values);
                        values[b.node] = solve_scalar(&b.weights, &a, p, values[b.node]);
                    }
                }
                SweepMode::Jacobi => {
                    let snapshot = values.clone();
                    let updates: Vec<(usize, f64)> = balances
                        .par_iter()
                        .map(|b| {
                            let a = endpoints(b, &snapshot);
                            (b.node, solve_scalar(&b.weights, &a, p, snapshot[b.node]))
                        })
                        .collect();
                    for (i, v) in updates {
                        values[i] = v;
                    }
                }
            }
            sweeps += 1;
        }
    }
    Ok(finish(problem, values, &ports, &core, &equiv, sweeps))
}

/// Fills in the collapsed nodes top-down and assembles the field.
fn finish(problem: &DirichletProblem, mut values: Vec<f64>, ports: &[Ports], core: &[bool], equiv: &[f64], sweeps: usize) -> PotentialField {
    let net = &problem.network;
    for i in 0..net.len() {
        if !problem.is_free(i) || core[i] {
            continue;
        }
        let node = net.node(i);
        values[i] = match (node.parent, ports[i]) {
            (None, Ports::One(b)) => b,
            (None, _) => values[i],
            (Some(parent), Ports::One(b)) if equiv[i].is_finite() => {
                let ratio = 1.0 / (1.0 + (node.edge.expect("non-root").log_resistance - equiv[i]).exp());
                b + (values[parent] - b) * ratio
            }
            (Some(parent), _) => values[parent],
        };
    }
    PotentialField::assemble(problem, values, sweeps)
}

/// `Σ w_i φ(a_i - x)`.
fn normalized_flux(w: &[f64], a: &[f64], x: f64, p: f64) -> f64 {
    w.iter().zip(a).map(|(w, a)| w * signed_pow(a - x, p - 1.0)).sum()
}

/// Root of the strictly decreasing map `x ↦ Σ w_i φ(a_i - x)` inside
/// `[min a, max a]`: Newton steps kept inside a shrinking bisection bracket,
/// finished by one polishing step.
fn solve_scalar(w: &[f64], a: &[f64], p: f64, start: f64) -> f64 {
    let (mut lo, mut hi) = a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return lo;
    }
    let slope = |x: f64| -> f64 {
        -(p - 1.0) * w.iter().zip(a).map(|(w, a)| w * (a - x).abs().powf(p - 2.0)).sum::<f64>()
    };
    let mut x = start.clamp(lo, hi);
    for _ in 0..200 {
        let g = normalized_flux(w, a, x, p);
        if g == 0.0 {
            return x;
        }
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-14 * (1.0 + x.abs()) {
            break;
        }
        let d = slope(x);
        let newton = x - g / d;
        x = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let g = normalized_flux(w, a, x, p);
    let d = slope(x);
    let polished = x - g / d;
    if polished.is_finite() && polished >= lo && polished <= hi {
        polished
    } else {
        x
    }
}

/// Energy over edges touching `support` (tails included).
fn local_energy(net: &Network, values: &[f64], support: &[bool]) -> f64 {
    let p = net.p();
    let terms: Vec<f64> = net
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let count = node.members.count() as f64;
            let mut e = 0.0;
            if let (Some(parent), Some(edge)) = (node.parent, node.edge) {
                if support[i] || support[parent] {
                    e += (values[i] - values[parent]).abs().powf(p) * conductance(edge.log_resistance, p);
                }
            }
            if let (Some(t), true) = (node.tail, support[i]) {
                e += values[i].abs().powf(p) * conductance(t, p);
            }
            count * e
        })
        .collect();
    pairwise_sum(&terms)
}

/// Tests `field` against one nonnegative perturbation: true iff the energy
/// near the perturbation's support does not drop when moving to `trial`.
pub fn superharmonic_check(field: &PotentialField, problem: &DirichletProblem, trial: &PotentialField) -> Result<bool> {
    let n = problem.network.len();
    if field.values.len() != n || trial.values.len() != n {
        return Err(Error::InvalidProblem("fields and problem live on different networks".into()));
    }
    let mut support = vec![false; n];
    for i in 0..n {
        let d = trial.values[i] - field.values[i];
        if d < -1e-14 * (1.0 + field.values[i].abs()) {
            return Err(Error::Precondition(format!(
                "trial is below the field at {} by {:e}",
                problem.network.node(i).members.representative(),
                -d
            )));
        }
        if d > 0.0 {
            if !problem.is_free(i) {
                return Err(Error::Precondition(format!(
                    "perturbation touches the boundary vertex {}",
                    problem.network.node(i).members.representative()
                )));
            }
            support[i] = true;
        }
    }
    let before = local_energy(&problem.network, &field.values, &support);
    let after = local_energy(&problem.network, &trial.values, &support);
    Ok(before <= after * (1.0 + 1e-12))
}

/// Both sides of `∫ f^{-p} g_f^p φ^p dμ ≤ (p/(p-1))^p ∫ g_φ^p dμ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaccioppoliReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates the Caccioppoli-type inequality for a positive p-superharmonic
/// `f` and a cutoff `phi`. On every edge both functions are taken affine in
/// the cumulative-resistance parameter `s`, where `g^p dμ` has constant
/// density `|Δ|^p / r^{p-1}` per unit `s`; the left side integrates
/// `(φ(s)/f(s))^p` over `s` by quadrature.
pub fn caccioppoli_check(f: &PotentialField, phi: &PotentialField, problem: &DirichletProblem) -> Result<CaccioppoliReport> {
    let net = &problem.network;
    let n = net.len();
    if f.values.len() != n || phi.values.len() != n {
        return Err(Error::InvalidProblem("fields and problem live on different networks".into()));
    }
    let p = net.p();
    let name = |i: usize| net.node(i).members.representative();
    for i in 0..n {
        let v = phi.values[i];
        if !(-1e-15..=1.0 + 1e-12).contains(&v) {
            return Err(Error::Precondition(format!("phi = {v} at {} is outside [0, 1]", name(i))));
        }
        if v != 0.0 && (!problem.is_free(i) || net.node(i).tail.is_some()) {
            return Err(Error::Precondition(format!(
                "phi = {v} at {} must vanish on the boundary and at the truncation's open end",
                name(i)
            )));
        }
    }
    let on_support = |i: usize| phi.values[i] != 0.0 || net.node(i).parent.is_some_and(|q| phi.values[q] != 0.0);
    for i in 0..n {
        if phi.values[i] == 0.0 {
            continue;
        }
        let ends = std::iter::once(i).chain(net.node(i).parent).chain(net.node(i).children.iter().copied());
        for j in ends {
            if !(f.values[j] > 0.0) {
                return Err(Error::Precondition(format!("f = {} at {} is not positive on the support of phi", f.values[j], name(j))));
            }
        }
        let flux = flux_at(net, &f.values, i);
        let scale = abs_flux(net, &f.values, i);
        if flux > 1e-8 * scale + 1e-300 {
            return Err(Error::Precondition(format!("f is not p-superharmonic at {} (flux {flux:e})", name(i))));
        }
    }

    let mut lhs_terms = Vec::new();
    let mut rhs_terms = Vec::new();
    for i in 0..n {
        let node = net.node(i);
        let (Some(parent), Some(edge)) = (node.parent, node.edge) else { continue };
        if !on_support(i) {
            continue;
        }
        let count = node.members.count() as f64;
        let c = conductance(edge.log_resistance, p);
        let (f0, f1) = (f.values[parent], f.values[i]);
        let (g0, g1) = (phi.values[parent], phi.values[i]);
        let df = (f1 - f0).abs();
        if df > 0.0 {
            let ratio = |s: f64| ((g0 + s * (g1 - g0)) / (f0 + s * (f1 - f0))).powf(p);
            let integral = quad::integrate(ratio, 0.0, 1.0, 1e-12, &[])?;
            lhs_terms.push(count * c * df.powf(p) * integral.value);
        }
        rhs_terms.push(count * c * (g1 - g0).abs().powf(p));
    }
    let lhs = pairwise_sum(&lhs_terms);
    let rhs = (p / (p - 1.0)).powf(p) * pairwise_sum(&rhs_terms);
    Ok(CaccioppoliReport { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-9) })
}

fn abs_flux(net: &Network, values: &[f64], i: usize) -> f64 {
    let p = net.p();
    let node = net.node(i);
    let u = values[i];
    let mut s = 0.0;
    if let (Some(parent), Some(edge)) = (node.parent, node.edge) {
        s += conductance(edge.log_resistance, p) * (values[parent] - u).abs().powf(p - 1.0);
    }
    for &c in &node.children {
        let child = net.node(c);
        s += child.copies as f64 * conductance(child.edge.expect("non-root").log_resistance, p) * (values[c] - u).abs().powf(p - 1.0);
    }
    if let Some(t) = node.tail {
        s += conductance(t, p) * u.abs().powf(p - 1.0);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Side, TreeTopology};
    use crate::weights::{rp_truncated, EdgeCoefficients, RadialProfile};
    use std::collections::BTreeSet;

    fn unit(k: u64, p: f64) -> WeightConfig {
        WeightConfig::new(k, p, RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)).unwrap()
    }

    fn explicit(k: u64, depth: u32, p: f64) -> Arc<Network> {
        let topo = TreeTopology::build(k, depth).unwrap();
        let coeffs = vec![EdgeCoefficients::unit(); topo.edge_count() as usize];
        Arc::new(Network::from_coefficients(topo, p, &coeffs).unwrap())
    }

    fn root_to_leaves(net: Arc<Network>) -> DirichletProblem {
        let d = net.depth();
        DirichletProblem::new(net, &[(VertexSet::ball(0), 1.0), (VertexSet::beyond(d), 0.0)]).unwrap()
    }

    #[test]
    fn path_midpoint() {
        let net = explicit(1, 2, 2.0);
        let values: BTreeMap<VertexId, f64> = [(VertexId::ROOT, 0.0), (VertexId::new(2, 0), 1.0)].into_iter().collect();
        let problem = DirichletProblem::from_values(net, &values).unwrap();
        let field = solve_dirichlet(&problem, 1e-12, 1000).unwrap();
        assert!((field.value(VertexId::new(1, 0)).unwrap() - 0.5).abs() < 1e-12);
        assert!((field.energy() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn binary_depth_two() {
        let field = solve_dirichlet(&root_to_leaves(explicit(2, 2, 2.0)), 1e-12, 1000).unwrap();
        for i in 0..2 {
            assert!((field.value(VertexId::new(1, i)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
        // total resistance 3/4
        assert!((field.energy() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn radial_closed_form_for_general_p() {
        for p in [1.5, 2.0, 3.0] {
            let cfg = WeightConfig::new(2, p, RadialProfile::ExpLevel { rate: 0.1, scale: 1.0 }, RadialProfile::ExpLevel { rate: 0.4, scale: 1.0 }).unwrap();
            let m = 8;
            let problem = DirichletProblem::on_config(&cfg, m, &[(VertexSet::ball(0), 1.0), (VertexSet::beyond(m), 0.0)], false).unwrap();
            let field = solve_dirichlet(&problem, 1e-12, 1000).unwrap();
            let total = rp_truncated(&cfg, 0.0, m as f64).unwrap();
            for level in 1..m {
                let expected = 1.0 - rp_truncated(&cfg, 0.0, level as f64).unwrap() / total;
                let got = field.value(VertexId::new(level, (1u64 << level) - 1)).unwrap();
                assert!((got - expected).abs() < 1e-12, "p={p} level={level}");
            }
            assert!((field.energy() - total.powf(1.0 - p)).abs() < 1e-10 * field.energy());
        }
    }

    #[test]
    fn constant_fields_have_zero_flux() {
        let net = explicit(3, 3, 2.5);
        let problem = DirichletProblem::new(net, &[(VertexSet::beyond(3), 0.7)]).unwrap();
        let field = PotentialField::constant_free(&problem, 0.7);
        let r = flux_residual(&field, &problem).unwrap();
        assert!(r.entries().iter().all(|e| e.2 == 0.0));
        assert_eq!(field.energy(), 0.0);
    }

    #[test]
    fn perturbation_pushes_back() {
        let problem = root_to_leaves(explicit(2, 3, 2.0));
        let field = solve_dirichlet(&problem, 1e-13, 1000).unwrap();
        let node = problem.network().node_of(VertexId::new(2, 1)).unwrap();
        let bumped = field.with_node_value(node, field.node_values()[node] + 0.1);
        let r = flux_residual(&bumped, &problem).unwrap();
        assert!(r.at_node(node).unwrap() < 0.0);
    }

    fn mixed_problem(p: f64) -> DirichletProblem {
        // the two root branches carry different leaf values, so the root is relaxed
        let net = explicit(2, 4, p);
        let plates = [(VertexSet::levels(4, 4, Side::T1), 1.0), (VertexSet::levels(4, 4, Side::OutsideT1), 0.0)];
        DirichletProblem::new(net, &plates).unwrap()
    }

    #[test]
    fn relaxed_and_reduced_parts_agree_with_symmetry() {
        for p in [1.3, 2.0, 4.0] {
            let problem = mixed_problem(p);
            let field = solve_dirichlet(&problem, 1e-12, 10_000).unwrap();
            assert!((field.value(VertexId::ROOT).unwrap() - 0.5).abs() < 1e-10);
            let a = field.value(VertexId::new(2, 1)).unwrap();
            let b = field.value(VertexId::new(2, 2)).unwrap();
            assert!((a + b - 1.0).abs() < 1e-10, "p={p}");
            assert!(field.residual() < 1e-10);
        }
    }

    #[test]
    fn jacobi_matches_gauss_seidel() {
        let net = explicit(3, 3, 2.5);
        let mut values = BTreeMap::new();
        values.insert(VertexId::ROOT, 0.2);
        for i in 0..27u64 {
            values.insert(VertexId::new(3, i), (i as f64 * 0.37).sin().abs());
        }
        let problem = DirichletProblem::from_values(net, &values).unwrap();
        let gs = solve_dirichlet(&problem, 1e-12, 100_000).unwrap();
        let jac = solve_with(&problem, SolveOptions { tol: 1e-12, max_sweeps: 100_000, mode: SweepMode::Jacobi, reduce: true }).unwrap();
        let relaxed = solve_with(&problem, SolveOptions { reduce: false, ..SolveOptions::default() }).unwrap();
        for ((a, b), c) in gs.node_values().iter().zip(jac.node_values()).zip(relaxed.node_values()) {
            assert!((a - b).abs() < 1e-9);
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_budget_exhaustion_reports_the_best_field() {
        let net = explicit(3, 3, 2.5);
        let mut values = BTreeMap::new();
        values.insert(VertexId::ROOT, 0.0);
        for i in 0..27u64 {
            values.insert(VertexId::new(3, i), (i % 2) as f64);
        }
        let problem = DirichletProblem::from_values(net, &values).unwrap();
        match solve_dirichlet(&problem, 1e-14, 1) {
            Err(Error::NotConverged { sweeps, best, .. }) => {
                assert_eq!(sweeps, 1);
                assert_eq!(best.node_values().len(), problem.network().len());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn superharmonic_checks() {
        let problem = mixed_problem(2.0);
        let field = solve_dirichlet(&problem, 1e-13, 10_000).unwrap();
        let node = problem.network().node_of(VertexId::new(2, 0)).unwrap();
        let trial = field.with_node_value(node, field.node_values()[node] + 0.05);
        assert!(superharmonic_check(&field, &problem, &trial).unwrap());
        let lowered = field.with_node_value(node, field.node_values()[node] - 0.05);
        assert!(!superharmonic_check(&lowered, &problem, &field).unwrap());
        assert!(superharmonic_check(&trial, &problem, &field).is_err());

        let constant = PotentialField::constant_free(&DirichletProblem::new(explicit(2, 3, 2.0), &[(VertexSet::beyond(3), 0.4)]).unwrap(), 0.4);
        let cproblem = DirichletProblem::new(constant.network().clone(), &[(VertexSet::beyond(3), 0.4)]).unwrap();
        let bump = constant.with_node_value(3, 0.9);
        assert!(superharmonic_check(&constant, &cproblem, &bump).unwrap());
    }

    #[test]
    fn caccioppoli_on_a_radial_potential() {
        let net = explicit(2, 6, 2.0);
        let problem = root_to_leaves(net.clone());
        let u = solve_dirichlet(&problem, 1e-13, 1000).unwrap();
        let f = PotentialField::from_values(&problem, u.node_values().iter().map(|v| 1.0 + v).collect()).unwrap();
        // plateau on X^2, linear taper to 0 at level 6; root pinned so phi must vanish there
        let phi_values: Vec<f64> = net
            .nodes()
            .iter()
            .map(|n| match n.level() {
                0 => 0.0,
                l if l <= 2 => 1.0,
                l => (6 - l) as f64 / 4.0,
            })
            .collect();
        let phi = PotentialField::from_values(&problem, phi_values).unwrap();
        let report = caccioppoli_check(&f, &phi, &problem).unwrap();
        assert!(report.holds, "{report:?}");
        assert!(report.lhs > 0.0);

        let flat = PotentialField::constant_free(&problem, 0.0);
        let flat = PotentialField::from_values(&problem, flat.node_values().iter().map(|_| 2.0).collect()).unwrap();
        let report = caccioppoli_check(&flat, &phi, &problem).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert!(report.holds);

        let everywhere = PotentialField::from_values(&problem, vec![1.0; net.len()]).unwrap();
        assert!(matches!(caccioppoli_check(&f, &everywhere, &problem), Err(Error::Precondition(_))));
    }

    #[test]
    fn deep_lumped_problems_are_exact() {
        let cfg = unit(2, 2.0);
        let m = 60;
        let problem = DirichletProblem::on_config(&cfg, m, &[(VertexSet::ball(0), 1.0), (VertexSet::beyond(m), 0.0)], false).unwrap();
        assert!(problem.network().len() < 200);
        let field = solve_dirichlet(&problem, 1e-12, 100).unwrap();
        let expected = 1.0 / (1.0 - 2f64.powi(-(m as i32)));
        assert!((field.energy() - expected).abs() < 1e-12);
        assert_eq!(field.sweeps(), 0);
    }

    #[test]
    fn listed_plates_require_exact_vertices() {
        let cfg = unit(3, 2.0);
        let problem = DirichletProblem::on_config(&cfg, 3, &[(VertexSet::list([VertexId::new(3, 13)]), 1.0), (VertexSet::ball(0), 0.0)], false).unwrap();
        let field = solve_dirichlet(&problem, 1e-12, 10_000).unwrap();
        assert_eq!(field.value(VertexId::new(3, 13)).unwrap(), 1.0);
        let net = Arc::new(Network::from_config(&cfg, 3, &BTreeSet::new(), false).unwrap());
        assert!(DirichletProblem::new(net, &[(VertexSet::list([VertexId::new(3, 13)]), 1.0)]).is_err());
    }

    #[test]
    fn empty_boundary_rejected() {
        let net = explicit(2, 2, 2.0);
        assert!(DirichletProblem::new(net, &[]).is_err());
    }

    #[test]
    fn scalar_solver_hits_known_roots() {
        // w = (1, 1), a = (0, 1): root 1/2 for every p
        for p in [1.1, 1.5, 2.0, 3.0, 6.0] {
            assert!((solve_scalar(&[1.0, 1.0], &[0.0, 1.0], p, 0.0) - 0.5).abs() < 1e-14);
        }
        // p = 2 weighted mean
        let x = solve_scalar(&[1.0, 3.0], &[0.0, 1.0], 2.0, 0.9);
        assert!((x - 0.75).abs() < 1e-15);
    }
}

//! Invariant battery run by `treecap verify` on truncations of a config.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use treecap_core::capacity::exhaustion_samples;
use treecap_core::network::Network;
use treecap_core::solver::{caccioppoli_check, solve_dirichlet, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use treecap_core::weights::edge_coefficients;
use treecap_core::{DirichletProblem, Error, PotentialField, Result, TreeTopology, VertexId, VertexSet, WeightConfig};

const SLACK: f64 = 1e-10;
const ORACLE_TOL: f64 = 1e-9;
const MAX_VERTICES: u64 = 400;
const MAX_DEPTH: u32 = 5;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn explicit(config: &WeightConfig, depth: u32) -> Result<Arc<Network>> {
    let topo = TreeTopology::build(config.branching(), depth)?;
    let coeffs = topo.vertices().skip(1).map(|v| edge_coefficients(config, v, config.quad_tol())).collect::<Result<Vec<_>>>()?;
    Ok(Arc::new(Network::from_coefficients(topo, config.p(), &coeffs)?))
}

/// Deepest small truncation on which every edge weight is known.
fn truncation(config: &WeightConfig) -> Result<(u32, Arc<Network>)> {
    let mut best = None;
    for depth in 1..=MAX_DEPTH {
        if TreeTopology::build(config.branching(), depth)?.vertex_count() > MAX_VERTICES {
            break;
        }
        match explicit(config, depth) {
            Ok(net) => best = Some((depth, net)),
            Err(_) => break,
        }
    }
    best.ok_or_else(|| Error::InvalidParameter { field: "config".into(), reason: "no edge weights are known on level 1".into() })
}

fn root_and_leaves(k: u64, depth: u32, rng: &mut StdRng, lo: f64, hi: f64) -> BTreeMap<VertexId, f64> {
    let mut out = BTreeMap::new();
    out.insert(VertexId::ROOT, rng.random_range(lo..hi));
    for i in 0..k.pow(depth) {
        out.insert(VertexId::new(depth, i), rng.random_range(lo..hi));
    }
    out
}

/// Dense linear solve of the p = 2 problem on an explicit network.
fn linear_solve(problem: &DirichletProblem) -> Vec<f64> {
    let net = problem.network();
    let free: Vec<usize> = (0..net.len()).filter(|&i| problem.is_free(i)).collect();
    let mut slot = vec![usize::MAX; net.len()];
    for (s, &i) in free.iter().enumerate() {
        slot[i] = s;
    }
    let n = free.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (i, node) in net.nodes().iter().enumerate() {
        let (Some(parent), Some(edge)) = (node.parent, node.edge) else { continue };
        let c = (-edge.log_resistance).exp();
        for (x, y) in [(i, parent), (parent, i)] {
            if slot[x] == usize::MAX {
                continue;
            }
            a[(slot[x], slot[x])] += c;
            match problem.fixed()[y] {
                Some(v) => b[slot[x]] += c * v,
                None => a[(slot[x], slot[y])] -= c,
            }
        }
    }
    let mut values: Vec<f64> = problem.fixed().iter().map(|f| f.unwrap_or(0.0)).collect();
    if n > 0 {
        let u = a.lu().solve(&b).unwrap_or_else(|| DVector::from_element(n, f64::NAN));
        for (s, &i) in free.iter().enumerate() {
            values[i] = u[s];
        }
    }
    values
}

struct Tally {
    name: &'static str,
    cases: usize,
    failure: Option<String>,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, cases: 0, failure: None, worst: 0.0 }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(format!("case {}: {}", self.cases, detail()));
        }
    }

    fn finish(self, what: &str) -> Check {
        match self.failure {
            Some(f) => Check { name: self.name, passed: false, detail: f },
            None => Check { name: self.name, passed: true, detail: format!("{} cases, {what} {:.1e}", self.cases, self.worst) },
        }
    }
}

fn solve(problem: &DirichletProblem) -> Result<PotentialField> {
    solve_dirichlet(problem, DEFAULT_TOL, DEFAULT_MAX_SWEEPS)
}

pub fn battery(config: &WeightConfig, seed: u64, cases: usize) -> Result<Vec<Check>> {
    let (depth, net) = truncation(config)?;
    let linear_net = explicit(&config.with_p(2.0)?, depth)?;
    let k = config.branching();
    let mut rng = StdRng::seed_from_u64(seed);

    let mut oracle = Tally::new("oracle equivalence");
    let mut maximum = Tally::new("maximum principle");
    let mut comparison = Tally::new("comparison principle");
    let mut caccioppoli = Tally::new("Caccioppoli inequality");
    for _ in 0..cases {
        let bc = root_and_leaves(k, linear_net.depth(), &mut rng, 0.0, 1.0);
        let problem = DirichletProblem::from_values(linear_net.clone(), &bc)?;
        let field = solve(&problem)?;
        let dense = linear_solve(&problem);
        let err = field.node_values().iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        oracle.worst = oracle.worst.max(err);
        oracle.record(err < ORACLE_TOL, || format!("max vertex error {err:e}"));

        let bc = root_and_leaves(k, depth, &mut rng, -1.0, 2.0);
        let (lo, hi) = bc.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let u1 = solve(&DirichletProblem::from_values(net.clone(), &bc)?)?;
        let (flo, fhi) = u1.range();
        maximum.record(flo >= lo - SLACK && fhi <= hi + SLACK, || format!("values [{flo}, {fhi}] leave [{lo}, {hi}]"));

        let raised: BTreeMap<VertexId, f64> = bc.iter().map(|(v, x)| (*v, x + rng.random_range(0.0..0.5))).collect();
        let u2 = solve(&DirichletProblem::from_values(net.clone(), &raised)?)?;
        let gap = u1.node_values().iter().zip(u2.node_values()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        comparison.record(gap <= SLACK, || format!("lower data gave a larger value by {gap:e}"));

        let bc = root_and_leaves(k, depth, &mut rng, 0.2, 1.0);
        let problem = DirichletProblem::from_values(net.clone(), &bc)?;
        let f = solve(&problem)?;
        let phi: Vec<f64> = problem.fixed().iter().map(|b| if b.is_some() { 0.0 } else { rng.random::<f64>() }).collect();
        let report = caccioppoli_check(&f, &PotentialField::from_values(&problem, phi)?, &problem)?;
        caccioppoli.worst = caccioppoli.worst.max(report.lhs / report.rhs.max(f64::MIN_POSITIVE));
        caccioppoli.record(report.holds, || format!("lhs {} > rhs {}", report.lhs, report.rhs));
    }

    let mut monotone = Tally::new("edge monotonicity");
    let plates = [(VertexSet::ball(0), 1.0), (VertexSet::beyond(depth), 0.0)];
    let field = solve(&DirichletProblem::new(net.clone(), &plates)?)?;
    let topo = TreeTopology::build(k, depth)?;
    for v in topo.vertices().skip(1) {
        let parent = v.parent(k).expect("non-root");
        let (here, up) = (field.value(v)?, field.value(parent)?);
        monotone.record(here <= up + SLACK, || format!("value rises from {parent} to {v}"));
    }

    let mut exhaustion = Tally::new("capacity monotonicity");
    let horizons: Vec<u32> = (1..=8).collect();
    let samples: Vec<f64> = exhaustion_samples(config, 0, &horizons, DEFAULT_TOL).into_iter().map_while(|s| s.ok().map(|s| s.value)).collect();
    for w in samples.windows(2) {
        exhaustion.record(w[1] <= w[0] * (1.0 + SLACK), || format!("capacity rose from {} to {}", w[0], w[1]));
    }

    Ok(vec![
        oracle.finish("max error"),
        maximum.finish("slack"),
        comparison.finish("slack"),
        monotone.finish("slack"),
        caccioppoli.finish("max lhs/rhs"),
        exhaustion.finish("slack"),
    ])
}

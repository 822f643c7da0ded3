//! Instance generators shared by the benchmarks.

use std::collections::BTreeMap;
use std::sync::Arc;

use treecap_core::network::Network;
use treecap_core::weights::EdgeCoefficients;
use treecap_core::{DirichletProblem, RadialProfile, TreeTopology, VertexId, VertexSet, WeightConfig};

pub fn exp_config(k: u64, p: f64, eps: f64, beta: f64) -> WeightConfig {
    WeightConfig::new(k, p, RadialProfile::ExpLevel { rate: eps, scale: 1.0 }, RadialProfile::ExpLevel { rate: beta, scale: 1.0 })
        .expect("valid exponential config")
}

/// Binary tree with unit weights and a halving-μ branch hanging at vertex 1.
pub fn split_config(p: f64) -> WeightConfig {
    WeightConfig::new(2, p, RadialProfile::Constant(1.0), RadialProfile::PowLevelOfK { exponent: -1.0, scale: 1.0 })
        .and_then(|c| c.with_override(VertexId::new(1, 0), RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)))
        .expect("valid split config")
}

/// Explicit network whose edge resistances cycle through a fixed pattern,
/// so no two siblings share a subtree and nothing can be lumped.
pub fn irregular_network(k: u64, depth: u32, p: f64) -> Arc<Network> {
    let topo = TreeTopology::build(k, depth).expect("tree fits");
    let logs = [-0.7, 0.3, 1.1, -0.2, 0.5, -1.3, 0.9];
    let coeffs: Vec<EdgeCoefficients> = (0..topo.edge_count() as usize)
        .map(|i| EdgeCoefficients { log_resistance: logs[i % logs.len()], log_mass: 0.0, length: 1.0 })
        .collect();
    Arc::new(Network::from_coefficients(topo, p, &coeffs).expect("network builds"))
}

/// Root held at 1, leaves at a deterministic spread of values in [0, 1).
pub fn leaves_problem(net: Arc<Network>) -> DirichletProblem {
    let (k, d) = (net.branching(), net.depth());
    let mut bc = BTreeMap::new();
    bc.insert(VertexId::ROOT, 1.0);
    for i in 0..k.pow(d) {
        bc.insert(VertexId::new(d, i), ((i * 37) % 101) as f64 / 101.0);
    }
    DirichletProblem::from_values(net, &bc).expect("problem builds")
}

/// Ball-to-sphere condenser on the lumped network of `config`.
pub fn condenser_problem(config: &WeightConfig, n: u32, m: u32) -> DirichletProblem {
    let plates = [(VertexSet::ball(n), 1.0), (VertexSet::beyond(m), 0.0)];
    DirichletProblem::on_config(config, m, &plates, false).expect("problem builds")
}

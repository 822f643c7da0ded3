//! Weighted trees as resistor networks, with symmetric parts of the tree
//! lumped together.
//!
//! A node stands either for one vertex or for a class of vertices whose
//! subtrees are identical copies of each other (same weights, same boundary
//! data). Lumping keeps deep truncations small: a radial X^60 needs 61 nodes
//! instead of 2^61 vertices. Vertices that must be addressed individually
//! (override anchors, listed boundary vertices, the T_1 anchor) are kept
//! exact together with all their ancestors.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::tree::{TreeTopology, VertexId};
use crate::weights::{pair_edge, rp_tail_log, EdgeCoefficients, LogRp, WeightConfig};

/// Vertices represented by one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Members {
    Vertex(VertexId),
    /// `count` vertices at the representative's level, all equivalent.
    Class { representative: VertexId, count: u64 },
}

impl Members {
    pub fn representative(&self) -> VertexId {
        match self {
            Members::Vertex(v) => *v,
            Members::Class { representative, .. } => *representative,
        }
    }

    pub fn count(&self) -> u64 {
        match self {
            Members::Vertex(_) => 1,
            Members::Class { count, .. } => *count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub members: Members,
    pub parent: Option<usize>,
    /// Copies of this node hanging below each vertex of the parent node.
    pub copies: u64,
    /// Incoming edge; `None` for the root.
    pub edge: Option<EdgeCoefficients>,
    /// `ln` of the resistance from this vertex to the ideal ground at
    /// infinity through the omitted part of the tree.
    pub tail: Option<f64>,
    pub children: Vec<usize>,
    rest: Option<usize>,
}

impl Node {
    pub fn level(&self) -> u32 {
        self.members.representative().level
    }

    pub fn log_resistance(&self) -> Option<f64> {
        self.edge.map(|e| e.log_resistance)
    }
}

/// A rooted tree of nodes in level-major order (parents before children).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    branching: u64,
    depth: u32,
    p: f64,
    nodes: Vec<Node>,
}

impl Network {
    /// The network of X^depth for `config`, with every vertex in `exact`
    /// (and every override anchor) kept individually addressable. With
    /// `tail`, deepest-level vertices are grounded through the rest of the
    /// infinite tree.
    pub fn from_config(config: &WeightConfig, depth: u32, exact: &BTreeSet<VertexId>, tail: bool) -> Result<Network> {
        let k = config.branching();
        let topology = TreeTopology::build(k, depth)?;
        let mut special: BTreeSet<VertexId> = BTreeSet::new();
        let mark = |v: VertexId, special: &mut BTreeSet<VertexId>| {
            for level in 0..=v.level {
                special.insert(v.ancestor_at(k, level));
            }
        };
        mark(VertexId::ROOT, &mut special);
        if k >= 2 && depth >= 1 {
            mark(VertexId::new(1, 0), &mut special);
        }
        for v in exact {
            if !topology.contains(*v) {
                return Err(Error::VertexOutOfRange(*v));
            }
            mark(*v, &mut special);
        }
        for o in config.overrides() {
            if o.anchor.level <= depth {
                mark(o.anchor, &mut special);
            } else if tail {
                return Err(Error::InvalidProblem(format!(
                    "tail closure at depth {depth} would cut through the override anchored at {}",
                    o.anchor
                )));
            }
        }

        let p = config.p();
        let ln_k = (k as f64).ln();
        let mut edge_cache: HashMap<(usize, u32), EdgeCoefficients> = HashMap::new();
        let mut tail_cache: HashMap<usize, Option<f64>> = HashMap::new();
        let region = |v: VertexId| {
            config.overrides().iter().position(|o| v.is_descendant_of(k, o.anchor)).unwrap_or(usize::MAX)
        };
        let edge_of = |v: VertexId, cache: &mut HashMap<(usize, u32), EdgeCoefficients>| -> Result<EdgeCoefficients> {
            let key = (region(v), v.level);
            if let Some(c) = cache.get(&key) {
                return Ok(*c);
            }
            let c = pair_edge(config.pair_for(v), v.level, p, k, config.quad_tol())?;
            cache.insert(key, c);
            Ok(c)
        };
        let tail_of = |v: VertexId, cache: &mut HashMap<usize, Option<f64>>| -> Result<Option<f64>> {
            let key = region(v);
            if let Some(t) = cache.get(&key) {
                return Ok(*t);
            }
            let t = match rp_tail_log(config.pair_for(v), depth, p, k, config.quad_tol())? {
                LogRp::Finite(l) => Some(l + depth as f64 * ln_k / (p - 1.0)),
                LogRp::Infinite(_) => None,
                LogRp::Undetermined { horizon, .. } => {
                    return Err(Error::InvalidProblem(format!(
                        "tail closure below level {depth} needs the weights beyond level {horizon}, which are unknown"
                    )))
                }
            };
            cache.insert(key, t);
            Ok(t)
        };

        let mut nodes = vec![Node {
            members: Members::Vertex(VertexId::ROOT),
            parent: None,
            copies: 1,
            edge: None,
            tail: None,
            children: Vec::new(),
            rest: None,
        }];
        let mut i = 0;
        while i < nodes.len() {
            let level = nodes[i].level();
            if level == depth {
                if tail {
                    nodes[i].tail = tail_of(nodes[i].members.representative(), &mut tail_cache)?;
                }
                i += 1;
                continue;
            }
            let mut kids: Vec<(Members, u64)> = Vec::new();
            match nodes[i].members {
                Members::Vertex(v) => {
                    let mut first_rest = None;
                    let mut rest = 0u64;
                    for c in 0..k {
                        let child = v.child(k, c);
                        if special.contains(&child) {
                            kids.push((Members::Vertex(child), 1));
                        } else {
                            first_rest.get_or_insert(child);
                            rest += 1;
                        }
                    }
                    if let Some(rep) = first_rest {
                        kids.push((Members::Class { representative: rep, count: rest }, rest));
                    }
                }
                Members::Class { representative, count } => {
                    kids.push((Members::Class { representative: representative.child(k, 0), count: count * k }, k));
                }
            }
            for (members, copies) in kids {
                let members = match members {
                    Members::Class { representative, count: 1 } if copies == 1 && nodes[i].members.count() == 1 => {
                        Members::Vertex(representative)
                    }
                    m => m,
                };
                let edge = edge_of(members.representative(), &mut edge_cache)?;
                let idx = nodes.len();
                nodes.push(Node { members, parent: Some(i), copies, edge: Some(edge), tail: None, children: Vec::new(), rest: None });
                nodes[i].children.push(idx);
                if !special.contains(&members.representative()) {
                    nodes[i].rest = Some(idx);
                }
            }
            i += 1;
        }
        Ok(Network { branching: k, depth, p, nodes })
    }

    /// One node per vertex with explicitly given edge coefficients, indexed
    /// by the flat position of the edge's child endpoint minus one.
    pub fn from_coefficients(topology: TreeTopology, p: f64, coefficients: &[EdgeCoefficients]) -> Result<Network> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter { field: "p".into(), reason: format!("need 1 < p < ∞, got {p}") });
        }
        if coefficients.len() as u64 != topology.edge_count() {
            return Err(Error::InvalidProblem(format!(
                "{} edge coefficients given for {} edges",
                coefficients.len(),
                topology.edge_count()
            )));
        }
        if coefficients.iter().any(|c| !c.log_resistance.is_finite()) {
            return Err(Error::InvalidProblem("edge resistances must be finite and positive".into()));
        }
        let k = topology.branching();
        let mut nodes: Vec<Node> = topology
            .vertices()
            .map(|v| {
                let flat = topology.flat_index(v) as usize;
                Node {
                    members: Members::Vertex(v),
                    parent: topology.parent(v).map(|u| topology.flat_index(u) as usize),
                    copies: 1,
                    edge: (flat > 0).then(|| coefficients[flat - 1]),
                    tail: None,
                    children: Vec::new(),
                    rest: None,
                }
            })
            .collect();
        for i in 1..nodes.len() {
            let parent = nodes[i].parent.expect("non-root");
            nodes[parent].children.push(i);
        }
        Ok(Network { branching: k, depth: topology.depth(), p, nodes })
    }

    pub fn branching(&self) -> u64 {
        self.branching
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total number of tree vertices represented.
    pub fn vertex_count(&self) -> u64 {
        self.nodes.iter().map(|n| n.members.count()).sum()
    }

    /// Node containing vertex `v`.
    pub fn node_of(&self, v: VertexId) -> Result<usize> {
        if v.level > self.depth || self.branching.checked_pow(v.level).is_none_or(|n| v.index >= n) {
            return Err(Error::VertexOutOfRange(v));
        }
        let mut cur = 0usize;
        for level in 1..=v.level {
            let a = v.ancestor_at(self.branching, level);
            let node = &self.nodes[cur];
            cur = node
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].members == Members::Vertex(a))
                .or(node.rest)
                .ok_or(Error::VertexOutOfRange(v))?;
        }
        Ok(cur)
    }

    /// Every vertex represented by node `i`, in index order.
    pub fn members_of(&self, i: usize) -> Vec<VertexId> {
        match self.nodes[i].members {
            Members::Vertex(v) => vec![v],
            Members::Class { .. } => {
                let k = self.branching;
                let parent = self.nodes[i].parent.expect("classes are never the root");
                let exact: BTreeSet<VertexId> = self.nodes[parent]
                    .children
                    .iter()
                    .filter_map(|&c| match self.nodes[c].members {
                        Members::Vertex(v) => Some(v),
                        Members::Class { .. } => None,
                    })
                    .collect();
                self.members_of(parent)
                    .into_iter()
                    .flat_map(|u| (0..k).map(move |c| u.child(k, c)))
                    .filter(|c| !exact.contains(c))
                    .collect()
            }
        }
    }

    /// Same network with every resistance multiplied by `c`.
    pub fn with_resistances_scaled(&self, c: f64) -> Result<Network> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter { field: "scale".into(), reason: format!("must be positive, got {c}") });
        }
        let mut out = self.clone();
        let lc = c.ln();
        for node in &mut out.nodes {
            if let Some(e) = node.edge.as_mut() {
                e.log_resistance += lc;
            }
            if let Some(t) = node.tail.as_mut() {
                *t += lc;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::RadialProfile;

    fn unit(k: u64) -> WeightConfig {
        WeightConfig::new(k, 2.0, RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)).unwrap()
    }

    #[test]
    fn radial_networks_are_small() {
        let net = Network::from_config(&unit(2), 60, &BTreeSet::new(), false).unwrap();
        // root, then a T_1 chain and a complement chain
        assert_eq!(net.len(), 1 + 2 * 60);
        assert_eq!(net.vertex_count(), (1u64 << 61) - 1);
    }

    #[test]
    fn every_vertex_is_found_in_a_node_containing_it() {
        let one = RadialProfile::Constant(1.0);
        let cfg = unit(3).with_override(VertexId::new(2, 4), one.clone(), one).unwrap();
        let exact: BTreeSet<VertexId> = [VertexId::new(3, 20)].into_iter().collect();
        let net = Network::from_config(&cfg, 4, &exact, false).unwrap();
        let topo = TreeTopology::build(3, 4).unwrap();
        let mut seen = 0u64;
        for i in 0..net.len() {
            let members = net.members_of(i);
            assert_eq!(members.len() as u64, net.node(i).members.count());
            for v in members {
                assert_eq!(net.node_of(v).unwrap(), i, "{v}");
                seen += 1;
            }
        }
        assert_eq!(seen, topo.vertex_count());
        assert!(matches!(net.node(net.node_of(VertexId::new(2, 4)).unwrap()).members, Members::Vertex(_)));
        assert!(matches!(net.node(net.node_of(VertexId::new(3, 20)).unwrap()).members, Members::Vertex(_)));
    }

    #[test]
    fn copies_multiply_to_counts() {
        let net = Network::from_config(&unit(3), 5, &BTreeSet::new(), false).unwrap();
        for node in net.nodes() {
            if let Some(parent) = node.parent {
                assert_eq!(node.members.count(), net.node(parent).members.count() * node.copies);
            }
        }
    }

    #[test]
    fn explicit_networks_mirror_the_topology() {
        let topo = TreeTopology::build(2, 3).unwrap();
        let coeffs = vec![EdgeCoefficients::unit(); topo.edge_count() as usize];
        let net = Network::from_coefficients(topo, 2.0, &coeffs).unwrap();
        assert_eq!(net.len(), 15);
        for v in topo.vertices() {
            assert_eq!(net.node_of(v).unwrap() as u64, topo.flat_index(v));
        }
        assert!(Network::from_coefficients(topo, 2.0, &coeffs[1..]).is_err());
    }

    #[test]
    fn tail_closure_grounds_the_deepest_level() {
        let net = Network::from_config(&unit(2), 3, &BTreeSet::new(), true).unwrap();
        for node in net.nodes() {
            // K^{3} ∫_3^∞ 2^{-j} dt = 8 · 2^{-3} = 1
            match node.level() {
                3 => assert!((node.tail.unwrap()).abs() < 1e-12),
                _ => assert!(node.tail.is_none()),
            }
        }
        let parabolic = WeightConfig::new(2, 2.0, RadialProfile::Constant(1.0), RadialProfile::PowLevelOfK { exponent: -1.0, scale: 1.0 }).unwrap();
        let net = Network::from_config(&parabolic, 3, &BTreeSet::new(), true).unwrap();
        assert!(net.nodes().iter().all(|n| n.tail.is_none()));
    }

    #[test]
    fn out_of_range_lookups_fail() {
        let net = Network::from_config(&unit(2), 2, &BTreeSet::new(), false).unwrap();
        assert!(net.node_of(VertexId::new(3, 0)).is_err());
        assert!(net.node_of(VertexId::new(2, 4)).is_err());
    }
}

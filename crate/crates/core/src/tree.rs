//! Combinatorial K-regular rooted trees truncated at a fixed depth.
//!
//! A vertex is addressed by its level and its base-K index within that
//! level; the edge joining a vertex to its parent is identified with the
//! vertex itself. Nothing here allocates per query: parents, children and
//! flat positions are pure index arithmetic.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vertex of a K-regular tree: `index` ranges over `[0, K^level)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId {
    pub level: u32,
    pub index: u64,
}

impl VertexId {
    pub const ROOT: VertexId = VertexId { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Self {
        VertexId { level, index }
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }

    /// Parent vertex, `None` for the root.
    pub fn parent(&self, branching: u64) -> Option<VertexId> {
        (self.level > 0).then(|| VertexId::new(self.level - 1, self.index / branching))
    }

    /// The `c`-th child, `c < K`.
    pub fn child(&self, branching: u64, c: u64) -> VertexId {
        debug_assert!(c < branching);
        VertexId::new(self.level + 1, self.index * branching + c)
    }

    /// Ancestor at `level` (the vertex itself when levels agree).
    pub fn ancestor_at(&self, branching: u64, level: u32) -> VertexId {
        assert!(level <= self.level, "ancestor level above vertex");
        let up = self.level - level;
        let div = branching.checked_pow(up).unwrap_or(u64::MAX);
        let index = if branching == 1 { 0 } else { self.index / div };
        VertexId::new(level, index)
    }

    /// Whether `self` lies in the subtree rooted at `anchor` (inclusive).
    pub fn is_descendant_of(&self, branching: u64, anchor: VertexId) -> bool {
        self.level >= anchor.level && self.ancestor_at(branching, anchor.level) == anchor
    }

    /// Which child of the root this vertex descends from; `None` for the root.
    pub fn branch(&self, branching: u64) -> Option<u64> {
        (self.level > 0).then(|| self.ancestor_at(branching, 1).index)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.level, self.index)
    }
}

/// The truncation X^m of a K-regular rooted tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeTopology {
    branching: u64,
    depth: u32,
}

impl TreeTopology {
    /// Builds X^depth for branching factor `branching`.
    ///
    /// Every level must be indexable by a `u64` and the total vertex count
    /// must fit as well; violations report the largest admissible depth.
    pub fn build(branching: u64, depth: u32) -> Result<Self> {
        if branching == 0 {
            return Err(Error::InvalidBranching(branching));
        }
        let max = Self::max_depth(branching);
        if depth > max {
            return Err(Error::DepthTooLarge { branching, depth, max_depth: max });
        }
        Ok(TreeTopology { branching, depth })
    }

    /// Largest depth whose full vertex count fits in a `u64`.
    pub fn max_depth(branching: u64) -> u32 {
        if branching == 1 {
            return u32::MAX - 1;
        }
        let mut depth = 0u32;
        let mut level = 1u64;
        let mut total = 1u64;
        loop {
            let Some(next_level) = level.checked_mul(branching) else { break };
            let Some(next_total) = total.checked_add(next_level) else { break };
            level = next_level;
            total = next_total;
            depth += 1;
        }
        depth
    }

    pub fn branching(&self) -> u64 {
        self.branching
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// K^level.
    pub fn level_count(&self, level: u32) -> u64 {
        assert!(level <= self.depth, "level {level} beyond depth {}", self.depth);
        self.branching.pow(level)
    }

    /// Number of vertices at levels strictly below `level`.
    pub fn level_offset(&self, level: u32) -> u64 {
        if self.branching == 1 {
            return level as u64;
        }
        (self.branching.pow(level) - 1) / (self.branching - 1)
    }

    pub fn vertex_count(&self) -> u64 {
        if self.branching == 1 {
            return self.depth as u64 + 1;
        }
        // (K^{m+1} - 1)/(K - 1) without overflowing at the maximal depth
        self.level_offset(self.depth) + self.level_count(self.depth)
    }

    pub fn edge_count(&self) -> u64 {
        self.vertex_count() - 1
    }

    pub fn contains(&self, v: VertexId) -> bool {
        v.level <= self.depth && v.index < self.level_count(v.level)
    }

    /// Position of `v` in level-major, index-minor order.
    pub fn flat_index(&self, v: VertexId) -> u64 {
        debug_assert!(self.contains(v));
        self.level_offset(v.level) + v.index
    }

    pub fn vertex_at(&self, flat: u64) -> VertexId {
        let mut level = 0;
        while level < self.depth && self.level_offset(level + 1) <= flat {
            level += 1;
        }
        VertexId::new(level, flat - self.level_offset(level))
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        v.parent(self.branching)
    }

    /// Children of `v`; empty at the truncation depth.
    pub fn children(&self, v: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        let n = if v.level < self.depth { self.branching } else { 0 };
        (0..n).map(move |c| v.child(self.branching, c))
    }

    /// All vertices in level-major, index-minor order.
    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..=self.depth)
            .flat_map(move |level| (0..self.level_count(level)).map(move |i| VertexId::new(level, i)))
    }

    /// The distinguished subtree T_1: the root, its child `x_0 = (1,0)` and
    /// everything below `x_0`.
    pub fn subtree_t1(&self) -> Result<VertexSet> {
        if self.branching < 2 {
            return Err(Error::DegenerateSplit);
        }
        Ok(VertexSet::levels(0, self.depth, Side::T1).tagged(SetTag::T1))
    }

    /// The plates `E_n` (levels > n inside T_1) and `F_n` (levels > n
    /// outside T_1). The free vertices, neither plate, are exactly X^n.
    pub fn plate_sets(&self, n: u32) -> Result<(VertexSet, VertexSet)> {
        if self.branching < 2 {
            return Err(Error::DegenerateSplit);
        }
        if n == 0 || n >= self.depth {
            return Err(Error::PlateLevel { n, depth: self.depth });
        }
        let e = VertexSet::levels(n + 1, u32::MAX, Side::T1).tagged(SetTag::PlateE(n));
        let f = VertexSet::levels(n + 1, u32::MAX, Side::OutsideT1).tagged(SetTag::PlateF(n));
        Ok((e, f))
    }
}

/// Which part of the tree a level-range set is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    All,
    /// The root plus everything below `(1,0)`.
    T1,
    /// Everything below the root children other than `(1,0)`.
    OutsideT1,
}

impl Side {
    fn admits(self, branching: u64, v: VertexId) -> bool {
        match self {
            Side::All => true,
            Side::T1 => v.branch(branching).is_none_or(|b| b == 0),
            Side::OutsideT1 => v.branch(branching).is_some_and(|b| b != 0),
        }
    }
}

/// Names for the sets the capacity computations are built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetTag {
    /// X^n
    Ball(u32),
    /// T_1 within the truncation
    T1,
    /// E_n within the truncation
    PlateE(u32),
    /// F_n within the truncation
    PlateF(u32),
    /// Vertices at levels >= m
    Beyond(u32),
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SetRepr {
    Levels { min: u32, max: u32, side: Side },
    List(BTreeSet<VertexId>),
}

/// A set of vertices given either by a level range (optionally restricted to
/// one side of the T_1 split) or by an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSet {
    repr: SetRepr,
    tag: SetTag,
}

impl VertexSet {
    pub fn levels(min: u32, max: u32, side: Side) -> Self {
        VertexSet { repr: SetRepr::Levels { min, max, side }, tag: SetTag::Custom }
    }

    /// X^n.
    pub fn ball(n: u32) -> Self {
        Self::levels(0, n, Side::All).tagged(SetTag::Ball(n))
    }

    /// Vertices at levels `>= m`; within X^m this is the outer condenser plate.
    pub fn beyond(m: u32) -> Self {
        Self::levels(m, u32::MAX, Side::All).tagged(SetTag::Beyond(m))
    }

    pub fn list(vertices: impl IntoIterator<Item = VertexId>) -> Self {
        VertexSet { repr: SetRepr::List(vertices.into_iter().collect()), tag: SetTag::Custom }
    }

    pub fn tagged(mut self, tag: SetTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn tag(&self) -> &SetTag {
        &self.tag
    }

    pub fn contains(&self, branching: u64, v: VertexId) -> bool {
        match &self.repr {
            SetRepr::Levels { min, max, side } => {
                v.level >= *min && v.level <= *max && side.admits(branching, v)
            }
            SetRepr::List(set) => set.contains(&v),
        }
    }

    /// Whether membership depends on the T_1 split.
    pub fn is_sided(&self) -> bool {
        matches!(&self.repr, SetRepr::Levels { side, .. } if *side != Side::All)
    }

    /// Explicitly listed vertices, if this is a list set.
    pub fn listed(&self) -> Option<&BTreeSet<VertexId>> {
        match &self.repr {
            SetRepr::List(set) => Some(set),
            SetRepr::Levels { .. } => None,
        }
    }

    /// Members within `topology`, level-major.
    pub fn members(&self, topology: &TreeTopology) -> Vec<VertexId> {
        match &self.repr {
            SetRepr::List(set) => set.iter().copied().filter(|v| topology.contains(*v)).collect(),
            SetRepr::Levels { .. } => topology
                .vertices()
                .filter(|v| self.contains(topology.branching(), *v))
                .collect(),
        }
    }

    /// Member count within `topology`, computed without enumeration for
    /// level-range sets.
    pub fn count(&self, topology: &TreeTopology) -> u64 {
        match &self.repr {
            SetRepr::List(_) => self.members(topology).len() as u64,
            SetRepr::Levels { min, max, side } => {
                let k = topology.branching();
                let hi = (*max).min(topology.depth());
                (*min..=hi)
                    .map(|level| {
                        let all = topology.level_count(level);
                        match side {
                            Side::All => all,
                            Side::T1 if level == 0 => 1,
                            Side::T1 => all / k,
                            Side::OutsideT1 if level == 0 => 0,
                            Side::OutsideT1 => all - all / k,
                        }
                    })
                    .sum()
            }
        }
    }
}

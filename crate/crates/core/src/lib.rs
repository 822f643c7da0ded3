//! Potential theory on weighted K-regular trees: the p-parabolicity
//! criterion integral, p-harmonic Dirichlet solves, condenser capacities and
//! the classification built on them.

pub mod capacity;
pub mod classify;
pub mod config;
pub mod error;
pub mod network;
pub mod numeric;
pub mod quad;
pub mod report;
pub mod solver;
pub mod tree;
pub mod weights;

pub use capacity::{
    capacity_exhaustion, capacity_exhaustion_auto, capacity_to_infinity, condenser_capacity, limit_harmonic, pair_capacity,
    radial_condenser_capacity, CapacityCurve, CondenserSpec, CurveVerdict, LimitHarmonic, PairCapacityResult,
};
pub use classify::{classify, classify_with_evidence, liouville_audit, phase_map, ClassificationResult, PhasePoint, Verdict};
pub use config::{load_config, parse_config};
pub use error::{Error, Result};
pub use solver::{solve_dirichlet, DirichletProblem, PotentialField};
pub use tree::{TreeTopology, VertexId, VertexSet};
pub use weights::{rp_classify, rp_subtree, rp_truncated, RadialProfile, RpValue, WeightConfig};

//! p-parabolic / p-hyperbolic classification, the exponential-family phase
//! map and the audit of computed limit functions.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::{capacity_exhaustion_auto, CapacityCurve, LimitHarmonic};
use crate::error::{Error, Result};
use crate::solver::flux_residual;
use crate::tree::VertexId;
use crate::weights::{rp_classify, rp_subtree, rp_tail_log, Branch, RadialProfile, RpValue, WeightConfig, WeightPair, RATE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Parabolic,
    Hyperbolic,
    Undetermined,
}

impl Verdict {
    pub fn of(rp: &RpValue) -> Self {
        match rp {
            RpValue::Finite { .. } => Verdict::Hyperbolic,
            RpValue::Infinite { .. } => Verdict::Parabolic,
            RpValue::Undetermined { .. } => Verdict::Undetermined,
        }
    }

    /// Verdict of a tree made of several subtrees hanging from a finite part.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        let mut out = Verdict::Parabolic;
        for v in verdicts {
            match v {
                Verdict::Hyperbolic => return Verdict::Hyperbolic,
                Verdict::Undetermined => out = Verdict::Undetermined,
                Verdict::Parabolic => {}
            }
        }
        out
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Parabolic => "Parabolic",
            Verdict::Hyperbolic => "Hyperbolic",
            Verdict::Undetermined => "Undetermined",
        })
    }
}

/// One side of the root split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchEvidence {
    pub branch: Branch,
    /// Criterion integral of the side, when it carries a single radial pair.
    pub rp: Option<RpValue>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationResult {
    pub verdict: Verdict,
    /// R_p of the whole tree: the radial value, or the sum over the two
    /// sides of the root split.
    pub rp: Option<RpValue>,
    pub branches: Vec<BranchEvidence>,
    pub curve: Option<CapacityCurve>,
    pub notes: Vec<String>,
    pub config: WeightConfig,
}

/// Decides parabolicity from the weights alone.
pub fn classify(config: &WeightConfig) -> ClassificationResult {
    let mut notes = Vec::new();
    let (verdict, rp, branches) = if config.is_radial() {
        match rp_classify(config) {
            Ok(rp) => (Verdict::of(&rp), Some(rp), Vec::new()),
            Err(e) => {
                notes.push(format!("criterion integral failed: {e}"));
                (Verdict::Undetermined, None, Vec::new())
            }
        }
    } else {
        classify_split(config, &mut notes)
    };
    if verdict == Verdict::Hyperbolic && rp.is_some_and(|r| r.is_infinite()) {
        notes.push("total R_p infinite, yet a branch subtree has finite R_p and carries positive capacity".into());
    }
    if let Some(RpValue::Undetermined { horizon, .. }) = rp {
        notes.push(format!("weights known only up to level {horizon}"));
    }
    ClassificationResult { verdict, rp, branches, curve: None, notes, config: config.clone() }
}

/// [`classify`] with the n = 0 capacity exhaustion attached.
pub fn classify_with_evidence(config: &WeightConfig) -> ClassificationResult {
    let mut result = classify(config);
    match capacity_exhaustion_auto(config, 0) {
        Ok(curve) => result.curve = Some(curve),
        Err(e) => result.notes.push(format!("capacity curve unavailable: {e}")),
    }
    result
}

fn classify_split(config: &WeightConfig, notes: &mut Vec<String>) -> (Verdict, Option<RpValue>, Vec<BranchEvidence>) {
    if config.branching() < 2 {
        let verdict = subtree_verdict(config, VertexId::ROOT, notes);
        return (verdict, None, Vec::new());
    }
    let k = config.branching();
    let mut branches = Vec::new();
    for which in [Branch::T1, Branch::Complement] {
        let evidence = match rp_subtree(config, which) {
            Ok(rp) => BranchEvidence { branch: which, rp: Some(rp), verdict: Verdict::of(&rp) },
            Err(Error::MixedSubtree(_)) => {
                notes.push(format!("{which:?} side mixes several weight regions and was decomposed further"));
                let verdict = match which {
                    Branch::T1 => subtree_verdict(config, VertexId::new(1, 0), notes),
                    Branch::Complement => children_verdict(config, VertexId::ROOT, 1..k, notes),
                };
                BranchEvidence { branch: which, rp: None, verdict }
            }
            Err(e) => {
                notes.push(format!("{which:?} side: {e}"));
                BranchEvidence { branch: which, rp: None, verdict: Verdict::Undetermined }
            }
        };
        branches.push(evidence);
    }
    let verdict = Verdict::combine(branches.iter().map(|b| b.verdict));
    let rp = match (branches[0].rp, branches[1].rp) {
        (Some(a), Some(b)) => Some(a.add(b)),
        _ => None,
    };
    (verdict, rp, branches)
}

/// Verdict of the subtree rooted at `v`.
fn subtree_verdict(config: &WeightConfig, v: VertexId, notes: &mut Vec<String>) -> Verdict {
    let k = config.branching();
    let below = config.overrides().iter().any(|o| o.anchor != v && o.anchor.is_descendant_of(k, v));
    if !below {
        return pure_verdict(config, config.pair_for(v), v.level, notes);
    }
    children_verdict(config, v, 0..k, notes)
}

/// Combined verdict of the children `v·K + c`, `c ∈ range`. Children free of
/// override anchors are grouped by weight pair and decided once per group.
fn children_verdict(config: &WeightConfig, v: VertexId, range: std::ops::Range<u64>, notes: &mut Vec<String>) -> Verdict {
    let k = config.branching();
    let mut mixed = BTreeSet::new();
    for o in config.overrides() {
        if o.anchor.level > v.level && o.anchor.is_descendant_of(k, v) {
            let child = o.anchor.ancestor_at(k, v.level + 1);
            if range.contains(&(child.index - v.index * k)) {
                mixed.insert(child);
            }
        }
    }
    let mut verdicts: Vec<Verdict> = mixed.iter().map(|&c| subtree_verdict(config, c, notes)).collect();
    if (mixed.len() as u64) < range.end - range.start {
        verdicts.push(pure_verdict(config, config.pair_for(v), v.level + 1, notes));
    }
    Verdict::combine(verdicts)
}

fn pure_verdict(config: &WeightConfig, pair: WeightPair<'_>, from: u32, notes: &mut Vec<String>) -> Verdict {
    match rp_tail_log(pair, from, config.p(), config.branching(), config.quad_tol()) {
        Ok(rp) => Verdict::of(&rp.into_value()),
        Err(e) => {
            notes.push(format!("subtree below level {from}: {e}"));
            Verdict::Undetermined
        }
    }
}

/// Exponential family `λ = e^{-ε·t}`, `μ = e^{-β·t}` on the K-regular tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    #[serde(rename = "K")]
    pub k: u64,
    pub p: f64,
    pub epsilon: f64,
    pub beta: f64,
}

impl PhasePoint {
    pub fn config(&self) -> Result<WeightConfig> {
        WeightConfig::new(
            self.k,
            self.p,
            RadialProfile::ExpLevel { rate: self.epsilon, scale: 1.0 },
            RadialProfile::ExpLevel { rate: self.beta, scale: 1.0 },
        )
    }

    /// Hyperbolic iff `β < log K + ε·p`; equality is parabolic.
    pub fn closed_form(&self) -> Verdict {
        let threshold = (self.k as f64).ln() + self.epsilon * self.p;
        if threshold - self.beta > RATE_TOL * (self.p - 1.0) {
            Verdict::Hyperbolic
        } else {
            Verdict::Parabolic
        }
    }

    /// The measure is doubling and supports a 1-Poincaré inequality.
    pub fn doubling(&self) -> bool {
        self.beta > (self.k as f64).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseResult {
    pub point: PhasePoint,
    pub verdict: Verdict,
    /// Verdict of the criterion integral on the same weights.
    pub rp_verdict: Verdict,
    pub doubling: bool,
}

impl PhaseResult {
    pub fn agrees(&self) -> bool {
        self.verdict == self.rp_verdict
    }
}

/// Phase diagram over `epsilon_grid × beta_grid`, rows ordered by ε, then β.
pub fn phase_map(k: u64, p: f64, epsilon_grid: &[f64], beta_grid: &[f64]) -> Result<Vec<PhaseResult>> {
    for (name, grid) in [("epsilon", epsilon_grid), ("beta", beta_grid)] {
        if grid.is_empty() || grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidParameter { field: name.into(), reason: "grid values must be finite and positive".into() });
        }
    }
    let points: Vec<PhasePoint> =
        epsilon_grid.iter().flat_map(|&epsilon| beta_grid.iter().map(move |&beta| PhasePoint { k, p, epsilon, beta })).collect();
    points
        .par_iter()
        .map(|&point| {
            let rp = rp_classify(&point.config()?)?;
            Ok(PhaseResult { point, verdict: point.closed_form(), rp_verdict: Verdict::of(&rp), doubling: point.doubling() })
        })
        .collect()
}

/// Smallest value spread on the window that counts as nonconstant.
pub const NONCONSTANT_SPREAD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiouvilleReport {
    pub items: Vec<AuditItem>,
}

impl LiouvilleReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditItem> {
        self.items.iter().filter(|i| !i.passed)
    }
}

/// Checks that a computed limit function is a bounded, nonconstant,
/// p-harmonic function of finite positive energy.
pub fn liouville_audit(config: &WeightConfig, limit: &LimitHarmonic, tol: f64) -> Result<LiouvilleReport> {
    let verdict = classify(config).verdict;
    if verdict != Verdict::Hyperbolic {
        return Err(Error::Precondition(format!("audit needs a p-hyperbolic tree, got {verdict}")));
    }
    let mut items = Vec::new();
    let (lo, hi) = limit.field.range();
    items.push(AuditItem { name: "bounded", passed: lo >= -tol && hi <= 1.0 + tol, detail: format!("values in [{lo:?}, {hi:?}]") });

    let (wlo, whi) = limit.window_values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, x)| (a.min(x), b.max(x)));
    let spread = whi - wlo;
    items.push(AuditItem {
        name: "nonconstant",
        passed: spread > NONCONSTANT_SPREAD,
        detail: format!("spread {spread:?} on X^{}", limit.diagnostics.window),
    });

    let residual = flux_residual(&limit.field, &limit.problem)?;
    let window = limit.diagnostics.window;
    let interior = residual.entries().iter().filter(|(v, _, _)| v.level < window).map(|e| e.2.abs()).fold(0.0, f64::max);
    items.push(AuditItem { name: "p-harmonic", passed: interior <= tol, detail: format!("interior flux residual {interior:?}") });

    let last = limit.diagnostics.steps.last().ok_or_else(|| Error::InvalidProblem("no minimizers".into()))?;
    let energy = limit.field.energy();
    let in_bounds = energy.is_finite() && energy > 0.0 && energy >= last.m2 * (1.0 - 1e-9) && energy <= last.m1 * (1.0 + 1e-9);
    items.push(AuditItem {
        name: "energy",
        passed: in_bounds,
        detail: format!("energy {energy:?} within [{:?}, {:?}]", last.m2, last.m1),
    });
    Ok(LiouvilleReport { items })
}

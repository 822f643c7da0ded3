//! Radial densities λ, μ, the per-edge network coefficients they induce,
//! and the criterion integral
//!
//! ```text
//! R_p = ∫_0^∞ λ(t)^{p/(p-1)} μ(t)^{1/(1-p)} K^{j(t)/(1-p)} dt,   j(t) = ⌈t⌉.
//! ```
//!
//! An edge at level n covers the radii (n-1, n]. Its p-resistance is
//! `r = ∫ (λ^p/μ)^{1/(p-1)} dt` and its mass `m = ∫ μ dt` over that interval:
//! minimizing `∫ |u'|^p λ^{-p} μ dt` over the edge with a fixed drop Δ gives
//! the energy `|Δ|^p / r^{p-1}`, attained by a potential that is affine in the
//! cumulative-resistance parameter. All level-dependent quantities are kept
//! as logarithms so that deep truncations neither overflow nor underflow.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::quad;
use crate::tree::VertexId;

/// Geometric rates within this distance of zero count as zero, so the
/// equality line of an exponential family is classified as divergent.
pub const RATE_TOL: f64 = 1e-12;

/// The level function `j(t)`: the smallest integer `>= t`.
pub fn level_index(t: f64) -> Result<u32> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter { field: "t".into(), reason: format!("level index needs a finite t >= 0, got {t}") });
    }
    let j = t.ceil();
    if j > u32::MAX as f64 {
        return Err(Error::InvalidParameter { field: "t".into(), reason: format!("{t} exceeds the level range") });
    }
    Ok(j as u32)
}

/// A positive radial density.
#[derive(Clone)]
pub enum RadialProfile {
    Constant(f64),
    /// `scale · e^{-rate·j(t)}`
    ExpLevel { rate: f64, scale: f64 },
    /// `scale · K^{exponent·j(t)}`
    PowLevelOfK { exponent: f64, scale: f64 },
    /// One value per level `1..=len`; undefined beyond the table.
    PerLevelTable(Vec<f64>),
    Sampled(SampledProfile),
}

/// A density known pointwise on `[0, extent]`, optionally continued by a
/// symbolic family beyond it.
#[derive(Clone)]
pub struct SampledProfile {
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    extent: f64,
    tail: Option<Box<RadialProfile>>,
    grid: Option<(Vec<f64>, Vec<f64>)>,
}

impl SampledProfile {
    /// Piecewise-linear interpolation of `(ts, values)`; `ts` must start at 0
    /// and increase strictly.
    pub fn from_grid(ts: Vec<f64>, values: Vec<f64>, tail: Option<RadialProfile>) -> Result<Self> {
        let bad = |reason: String| Err(Error::InvalidParameter { field: "sampled".into(), reason });
        if ts.len() < 2 || ts.len() != values.len() {
            return bad(format!("need at least two (t, value) pairs of equal length, got {} and {}", ts.len(), values.len()));
        }
        if ts[0] != 0.0 {
            return bad(format!("grid must start at t = 0, starts at {}", ts[0]));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.iter().any(|t| !t.is_finite()) {
            return bad("grid points must be finite and strictly increasing".into());
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("sampled values must be finite and positive".into());
        }
        let extent = *ts.last().unwrap();
        let (gt, gv) = (ts.clone(), values.clone());
        let func = move |t: f64| {
            let i = gt.partition_point(|x| *x <= t).clamp(1, gt.len() - 1);
            let s = (t - gt[i - 1]) / (gt[i] - gt[i - 1]);
            gv[i - 1] + s * (gv[i] - gv[i - 1])
        };
        let profile = SampledProfile { func: Arc::new(func), extent, tail: tail.map(Box::new), grid: Some((ts, values)) };
        profile.check_tail()?;
        Ok(profile)
    }

    /// A density given by a callable on `[0, extent]`. Positivity and local
    /// integrability of the callable are the caller's obligation.
    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static, extent: f64, tail: Option<RadialProfile>) -> Result<Self> {
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::InvalidParameter { field: "sampled".into(), reason: format!("extent must be positive, got {extent}") });
        }
        let profile = SampledProfile { func: Arc::new(f), extent, tail: tail.map(Box::new), grid: None };
        profile.check_tail()?;
        Ok(profile)
    }

    fn check_tail(&self) -> Result<()> {
        match self.tail.as_deref() {
            None => Ok(()),
            Some(t) if t.is_symbolic() => t.validate("tail"),
            Some(_) => Err(Error::InvalidParameter {
                field: "tail".into(),
                reason: "a sampled profile's tail must be constant, exp_level or pow_level_of_k".into(),
            }),
        }
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn tail(&self) -> Option<&RadialProfile> {
        self.tail.as_deref()
    }

    pub fn grid(&self) -> Option<(&[f64], &[f64])> {
        self.grid.as_ref().map(|(t, v)| (t.as_slice(), v.as_slice()))
    }
}

impl fmt::Debug for SampledProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampledProfile")
            .field("extent", &self.extent)
            .field("tail", &self.tail)
            .field("grid_points", &self.grid.as_ref().map(|g| g.0.len()))
            .finish()
    }
}

impl PartialEq for SampledProfile {
    fn eq(&self, other: &Self) -> bool {
        match (&self.grid, &other.grid) {
            (Some(a), Some(b)) => a == b && self.tail == other.tail,
            _ => Arc::ptr_eq(&self.func, &other.func) && self.extent == other.extent && self.tail == other.tail,
        }
    }
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialProfile::Constant(c) => write!(f, "Constant({c})"),
            RadialProfile::ExpLevel { rate, scale } => write!(f, "ExpLevel {{ rate: {rate}, scale: {scale} }}"),
            RadialProfile::PowLevelOfK { exponent, scale } => write!(f, "PowLevelOfK {{ exponent: {exponent}, scale: {scale} }}"),
            RadialProfile::PerLevelTable(v) => write!(f, "PerLevelTable({v:?})"),
            RadialProfile::Sampled(s) => s.fmt(f),
        }
    }
}

impl PartialEq for RadialProfile {
    fn eq(&self, other: &Self) -> bool {
        use RadialProfile::*;
        match (self, other) {
            (Constant(a), Constant(b)) => a == b,
            (ExpLevel { rate: a, scale: s }, ExpLevel { rate: b, scale: t }) => a == b && s == t,
            (PowLevelOfK { exponent: a, scale: s }, PowLevelOfK { exponent: b, scale: t }) => a == b && s == t,
            (PerLevelTable(a), PerLevelTable(b)) => a == b,
            (Sampled(a), Sampled(b)) => a == b,
            _ => false,
        }
    }
}

impl Serialize for RadialProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(None)?;
        match self {
            RadialProfile::Constant(c) => {
                m.serialize_entry("family", "constant")?;
                m.serialize_entry("value", c)?;
            }
            RadialProfile::ExpLevel { rate, scale } => {
                m.serialize_entry("family", "exp_level")?;
                m.serialize_entry("rate", rate)?;
                m.serialize_entry("scale", scale)?;
            }
            RadialProfile::PowLevelOfK { exponent, scale } => {
                m.serialize_entry("family", "pow_level_of_k")?;
                m.serialize_entry("exponent", exponent)?;
                m.serialize_entry("scale", scale)?;
            }
            RadialProfile::PerLevelTable(v) => {
                m.serialize_entry("family", "per_level_table")?;
                m.serialize_entry("values", v)?;
            }
            RadialProfile::Sampled(sp) => {
                m.serialize_entry("family", "sampled")?;
                m.serialize_entry("extent", &sp.extent)?;
                if let Some((t, v)) = sp.grid() {
                    m.serialize_entry("t", t)?;
                    m.serialize_entry("values", v)?;
                }
                match sp.tail() {
                    Some(tail) => m.serialize_entry("tail", tail)?,
                    None => m.serialize_entry("tail", "unknown")?,
                }
            }
        }
        m.end()
    }
}

/// `ln value(level) = a + b·level` for every `level >= from`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LogLinear {
    a: f64,
    b: f64,
    from: u32,
}

impl RadialProfile {
    pub fn name(&self) -> &'static str {
        match self {
            RadialProfile::Constant(_) => "constant",
            RadialProfile::ExpLevel { .. } => "exp_level",
            RadialProfile::PowLevelOfK { .. } => "pow_level_of_k",
            RadialProfile::PerLevelTable(_) => "per_level_table",
            RadialProfile::Sampled(_) => "sampled",
        }
    }

    fn is_symbolic(&self) -> bool {
        matches!(self, RadialProfile::Constant(_) | RadialProfile::ExpLevel { .. } | RadialProfile::PowLevelOfK { .. })
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidParameter { field: field.to_string(), reason });
        match self {
            RadialProfile::Constant(c) if !(*c > 0.0) || !c.is_finite() => bad(format!("constant must be finite and positive, got {c}")),
            RadialProfile::ExpLevel { rate, scale } | RadialProfile::PowLevelOfK { exponent: rate, scale }
                if !rate.is_finite() || !(*scale > 0.0) || !scale.is_finite() =>
            {
                bad(format!("need a finite rate and a positive scale, got rate {rate}, scale {scale}"))
            }
            RadialProfile::PerLevelTable(v) if v.is_empty() => bad("per-level table is empty".into()),
            RadialProfile::PerLevelTable(v) if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) => {
                bad("per-level table values must be finite and positive".into())
            }
            _ => Ok(()),
        }
    }

    /// `ln` of the value on the level interval `(level-1, level]` when the
    /// profile is constant there, `None` when it varies inside.
    fn level_log(&self, level: u32, k: u64) -> Result<Option<f64>> {
        let level = level.max(1);
        match self {
            RadialProfile::Constant(c) => Ok(Some(c.ln())),
            RadialProfile::ExpLevel { rate, scale } => Ok(Some(scale.ln() - rate * level as f64)),
            RadialProfile::PowLevelOfK { exponent, scale } => Ok(Some(scale.ln() + exponent * level as f64 * (k as f64).ln())),
            RadialProfile::PerLevelTable(v) => match v.get(level as usize - 1) {
                Some(x) => Ok(Some(x.ln())),
                None => Err(Error::ProfileDomain {
                    profile: self.name().into(),
                    t: level as f64,
                    reason: format!("the table covers levels 1..={}", v.len()),
                }),
            },
            RadialProfile::Sampled(s) => {
                if (level - 1) as f64 >= s.extent {
                    match s.tail() {
                        Some(tail) => tail.level_log(level, k),
                        None => Err(Error::ProfileDomain {
                            profile: self.name().into(),
                            t: level as f64,
                            reason: format!("samples end at {} and the tail is unknown", s.extent),
                        }),
                    }
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Pointwise value at radius `t`.
    pub fn eval(&self, t: f64, k: u64) -> Result<f64> {
        let level = level_index(t)?;
        match self {
            RadialProfile::Sampled(s) if t <= s.extent => Ok((s.func)(t)),
            RadialProfile::Sampled(s) => match s.tail() {
                Some(tail) => tail.eval(t, k),
                None => Err(Error::ProfileDomain {
                    profile: self.name().into(),
                    t,
                    reason: format!("samples end at {} and the tail is unknown", s.extent),
                }),
            },
            _ => Ok(self.level_log(level, k)?.expect("level-constant").exp()),
        }
    }

    fn log_linear(&self, k: u64) -> Option<LogLinear> {
        match self {
            RadialProfile::Constant(c) => Some(LogLinear { a: c.ln(), b: 0.0, from: 1 }),
            RadialProfile::ExpLevel { rate, scale } => Some(LogLinear { a: scale.ln(), b: -rate, from: 1 }),
            RadialProfile::PowLevelOfK { exponent, scale } => {
                Some(LogLinear { a: scale.ln(), b: exponent * (k as f64).ln(), from: 1 })
            }
            RadialProfile::PerLevelTable(_) => None,
            RadialProfile::Sampled(s) => s.tail().and_then(|t| t.log_linear(k)).map(|mut ll| {
                ll.from = ll.from.max(s.extent.ceil() as u32 + 1);
                ll
            }),
        }
    }

    /// Last level up to which a non-symbolic profile is defined.
    fn known_horizon(&self) -> Option<u32> {
        match self {
            RadialProfile::PerLevelTable(v) => Some(v.len() as u32),
            RadialProfile::Sampled(s) if s.tail().is_none() => Some(s.extent.floor() as u32),
            _ => None,
        }
    }

    fn breakpoint(&self) -> Option<f64> {
        match self {
            RadialProfile::Sampled(s) => Some(s.extent),
            _ => None,
        }
    }

    /// Multiplies the density by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<RadialProfile> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter { field: "scale".into(), reason: format!("must be positive, got {c}") });
        }
        Ok(match self {
            RadialProfile::Constant(v) => RadialProfile::Constant(v * c),
            RadialProfile::ExpLevel { rate, scale } => RadialProfile::ExpLevel { rate: *rate, scale: scale * c },
            RadialProfile::PowLevelOfK { exponent, scale } => RadialProfile::PowLevelOfK { exponent: *exponent, scale: scale * c },
            RadialProfile::PerLevelTable(v) => RadialProfile::PerLevelTable(v.iter().map(|x| x * c).collect()),
            RadialProfile::Sampled(s) => {
                let tail = s.tail().map(|t| t.scaled(c)).transpose()?;
                match s.grid() {
                    Some((t, v)) => RadialProfile::Sampled(SampledProfile::from_grid(t.to_vec(), v.iter().map(|x| x * c).collect(), tail)?),
                    None => {
                        let f = s.func.clone();
                        RadialProfile::Sampled(SampledProfile::from_fn(move |t| c * f(t), s.extent, tail)?)
                    }
                }
            }
        })
    }
}

/// A radial (λ, μ) pair governing some region of the tree.
#[derive(Debug, Clone, Copy)]
pub struct WeightPair<'a> {
    pub lambda: &'a RadialProfile,
    pub mu: &'a RadialProfile,
}

impl PartialEq for WeightPair<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.lambda == other.lambda && self.mu == other.mu
    }
}

/// Replacement densities for the whole subtree below `anchor`, starting with
/// the anchor's incoming edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Override {
    #[serde(serialize_with = "anchor_pair")]
    pub anchor: VertexId,
    pub lambda: RadialProfile,
    pub mu: RadialProfile,
}

fn anchor_pair<S: serde::Serializer>(v: &VertexId, s: S) -> std::result::Result<S::Ok, S::Error> {
    (v.level, v.index).serialize(s)
}

/// Branching factor, exponent and densities of a weighted regular tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightConfig {
    #[serde(rename = "K")]
    branching: u64,
    p: f64,
    lambda: RadialProfile,
    mu: RadialProfile,
    overrides: Vec<Override>,
    #[serde(skip)]
    quad_tol: f64,
}

impl WeightConfig {
    pub fn new(branching: u64, p: f64, lambda: RadialProfile, mu: RadialProfile) -> Result<Self> {
        if branching == 0 {
            return Err(Error::InvalidBranching(0));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter { field: "p".into(), reason: format!("need 1 < p < ∞, got {p}") });
        }
        lambda.validate("lambda")?;
        mu.validate("mu")?;
        Ok(WeightConfig { branching, p, lambda, mu, overrides: Vec::new(), quad_tol: quad::DEFAULT_REL_TOL })
    }

    /// Adds a subtree override. Anchors must be non-root vertices, distinct
    /// and not nested inside one another.
    pub fn with_override(mut self, anchor: VertexId, lambda: RadialProfile, mu: RadialProfile) -> Result<Self> {
        let k = self.branching;
        let field = format!("overrides[{}]", self.overrides.len());
        let bad = |reason: String| Err(Error::InvalidParameter { field: field.clone(), reason });
        if anchor.level == 0 {
            return bad("the root cannot anchor an override; change the base profiles instead".into());
        }
        if k.checked_pow(anchor.level).is_none_or(|n| anchor.index >= n) {
            return bad(format!("anchor {anchor} does not exist for K = {k}"));
        }
        for o in &self.overrides {
            if anchor.is_descendant_of(k, o.anchor) || o.anchor.is_descendant_of(k, anchor) {
                return bad(format!("anchor {anchor} is nested with (or equal to) anchor {}", o.anchor));
            }
        }
        lambda.validate(&format!("{field}.lambda"))?;
        mu.validate(&format!("{field}.mu"))?;
        self.overrides.push(Override { anchor, lambda, mu });
        Ok(self)
    }

    pub fn with_quad_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter { field: "quad_tol".into(), reason: format!("must be positive, got {tol}") });
        }
        self.quad_tol = tol;
        Ok(self)
    }

    /// Same densities with exponent `p`.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter { field: "p".into(), reason: format!("need 1 < p < ∞, got {p}") });
        }
        Ok(WeightConfig { p, ..self.clone() })
    }

    pub fn branching(&self) -> u64 {
        self.branching
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn lambda(&self) -> &RadialProfile {
        &self.lambda
    }
    pub fn mu(&self) -> &RadialProfile {
        &self.mu
    }
    pub fn overrides(&self) -> &[Override] {
        &self.overrides
    }
    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }
    pub fn is_radial(&self) -> bool {
        self.overrides.is_empty()
    }

    pub fn base_pair(&self) -> WeightPair<'_> {
        WeightPair { lambda: &self.lambda, mu: &self.mu }
    }

    /// Override whose subtree contains `v`, if any.
    pub fn override_for(&self, v: VertexId) -> Option<&Override> {
        self.overrides.iter().find(|o| v.is_descendant_of(self.branching, o.anchor))
    }

    /// Densities governing the edge that ends at `v`.
    pub fn pair_for(&self, v: VertexId) -> WeightPair<'_> {
        match self.override_for(v) {
            Some(o) => WeightPair { lambda: &o.lambda, mu: &o.mu },
            None => self.base_pair(),
        }
    }

    /// Copy with both densities scaled: `λ → a·λ`, `μ → b·μ` everywhere.
    pub fn scaled(&self, lambda_factor: f64, mu_factor: f64) -> Result<Self> {
        let mut out = WeightConfig::new(self.branching, self.p, self.lambda.scaled(lambda_factor)?, self.mu.scaled(mu_factor)?)?;
        out.quad_tol = self.quad_tol;
        for o in &self.overrides {
            out = out.with_override(o.anchor, o.lambda.scaled(lambda_factor)?, o.mu.scaled(mu_factor)?)?;
        }
        Ok(out)
    }
}

/// Network coefficients of one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeCoefficients {
    /// `ln ∫ (λ^p/μ)^{1/(p-1)}` over the edge.
    pub log_resistance: f64,
    /// `ln ∫ μ` over the edge.
    pub log_mass: f64,
    /// `∫ λ` over the edge: its length in the metric d.
    pub length: f64,
}

impl EdgeCoefficients {
    pub fn unit() -> Self {
        EdgeCoefficients { log_resistance: 0.0, log_mass: 0.0, length: 1.0 }
    }
    pub fn resistance(&self) -> f64 {
        self.log_resistance.exp()
    }
    pub fn mass(&self) -> f64 {
        self.log_mass.exp()
    }
}

/// Coefficients of the edge ending at `edge`.
pub fn edge_coefficients(config: &WeightConfig, edge: VertexId, quad_tol: f64) -> Result<EdgeCoefficients> {
    if edge.level == 0 {
        return Err(Error::InvalidParameter { field: "edge".into(), reason: "the root has no incoming edge".into() });
    }
    let k = config.branching;
    if k.checked_pow(edge.level).is_none_or(|n| edge.index >= n) {
        return Err(Error::VertexOutOfRange(edge));
    }
    pair_edge(config.pair_for(edge), edge.level, config.p, k, quad_tol)
}

pub(crate) fn pair_edge(pair: WeightPair<'_>, level: u32, p: f64, k: u64, tol: f64) -> Result<EdgeCoefficients> {
    match (pair.lambda.level_log(level, k)?, pair.mu.level_log(level, k)?) {
        (Some(ll), Some(lm)) => Ok(EdgeCoefficients {
            log_resistance: (p * ll - lm) / (p - 1.0),
            log_mass: lm,
            length: ll.exp(),
        }),
        _ => {
            let (a, b) = ((level - 1) as f64, level as f64);
            check_domain(pair, b, k)?;
            let cuts = breakpoints(pair);
            let lam = |t: f64| pair.lambda.eval(t, k).unwrap_or(f64::NAN);
            let mu = |t: f64| pair.mu.eval(t, k).unwrap_or(f64::NAN);
            let r = quad::integrate(|t| ((p * lam(t).ln() - mu(t).ln()) / (p - 1.0)).exp(), a, b, tol, &cuts)?;
            let m = quad::integrate(mu, a, b, tol, &cuts)?;
            let len = quad::integrate(lam, a, b, tol, &cuts)?;
            Ok(EdgeCoefficients { log_resistance: r.value.ln(), log_mass: m.value.ln(), length: len.value })
        }
    }
}

fn check_domain(pair: WeightPair<'_>, upto: f64, k: u64) -> Result<()> {
    for prof in [pair.lambda, pair.mu] {
        if let RadialProfile::Sampled(s) = prof {
            if upto > s.extent && s.tail().is_none() {
                return Err(Error::ProfileDomain {
                    profile: prof.name().into(),
                    t: upto,
                    reason: format!("samples end at {} and the tail is unknown", s.extent),
                });
            }
        }
        if let RadialProfile::PerLevelTable(_) = prof {
            prof.level_log(level_index(upto)?, k)?;
        }
    }
    Ok(())
}

fn breakpoints(pair: WeightPair<'_>) -> Vec<f64> {
    [pair.lambda.breakpoint(), pair.mu.breakpoint()].into_iter().flatten().collect()
}

/// `ln ∫_a^b` of the R_p integrand, for `level-1 <= a < b <= level`.
fn rp_piece_log(pair: WeightPair<'_>, level: u32, a: f64, b: f64, p: f64, k: u64, tol: f64) -> Result<f64> {
    let level_factor = level as f64 * (k as f64).ln() / (1.0 - p);
    match (pair.lambda.level_log(level, k)?, pair.mu.level_log(level, k)?) {
        (Some(ll), Some(lm)) => Ok((p * ll - lm) / (p - 1.0) + level_factor + (b - a).ln()),
        _ => {
            check_domain(pair, b, k)?;
            let integrand = |t: f64| {
                let l = pair.lambda.eval(t, k).unwrap_or(f64::NAN);
                let m = pair.mu.eval(t, k).unwrap_or(f64::NAN);
                ((p * l.ln() - m.ln()) / (p - 1.0)).exp()
            };
            let r = quad::integrate(integrand, a, b, tol, &breakpoints(pair))?;
            Ok(r.value.ln() + level_factor)
        }
    }
}

/// `ln ∫_lo^hi` of the R_p integrand for one radial pair.
pub(crate) fn rp_range_log(pair: WeightPair<'_>, lo: f64, hi: f64, p: f64, k: u64, tol: f64) -> Result<f64> {
    let first = lo.floor() as u32 + 1;
    let last = hi.ceil() as u32;
    let mut logs = Vec::with_capacity((last.saturating_sub(first) + 1) as usize);
    for level in first..=last {
        let a = lo.max((level - 1) as f64);
        let b = hi.min(level as f64);
        if b > a {
            logs.push(rp_piece_log(pair, level, a, b, p, k, tol)?);
        }
    }
    Ok(log_sum_exp(&logs))
}

/// Why R_p was declared infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceWitness {
    /// Per-level terms behave like `e^{rate·n}` with `rate >= 0`.
    NonSummableRate { rate: f64 },
}

impl fmt::Display for DivergenceWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceWitness::NonSummableRate { rate } => write!(f, "non-summable rate {rate}"),
        }
    }
}

/// Value of the criterion integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RpValue {
    Finite { value: f64 },
    Infinite { witness: DivergenceWitness },
    /// Tail behaviour unknown: only the integral up to `horizon` is known.
    Undetermined { partial: f64, horizon: u32 },
}

impl RpValue {
    pub fn finite(value: f64) -> Self {
        RpValue::Finite { value }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            RpValue::Finite { value } => Some(*value),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, RpValue::Finite { .. })
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, RpValue::Infinite { .. })
    }

    pub fn scale(self, c: f64) -> Self {
        match self {
            RpValue::Finite { value } => RpValue::Finite { value: value * c },
            RpValue::Undetermined { partial, horizon } => RpValue::Undetermined { partial: partial * c, horizon },
            inf => inf,
        }
    }

    /// Sum of two disjoint pieces: divergence dominates, then ignorance.
    pub fn add(self, other: RpValue) -> Self {
        use RpValue::*;
        match (self, other) {
            (Infinite { witness }, _) | (_, Infinite { witness }) => Infinite { witness },
            (Finite { value: a }, Finite { value: b }) => Finite { value: a + b },
            (Undetermined { partial: a, horizon: h }, Undetermined { partial: b, horizon: g }) => {
                Undetermined { partial: a + b, horizon: h.min(g) }
            }
            (Undetermined { partial, horizon }, Finite { value }) | (Finite { value }, Undetermined { partial, horizon }) => {
                Undetermined { partial: partial + value, horizon }
            }
        }
    }
}

impl fmt::Display for RpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RpValue::Finite { value } => write!(f, "Finite {value:?}"),
            RpValue::Infinite { witness } => write!(f, "Infinite ({witness})"),
            RpValue::Undetermined { partial, horizon } => write!(f, "Undetermined, partial={partial:?}, horizon={horizon}"),
        }
    }
}

/// Log-domain counterpart of [`RpValue`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LogRp {
    Finite(f64),
    Infinite(DivergenceWitness),
    Undetermined { log_partial: f64, horizon: u32 },
}

impl LogRp {
    pub(crate) fn into_value(self) -> RpValue {
        match self {
            LogRp::Finite(l) => RpValue::Finite { value: l.exp() },
            LogRp::Infinite(witness) => RpValue::Infinite { witness },
            LogRp::Undetermined { log_partial, horizon } => RpValue::Undetermined { partial: log_partial.exp(), horizon },
        }
    }
}

/// `∫_from^∞` of the R_p integrand for one radial pair, decided symbolically
/// where both densities are geometric in the level.
pub(crate) fn rp_tail_log(pair: WeightPair<'_>, from: u32, p: f64, k: u64, tol: f64) -> Result<LogRp> {
    match (pair.lambda.log_linear(k), pair.mu.log_linear(k)) {
        (Some(l), Some(m)) => {
            let rate = (p * l.b - m.b - (k as f64).ln()) / (p - 1.0);
            if rate >= -RATE_TOL {
                let rate = if rate.abs() <= RATE_TOL { 0.0 } else { rate };
                return Ok(LogRp::Infinite(DivergenceWitness::NonSummableRate { rate }));
            }
            let start = l.from.max(m.from).max(from + 1);
            let offset = (p * l.a - m.a) / (p - 1.0);
            // Σ_{n >= start} e^{offset + rate·n}
            let mut logs = vec![offset + rate * start as f64 - (-rate.exp_m1()).ln()];
            if start > from + 1 {
                logs.push(rp_range_log(pair, from as f64, (start - 1) as f64, p, k, tol)?);
            }
            Ok(LogRp::Finite(log_sum_exp(&logs)))
        }
        _ => {
            let horizon = [pair.lambda.known_horizon(), pair.mu.known_horizon()].into_iter().flatten().min().unwrap_or(from);
            let log_partial = if horizon > from {
                rp_range_log(pair, from as f64, horizon as f64, p, k, tol)?
            } else {
                f64::NEG_INFINITY
            };
            Ok(LogRp::Undetermined { log_partial, horizon })
        }
    }
}

/// `∫_lo^hi` of the R_p integrand for a radial config.
pub fn rp_truncated(config: &WeightConfig, lo: f64, hi: f64) -> Result<f64> {
    if !config.is_radial() {
        return Err(Error::NonRadial);
    }
    if !(lo >= 0.0) || !(hi > lo) || !hi.is_finite() {
        return Err(Error::InvalidInterval { lo, hi, reason: "need 0 <= lo < hi < ∞".into() });
    }
    Ok(rp_range_log(config.base_pair(), lo, hi, config.p, config.branching, config.quad_tol)?.exp())
}

/// Decides whether R_p is finite for a radial config.
pub fn rp_classify(config: &WeightConfig) -> Result<RpValue> {
    if !config.is_radial() {
        return Err(Error::NonRadial);
    }
    Ok(rp_tail_log(config.base_pair(), 0, config.p, config.branching, config.quad_tol)?.into_value())
}

/// The two halves of the root split used by the pair capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The subtree through `(1,0)`.
    T1,
    /// The subtrees through the other root children.
    Complement,
}

/// Criterion integral of one side of the root split, normalized as
/// `R_p(λ_side, μ_side)/K` for T_1 and `(K-1)/K · R_p(λ_side, μ_side)` for
/// the complement, each evaluated with that side's own densities.
pub fn rp_subtree(config: &WeightConfig, which: Branch) -> Result<RpValue> {
    let k = config.branching;
    if k < 2 {
        return Err(Error::DegenerateSplit);
    }
    let pair = branch_pair(config, which)?;
    let rp = rp_tail_log(pair, 0, config.p, k, config.quad_tol)?.into_value();
    Ok(match which {
        Branch::T1 => rp.scale(1.0 / k as f64),
        Branch::Complement => rp.scale((k - 1) as f64 / k as f64),
    })
}

/// The single radial pair carried by one side of the root split.
pub fn branch_pair(config: &WeightConfig, which: Branch) -> Result<WeightPair<'_>> {
    let k = config.branching;
    let x0 = VertexId::new(1, 0);
    match which {
        Branch::T1 => {
            let inside: Vec<&Override> = config.overrides.iter().filter(|o| o.anchor.is_descendant_of(k, x0)).collect();
            match inside.as_slice() {
                [] => Ok(config.base_pair()),
                [o] if o.anchor == x0 => Ok(WeightPair { lambda: &o.lambda, mu: &o.mu }),
                _ => Err(Error::MixedSubtree("T_1 contains overrides below its top edge".into())),
            }
        }
        Branch::Complement => {
            let inside: Vec<&Override> = config.overrides.iter().filter(|o| !o.anchor.is_descendant_of(k, x0)).collect();
            if inside.is_empty() {
                return Ok(config.base_pair());
            }
            let all_top = inside.len() as u64 == k - 1 && inside.iter().all(|o| o.anchor.level == 1);
            let first = WeightPair { lambda: &inside[0].lambda, mu: &inside[0].mu };
            if all_top && inside.iter().all(|o| WeightPair { lambda: &o.lambda, mu: &o.mu } == first) {
                Ok(first)
            } else {
                Err(Error::MixedSubtree("the complement of T_1 carries more than one weight pair".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(k: u64, p: f64) -> WeightConfig {
        WeightConfig::new(k, p, RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)).unwrap()
    }

    fn halving_mu(p: f64) -> WeightConfig {
        WeightConfig::new(2, p, RadialProfile::Constant(1.0), RadialProfile::PowLevelOfK { exponent: -1.0, scale: 1.0 }).unwrap()
    }

    fn exp_family(k: u64, p: f64, eps: f64, beta: f64) -> WeightConfig {
        WeightConfig::new(
            k,
            p,
            RadialProfile::ExpLevel { rate: eps, scale: 1.0 },
            RadialProfile::ExpLevel { rate: beta, scale: 1.0 },
        )
        .unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn level_index_is_ceiling() {
        assert_eq!(level_index(0.0).unwrap(), 0);
        assert_eq!(level_index(0.5).unwrap(), 1);
        assert_eq!(level_index(1.0).unwrap(), 1);
        assert_eq!(level_index(3.2).unwrap(), 4);
        assert!(level_index(-0.1).is_err());
        assert!(level_index(f64::NAN).is_err());
    }

    #[test]
    fn unit_edges() {
        let c = edge_coefficients(&unit(2, 2.0), VertexId::new(3, 5), 1e-10).unwrap();
        assert_eq!((c.resistance(), c.mass(), c.length), (1.0, 1.0, 1.0));
    }

    #[test]
    fn halving_measure_edges() {
        let cfg = halving_mu(2.0);
        for n in 1..8u32 {
            let c = edge_coefficients(&cfg, VertexId::new(n, 0), 1e-10).unwrap();
            assert!(close(c.resistance(), 2f64.powi(n as i32), 1e-14));
            assert!(close(c.mass(), 2f64.powi(-(n as i32)), 1e-14));
        }
    }

    #[test]
    fn exponential_family_edges() {
        let (eps, beta) = (0.3, 0.9);
        for p in [1.5, 2.0, 3.0] {
            let cfg = exp_family(3, p, eps, beta);
            for n in 1..6u32 {
                let c = edge_coefficients(&cfg, VertexId::new(n, 1), 1e-10).unwrap();
                let expected = (n as f64 * (beta - eps * p) / (p - 1.0)).exp();
                assert!(close(c.resistance(), expected, 1e-13), "p={p} n={n}");
            }
        }
    }

    #[test]
    fn root_and_out_of_range_edges_rejected() {
        let cfg = unit(2, 2.0);
        assert!(edge_coefficients(&cfg, VertexId::ROOT, 1e-10).is_err());
        assert!(edge_coefficients(&cfg, VertexId::new(2, 4), 1e-10).is_err());
    }

    #[test]
    fn radial_edges_are_level_constant() {
        let cfg = exp_family(3, 2.5, 0.2, 1.4);
        for n in 1..5u32 {
            let first = edge_coefficients(&cfg, VertexId::new(n, 0), 1e-10).unwrap();
            for i in 1..3u64.pow(n) {
                assert_eq!(edge_coefficients(&cfg, VertexId::new(n, i), 1e-10).unwrap(), first);
            }
        }
    }

    #[test]
    fn truncated_integrals() {
        for m in 1..10 {
            let v = rp_truncated(&unit(2, 2.0), 0.0, m as f64).unwrap();
            assert!(close(v, 1.0 - 2f64.powi(-m), 1e-14));
            let v = rp_truncated(&halving_mu(2.0), 0.0, m as f64).unwrap();
            assert!(close(v, m as f64, 1e-14));
            let v = rp_truncated(&unit(1, 2.0), 0.0, m as f64).unwrap();
            assert!(close(v, m as f64, 1e-14));
        }
        assert!(rp_truncated(&unit(2, 2.0), 2.0, 1.0).is_err());
        assert!(rp_truncated(&unit(2, 2.0), -1.0, 1.0).is_err());
    }

    #[test]
    fn fractional_endpoints_split_levels() {
        // K=2, p=2, unit: integrand 2^{-j(t)}
        let v = rp_truncated(&unit(2, 2.0), 0.25, 1.5).unwrap();
        assert!(close(v, 0.75 * 0.5 + 0.5 * 0.25, 1e-14));
    }

    #[test]
    fn classification_of_symbolic_families() {
        assert!(close(rp_classify(&unit(2, 2.0)).unwrap().value().unwrap(), 1.0, 1e-14));
        assert!(rp_classify(&halving_mu(2.0)).unwrap().is_infinite());
        assert!(rp_classify(&unit(1, 3.0)).unwrap().is_infinite());
        for k in [2u64, 3] {
            for p in [1.5, 2.0, 3.0] {
                let eps = 0.1;
                let boundary = (k as f64).ln() + eps * p;
                match rp_classify(&exp_family(k, p, eps, boundary)).unwrap() {
                    RpValue::Infinite { witness: DivergenceWitness::NonSummableRate { rate } } => assert_eq!(rate, 0.0),
                    other => panic!("{other:?}"),
                }
                assert!(rp_classify(&exp_family(k, p, eps, boundary - 0.05)).unwrap().is_finite());
                assert!(rp_classify(&exp_family(k, p, eps, boundary + 0.05)).unwrap().is_infinite());
            }
        }
    }

    #[test]
    fn finite_value_matches_long_truncation() {
        let cfg = exp_family(2, 2.5, 0.2, 0.4);
        let full = rp_classify(&cfg).unwrap().value().unwrap();
        let partial = rp_truncated(&cfg, 0.0, 400.0).unwrap();
        assert!(close(full, partial, 1e-12), "{full} vs {partial}");
    }

    #[test]
    fn display_forms() {
        assert_eq!(RpValue::finite(1.0).to_string(), "Finite 1.0");
        let boundary = exp_family(2, 2.0, 0.1, 2f64.ln() + 0.2);
        assert_eq!(rp_classify(&boundary).unwrap().to_string(), "Infinite (non-summable rate 0)");
    }

    #[test]
    fn tables_and_unknown_tails_are_undetermined() {
        let cfg = WeightConfig::new(2, 2.0, RadialProfile::Constant(1.0), RadialProfile::PerLevelTable(vec![1.0, 0.5, 0.25])).unwrap();
        match rp_classify(&cfg).unwrap() {
            RpValue::Undetermined { partial, horizon } => {
                assert_eq!(horizon, 3);
                assert!(close(partial, 1.5, 1e-14));
            }
            other => panic!("{other:?}"),
        }
        let s = SampledProfile::from_grid(vec![0.0, 2.5], vec![1.0, 1.0], None).unwrap();
        let cfg = WeightConfig::new(2, 2.0, RadialProfile::Constant(1.0), RadialProfile::Sampled(s)).unwrap();
        match rp_classify(&cfg).unwrap() {
            RpValue::Undetermined { partial, horizon } => {
                assert_eq!(horizon, 2);
                assert!(close(partial, 0.75, 1e-10));
            }
            other => panic!("{other:?}"),
        }
        assert!(edge_coefficients(&cfg, VertexId::new(3, 0), 1e-10).is_err());
    }

    #[test]
    fn table_sums_are_exact() {
        let lam = vec![1.3, 0.7, 2.1, 0.9];
        let mu = vec![0.5, 1.9, 0.8, 1.1];
        let p = 2.5;
        let cfg = WeightConfig::new(3, p, RadialProfile::PerLevelTable(lam.clone()), RadialProfile::PerLevelTable(mu.clone())).unwrap();
        let direct: f64 = (0..4)
            .map(|i| {
                let n = (i + 1) as f64;
                lam[i].powf(p / (p - 1.0)) * mu[i].powf(1.0 / (1.0 - p)) * 3f64.powf(n / (1.0 - p))
            })
            .sum();
        assert!(close(rp_truncated(&cfg, 0.0, 4.0).unwrap(), direct, 1e-14));
        assert!(rp_truncated(&cfg, 0.0, 5.0).is_err());
    }

    #[test]
    fn sampled_profile_with_symbolic_tail() {
        // λ = 1 sampled on [0, 3] then constant: same as the constant profile.
        let s = SampledProfile::from_fn(|_| 1.0, 3.0, Some(RadialProfile::Constant(1.0))).unwrap();
        let cfg = WeightConfig::new(2, 2.0, RadialProfile::Sampled(s), RadialProfile::Constant(1.0)).unwrap();
        let v = rp_classify(&cfg).unwrap().value().unwrap();
        assert!(close(v, 1.0, 1e-10));
        let c = edge_coefficients(&cfg, VertexId::new(2, 1), 1e-10).unwrap();
        assert!(close(c.resistance(), 1.0, 1e-12));
    }

    #[test]
    fn sampled_quadrature_of_a_varying_density() {
        // λ(t) = 1 + t, μ = 1, p = 2: r over (0,1] = ∫ (1+t)^2 = 7/3, length 3/2
        let s = SampledProfile::from_fn(|t| 1.0 + t, 4.0, None).unwrap();
        let cfg = WeightConfig::new(2, 2.0, RadialProfile::Sampled(s), RadialProfile::Constant(1.0)).unwrap();
        let c = edge_coefficients(&cfg, VertexId::new(1, 0), 1e-12).unwrap();
        assert!(close(c.resistance(), 7.0 / 3.0, 1e-12));
        assert!(close(c.length, 1.5, 1e-12));
        // R_p over [0, 2] = ∫_0^1 (1+t)^2/2 + ∫_1^2 (1+t)^2/4
        let expected = (8.0 - 1.0) / 3.0 / 2.0 + (27.0 - 8.0) / 3.0 / 4.0;
        assert!(close(rp_truncated(&cfg, 0.0, 2.0).unwrap(), expected, 1e-10));
    }

    #[test]
    fn override_validation() {
        let base = unit(2, 2.0);
        let one = RadialProfile::Constant(1.0);
        assert!(base.clone().with_override(VertexId::ROOT, one.clone(), one.clone()).is_err());
        assert!(base.clone().with_override(VertexId::new(1, 2), one.clone(), one.clone()).is_err());
        let cfg = base.with_override(VertexId::new(1, 0), one.clone(), one.clone()).unwrap();
        assert!(cfg.clone().with_override(VertexId::new(2, 1), one.clone(), one.clone()).is_err());
        assert!(cfg.clone().with_override(VertexId::new(1, 0), one.clone(), one.clone()).is_err());
        assert!(cfg.with_override(VertexId::new(2, 2), one.clone(), one).is_ok());
    }

    #[test]
    fn nonradial_configs_rejected_by_radial_ops() {
        let one = RadialProfile::Constant(1.0);
        let cfg = unit(2, 2.0).with_override(VertexId::new(1, 0), one.clone(), one).unwrap();
        assert!(matches!(rp_truncated(&cfg, 0.0, 1.0), Err(Error::NonRadial)));
        assert!(matches!(rp_classify(&cfg), Err(Error::NonRadial)));
    }

    fn counterexample() -> WeightConfig {
        halving_mu(2.0).with_override(VertexId::new(1, 0), RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)).unwrap()
    }

    #[test]
    fn subtree_integrals_of_the_counterexample() {
        let cfg = counterexample();
        assert!(close(rp_subtree(&cfg, Branch::T1).unwrap().value().unwrap(), 0.5, 1e-14));
        assert!(rp_subtree(&cfg, Branch::Complement).unwrap().is_infinite());
    }

    #[test]
    fn subtree_split_is_additive_for_radial_configs() {
        for cfg in [unit(3, 2.0), exp_family(2, 3.0, 0.2, 0.5)] {
            let a = rp_subtree(&cfg, Branch::T1).unwrap().value().unwrap();
            let b = rp_subtree(&cfg, Branch::Complement).unwrap().value().unwrap();
            let total = rp_classify(&cfg).unwrap().value().unwrap();
            assert!(close(a + b, total, 1e-14));
        }
    }

    #[test]
    fn mixed_subtrees_rejected() {
        let one = RadialProfile::Constant(1.0);
        let cfg = unit(3, 2.0).with_override(VertexId::new(2, 1), one.clone(), one.clone()).unwrap();
        assert!(matches!(rp_subtree(&cfg, Branch::T1), Err(Error::MixedSubtree(_))));
        let cfg = unit(3, 2.0).with_override(VertexId::new(1, 2), one.clone(), one).unwrap();
        assert!(matches!(rp_subtree(&cfg, Branch::Complement), Err(Error::MixedSubtree(_))));
        assert!(matches!(rp_subtree(&unit(1, 2.0), Branch::T1), Err(Error::DegenerateSplit)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn table(len: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.2f64..5.0, len)
        }

        proptest! {
            #[test]
            fn truncation_is_additive(k in 1u64..4, p in 1.2f64..4.0, lam in table(8), mu in table(8), a in 0.0f64..8.0, b in 0.0f64..8.0) {
                let cfg = WeightConfig::new(k, p, RadialProfile::PerLevelTable(lam), RadialProfile::PerLevelTable(mu)).unwrap();
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                prop_assume!(a > 1e-6 && b - a > 1e-6);
                let left = rp_truncated(&cfg, 0.0, a).unwrap();
                let right = rp_truncated(&cfg, a, b).unwrap();
                let whole = rp_truncated(&cfg, 0.0, b).unwrap();
                prop_assert!((left + right - whole).abs() <= 1e-12 * whole);
            }

            #[test]
            fn density_scaling_laws(k in 1u64..4, p in 1.2f64..4.0, lam in table(6), mu in table(6), c in 0.1f64..10.0, hi in 0.5f64..6.0) {
                let cfg = WeightConfig::new(k, p, RadialProfile::PerLevelTable(lam), RadialProfile::PerLevelTable(mu)).unwrap();
                let base = rp_truncated(&cfg, 0.0, hi).unwrap();
                let mu_scaled = rp_truncated(&cfg.scaled(1.0, c).unwrap(), 0.0, hi).unwrap();
                let lam_scaled = rp_truncated(&cfg.scaled(c, 1.0).unwrap(), 0.0, hi).unwrap();
                prop_assert!((mu_scaled - base * c.powf(1.0 / (1.0 - p))).abs() <= 1e-12 * mu_scaled);
                prop_assert!((lam_scaled - base * c.powf(p / (p - 1.0))).abs() <= 1e-12 * lam_scaled);
            }
        }
    }
}

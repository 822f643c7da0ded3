//! Condenser capacities: plate-to-plate minima of the p-energy, their
//! exhaustion limits, and the pair capacities between the two halves of the
//! tree split at the root.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{classify, Verdict};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::solver::{solve_dirichlet, DirichletProblem, PotentialField, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use crate::tree::{TreeTopology, VertexId, VertexSet};
use crate::weights::{edge_coefficients, rp_tail_log, rp_truncated, LogRp, WeightConfig};

/// Relative change below which successive exhaustion samples count as
/// settled.
pub const CAUCHY_TOL: f64 = 1e-9;

/// Capacities below this count as zero.
pub const VANISHING_TOL: f64 = 1e-9;

/// Largest horizon the default schedule reaches.
pub const MAX_HORIZON: u32 = 64;

/// `(∫_n^m R_p integrand)^{1-p}`: the capacity of X^n relative to the
/// complement of X^m for radial weights.
pub fn radial_condenser_capacity(config: &WeightConfig, n: u32, m: u32) -> Result<f64> {
    if n >= m {
        return Err(Error::InvalidInterval { lo: n as f64, hi: m as f64, reason: "need n < m".into() });
    }
    Ok(rp_truncated(config, n as f64, m as f64)?.powf(1.0 - config.p()))
}

/// Plates at potential 1 (`inner`) and 0 (`outer`) inside X^horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CondenserSpec {
    pub config: WeightConfig,
    pub inner: VertexSet,
    pub outer: VertexSet,
    pub horizon: u32,
}

impl CondenserSpec {
    /// X^n against the vertices at levels `>= m`.
    pub fn exhaustion(config: &WeightConfig, n: u32, m: u32) -> Self {
        CondenserSpec { config: config.clone(), inner: VertexSet::ball(n), outer: VertexSet::beyond(m), horizon: m }
    }
}

/// Minimal energy and its minimizer.
pub fn condenser_capacity(spec: &CondenserSpec, tol: f64) -> Result<(f64, PotentialField)> {
    let topology = TreeTopology::build(spec.config.branching(), spec.horizon)?;
    if spec.inner.count(&topology) == 0 || spec.outer.count(&topology) == 0 {
        return Err(Error::InvalidProblem("both plates must meet the truncation".into()));
    }
    let plates = [(spec.inner.clone(), 1.0), (spec.outer.clone(), 0.0)];
    let problem = DirichletProblem::on_config(&spec.config, spec.horizon, &plates, false)?;
    let field = solve_dirichlet(&problem, tol, DEFAULT_MAX_SWEEPS)?;
    Ok((field.energy(), field))
}

/// Capacity of X^n relative to infinity, obtained by grounding the tree's
/// ends through the exact resistance of everything below the truncation.
/// `None` when some weights beyond the known range are needed.
pub fn capacity_to_infinity(config: &WeightConfig, n: u32, tol: f64) -> Result<Option<f64>> {
    let depth = config.overrides().iter().map(|o| o.anchor.level).max().unwrap_or(0).max(n);
    let k = config.branching();
    let mut pairs = vec![config.base_pair()];
    pairs.extend(config.overrides().iter().map(|o| config.pair_for(o.anchor)));
    for pair in pairs {
        if let LogRp::Undetermined { .. } = rp_tail_log(pair, depth, config.p(), k, config.quad_tol())? {
            return Ok(None);
        }
    }
    let network = Network::from_config(config, depth, &BTreeSet::new(), true)?;
    let problem = DirichletProblem::new(Arc::new(network), &[(VertexSet::ball(n), 1.0)])?;
    Ok(Some(solve_dirichlet(&problem, tol, DEFAULT_MAX_SWEEPS)?.energy()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacitySample {
    pub horizon: u32,
    pub value: f64,
    /// Largest flux imbalance of the minimizer.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveVerdict {
    Converged,
    Vanishing,
    Undetermined,
}

impl std::fmt::Display for CurveVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CurveVerdict::Converged => "converged",
            CurveVerdict::Vanishing => "vanishing",
            CurveVerdict::Undetermined => "undetermined",
        })
    }
}

/// Capacities of X^n against growing horizons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityCurve {
    pub n: u32,
    pub samples: Vec<CapacitySample>,
    /// Exact horizon limit, when the tail of the weights is known.
    pub limit: Option<f64>,
    /// Best estimate of the limit.
    pub estimate: f64,
    /// The limit lies in `[lower, upper]`.
    pub bracket: (f64, f64),
    pub verdict: CurveVerdict,
}

impl CapacityCurve {
    /// Samples are nonincreasing in the horizon up to `rel_tol`.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.samples.windows(2).all(|w| w[1].value <= w[0].value * (1.0 + rel_tol))
    }

    /// Relative change of the last two samples.
    pub fn last_change(&self) -> Option<f64> {
        let s = &self.samples;
        (s.len() >= 2).then(|| {
            let (a, b) = (s[s.len() - 2].value, s[s.len() - 1].value);
            (a - b).abs() / a.abs().max(f64::MIN_POSITIVE)
        })
    }

    /// Assembles a curve and its verdict from computed samples.
    pub fn assemble(config: &WeightConfig, n: u32, samples: Vec<CapacitySample>) -> Result<Self> {
        let limit = capacity_to_infinity(config, n, DEFAULT_TOL)?;
        let symbolic = classify(config).verdict;
        let last = samples.last().map(|s| s.value).unwrap_or(f64::INFINITY);
        let upper = samples.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
        let estimate = limit.unwrap_or(last);
        let mut curve = CapacityCurve { n, samples, limit, estimate, bracket: (limit.unwrap_or(0.0), upper), verdict: CurveVerdict::Undetermined };
        let cauchy = curve.last_change().is_some_and(|c| c < CAUCHY_TOL);
        curve.verdict = match symbolic {
            Verdict::Parabolic if estimate < VANISHING_TOL => CurveVerdict::Vanishing,
            Verdict::Hyperbolic if limit.is_some_and(|l| l > 0.0) || cauchy => CurveVerdict::Converged,
            _ => CurveVerdict::Undetermined,
        };
        Ok(curve)
    }
}

/// One sample per horizon; failures are kept per horizon so that callers
/// can report what was computed.
pub fn exhaustion_samples(config: &WeightConfig, n: u32, horizons: &[u32], tol: f64) -> Vec<Result<CapacitySample>> {
    horizons
        .par_iter()
        .map(|&m| {
            let (value, field) = condenser_capacity(&CondenserSpec::exhaustion(config, n, m), tol)?;
            Ok(CapacitySample { horizon: m, value, residual: field.residual() })
        })
        .collect()
}

pub fn check_horizons(n: u32, horizons: &[u32]) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::InvalidParameter { field: "horizons".into(), reason: "no horizons given".into() });
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter { field: "horizons".into(), reason: "horizons must increase strictly".into() });
    }
    if horizons[0] <= n {
        return Err(Error::InvalidParameter {
            field: "horizons".into(),
            reason: format!("every horizon must exceed n = {n}, got {}", horizons[0]),
        });
    }
    Ok(())
}

/// Capacities of X^n relative to the complement of X^m over `horizons`.
pub fn capacity_exhaustion(config: &WeightConfig, n: u32, horizons: &[u32]) -> Result<CapacityCurve> {
    check_horizons(n, horizons)?;
    let samples = exhaustion_samples(config, n, horizons, DEFAULT_TOL).into_iter().collect::<Result<Vec<_>>>()?;
    CapacityCurve::assemble(config, n, samples)
}

/// `n+1, 2(n+1), 4(n+1), …` up to the largest usable horizon.
pub fn default_horizons(config: &WeightConfig, n: u32) -> Vec<u32> {
    let cap = MAX_HORIZON.min(TreeTopology::max_depth(config.branching()));
    let mut out = Vec::new();
    let mut m = n + 1;
    while m < cap {
        out.push(m);
        m = m.saturating_mul(2);
    }
    if cap > n {
        out.push(cap);
    }
    out
}

/// Doubling schedule, stopped once successive samples agree to
/// [`CAUCHY_TOL`].
pub fn capacity_exhaustion_auto(config: &WeightConfig, n: u32) -> Result<CapacityCurve> {
    let horizons = default_horizons(config, n);
    check_horizons(n, &horizons)?;
    let mut samples: Vec<CapacitySample> = Vec::new();
    for m in horizons {
        let (value, field) = condenser_capacity(&CondenserSpec::exhaustion(config, n, m), DEFAULT_TOL)?;
        samples.push(CapacitySample { horizon: m, value, residual: field.residual() });
        if let [.., a, b] = samples.as_slice() {
            if (a.value - b.value).abs() < CAUCHY_TOL * a.value.abs() {
                break;
            }
        }
    }
    CapacityCurve::assemble(config, n, samples)
}

/// Capacity between the two halves of the tree beyond level n.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCapacityResult {
    pub n: u32,
    pub value: f64,
    pub minimizer: PotentialField,
    #[serde(skip)]
    pub problem: DirichletProblem,
    /// `(M_2, M_1)`: lower and upper bounds for the value.
    pub bounds: (f64, f64),
}

impl PairCapacityResult {
    pub fn within_bounds(&self, rel_tol: f64) -> bool {
        let (lo, hi) = self.bounds;
        self.value >= lo * (1.0 - rel_tol) && self.value <= hi * (1.0 + rel_tol)
    }
}

/// `μ(X^1) / d(E_1, F_1)^p`, where the plates' distance is the shortest
/// λ-length from the T_1 side to the other side through the root.
pub fn m1_bound(config: &WeightConfig) -> Result<f64> {
    let k = config.branching();
    if k < 2 {
        return Err(Error::DegenerateSplit);
    }
    let tol = config.quad_tol();
    let mut mass = 0.0;
    let mut other = f64::INFINITY;
    let mut own = 0.0;
    for c in 0..k {
        let e = edge_coefficients(config, VertexId::new(1, c), tol)?;
        mass += e.mass();
        if c == 0 {
            own = e.length;
        } else {
            other = other.min(e.length);
        }
    }
    Ok(mass / (own + other).powf(config.p()))
}

/// Capacity of `E_n` (levels > n inside T_1, potential 1) against `F_n`
/// (levels > n outside T_1, potential 0) with X^n free, solved on X^{n+1}.
///
/// The lower bound is `2^{-p}·min(Cap(root, E_n), Cap(root, F_n))`: the
/// minimizer's root value lies on one side of 1/2, and on the far side it
/// must climb at least half the way to the plate.
pub fn pair_capacity(config: &WeightConfig, n: u32) -> Result<PairCapacityResult> {
    pair_capacity_with_tol(config, n, DEFAULT_TOL)
}

pub fn pair_capacity_with_tol(config: &WeightConfig, n: u32, tol: f64) -> Result<PairCapacityResult> {
    let topology = TreeTopology::build(config.branching(), n + 1)?;
    let (e, f) = topology.plate_sets(n)?;
    let problem = DirichletProblem::on_config(config, n + 1, &[(e.clone(), 1.0), (f.clone(), 0.0)], false)?;
    let minimizer = solve_dirichlet(&problem, tol, DEFAULT_MAX_SWEEPS)?;
    let to_plate = |plate: VertexSet| -> Result<f64> {
        let problem = DirichletProblem::new(problem.network().clone(), &[(VertexSet::ball(0), 1.0), (plate, 0.0)])?;
        Ok(solve_dirichlet(&problem, tol, DEFAULT_MAX_SWEEPS)?.energy())
    };
    let m2 = 2f64.powf(-config.p()) * to_plate(e)?.min(to_plate(f)?);
    let m1 = m1_bound(config)?;
    Ok(PairCapacityResult { n, value: minimizer.energy(), minimizer, problem, bounds: (m2, m1) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitStep {
    pub n: u32,
    pub energy: f64,
    pub m2: f64,
    pub m1: f64,
    pub root_value: f64,
    /// Sup-distance on the window to the previous step's minimizer.
    pub sup_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitDiagnostics {
    pub window: u32,
    pub steps: Vec<LimitStep>,
    /// Whether the sup-distances decrease strictly.
    pub cauchy_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitHarmonic {
    pub n: u32,
    pub field: PotentialField,
    #[serde(skip)]
    pub problem: DirichletProblem,
    /// The last minimizer's values on X^window, vertex by vertex.
    pub window_values: Vec<(VertexId, f64)>,
    pub diagnostics: LimitDiagnostics,
}

/// Largest window whose vertices are listed individually.
const MAX_WINDOW_VERTICES: u64 = 1 << 20;

/// Pair-capacity minimizers `u_n`, `n = window..=n_max`, compared on X^window.
/// The sequence approximates a bounded nonconstant p-harmonic function on
/// the whole tree.
pub fn limit_harmonic(config: &WeightConfig, n_max: u32, window: u32) -> Result<LimitHarmonic> {
    if config.branching() < 2 {
        return Err(Error::DegenerateSplit);
    }
    let verdict = classify(config).verdict;
    if verdict != Verdict::Hyperbolic {
        return Err(Error::Precondition(format!(
            "the construction needs a p-hyperbolic tree, but the weights classify as {verdict}; pair capacities degenerate to 0"
        )));
    }
    if window == 0 || window >= n_max {
        return Err(Error::InvalidParameter {
            field: "window".into(),
            reason: format!("need 1 <= window < n_max, got window {window}, n_max {n_max}"),
        });
    }
    let ball = TreeTopology::build(config.branching(), window)?;
    if ball.vertex_count() > MAX_WINDOW_VERTICES {
        return Err(Error::InvalidParameter { field: "window".into(), reason: format!("X^{window} has too many vertices to list") });
    }
    let vertices: Vec<VertexId> = ball.vertices().collect();
    let results: Vec<PairCapacityResult> =
        (window..=n_max).into_par_iter().map(|n| pair_capacity(config, n)).collect::<Result<Vec<_>>>()?;
    let restricted: Vec<Vec<f64>> = results
        .iter()
        .map(|r| vertices.iter().map(|v| r.minimizer.value(*v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let steps: Vec<LimitStep> = results
        .iter()
        .enumerate()
        .map(|(i, r)| LimitStep {
            n: r.n,
            energy: r.value,
            m2: r.bounds.0,
            m1: r.bounds.1,
            root_value: restricted[i][0],
            sup_delta: (i > 0).then(|| {
                restricted[i].iter().zip(&restricted[i - 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            }),
        })
        .collect();
    let deltas: Vec<f64> = steps.iter().filter_map(|s| s.sup_delta).collect();
    let cauchy_decreasing = deltas.windows(2).all(|w| w[1] < w[0]);
    let last = results.into_iter().last().expect("n_max > window");
    let window_values = vertices.into_iter().zip(restricted.last().expect("nonempty").iter().copied()).collect();
    Ok(LimitHarmonic {
        n: n_max,
        field: last.minimizer,
        problem: last.problem,
        window_values,
        diagnostics: LimitDiagnostics { window, steps, cauchy_decreasing },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::RadialProfile;

    fn unit(k: u64, p: f64) -> WeightConfig {
        WeightConfig::new(k, p, RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)).unwrap()
    }

    fn halving(p: f64) -> WeightConfig {
        WeightConfig::new(2, p, RadialProfile::Constant(1.0), RadialProfile::PowLevelOfK { exponent: -1.0, scale: 1.0 }).unwrap()
    }

    fn counterexample() -> WeightConfig {
        halving(2.0).with_override(VertexId::new(1, 0), RadialProfile::Constant(1.0), RadialProfile::Constant(1.0)).unwrap()
    }

    #[test]
    fn radial_closed_forms() {
        let cfg = unit(2, 2.0);
        assert!((radial_condenser_capacity(&cfg, 0, 1).unwrap() - 2.0).abs() < 1e-14);
        assert!((radial_condenser_capacity(&cfg, 0, 2).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        for m in 1..10 {
            assert!((radial_condenser_capacity(&unit(1, 2.0), 0, m).unwrap() - 1.0 / m as f64).abs() < 1e-14);
        }
        assert!(radial_condenser_capacity(&cfg, 2, 2).is_err());
    }

    #[test]
    fn solved_condensers_match_closed_forms() {
        for (k, p) in [(2, 1.5), (2, 2.0), (3, 3.0), (3, 1.5)] {
            let cfg = WeightConfig::new(k, p, RadialProfile::ExpLevel { rate: 0.2, scale: 1.3 }, RadialProfile::ExpLevel { rate: 0.5, scale: 0.7 }).unwrap();
            for (n, m) in [(0, 1), (0, 5), (2, 7)] {
                let (value, field) = condenser_capacity(&CondenserSpec::exhaustion(&cfg, n, m), 1e-12).unwrap();
                let exact = radial_condenser_capacity(&cfg, n, m).unwrap();
                assert!((value - exact).abs() < 1e-8 * exact, "K={k} p={p} n={n} m={m}");
                let (lo, hi) = field.range();
                assert!(lo >= 0.0 && hi <= 1.0);
            }
        }
    }

    #[test]
    fn pair_capacity_of_the_binary_tree() {
        let r = pair_capacity(&unit(2, 2.0), 1).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.minimizer.value(VertexId::ROOT).unwrap() - 0.5).abs() < 1e-12);
        assert!((r.minimizer.value(VertexId::new(1, 0)).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((r.minimizer.value(VertexId::new(1, 1)).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!((r.bounds.1 - 0.5).abs() < 1e-14);
        assert!(r.within_bounds(1e-12));
        let r2 = pair_capacity(&unit(2, 2.0), 2).unwrap();
        assert!(r2.value <= r.value);
    }

    #[test]
    fn pair_capacity_rejects_degenerate_inputs() {
        assert!(matches!(pair_capacity(&unit(1, 2.0), 1), Err(Error::DegenerateSplit)));
        assert!(pair_capacity(&unit(2, 2.0), 0).is_err());
    }

    #[test]
    fn exhaustion_of_the_unit_tree_converges_to_one() {
        let cfg = unit(2, 2.0);
        let horizons: Vec<u32> = (1..=10).collect();
        let curve = capacity_exhaustion(&cfg, 0, &horizons).unwrap();
        for s in &curve.samples {
            assert!((s.value - 1.0 / (1.0 - 2f64.powi(-(s.horizon as i32)))).abs() < 1e-10);
        }
        assert!(curve.is_monotone(1e-12));
        assert!((curve.limit.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(curve.verdict, CurveVerdict::Converged);
    }

    #[test]
    fn exhaustion_of_a_parabolic_tree_vanishes() {
        let curve = capacity_exhaustion_auto(&halving(2.0), 0).unwrap();
        for s in &curve.samples {
            assert!((s.value - 1.0 / s.horizon as f64).abs() < 1e-10);
        }
        assert_eq!(curve.limit, Some(0.0));
        assert_eq!(curve.verdict, CurveVerdict::Vanishing);
        let ray = capacity_exhaustion(&unit(1, 2.0), 0, &[1, 2, 4, 8]).unwrap();
        assert_eq!(ray.verdict, CurveVerdict::Vanishing);
    }

    #[test]
    fn invalid_horizons_rejected() {
        let cfg = unit(2, 2.0);
        assert!(capacity_exhaustion(&cfg, 0, &[]).is_err());
        assert!(capacity_exhaustion(&cfg, 0, &[2, 2]).is_err());
        assert!(capacity_exhaustion(&cfg, 3, &[3, 4]).is_err());
    }

    #[test]
    fn default_schedule_doubles() {
        assert_eq!(default_horizons(&unit(2, 2.0), 0), vec![1, 2, 4, 8, 16, 32, 63]);
        assert_eq!(default_horizons(&unit(3, 2.0), 1), vec![2, 4, 8, 16, 32, 40]);
    }

    #[test]
    fn counterexample_keeps_positive_capacity() {
        let cfg = counterexample();
        let limit = capacity_to_infinity(&cfg, 0, 1e-12).unwrap().unwrap();
        assert!((limit - 0.5).abs() < 1e-12);
        let horizons: Vec<u32> = (1..=20).collect();
        let curve = capacity_exhaustion(&cfg, 0, &horizons).unwrap();
        for s in &curve.samples {
            let m = s.horizon as f64;
            let expected = 1.0 / (2.0 - 2f64.powf(1.0 - m)) + 1.0 / (2.0 * m);
            assert!((s.value - expected).abs() < 1e-10, "m={m}");
        }
        assert_eq!(curve.verdict, CurveVerdict::Converged);
    }

    #[test]
    fn unknown_tails_have_no_exact_limit() {
        let cfg = WeightConfig::new(2, 2.0, RadialProfile::Constant(1.0), RadialProfile::PerLevelTable(vec![1.0; 6])).unwrap();
        assert_eq!(capacity_to_infinity(&cfg, 0, 1e-12).unwrap(), None);
        let curve = capacity_exhaustion(&cfg, 0, &[1, 2, 4, 6]).unwrap();
        assert_eq!(curve.verdict, CurveVerdict::Undetermined);
    }

    #[test]
    fn limit_harmonic_on_the_binary_tree() {
        let out = limit_harmonic(&unit(2, 2.0), 8, 3).unwrap();
        assert!(out.diagnostics.cauchy_decreasing);
        let root = out.field.value(VertexId::ROOT).unwrap();
        assert!(root > 0.0 && root < 1.0);
        for s in &out.diagnostics.steps {
            assert!(s.m2 > 0.0 && s.m2 <= s.energy && s.energy <= s.m1);
        }
        assert!(matches!(limit_harmonic(&halving(2.0), 8, 3), Err(Error::Precondition(_))));
        assert!(limit_harmonic(&unit(2, 2.0), 3, 3).is_err());
    }
}

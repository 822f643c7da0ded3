//! CSV exports. Each schema carries a version tag that output headers
//! repeat, so that consumers notice column changes.

use std::io::Write;

use crate::capacity::{CapacityCurve, LimitDiagnostics};
use crate::classify::PhaseResult;
use crate::error::Result;
use crate::solver::FieldRow;

pub const CURVE_SCHEMA: &str = "treecap.capacity_curve/v1";
pub const PHASE_SCHEMA: &str = "treecap.phase_map/v1";
pub const FIELD_SCHEMA: &str = "treecap.field/v1";
pub const LIMIT_SCHEMA: &str = "treecap.limit_harmonic/v1";

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Columns `horizon,capacity,residual`.
pub fn write_curve_csv<W: Write>(out: W, curve: &CapacityCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["horizon", "capacity", "residual"])?;
    for s in &curve.samples {
        w.write_record([s.horizon.to_string(), num(s.value), num(s.residual)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `epsilon,beta,verdict,doubling_flag`.
pub fn write_phase_csv<W: Write>(out: W, points: &[PhaseResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epsilon", "beta", "verdict", "doubling_flag"])?;
    for r in points {
        w.write_record([num(r.point.epsilon), num(r.point.beta), r.verdict.to_string(), r.doubling.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `level,index,multiplicity,value`; a row with multiplicity > 1
/// stands for that many vertices sharing the value, `index` being the
/// smallest of them.
pub fn write_field_csv<W: Write>(out: W, rows: &[FieldRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "index", "multiplicity", "value"])?;
    for r in rows {
        w.write_record([r.level.to_string(), r.index.to_string(), r.multiplicity.to_string(), num(r.value)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `n,energy,m2,m1,root_value,sup_delta` (empty `sup_delta` on the
/// first row).
pub fn write_limit_csv<W: Write>(out: W, diagnostics: &LimitDiagnostics) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "energy", "m2", "m1", "root_value", "sup_delta"])?;
    for s in &diagnostics.steps {
        w.write_record([
            s.n.to_string(),
            num(s.energy),
            num(s.m2),
            num(s.m1),
            num(s.root_value),
            s.sup_delta.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{CapacitySample, CurveVerdict};
    use crate::classify::{PhasePoint, Verdict};

    #[test]
    fn curve_rows() {
        let curve = CapacityCurve {
            n: 0,
            samples: vec![CapacitySample { horizon: 1, value: 2.0, residual: 0.0 }, CapacitySample { horizon: 2, value: 4.0 / 3.0, residual: 1e-15 }],
            limit: Some(1.0),
            estimate: 1.0,
            bracket: (1.0, 4.0 / 3.0),
            verdict: CurveVerdict::Converged,
        };
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "horizon,capacity,residual\n1,2.0,0.0\n2,1.3333333333333333,1e-15\n");
    }

    #[test]
    fn phase_rows() {
        let point = PhasePoint { k: 2, p: 2.0, epsilon: 0.1, beta: 0.5 };
        let r = PhaseResult { point, verdict: Verdict::Hyperbolic, rp_verdict: Verdict::Hyperbolic, doubling: false };
        let mut buf = Vec::new();
        write_phase_csv(&mut buf, &[r]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epsilon,beta,verdict,doubling_flag\n0.1,0.5,Hyperbolic,false\n");
    }
}

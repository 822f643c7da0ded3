//! TOML weight configurations.
//!
//! ```toml
//! K = 2
//! p = 2.0
//!
//! [lambda]
//! family = "constant"
//! value = 1.0
//!
//! [mu]
//! family = "pow_level_of_k"
//! exponent = -1.0
//!
//! [[overrides]]
//! anchor = [1, 0]
//! lambda = { family = "constant", value = 1.0 }
//! mu = { family = "constant", value = 1.0 }
//! ```
//!
//! Families: `constant` (`value`), `exp_level` (`rate`, `scale`: value
//! `scale·e^{-rate·t}`), `pow_level_of_k` (`exponent`, `scale`: value
//! `scale·K^{exponent·j(t)}`), `per_level_table` (`values`, one per level,
//! nothing known beyond), `sampled` (`t`, `values`, optional symbolic
//! `tail`). `scale` defaults to 1; `quad_tol` is optional.

use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::tree::VertexId;
use crate::weights::{RadialProfile, SampledProfile, WeightConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "K")]
    k: Spanned<u64>,
    p: Spanned<f64>,
    lambda: Spanned<RawProfile>,
    mu: Spanned<RawProfile>,
    #[serde(default)]
    overrides: Vec<Spanned<RawOverride>>,
    quad_tol: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverride {
    anchor: (u32, u64),
    lambda: RawProfile,
    mu: RawProfile,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum RawProfile {
    Constant {
        value: f64,
    },
    ExpLevel {
        rate: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    PowLevelOfK {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    PerLevelTable {
        values: Vec<f64>,
    },
    Sampled {
        t: Vec<f64>,
        values: Vec<f64>,
        tail: Option<Box<RawProfile>>,
    },
}

impl RawProfile {
    fn build(self) -> Result<RadialProfile> {
        Ok(match self {
            RawProfile::Constant { value } => RadialProfile::Constant(value),
            RawProfile::ExpLevel { rate, scale } => RadialProfile::ExpLevel { rate, scale },
            RawProfile::PowLevelOfK { exponent, scale } => RadialProfile::PowLevelOfK { exponent, scale },
            RawProfile::PerLevelTable { values } => RadialProfile::PerLevelTable(values),
            RawProfile::Sampled { t, values, tail } => {
                let tail = tail.map(|t| t.build()).transpose()?;
                RadialProfile::Sampled(SampledProfile::from_grid(t, values, tail)?)
            }
        })
    }
}

struct Source<'a>(&'a str);

impl Source<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let before = &self.0[..offset.min(self.0.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, column)
    }

    /// Key of the `key = value` line holding `offset`, if any.
    fn key_at(&self, offset: usize) -> Option<String> {
        let offset = offset.min(self.0.len());
        let start = self.0[..offset].rfind('\n').map_or(0, |i| i + 1);
        let end = self.0[offset..].find('\n').map_or(self.0.len(), |i| offset + i);
        let line = &self.0[start..end];
        let (key, _) = line.split_once('=')?;
        let key = key.trim().trim_matches('"');
        (!key.is_empty() && !key.starts_with('[')).then(|| key.to_string())
    }

    fn error(&self, span: Range<usize>, field: &str, message: impl Into<String>) -> Error {
        let (line, column) = self.position(span.start);
        Error::Config { line, column, field: field.into(), message: message.into() }
    }
}

fn describe(e: Error) -> String {
    match e {
        Error::InvalidParameter { reason, .. } => reason,
        other => other.to_string(),
    }
}

/// Parses a TOML document into a validated configuration.
pub fn parse_config(text: &str) -> Result<WeightConfig> {
    let src = Source(text);
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        let field = src.key_at(span.start).unwrap_or_else(|| "<document>".into());
        src.error(span, &field, e.message().trim())
    })?;

    let lambda_span = raw.lambda.span();
    let mu_span = raw.mu.span();
    let lambda = raw.lambda.into_inner().build().map_err(|e| src.error(lambda_span.clone(), "lambda", describe(e)))?;
    let mu = raw.mu.into_inner().build().map_err(|e| src.error(mu_span.clone(), "mu", describe(e)))?;
    let k = *raw.k.get_ref();
    let p = *raw.p.get_ref();
    let mut config = WeightConfig::new(k, p, lambda, mu).map_err(|e| {
        let (span, field) = match &e {
            Error::InvalidBranching(_) => (raw.k.span(), "K"),
            Error::InvalidParameter { field, .. } if field.starts_with("lambda") => (lambda_span.clone(), "lambda"),
            Error::InvalidParameter { field, .. } if field.starts_with("mu") => (mu_span.clone(), "mu"),
            _ => (raw.p.span(), "p"),
        };
        src.error(span, field, describe(e))
    })?;
    if let Some(tol) = raw.quad_tol {
        let span = tol.span();
        config = config.with_quad_tol(*tol.get_ref()).map_err(|e| src.error(span, "quad_tol", describe(e)))?;
    }
    for (i, o) in raw.overrides.into_iter().enumerate() {
        let span = o.span();
        let field = format!("overrides[{i}]");
        let o = o.into_inner();
        let anchor = VertexId::new(o.anchor.0, o.anchor.1);
        let lambda = o.lambda.build().map_err(|e| src.error(span.clone(), &format!("{field}.lambda"), describe(e)))?;
        let mu = o.mu.build().map_err(|e| src.error(span.clone(), &format!("{field}.mu"), describe(e)))?;
        config = config.with_override(anchor, lambda, mu).map_err(|e| src.error(span.clone(), &field, describe(e)))?;
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<WeightConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: &str = "K = 2\np = 2.0\n[lambda]\nfamily = \"constant\"\nvalue = 1.0\n[mu]\nfamily = \"constant\"\nvalue = 1.0\n";

    fn config_error(text: &str) -> (usize, String, String) {
        match parse_config(text) {
            Err(Error::Config { line, field, message, .. }) => (line, field, message),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_unit_weights() {
        let c = parse_config(UNIT).unwrap();
        assert_eq!(c.branching(), 2);
        assert_eq!(c.p(), 2.0);
        assert_eq!(*c.lambda(), RadialProfile::Constant(1.0));
        assert!(c.is_radial());
    }

    #[test]
    fn parses_every_family_and_overrides() {
        let text = r#"
K = 3
p = 1.5
quad_tol = 1e-9

[lambda]
family = "exp_level"
rate = 0.1

[mu]
family = "sampled"
t = [0.0, 1.0, 2.0]
values = [1.0, 0.5, 0.25]
tail = { family = "pow_level_of_k", exponent = -2.0, scale = 4.0 }

[[overrides]]
anchor = [1, 2]
lambda = { family = "per_level_table", values = [1.0, 2.0, 3.0] }
mu = { family = "constant", value = 2.0 }
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(*c.lambda(), RadialProfile::ExpLevel { rate: 0.1, scale: 1.0 });
        assert_eq!(c.quad_tol(), 1e-9);
        assert_eq!(c.overrides().len(), 1);
        assert_eq!(c.overrides()[0].anchor, VertexId::new(1, 2));
        assert_eq!(c.mu().name(), "sampled");
    }

    #[test]
    fn syntax_errors_cite_line() {
        let (line, _, _) = config_error("K = 2\np = \n");
        assert_eq!(line, 2);
    }

    #[test]
    fn unknown_and_missing_fields() {
        let (line, field, message) = config_error(&format!("{UNIT}extra = 3\n"));
        assert!(message.contains("extra"), "{message}");
        assert!(line >= 1, "{field}");
        let (_, _, message) = config_error("K = 2\n[lambda]\nfamily = \"constant\"\nvalue = 1.0\n[mu]\nfamily = \"constant\"\nvalue = 1.0\n");
        assert!(message.contains('p'), "{message}");
        let (_, _, message) = config_error(&UNIT.replace("\"constant\"\nvalue = 1.0\n[mu]", "\"wavy\"\nvalue = 1.0\n[mu]"));
        assert!(message.contains("wavy"), "{message}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let (line, field, _) = config_error(&UNIT.replace("p = 2.0", "p = 1.0"));
        assert_eq!((line, field.as_str()), (2, "p"));
        let (line, field, _) = config_error(&UNIT.replace("K = 2", "K = 0"));
        assert_eq!((line, field.as_str()), (1, "K"));
        let (_, field, _) = config_error(&UNIT.replacen("value = 1.0", "value = -1.0", 1));
        assert_eq!(field, "lambda");
        let text = format!("{UNIT}[[overrides]]\nanchor = [0, 0]\nlambda = {{ family = \"constant\", value = 1.0 }}\nmu = {{ family = \"constant\", value = 1.0 }}\n");
        let (line, field, _) = config_error(&text);
        assert_eq!(field, "overrides[0]");
        assert!(line >= 9);
    }

    #[test]
    fn serialized_configs_round_trip() {
        let c = parse_config(UNIT)
            .unwrap()
            .with_override(VertexId::new(2, 1), RadialProfile::ExpLevel { rate: 0.3, scale: 2.0 }, RadialProfile::PerLevelTable(vec![1.0, 0.5]))
            .unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}

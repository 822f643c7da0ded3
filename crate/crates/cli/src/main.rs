mod manifest;
mod verify;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use treecap_core::capacity::{check_horizons, default_horizons, exhaustion_samples, CapacityCurve, CapacitySample};
use treecap_core::classify::{classify, classify_with_evidence, liouville_audit, phase_map, Verdict};
use treecap_core::report::{self, write_curve_csv, write_field_csv, write_limit_csv, write_phase_csv};
use treecap_core::solver::DEFAULT_TOL;
use treecap_core::{limit_harmonic, load_config, rp_classify, rp_truncated, Error, RpValue, WeightConfig};

use manifest::RunManifest;

const EXIT_USAGE: u8 = 1;
const EXIT_UNDETERMINED: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "treecap", version, about = "Parabolicity, capacities and p-harmonic functions on weighted regular trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Criterion integral R_p, or its truncation to [lo, hi]
    Rp(RpArgs),
    /// Capacities of X^n against growing horizons
    Capacity(CapacityArgs),
    /// Parabolic / hyperbolic verdict with evidence
    Classify(ClassifyArgs),
    /// Phase map of the exponential family λ = e^{-ε·t}, μ = e^{-β·t}
    Phase(PhaseArgs),
    /// Limit of the pair-capacity minimizers, with an audit of the result
    Harmonic(HarmonicArgs),
    /// Invariant battery on small truncations of a config
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Output {
    /// Write here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct RpArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, requires = "hi")]
    lo: Option<f64>,
    #[arg(long, requires = "lo")]
    hi: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CapacityArgs {
    #[arg(long)]
    config: PathBuf,
    /// Inner plate X^n
    #[arg(long, default_value_t = 0)]
    n: u32,
    /// `a..b` (inclusive) or a comma list; defaults to a doubling schedule
    #[arg(long)]
    horizons: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Attach the n = 0 capacity curve
    #[arg(long)]
    evidence: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long = "K", alias = "k")]
    k: u64,
    #[arg(long)]
    p: f64,
    /// ε grid and β grid, each `lo:hi:count` or a comma list
    #[arg(long, num_args = 2, value_names = ["EPSILON", "BETA"], required = true)]
    grid: Vec<String>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct HarmonicArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    n_max: u32,
    #[arg(long)]
    window: u32,
    /// Audit tolerance for the interior flux residual
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Also write the final field, one row per vertex class
    #[arg(long)]
    field_out: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[command(flatten)]
    output: Output,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. } | Error::Quadrature { .. } => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: EXIT_USAGE, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

type Run = Result<u8, Failure>;

/// Output sink with the schema and manifest header.
struct Doc {
    sink: Box<dyn Write>,
    format: Format,
    schema: &'static str,
    manifest: RunManifest,
}

impl Doc {
    fn open(output: &Output, schema: &'static str, manifest: RunManifest) -> Result<Self, Failure> {
        let manifest = manifest.output(output.out.as_deref()).param("format", if output.format == Format::Csv { "csv" } else { "json" });
        let sink: Box<dyn Write> = match &output.out {
            Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?)),
            None => Box::new(BufWriter::new(io::stdout())),
        };
        let mut doc = Doc { sink, format: output.format, schema, manifest };
        if doc.format == Format::Csv {
            writeln!(doc.sink, "# schema: {}", doc.schema)?;
            writeln!(doc.sink, "# manifest: {}", doc.manifest.to_json())?;
        }
        Ok(doc)
    }

    fn json(&mut self, result: impl Serialize) -> Result<(), Failure> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            schema: &'a str,
            manifest: &'a RunManifest,
            result: T,
        }
        let env = Envelope { schema: self.schema, manifest: &self.manifest, result };
        serde_json::to_writer_pretty(&mut self.sink, &env).map_err(|e| usage(e.to_string()))?;
        writeln!(self.sink)?;
        Ok(())
    }

    fn comment(&mut self, line: impl std::fmt::Display) -> Result<(), Failure> {
        writeln!(self.sink, "# {line}")?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), Failure> {
        self.sink.flush()?;
        Ok(())
    }
}

fn load(path: &Path) -> Result<WeightConfig, Failure> {
    load_config(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn parse_horizons(text: &str) -> Result<Vec<u32>, Failure> {
    let bad = || usage(format!("cannot read horizons `{text}`: expected `a..b` or `a,b,c`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = || usage(format!("cannot read grid `{text}`: expected `lo:hi:count` or `a,b,c`"));
    let parts: Vec<&str> = text.split(':').collect();
    if let [lo, hi, count] = parts.as_slice() {
        let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
        let count: usize = count.parse().map_err(|_| bad())?;
        return match count {
            0 => Err(bad()),
            1 => Ok(vec![lo]),
            _ => Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()),
        };
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn cmd_rp(args: RpArgs) -> Run {
    let config = load(&args.config)?;
    let value = match (args.lo, args.hi) {
        (Some(lo), Some(hi)) => RpValue::finite(rp_truncated(&config, lo, hi)?),
        _ if config.is_radial() => rp_classify(&config)?,
        _ => classify(&config).rp.ok_or_else(|| {
            usage("the split sides carry several weight regions, so no single R_p exists; use `treecap classify`")
        })?,
    };
    let manifest = RunManifest::new("rp").with_config(&args.config, &config).param("lo", args.lo).param("hi", args.hi);
    let mut doc = Doc::open(&args.output, "treecap.rp/v1", manifest)?;
    match doc.format {
        Format::Csv => writeln!(doc.sink, "{value}")?,
        Format::Json => doc.json(value)?,
    }
    doc.finish()?;
    Ok(if matches!(value, RpValue::Undetermined { .. }) { EXIT_UNDETERMINED } else { 0 })
}

fn cmd_capacity(args: CapacityArgs) -> Run {
    let config = load(&args.config)?;
    let horizons = match &args.horizons {
        Some(text) => parse_horizons(text)?,
        None => default_horizons(&config, args.n),
    };
    check_horizons(args.n, &horizons)?;
    if !(args.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let manifest = RunManifest::new("capacity")
        .with_config(&args.config, &config)
        .param("n", args.n)
        .param("horizons", &horizons)
        .param("tol", args.tol);
    let results = exhaustion_samples(&config, args.n, &horizons, args.tol);
    let mut samples: Vec<CapacitySample> = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(s) if failure.is_none() => samples.push(s),
            Ok(_) => {}
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let mut doc = Doc::open(&args.output, report::CURVE_SCHEMA, manifest)?;
    if let Some(e) = failure {
        let partial = CapacityCurve { n: args.n, samples, limit: None, estimate: f64::NAN, bracket: (0.0, f64::INFINITY), verdict: treecap_core::CurveVerdict::Undetermined };
        match doc.format {
            Format::Csv => {
                write_curve_csv(&mut doc.sink, &partial)?;
                doc.comment(format_args!("error: {e}"))?;
            }
            Format::Json => doc.json(serde_json::json!({ "partial": partial, "error": e.to_string() }))?,
        }
        doc.finish()?;
        return Err(Failure { code: EXIT_NUMERICAL, message: e.to_string() });
    }
    let curve = CapacityCurve::assemble(&config, args.n, samples)?;
    match doc.format {
        Format::Csv => {
            write_curve_csv(&mut doc.sink, &curve)?;
            doc.comment(format_args!("verdict: {}", curve.verdict))?;
            match curve.limit {
                Some(l) => doc.comment(format_args!("limit: {l}"))?,
                None => doc.comment("limit: unknown")?,
            }
            doc.comment(format_args!("bracket: [{}, {}]", curve.bracket.0, curve.bracket.1))?;
        }
        Format::Json => doc.json(&curve)?,
    }
    doc.finish()?;
    Ok(0)
}

fn cmd_classify(args: ClassifyArgs) -> Run {
    let config = load(&args.config)?;
    let result = if args.evidence { classify_with_evidence(&config) } else { classify(&config) };
    let manifest = RunManifest::new("classify").with_config(&args.config, &config).param("evidence", args.evidence);
    let mut doc = Doc::open(&args.output, "treecap.classify/v1", manifest)?;
    match doc.format {
        Format::Csv => {
            writeln!(doc.sink, "verdict: {}", result.verdict)?;
            match &result.rp {
                Some(rp) => writeln!(doc.sink, "R_p: {rp}")?,
                None => writeln!(doc.sink, "R_p: not defined for this split")?,
            }
            for b in &result.branches {
                let rp = b.rp.map_or_else(|| "mixed".to_string(), |r| r.to_string());
                writeln!(doc.sink, "branch {:?}: {rp} -> {}", b.branch, b.verdict)?;
            }
            if let Some(c) = &result.curve {
                let limit = c.limit.map_or_else(|| "unknown".to_string(), |l| l.to_string());
                writeln!(doc.sink, "capacity n=0: {} (limit {limit}, bracket [{}, {}])", c.verdict, c.bracket.0, c.bracket.1)?;
            }
            for note in &result.notes {
                writeln!(doc.sink, "note: {note}")?;
            }
        }
        Format::Json => doc.json(&result)?,
    }
    doc.finish()?;
    Ok(if result.verdict == Verdict::Undetermined { EXIT_UNDETERMINED } else { 0 })
}

fn cmd_phase(args: PhaseArgs) -> Run {
    let eps = parse_grid(&args.grid[0])?;
    let beta = parse_grid(&args.grid[1])?;
    let map = phase_map(args.k, args.p, &eps, &beta)?;
    let manifest = RunManifest::new("phase").param("K", args.k).param("p", args.p).param("epsilon", &eps).param("beta", &beta);
    let mut doc = Doc::open(&args.output, report::PHASE_SCHEMA, manifest)?;
    match doc.format {
        Format::Csv => write_phase_csv(&mut doc.sink, &map)?,
        Format::Json => doc.json(&map)?,
    }
    doc.finish()?;
    if let Some(bad) = map.iter().find(|r| !r.agrees()) {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!(
                "closed form and criterion integral disagree at ε={}, β={}: {} vs {}",
                bad.point.epsilon, bad.point.beta, bad.verdict, bad.rp_verdict
            ),
        });
    }
    Ok(0)
}

fn cmd_harmonic(args: HarmonicArgs) -> Run {
    let config = load(&args.config)?;
    let limit = limit_harmonic(&config, args.n_max, args.window)?;
    let audit = liouville_audit(&config, &limit, args.tol)?;
    let manifest = RunManifest::new("harmonic")
        .with_config(&args.config, &config)
        .param("n_max", args.n_max)
        .param("window", args.window)
        .param("tol", args.tol)
        .output(args.field_out.as_deref());
    if let Some(path) = &args.field_out {
        let mut f = BufWriter::new(File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?);
        writeln!(f, "# schema: {}", report::FIELD_SCHEMA)?;
        writeln!(f, "# manifest: {}", manifest.to_json())?;
        write_field_csv(&mut f, &limit.field.rows())?;
        f.flush()?;
    }
    let mut doc = Doc::open(&args.output, report::LIMIT_SCHEMA, manifest)?;
    match doc.format {
        Format::Csv => {
            write_limit_csv(&mut doc.sink, &limit.diagnostics)?;
            for item in &audit.items {
                doc.comment(format_args!("audit {}: {} ({})", item.name, if item.passed { "PASS" } else { "FAIL" }, item.detail))?;
            }
        }
        Format::Json => doc.json(serde_json::json!({ "diagnostics": limit.diagnostics, "window_values": limit.window_values, "audit": audit }))?,
    }
    doc.finish()?;
    let failed = audit.failures().next().map(|item| Failure {
        code: EXIT_NUMERICAL,
        message: format!("audit item `{}` failed: {}", item.name, item.detail),
    });
    failed.map_or(Ok(0), Err)
}

fn cmd_verify(args: VerifyArgs) -> Run {
    let config = load(&args.config)?;
    let checks = verify::battery(&config, args.seed, args.cases)?;
    let mut manifest = RunManifest::new("verify").with_config(&args.config, &config).param("cases", args.cases);
    manifest.seed = Some(args.seed);
    let mut doc = Doc::open(&args.output, "treecap.verify/v1", manifest)?;
    match doc.format {
        Format::Csv => {
            for c in &checks {
                writeln!(doc.sink, "{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
            }
        }
        Format::Json => doc.json(&checks)?,
    }
    doc.finish()?;
    match checks.iter().find(|c| !c.passed) {
        Some(c) => Err(Failure { code: EXIT_NUMERICAL, message: format!("invariant `{}` failed: {}", c.name, c.detail) }),
        None => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Rp(a) => cmd_rp(a),
        Command::Capacity(a) => cmd_capacity(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Phase(a) => cmd_phase(a),
        Command::Harmonic(a) => cmd_harmonic(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("treecap: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! The pieces behind the `cbdp` command: table and sweep data, CSV output,
//! and the subcommand drivers.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{parse_pipeline, run_pipeline};
use crate::distributions::Dist1D;
use crate::divergences::closed::{
    alpha_to_renyi, lin_renyi_upper_gaussian, lin_renyi_upper_laplace, renyi_gaussian_exact, renyi_laplace_exact,
    renyi_laplace_lower, BoundKind,
};
use crate::divergences::variational::{restricted_alpha, FunctionClass};
use crate::error::{Error, Result};
use crate::mechanisms::{MechanismConfig, PrivacyReport};
use crate::verify::{run_suite, summary, table1, CheckResult, Status, Suite};

/// Significant digits in every CSV number.
pub const CSV_DIGITS: usize = 7;

/// Formats `x` with [`CSV_DIGITS`] significant digits: fixed notation for
/// moderate magnitudes, exponent notation otherwise.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..7).contains(&exp) {
        let decimals = (CSV_DIGITS as i32 - 1 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new digit (9.9999999 → 10.000000)
        let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
        let significant = digits.trim_start_matches('0').len();
        if significant > CSV_DIGITS && decimals > 0 {
            return format!("{x:.prec$}", prec = decimals - 1);
        }
        s
    } else {
        format!("{x:.prec$e}", prec = CSV_DIGITS - 1)
    }
}

/// Writes rows as LF-terminated CSV.
fn write_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

// ---------------------------------------------------------------------------
// table

/// The privacy-parameter table as CSV with columns
/// `divergence, mechanism, class, value, bound_kind`.
pub fn table1_csv(eps: f64, sigma: f64, alpha: f64, dim: usize) -> Result<String> {
    let rows: Vec<Vec<String>> = table1(eps, sigma, alpha, dim)?
        .into_iter()
        .map(|r| vec![r.divergence, r.mechanism, r.class, format_number(r.value), r.bound_kind.to_string()])
        .collect();
    write_csv(&["divergence", "mechanism", "class", "value", "bound_kind"], &rows)
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    Laplace { eps: f64 },
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SweepClass {
    Lin,
    Poly(usize),
    Unrestricted,
}

impl std::fmt::Display for SweepClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepClass::Lin => f.write_str("lin"),
            SweepClass::Poly(k) => write!(f, "poly:{k}"),
            SweepClass::Unrestricted => f.write_str("unrestricted"),
        }
    }
}

impl std::str::FromStr for SweepClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lin" => Ok(SweepClass::Lin),
            "unrestricted" | "all" => Ok(SweepClass::Unrestricted),
            t => {
                let k = t
                    .strip_prefix("poly:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|k| *k >= 1)
                    .ok_or_else(|| Error::Parse(format!("unknown class `{s}`; expected lin, poly:K or unrestricted")))?;
                Ok(SweepClass::Poly(k))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

/// Which Rényi curves to compute over a grid of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub noise: Noise,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub steps: usize,
    pub classes: Vec<SweepClass>,
    /// `Exact` is the class's own value (closed form or converged dual),
    /// `Upper` the analytic linear bound, `Lower` the analytic Laplace bound.
    pub curves: Vec<BoundKind>,
    pub spacing: Spacing,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 1.0) {
            return Err(Error::invalid("alpha_min", format!("must be > 1, got {}", self.alpha_min)));
        }
        if !(self.alpha_max >= self.alpha_min) || !self.alpha_max.is_finite() {
            return Err(Error::invalid("alpha_max", format!("must be finite and >= alpha_min, got {}", self.alpha_max)));
        }
        if self.steps < 2 {
            return Err(Error::invalid("steps", format!("must be >= 2, got {}", self.steps)));
        }
        if self.classes.is_empty() || self.curves.is_empty() {
            return Err(Error::invalid("classes", "need at least one class and one curve"));
        }
        let noise = match self.noise {
            Noise::Laplace { eps } => eps,
            Noise::Gaussian { sigma } => sigma,
        };
        if !(noise > 0.0) || !noise.is_finite() {
            return Err(Error::invalid("noise", format!("must be positive, got {noise}")));
        }
        Ok(())
    }

    /// Grid of orders from `alpha_min` to `alpha_max` inclusive.
    pub fn alphas(&self) -> Vec<f64> {
        let n = self.steps - 1;
        (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                match self.spacing {
                    Spacing::Log => (self.alpha_min.ln() * (1.0 - t) + self.alpha_max.ln() * t).exp(),
                    Spacing::Linear => self.alpha_min * (1.0 - t) + self.alpha_max * t,
                }
            })
            .map(|a| a.max(self.alpha_min).min(self.alpha_max))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub class: SweepClass,
    pub value: f64,
    pub bound_kind: BoundKind,
    pub converged: bool,
}

fn point(noise: Noise, class: SweepClass, curve: BoundKind, alpha: f64, tol: f64) -> Result<Option<SweepPoint>> {
    let v = [1.0];
    let closed = |value: f64, bound_kind| {
        Ok(Some(SweepPoint {
            alpha,
            class,
            value,
            bound_kind,
            converged: true,
        }))
    };
    match (class, curve, noise) {
        (SweepClass::Unrestricted, BoundKind::Exact, Noise::Laplace { eps }) => {
            closed(renyi_laplace_exact(alpha, eps, &v)?.value, BoundKind::Exact)
        }
        (SweepClass::Unrestricted, BoundKind::Exact, Noise::Gaussian { sigma }) => {
            closed(renyi_gaussian_exact(alpha, sigma, &v)?.value, BoundKind::Exact)
        }
        (SweepClass::Unrestricted, BoundKind::Lower, Noise::Laplace { eps }) => {
            closed(renyi_laplace_lower(alpha, eps, &v)?.value, BoundKind::Lower)
        }
        (SweepClass::Lin, BoundKind::Upper, _) if alpha <= 2.0 => Ok(None),
        (SweepClass::Lin, BoundKind::Upper, Noise::Laplace { eps }) => {
            closed(lin_renyi_upper_laplace(alpha, eps, &v)?.value, BoundKind::Upper)
        }
        (SweepClass::Lin, BoundKind::Upper, Noise::Gaussian { sigma }) => {
            closed(lin_renyi_upper_gaussian(alpha, sigma, &v)?.value, BoundKind::Upper)
        }
        (SweepClass::Lin | SweepClass::Poly(_), BoundKind::Exact, _) => {
            let (p, q) = match noise {
                Noise::Laplace { eps } => (Dist1D::laplace(1.0, 1.0 / eps)?, Dist1D::laplace(0.0, 1.0 / eps)?),
                Noise::Gaussian { sigma } => (Dist1D::gaussian(1.0, sigma)?, Dist1D::gaussian(0.0, sigma)?),
            };
            let fc = match class {
                SweepClass::Poly(k) => FunctionClass::poly(k)?,
                _ => FunctionClass::linear(1)?,
            };
            let sol = restricted_alpha(&p, &q, &fc, alpha, tol)?;
            Ok(Some(SweepPoint {
                alpha,
                class,
                value: alpha_to_renyi(alpha, sol.objective_value.max(0.0))?,
                // a dual value only ever bounds the restricted divergence from below
                bound_kind: BoundKind::Lower,
                converged: sol.converged,
            }))
        }
        _ => Ok(None),
    }
}

/// Computes every requested curve on the grid, ordered by class, then
/// order, then bound kind. Curves that do not exist for a class or order
/// (such as the linear bound at α ≤ 2) are skipped.
pub fn sweep(spec: &SweepSpec, tol: f64) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &class in &spec.classes {
        for &curve in &spec.curves {
            for alpha in spec.alphas() {
                jobs.push((class, curve, alpha));
            }
        }
    }
    let points: Vec<Option<SweepPoint>> = jobs
        .par_iter()
        .map(|&(class, curve, alpha)| point(spec.noise, class, curve, alpha, tol))
        .collect::<Result<_>>()?;
    let mut points: Vec<SweepPoint> = points.into_iter().flatten().collect();
    points.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.bound_kind.cmp(&b.bound_kind))
    });
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                format_number(p.alpha),
                p.class.to_string(),
                format_number(p.value),
                p.bound_kind.to_string(),
                p.converged.to_string(),
            ]
        })
        .collect();
    write_csv(&["alpha", "class", "value", "bound_kind", "converged"], &rows)
}

/// Parses a comma-separated list of classes.
pub fn parse_classes(s: &str) -> Result<Vec<SweepClass>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

/// Parses a comma-separated list of curves: `exact`, `upper`, `lower`.
pub fn parse_curves(s: &str) -> Result<Vec<BoundKind>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match t.trim() {
            "exact" => Ok(BoundKind::Exact),
            "upper" => Ok(BoundKind::Upper),
            "lower" => Ok(BoundKind::Lower),
            other => Err(Error::Parse(format!("unknown curve `{other}`; expected exact, upper or lower"))),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// mechanisms and pipelines

/// Runs the configured mechanism on every row of the data CSV; row `i`
/// uses seed `seed + i`. Output is one CSV row per input row, no header.
pub fn mechanism_csv(config: &Path, data: &Path, seed: u64, zero_noise: bool) -> Result<String> {
    let text = read(config)?;
    let base = config.parent().unwrap_or_else(|| Path::new("."));
    let mech = MechanismConfig::from_json(&text)?.build(base)?.with_zero_noise(zero_noise);
    let text = read(data)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let input = record?
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let out = mech.run(&input, seed.wrapping_add(i as u64))?;
        rows.push(out.into_iter().map(format_number).collect::<Vec<_>>());
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", data.display())));
    }
    let mut s = String::new();
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

/// Runs a JSON pipeline file; relative paths inside it resolve against its
/// directory.
pub fn accountant(pipeline: &Path, tol: f64) -> Result<PrivacyReport> {
    let steps = parse_pipeline(&read(pipeline)?)?;
    let base = pipeline.parent().unwrap_or_else(|| Path::new("."));
    run_pipeline(&steps, base, tol)
}

/// Runs a suite (or `all`), returning its results in id order.
pub fn verify(suite: &str, seed: u64, budget: usize, tol: f64) -> Result<Vec<CheckResult>> {
    if suite == "all" {
        return Ok(Suite::ALL.iter().flat_map(|s| run_suite(*s, seed, budget, tol)).collect());
    }
    Ok(run_suite(suite.parse()?, seed, budget, tol))
}

/// JSON-lines rendering of check results.
pub fn json_lines(results: &[CheckResult]) -> Result<String> {
    let mut s = String::new();
    for r in results {
        writeln!(s, "{}", serde_json::to_string(r)?).expect("writing to a string");
    }
    Ok(s)
}

pub fn any_failed(results: &[CheckResult]) -> bool {
    results.iter().any(|r| r.status == Status::Fail)
}

pub fn verify_summary(results: &[CheckResult]) -> String {
    summary(results)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

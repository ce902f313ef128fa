//! Integral probability metrics, the Pinsker-type inequality for restricted
//! KL, and the generalization-gap experiment on finite instance spaces.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::Discrete;
use crate::divergences::variational::{ClassKind, FunctionClass};
use crate::error::{Error, Result};
use crate::optim::{self, Concave, Settings};

/// Statistical queries on a finite instance space, as value tables
/// `values[q][x] ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFamily {
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl QueryFamily {
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() || values.is_empty() {
            return Err(Error::invalid("values", "need at least one instance and one query"));
        }
        for row in &values {
            if row.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("values", "query values must lie in [0, 1]"));
            }
        }
        Ok(QueryFamily { labels, values })
    }

    /// Instances labelled `0, 1, …`.
    pub fn from_tables(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.first().map_or(0, Vec::len);
        Self::new((0..n).map(|i| i.to_string()).collect(), values)
    }

    pub fn instances(&self) -> usize {
        self.labels.len()
    }

    pub fn queries(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, q: usize, x: usize) -> f64 {
        self.values[q][x]
    }

    /// The evaluation class `{h_x : q ↦ q(x)}` on query space.
    pub fn eval_class(&self) -> EvalClass {
        let tables = (0..self.instances())
            .map(|x| self.values.iter().map(|row| row[x]).collect())
            .collect();
        EvalClass {
            tables,
            negation_closed: true,
        }
    }
}

/// Functions `g + c` on a finite space, with `g` in the convex hull of the
/// tables (and their negations, when closed under negation) and the offset
/// `c` restricted so the range stays inside `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalClass {
    pub tables: Vec<Vec<f64>>,
    #[serde(default = "yes")]
    pub negation_closed: bool,
}

fn yes() -> bool {
    true
}

impl EvalClass {
    pub fn new(tables: Vec<Vec<f64>>) -> Result<Self> {
        let c = EvalClass {
            tables,
            negation_closed: true,
        };
        c.validate(None)?;
        Ok(c)
    }

    /// Drops the negated tables, so only `conv{h_k}` is used.
    pub fn one_sided(mut self) -> Self {
        self.negation_closed = false;
        self
    }

    fn validate(&self, len: Option<usize>) -> Result<()> {
        let first = self.tables.first().ok_or_else(|| Error::invalid("tables", "need at least one table"))?;
        let m = len.unwrap_or(first.len());
        for t in &self.tables {
            if t.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: t.len() });
            }
            if t.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::invalid("tables", "table values must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    /// Extreme points of the hull part.
    fn extremes(&self) -> Vec<Vec<f64>> {
        let mut out = self.tables.clone();
        if self.negation_closed {
            out.extend(self.tables.iter().map(|t| t.iter().map(|v| -v).collect()));
        }
        out
    }
}

/// A bounded adversary class on a finite output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundedClass {
    /// Every function with range `[−1, 1]`.
    AllFunctions,
    Eval(EvalClass),
}

impl BoundedClass {
    /// The range-clipped version of a function class on `support`. Linear
    /// functions of a scalar become the hull of the rescaled coordinate;
    /// feature classes need features with range in `[−1, 1]`.
    pub fn from_function_class(class: &FunctionClass, support: &[f64]) -> Result<Self> {
        match class.kind() {
            ClassKind::AllFunctions => Ok(BoundedClass::AllFunctions),
            ClassKind::Linear(1) | ClassKind::Poly(1) => {
                let (lo, hi) = (support[0], support[support.len() - 1]);
                let table = if hi > lo {
                    support.iter().map(|x| (2.0 * x - lo - hi) / (hi - lo)).collect()
                } else {
                    vec![0.0; support.len()]
                };
                Ok(BoundedClass::Eval(EvalClass::new(vec![table])?))
            }
            ClassKind::FiniteFeatures { features, .. } => {
                let tables = features.iter().map(|f| support.iter().map(|x| f(&[*x])).collect()).collect();
                Ok(BoundedClass::Eval(EvalClass::new(tables)?))
            }
            _ => Err(Error::Unsupported(format!(
                "range-clipped {class} is not finitely generated; use an evaluation class"
            ))),
        }
    }

    pub fn is_closed_under_negation(&self) -> bool {
        match self {
            BoundedClass::AllFunctions => true,
            BoundedClass::Eval(e) => e.negation_closed,
        }
    }

    pub fn is_convex(&self) -> bool {
        true
    }
}

fn check_pair(p: &Discrete, q: &Discrete) -> Result<()> {
    if p.support() != q.support() {
        return Err(Error::invalid("q", "P and Q must share a support"));
    }
    Ok(())
}

fn diffs(p: &Discrete, q: &Discrete) -> Vec<f64> {
    p.probs().iter().zip(q.probs()).map(|(a, b)| a - b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sup_h |E_P h − E_Q h|`.
pub fn ipm(p: &Discrete, q: &Discrete, class: &BoundedClass) -> Result<f64> {
    check_pair(p, q)?;
    let d = diffs(p, q);
    Ok(match class {
        BoundedClass::AllFunctions => d.iter().map(|x| x.abs()).sum(),
        BoundedClass::Eval(e) => {
            e.validate(Some(d.len()))?;
            e.extremes().iter().map(|t| dot(&d, t).abs()).fold(0.0, f64::max)
        }
    })
}

/// `sup_h E_P h − E_Q h`, without the absolute value. Offsets cancel, so
/// the supremum is over the hull's extreme points (or the sign pattern of
/// `P − Q` for the unrestricted class), together with `h = 0`.
pub fn ipm_signed(p: &Discrete, q: &Discrete, class: &BoundedClass) -> Result<f64> {
    check_pair(p, q)?;
    let d = diffs(p, q);
    Ok(match class {
        BoundedClass::AllFunctions => d.iter().map(|x| x.max(0.0) - x.min(0.0)).sum(),
        BoundedClass::Eval(e) => {
            e.validate(Some(d.len()))?;
            let hull = e.extremes().iter().map(|t| dot(&d, t)).fold(f64::NEG_INFINITY, f64::max);
            // the zero function is in the class when negation closed
            if e.negation_closed {
                hull.max(0.0)
            } else {
                hull
            }
        }
    })
}

fn check_ac(p: &Discrete, q: &Discrete) -> Result<()> {
    for ((x, a), b) in p.support().iter().zip(p.probs()).zip(q.probs()) {
        if *a > 0.0 && *b == 0.0 {
            return Err(Error::AbsoluteContinuity { at: *x });
        }
    }
    Ok(())
}

/// Barrier form of `sup E_P h − E_Q e^{h−1}` over an [`EvalClass`].
/// Variables `(a⁺, a⁻, c)` with `h = Σ (a⁺_k − a⁻_k) t_k + c`, and linear
/// constraints `a± ≥ 0`, `Σ a⁺ + Σ a⁻ ≤ 1`, `−1 ≤ h ≤ 1`.
struct ClippedKl<'a> {
    p: &'a [f64],
    q: &'a [f64],
    tables: &'a [Vec<f64>],
    negation: bool,
    /// rows `(offset, gradient)` with slack `offset + gradient · z`
    constraints: Vec<(f64, Vec<f64>)>,
    mu: f64,
}

impl<'a> ClippedKl<'a> {
    fn new(p: &'a [f64], q: &'a [f64], class: &'a EvalClass) -> Self {
        let k = class.tables.len();
        let negation = class.negation_closed;
        let nv = if negation { 2 * k + 1 } else { k + 1 };
        let mut constraints = Vec::new();
        for i in 0..nv - 1 {
            let mut g = vec![0.0; nv];
            g[i] = 1.0;
            constraints.push((0.0, g));
        }
        let mut g = vec![-1.0; nv];
        g[nv - 1] = 0.0;
        constraints.push((1.0, g));
        let mut me = ClippedKl {
            p,
            q,
            tables: &class.tables,
            negation,
            constraints,
            mu: 1.0,
        };
        for j in 0..p.len() {
            let u = me.direction(j);
            me.constraints.push((1.0, u.iter().map(|v| -v).collect()));
            me.constraints.push((1.0, u));
        }
        me
    }

    fn nv(&self) -> usize {
        let k = self.tables.len();
        if self.negation {
            2 * k + 1
        } else {
            k + 1
        }
    }

    /// `∂h_j/∂z`.
    fn direction(&self, j: usize) -> Vec<f64> {
        let k = self.tables.len();
        let mut u = Vec::with_capacity(self.nv());
        u.extend(self.tables.iter().map(|t| t[j]));
        if self.negation {
            u.extend(self.tables.iter().map(|t| -t[j]));
        }
        u.push(1.0);
        debug_assert_eq!(u.len(), if self.negation { 2 * k + 1 } else { k + 1 });
        u
    }

    fn h(&self, z: &[f64], j: usize) -> f64 {
        dot(&self.direction(j), z)
    }

    fn kl_value(&self, z: &[f64]) -> f64 {
        (0..self.p.len())
            .map(|j| {
                let h = self.h(z, j);
                self.p[j] * h - self.q[j] * (h - 1.0).exp()
            })
            .sum()
    }

    fn start(&self) -> Vec<f64> {
        // a⁺ = a⁻ (so g = 0) using half of the weight budget, c = 0
        let nv = self.nv();
        let w = 0.5 / (nv - 1) as f64;
        let mut z = vec![w; nv];
        z[nv - 1] = 0.0;
        if !self.negation {
            // g = Σ w t_k needs room for the offset; shrink it
            for v in z.iter_mut().take(nv - 1) {
                *v *= 0.5;
            }
        }
        z
    }
}

impl Concave for ClippedKl<'_> {
    fn dim(&self) -> usize {
        self.nv()
    }

    fn value_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let nv = self.nv();
        let mut grad = vec![0.0; nv];
        let mut value = 0.0;
        for (off, g) in &self.constraints {
            let s = off + dot(g, z);
            if !(s > 0.0) {
                return Ok((f64::NEG_INFINITY, grad));
            }
            value += self.mu * s.ln();
            for (gi, ci) in grad.iter_mut().zip(g) {
                *gi += self.mu * ci / s;
            }
        }
        for j in 0..self.p.len() {
            let u = self.direction(j);
            let h = dot(&u, z);
            let e = self.q[j] * (h - 1.0).exp();
            value += self.p[j] * h - e;
            for (gi, ui) in grad.iter_mut().zip(&u) {
                *gi += (self.p[j] - e) * ui;
            }
        }
        Ok((value, grad))
    }

    fn hessian(&self, z: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let nv = self.nv();
        let mut hm = DMatrix::zeros(nv, nv);
        for (off, g) in &self.constraints {
            let s = off + dot(g, z);
            let w = self.mu / (s * s);
            for a in 0..nv {
                for b in 0..nv {
                    hm[(a, b)] -= w * g[a] * g[b];
                }
            }
        }
        for j in 0..self.p.len() {
            let u = self.direction(j);
            let e = self.q[j] * (dot(&u, z) - 1.0).exp();
            for a in 0..nv {
                for b in 0..nv {
                    hm[(a, b)] -= e * u[a] * u[b];
                }
            }
        }
        Ok(Some(hm))
    }
}

/// Restricted KL `sup_h E_P h − E_Q e^{h−1}` over a bounded class, with
/// an upper bound on how far below the supremum the value may be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictedKl {
    pub value: f64,
    pub gap: f64,
}

/// Duality-gap target of the barrier method.
pub const BARRIER_GAP: f64 = 1e-11;

/// Restricted KL for a bounded class. The unrestricted class separates
/// across atoms (`h = clamp(1 + log(p/q), −1, 1)`); evaluation classes are
/// solved by a log-barrier interior-point method.
pub fn restricted_kl_bounded(p: &Discrete, q: &Discrete, class: &BoundedClass) -> Result<RestrictedKl> {
    check_pair(p, q)?;
    check_ac(p, q)?;
    match class {
        BoundedClass::AllFunctions => {
            let value = p
                .probs()
                .iter()
                .zip(q.probs())
                .filter(|(_, b)| **b > 0.0)
                .map(|(a, b)| {
                    let h = if *a > 0.0 { (1.0 + (a / b).ln()).clamp(-1.0, 1.0) } else { -1.0 };
                    a * h - b * (h - 1.0).exp()
                })
                .sum();
            Ok(RestrictedKl { value, gap: 0.0 })
        }
        BoundedClass::Eval(e) => {
            e.validate(Some(p.len()))?;
            let mut obj = ClippedKl::new(p.probs(), q.probs(), e);
            let n_con = obj.constraints.len() as f64;
            let mut z = obj.start();
            // barrier Hessians are badly conditioned near the boundary, so
            // each stage stops on the Newton decrement rather than the gradient
            let settings = Settings {
                tol: 1e-9,
                max_iter: 500,
                relative: true,
                ..Settings::default()
            };
            loop {
                let out = optim::maximize(&obj, z.clone(), &settings)?;
                if out.value.is_finite() {
                    z = out.x;
                }
                if obj.mu * n_con <= BARRIER_GAP {
                    break;
                }
                obj.mu *= 0.1;
            }
            Ok(RestrictedKl {
                value: obj.kl_value(&z),
                gap: obj.mu * n_con,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerCheck {
    pub ipm: f64,
    pub kl_restricted: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `IPM^H(P, Q) ≤ 8 √(KL^H(P, Q))`. The KL value is a feasible
/// (hence lower) value, which only makes the check stricter.
pub fn pinsker_check(p: &Discrete, q: &Discrete, class: &BoundedClass) -> Result<PinskerCheck> {
    if !class.is_closed_under_negation() {
        return Err(Error::ClassCondition("the class must be closed under negation".into()));
    }
    let kl = restricted_kl_bounded(p, q, class)?.value.max(0.0);
    let ipm = ipm(p, q, class)?;
    let bound = 8.0 * kl.sqrt();
    Ok(PinskerCheck {
        ipm,
        kl_restricted: kl,
        bound,
        holds: ipm <= bound + 1e-9,
    })
}

/// A failed inequality, kept with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub class: BoundedClass,
    pub check: PinskerCheck,
}

/// Writes counterexamples as a JSON array.
pub fn write_counterexamples(path: &Path, found: &[Counterexample]) -> Result<()> {
    let text = serde_json::to_string_pretty(found)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generalization

/// Query-selection rules. Each depends on the sample only through the
/// sample means of the queries, so it is exchangeable in the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    /// Ignores the data.
    Constant { probs: Vec<f64> },
    /// `P(q) ∝ exp(mean_S(q) / temperature)`.
    Softmax { temperature: f64 },
    /// The query with the highest sample mean, lowest index on ties.
    Argmax,
}

impl Selector {
    /// Distribution over queries given per-instance counts of a sample.
    pub fn select(&self, family: &QueryFamily, counts: &[usize]) -> Result<Vec<f64>> {
        let n: usize = counts.iter().sum();
        let means: Vec<f64> = (0..family.queries())
            .map(|q| counts.iter().enumerate().map(|(x, c)| *c as f64 * family.value(q, x)).sum::<f64>() / n as f64)
            .collect();
        match self {
            Selector::Constant { probs } => {
                if probs.len() != family.queries() {
                    return Err(Error::DimensionMismatch {
                        expected: family.queries(),
                        got: probs.len(),
                    });
                }
                Discrete::on_indices(probs.clone())?;
                Ok(probs.clone())
            }
            Selector::Softmax { temperature } => {
                if !(*temperature > 0.0) {
                    return Err(Error::invalid("temperature", "must be positive"));
                }
                let top = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = means.iter().map(|m| ((m - top) / temperature).exp()).collect();
                let t: f64 = w.iter().sum();
                Ok(w.iter().map(|x| x / t).collect())
            }
            Selector::Argmax => {
                let mut best = 0;
                for (i, m) in means.iter().enumerate() {
                    if *m > means[best] {
                        best = i;
                    }
                }
                let mut out = vec![0.0; means.len()];
                out[best] = 1.0;
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationConfig {
    pub family: QueryFamily,
    pub selector: Selector,
    /// Data distribution over the instances.
    pub data: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationResult {
    pub gap: f64,
    pub std_error: f64,
    pub epsilon_hkl: f64,
    pub bound: f64,
    pub holds: bool,
}

/// All count vectors of `n` draws over `k` instances.
fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn normalized(probs: Vec<f64>) -> Result<Discrete> {
    let t: f64 = probs.iter().sum();
    let mut probs: Vec<f64> = probs.iter().map(|x| x / t).collect();
    let rest: f64 = probs[1..].iter().sum();
    probs[0] = (1.0 - rest).max(0.0);
    Discrete::on_indices(probs)
}

/// `max KL^H(M(S), M(S'))` over neighbouring samples, `H` the evaluation
/// class of the family. Neighbours move one draw between instances; by
/// exchangeability only count vectors matter. A pair without absolute
/// continuity gives `+∞`.
pub fn epsilon_hkl(family: &QueryFamily, selector: &Selector, n: usize) -> Result<f64> {
    let k = family.instances();
    let class = BoundedClass::Eval(family.eval_class());
    let counts = compositions(n, k);
    let mut pairs = Vec::new();
    for c in &counts {
        for from in 0..k {
            if c[from] == 0 {
                continue;
            }
            for to in 0..k {
                if to != from {
                    let mut d = c.clone();
                    d[from] -= 1;
                    d[to] += 1;
                    pairs.push((c.clone(), d));
                }
            }
        }
    }
    let values: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|(c, d)| {
            let p = normalized(selector.select(family, c)?)?;
            let q = normalized(selector.select(family, d)?)?;
            match restricted_kl_bounded(&p, &q, &class) {
                Ok(r) => Ok(r.value.max(0.0)),
                Err(Error::AbsoluteContinuity { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut eps: f64 = 0.0;
    for v in values {
        eps = eps.max(v?);
    }
    Ok(eps)
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Monte Carlo estimate of `E[(1/n) Σ q_S(x_i) − E_D q_S]` against the bound
/// `8 √ε`. The expectation over the selector is taken exactly for each
/// sample; trials use independent streams derived from `seed`.
pub fn generalization_experiment(
    family: &QueryFamily,
    selector: &Selector,
    data: &Discrete,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<GeneralizationResult> {
    let k = family.instances();
    if data.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: data.len() });
    }
    if n == 0 || trials < 2 {
        return Err(Error::invalid("trials", "need n >= 1 and at least two trials"));
    }
    let pop: Vec<f64> = (0..family.queries())
        .map(|q| (0..k).map(|x| data.probs()[x] * family.value(q, x)).sum())
        .collect();
    let per_trial: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut counts = vec![0usize; k];
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = k - 1;
                for (x, p) in data.probs().iter().enumerate() {
                    acc += p;
                    if u < acc {
                        idx = x;
                        break;
                    }
                }
                counts[idx] += 1;
            }
            let sel = selector.select(family, &counts)?;
            Ok((0..family.queries())
                .map(|q| {
                    let mean = counts.iter().enumerate().map(|(x, c)| *c as f64 * family.value(q, x)).sum::<f64>()
                        / n as f64;
                    sel[q] * (mean - pop[q])
                })
                .sum())
        })
        .collect();
    let xs = per_trial.into_iter().collect::<Result<Vec<f64>>>()?;
    let m = trials as f64;
    let gap = compensated_sum(&xs) / m;
    let sq: Vec<f64> = xs.iter().map(|x| (x - gap).powi(2)).collect();
    let std_error = (compensated_sum(&sq) / (m - 1.0) / m).sqrt();
    let eps = epsilon_hkl(family, selector, n)?;
    let bound = 8.0 * eps.sqrt();
    Ok(GeneralizationResult {
        gap,
        std_error,
        epsilon_hkl: eps,
        bound,
        holds: gap.abs() <= bound + 3.0 * std_error,
    })
}

impl GeneralizationConfig {
    pub fn run(&self) -> Result<GeneralizationResult> {
        let data = Discrete::on_indices(self.data.clone())?;
        generalization_experiment(&self.family, &self.selector, &data, self.n, self.trials, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::closed::DivergenceSpec;
    use crate::divergences::variational::brute_force_divergence;
    use approx::assert_abs_diff_eq;

    fn d(probs: &[f64]) -> Discrete {
        Discrete::on_indices(probs.to_vec()).unwrap()
    }

    fn random_discrete(rng: &mut ChaCha8Rng, k: usize) -> Discrete {
        normalized((0..k).map(|_| rng.random_range(0.02..1.0)).collect()).unwrap()
    }

    fn random_eval(rng: &mut ChaCha8Rng, k: usize) -> EvalClass {
        let m = rng.random_range(1..=3);
        EvalClass::new((0..m).map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect()).collect()).unwrap()
    }

    /// A family of four queries on four instances, used by the experiments.
    pub(crate) fn family4() -> QueryFamily {
        QueryFamily::from_tables(vec![
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.5, 0.0],
            vec![0.2, 0.4, 0.6, 0.8],
            vec![1.0, 1.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn ipm_examples() {
        let p = d(&[0.3, 0.7]);
        assert_eq!(ipm(&p, &p, &BoundedClass::AllFunctions).unwrap(), 0.0);
        assert_abs_diff_eq!(ipm(&d(&[1.0, 0.0]), &d(&[0.5, 0.5]), &BoundedClass::AllFunctions).unwrap(), 1.0);
        let h = BoundedClass::Eval(EvalClass::new(vec![vec![0.0, 1.0]]).unwrap());
        assert_abs_diff_eq!(ipm(&d(&[0.5, 0.5]), &d(&[0.25, 0.75]), &h).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn all_functions_ipm_is_twice_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (p, q) = (random_discrete(&mut rng, 5), random_discrete(&mut rng, 5));
            let tv = brute_force_divergence(&p, &q, DivergenceSpec::Tv).unwrap();
            assert_abs_diff_eq!(ipm(&p, &q, &BoundedClass::AllFunctions).unwrap(), 2.0 * tv, epsilon = 1e-12);
        }
    }

    #[test]
    fn signed_and_absolute_suprema_agree_under_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut differs = 0;
        for _ in 0..100 {
            let k = rng.random_range(2..=5);
            let (p, q) = (random_discrete(&mut rng, k), random_discrete(&mut rng, k));
            let e = random_eval(&mut rng, k);
            for c in [BoundedClass::AllFunctions, BoundedClass::Eval(e.clone())] {
                assert_abs_diff_eq!(ipm(&p, &q, &c).unwrap(), ipm_signed(&p, &q, &c).unwrap(), epsilon = 1e-15);
            }
            // without negation the two can differ
            let one = BoundedClass::Eval(e.one_sided());
            let (a, s) = (ipm(&p, &q, &one).unwrap(), ipm_signed(&p, &q, &one).unwrap());
            assert!(s <= a + 1e-15);
            if s < a - 1e-9 {
                differs += 1;
            }
        }
        assert!(differs > 0);
    }

    #[test]
    fn ipm_grows_with_the_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = rng.random_range(2..=5);
            let (p, q) = (random_discrete(&mut rng, k), random_discrete(&mut rng, k));
            let big = random_eval(&mut rng, k);
            let small = EvalClass::new(big.tables[..1].to_vec()).unwrap();
            let a = ipm(&p, &q, &BoundedClass::Eval(small)).unwrap();
            let b = ipm(&p, &q, &BoundedClass::Eval(big)).unwrap();
            let c = ipm(&p, &q, &BoundedClass::AllFunctions).unwrap();
            assert!(a <= b + 1e-15 && b <= c + 1e-15);
        }
    }

    #[test]
    fn clipped_kl_matches_a_grid_search() {
        // one table: maximize over (a, c) on a fine grid of the feasible set
        let p = d(&[0.5, 0.5]);
        let q = d(&[0.25, 0.75]);
        let t = vec![0.0, 1.0];
        let r = restricted_kl_bounded(&p, &q, &BoundedClass::Eval(EvalClass::new(vec![t.clone()]).unwrap())).unwrap();
        let mut best = f64::NEG_INFINITY;
        let steps = 2000;
        for i in 0..=steps {
            let a = -1.0 + 2.0 * i as f64 / steps as f64;
            let (lo, hi) = (-1.0 - a.min(0.0), 1.0 - a.max(0.0));
            for j in 0..=steps {
                let c = lo + (hi - lo) * j as f64 / steps as f64;
                let v: f64 = (0..2)
                    .map(|x| {
                        let h = a * t[x] + c;
                        p.probs()[x] * h - q.probs()[x] * (h - 1.0).exp()
                    })
                    .sum();
                best = best.max(v);
            }
        }
        assert!(r.value >= best - 1e-9, "{} vs {best}", r.value);
        assert!(r.value <= best + 1e-5, "{} vs {best}", r.value);
    }

    #[test]
    fn clipped_kl_below_unrestricted() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let k = rng.random_range(2..=5);
            let (p, q) = (random_discrete(&mut rng, k), random_discrete(&mut rng, k));
            let e = restricted_kl_bounded(&p, &q, &BoundedClass::Eval(random_eval(&mut rng, k))).unwrap();
            let all = restricted_kl_bounded(&p, &q, &BoundedClass::AllFunctions).unwrap();
            let kl = brute_force_divergence(&p, &q, DivergenceSpec::Kl).unwrap();
            assert!(e.value <= all.value + 1e-9 && all.value <= kl + 1e-12);
            assert!(e.value >= -1e-10);
        }
    }

    #[test]
    fn pinsker_examples() {
        let p = d(&[0.5, 0.5]);
        let c = pinsker_check(&p, &p, &BoundedClass::AllFunctions).unwrap();
        assert_eq!(c.ipm, 0.0);
        assert!(c.bound.abs() < 1e-12 && c.holds);
        let span = BoundedClass::from_function_class(&FunctionClass::linear(1).unwrap(), &[0.0, 1.0]).unwrap();
        let c = pinsker_check(&p, &d(&[0.25, 0.75]), &span).unwrap();
        assert!(c.holds, "{c:?}");
        assert_abs_diff_eq!(c.ipm, 0.5, epsilon = 1e-15);
        assert!(matches!(
            pinsker_check(&d(&[0.5, 0.5]), &d(&[1.0, 0.0]), &BoundedClass::AllFunctions),
            Err(Error::AbsoluteContinuity { .. })
        ));
    }

    #[test]
    fn pinsker_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut found = Vec::new();
        for i in 0..1000 {
            let k = rng.random_range(2..=5);
            let (p, q) = (random_discrete(&mut rng, k), random_discrete(&mut rng, k));
            let class = if i % 2 == 0 {
                BoundedClass::AllFunctions
            } else {
                BoundedClass::Eval(random_eval(&mut rng, k))
            };
            let check = pinsker_check(&p, &q, &class).unwrap();
            if !check.holds {
                found.push(Counterexample {
                    p: p.probs().to_vec(),
                    q: q.probs().to_vec(),
                    class,
                    check,
                });
            }
        }
        assert!(found.is_empty(), "{}", serde_json::to_string(&found).unwrap());
    }

    #[test]
    fn counterexamples_serialize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let ce = Counterexample {
            p: vec![0.5, 0.5],
            q: vec![0.5, 0.5],
            class: BoundedClass::Eval(EvalClass::new(vec![vec![0.0, 1.0]]).unwrap()),
            check: pinsker_check(&d(&[0.5, 0.5]), &d(&[0.5, 0.5]), &BoundedClass::AllFunctions).unwrap(),
        };
        write_counterexamples(&path, std::slice::from_ref(&ce)).unwrap();
        let back: Vec<Counterexample> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, vec![ce]);
    }

    #[test]
    fn query_family_validation() {
        assert!(QueryFamily::from_tables(vec![vec![0.0, 1.5]]).is_err());
        assert!(QueryFamily::from_tables(vec![vec![0.0, 1.0], vec![0.5]]).is_err());
        assert!(EvalClass::new(vec![vec![2.0]]).is_err());
        let f = family4();
        assert_eq!(f.eval_class().tables[0], vec![1.0, 0.0, 0.2, 1.0]);
    }

    #[test]
    fn constant_selector_is_private_and_unbiased() {
        let f = family4();
        let sel = Selector::Constant { probs: vec![0.25; 4] };
        let data = d(&[0.1, 0.2, 0.3, 0.4]);
        let r = generalization_experiment(&f, &sel, &data, 6, 20_000, 9).unwrap();
        assert_eq!(r.epsilon_hkl, 0.0);
        assert!(r.gap.abs() <= 3.0 * r.std_error, "{r:?}");
        assert!(r.holds);
    }

    #[test]
    fn argmax_is_not_private() {
        let eps = epsilon_hkl(&family4(), &Selector::Argmax, 6).unwrap();
        assert_eq!(eps, f64::INFINITY);
    }

    #[test]
    fn softmax_experiment_holds() {
        let f = family4();
        let data = d(&[0.1, 0.2, 0.3, 0.4]);
        let r = generalization_experiment(&f, &Selector::Softmax { temperature: 10.0 }, &data, 6, 100_000, 7).unwrap();
        assert!(r.epsilon_hkl.is_finite() && r.epsilon_hkl > 0.0);
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn experiment_is_deterministic() {
        let f = family4();
        let data = d(&[0.25; 4]);
        let sel = Selector::Softmax { temperature: 0.3 };
        let a = generalization_experiment(&f, &sel, &data, 4, 2000, 3).unwrap();
        let b = generalization_experiment(&f, &sel, &data, 4, 2000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(6, 4).len(), 84);
        assert!(compositions(3, 2).iter().all(|c| c.iter().sum::<usize>() == 3));
    }
}

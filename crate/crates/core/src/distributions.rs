//! One-dimensional distributions and independent products of them.
//!
//! These model the output distributions P = A(D), Q = A(D') of noise-adding
//! mechanisms. Continuous expectations are computed by adaptive quadrature
//! over a truncated support; finite distributions are summed exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Laplace support is truncated at `loc ± scale * LAPLACE_TAIL`.
pub const LAPLACE_TAIL: f64 = 30.624_247_703_027_62; // ln(2 / 1e-13)

/// Gaussian support is truncated at `mean ± GAUSSIAN_TAIL * stddev`.
pub const GAUSSIAN_TAIL: f64 = 8.5;

/// Tolerance on the total mass of a finite distribution.
pub const MASS_TOL: f64 = 1e-12;

/// A distribution with finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl Discrete {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("support", "must be nonempty"));
        }
        if support.len() != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                got: probs.len(),
            });
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("support", "values must be finite"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("support", "values must be strictly increasing"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("probs", "probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(
                "probs",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(Discrete { support, probs })
    }

    /// Builds a distribution on the points `0, 1, …, m-1`.
    pub fn on_indices(probs: Vec<f64>) -> Result<Self> {
        let support = (0..probs.len()).map(|i| i as f64).collect();
        Discrete::new(support, probs)
    }

    /// The mixture `λ·self + (1 − λ)·other` over a shared support.
    pub fn mix(&self, other: &Discrete, lambda: f64) -> Result<Discrete> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
        }
        if self.support != other.support {
            return Err(Error::invalid("other", "mixture components need the same support"));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Ok(Discrete {
            support: self.support.clone(),
            probs,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mass_at(&self, x: f64) -> f64 {
        match self.support.binary_search_by(|s| s.total_cmp(&x)) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(x, p)| p * f(*x))
            .sum()
    }

    /// Index-aligned view: `f` receives the atom index.
    pub fn expect_indexed<F: FnMut(usize) -> f64>(&self, mut f: F) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| p * f(i))
            .sum()
    }

    fn sample_one<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (x, p) in self.support.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *x;
            }
        }
        // rounding left a sliver of mass above the last cumulative sum
        *self
            .support
            .iter()
            .zip(&self.probs)
            .rev()
            .find(|(_, p)| **p > 0.0)
            .map(|(x, _)| x)
            .unwrap_or(&self.support[self.support.len() - 1])
    }
}

/// A one-dimensional distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistRepr", into = "DistRepr")]
pub enum Dist1D {
    Laplace { loc: f64, scale: f64 },
    Gaussian { mean: f64, stddev: f64 },
    PointMass { loc: f64 },
    Discrete(Discrete),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DistRepr {
    Laplace { loc: f64, scale: f64 },
    Gaussian { mean: f64, stddev: f64 },
    PointMass { loc: f64 },
    Discrete { support: Vec<f64>, probs: Vec<f64> },
}

impl TryFrom<DistRepr> for Dist1D {
    type Error = Error;

    fn try_from(r: DistRepr) -> Result<Self> {
        match r {
            DistRepr::Laplace { loc, scale } => Dist1D::laplace(loc, scale),
            DistRepr::Gaussian { mean, stddev } => Dist1D::gaussian(mean, stddev),
            DistRepr::PointMass { loc } => Dist1D::point_mass(loc),
            DistRepr::Discrete { support, probs } => {
                Discrete::new(support, probs).map(Dist1D::Discrete)
            }
        }
    }
}

impl From<Dist1D> for DistRepr {
    fn from(d: Dist1D) -> Self {
        match d {
            Dist1D::Laplace { loc, scale } => DistRepr::Laplace { loc, scale },
            Dist1D::Gaussian { mean, stddev } => DistRepr::Gaussian { mean, stddev },
            Dist1D::PointMass { loc } => DistRepr::PointMass { loc },
            Dist1D::Discrete(d) => DistRepr::Discrete {
                support: d.support,
                probs: d.probs,
            },
        }
    }
}

impl std::fmt::Display for Dist1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dist1D::Laplace { loc, scale } => write!(f, "Lap({loc}, {scale})"),
            Dist1D::Gaussian { mean, stddev } => write!(f, "N({mean}, {stddev}^2)"),
            Dist1D::PointMass { loc } => write!(f, "δ({loc})"),
            Dist1D::Discrete(d) => write!(f, "Discrete({:?}, {:?})", d.support, d.probs),
        }
    }
}

impl Dist1D {
    pub fn laplace(loc: f64, scale: f64) -> Result<Self> {
        if !loc.is_finite() {
            return Err(Error::invalid("loc", "must be finite"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("scale", "must be positive and finite"));
        }
        Ok(Dist1D::Laplace { loc, scale })
    }

    pub fn gaussian(mean: f64, stddev: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::invalid("mean", "must be finite"));
        }
        if !(stddev > 0.0 && stddev.is_finite()) {
            return Err(Error::invalid("stddev", "must be positive and finite"));
        }
        Ok(Dist1D::Gaussian { mean, stddev })
    }

    pub fn point_mass(loc: f64) -> Result<Self> {
        if !loc.is_finite() {
            return Err(Error::invalid("loc", "must be finite"));
        }
        Ok(Dist1D::PointMass { loc })
    }

    pub fn discrete(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Discrete::new(support, probs).map(Dist1D::Discrete)
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, Dist1D::Laplace { .. } | Dist1D::Gaussian { .. })
    }

    /// Density for continuous kinds, probability mass for atomic kinds.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Dist1D::Laplace { loc, scale } => (-(x - loc).abs() / scale).exp() / (2.0 * scale),
            Dist1D::Gaussian { mean, stddev } => {
                let z = (x - mean) / stddev;
                (-0.5 * z * z).exp() / (stddev * (2.0 * std::f64::consts::PI).sqrt())
            }
            Dist1D::PointMass { loc } => {
                if x == *loc {
                    1.0
                } else {
                    0.0
                }
            }
            Dist1D::Discrete(d) => d.mass_at(x),
        }
    }

    /// Location (Laplace, point mass), mean (Gaussian, discrete).
    pub fn center(&self) -> f64 {
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        match self {
            Dist1D::Laplace { loc, .. } => *loc,
            Dist1D::Gaussian { mean, .. } => *mean,
            Dist1D::PointMass { loc } => *loc,
            Dist1D::Discrete(d) => d.expect(|x| x),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Dist1D::Laplace { scale, .. } => 2.0 * scale * scale,
            Dist1D::Gaussian { stddev, .. } => stddev * stddev,
            Dist1D::PointMass { .. } => 0.0,
            Dist1D::Discrete(d) => {
                let m = d.expect(|x| x);
                d.expect(|x| (x - m) * (x - m))
            }
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Moment-generating function `E[e^{aX}]`.
    ///
    /// Returns `f64::INFINITY` when the expectation diverges (Laplace with
    /// `|a| >= 1/scale`); optimizers treat that as a barrier.
    pub fn mgf(&self, a: f64) -> f64 {
        if a == 0.0 {
            return 1.0;
        }
        match self {
            Dist1D::Laplace { loc, scale } => {
                let ab = a * scale;
                if ab.abs() >= 1.0 {
                    f64::INFINITY
                } else {
                    (a * loc).exp() / (1.0 - ab * ab)
                }
            }
            Dist1D::Gaussian { mean, stddev } => (a * mean + 0.5 * a * a * stddev * stddev).exp(),
            Dist1D::PointMass { loc } => (a * loc).exp(),
            Dist1D::Discrete(d) => d.expect(|x| (a * x).exp()),
        }
    }

    /// `log E[e^{aX}]`, computed stably; `+∞` where the MGF diverges.
    pub fn log_mgf(&self, a: f64) -> f64 {
        match self {
            Dist1D::Laplace { loc, scale } => {
                let ab = a * scale;
                if ab.abs() >= 1.0 {
                    f64::INFINITY
                } else {
                    a * loc - (1.0 - ab * ab).ln()
                }
            }
            Dist1D::Gaussian { mean, stddev } => a * mean + 0.5 * a * a * stddev * stddev,
            Dist1D::PointMass { loc } => a * loc,
            Dist1D::Discrete(d) => {
                let m = d
                    .support
                    .iter()
                    .zip(&d.probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(x, _)| a * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                m + d.expect(|x| (a * x - m).exp()).ln()
            }
        }
    }

    /// `log E[e^{aX}]` with its first two derivatives in `a`; the value is
    /// `+∞` (derivatives NaN) where the MGF diverges.
    pub fn log_mgf_derivs(&self, a: f64) -> (f64, f64, f64) {
        match self {
            Dist1D::Laplace { loc, scale } => {
                let ab = a * scale;
                if ab.abs() >= 1.0 {
                    return (f64::INFINITY, f64::NAN, f64::NAN);
                }
                let u = 1.0 - ab * ab;
                let b2 = scale * scale;
                (a * loc - u.ln(), loc + 2.0 * a * b2 / u, 2.0 * b2 * (1.0 + ab * ab) / (u * u))
            }
            Dist1D::Gaussian { mean, stddev } => {
                let v = stddev * stddev;
                (a * mean + 0.5 * a * a * v, mean + a * v, v)
            }
            Dist1D::PointMass { loc } => (a * loc, *loc, 0.0),
            Dist1D::Discrete(d) => {
                let m = d
                    .support
                    .iter()
                    .zip(&d.probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(x, _)| a * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for (x, p) in d.support.iter().zip(&d.probs) {
                    if *p > 0.0 {
                        let w = p * (a * x - m).exp();
                        z += w;
                        s1 += w * x;
                        s2 += w * x * x;
                    }
                }
                let mean = s1 / z;
                (m + z.ln(), mean, (s2 / z - mean * mean).max(0.0))
            }
        }
    }

    /// Centered absolute moment `E|X - center|^r` for `r >= 1`.
    pub fn abs_moment(&self, r: f64) -> Result<f64> {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::invalid("r", "absolute moment order must be >= 1"));
        }
        Ok(match self {
            Dist1D::Laplace { scale, .. } => scale.powf(r) * libm::tgamma(r + 1.0),
            Dist1D::Gaussian { stddev, .. } => {
                stddev.powf(r) * 2f64.powf(0.5 * r) * libm::tgamma(0.5 * (r + 1.0))
                    / std::f64::consts::PI.sqrt()
            }
            Dist1D::PointMass { .. } => 0.0,
            Dist1D::Discrete(d) => {
                let m = d.expect(|x| x);
                d.expect(|x| (x - m).abs().powf(r))
            }
        })
    }

    /// Atoms with positive mass, for atomic kinds; `None` for continuous ones.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Dist1D::PointMass { loc } => Some(vec![(*loc, 1.0)]),
            Dist1D::Discrete(d) => Some(
                d.support
                    .iter()
                    .zip(&d.probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(x, p)| (*x, *p))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Probability of the single point `x` (zero for continuous kinds).
    pub fn mass_at(&self, x: f64) -> f64 {
        match self {
            Dist1D::PointMass { loc } => {
                if *loc == x {
                    1.0
                } else {
                    0.0
                }
            }
            Dist1D::Discrete(d) => d.mass_at(x),
            _ => 0.0,
        }
    }

    /// Truncated integration range for continuous kinds; the atom range for
    /// atomic kinds.
    pub fn support_bounds(&self) -> (f64, f64) {
        match self {
            Dist1D::Laplace { loc, scale } => (loc - scale * LAPLACE_TAIL, loc + scale * LAPLACE_TAIL),
            Dist1D::Gaussian { mean, stddev } => {
                (mean - GAUSSIAN_TAIL * stddev, mean + GAUSSIAN_TAIL * stddev)
            }
            Dist1D::PointMass { loc } => (*loc, *loc),
            Dist1D::Discrete(d) => (d.support[0], d.support[d.support.len() - 1]),
        }
    }

    /// Points where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Dist1D::Laplace { loc, .. } => vec![*loc],
            _ => Vec::new(),
        }
    }

    /// Integration breakpoints: truncation limits, density kinks and the
    /// caller's extra points that fall inside the range.
    pub fn breakpoints(&self, extra: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.support_bounds();
        let mut b = vec![lo, hi];
        b.extend(self.kinks());
        b.extend(extra.iter().copied().filter(|x| x.is_finite() && *x > lo && *x < hi));
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// `E[f(X)]` to absolute tolerance `tol`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, f: F, tol: f64) -> Result<f64> {
        self.expect_with_breaks(f, &[], tol)
    }

    /// `E[f(X)]` with additional breakpoints where `f` is not smooth.
    pub fn expect_with_breaks<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        breaks: &[f64],
        tol: f64,
    ) -> Result<f64> {
        let v = self.expect_vec(|x, out| out[0] = f(x), 1, breaks, tol)?;
        Ok(v[0])
    }

    /// Vector-valued expectation; every component shares the quadrature nodes.
    pub fn expect_vec<F: FnMut(f64, &mut [f64])>(
        &self,
        mut f: F,
        dim: usize,
        breaks: &[f64],
        tol: f64,
    ) -> Result<Vec<f64>> {
        match self {
            Dist1D::PointMass { loc } => {
                let mut out = vec![0.0; dim];
                f(*loc, &mut out);
                Ok(out)
            }
            Dist1D::Discrete(d) => {
                let mut out = vec![0.0; dim];
                let mut tmp = vec![0.0; dim];
                for (x, p) in d.support.iter().zip(&d.probs) {
                    if *p == 0.0 {
                        continue;
                    }
                    tmp.iter_mut().for_each(|t| *t = 0.0);
                    f(*x, &mut tmp);
                    for k in 0..dim {
                        out[k] += p * tmp[k];
                    }
                }
                Ok(out)
            }
            _ => {
                let bp = self.breakpoints(breaks);
                quadrature::integrate_vec(
                    |x, out| {
                        let w = self.pdf(x);
                        f(x, out);
                        out.iter_mut().for_each(|o| *o *= w);
                    },
                    dim,
                    &bp,
                    tol,
                )
            }
        }
    }

    /// Cheap fixed-grid vector expectation (no error control).
    pub fn expect_vec_fixed<F: FnMut(f64, &mut [f64])>(
        &self,
        mut f: F,
        dim: usize,
        breaks: &[f64],
        panels: usize,
    ) -> Vec<f64> {
        if self.is_continuous() {
            let bp = self.breakpoints(breaks);
            quadrature::integrate_fixed(
                |x, out| {
                    let w = self.pdf(x);
                    f(x, out);
                    out.iter_mut().for_each(|o| *o *= w);
                },
                dim,
                &bp,
                panels,
            )
        } else {
            // exact for atomic kinds; tolerance unused
            self.expect_vec(f, dim, breaks, 1.0).expect("atomic expectation")
        }
    }

    fn sample_one<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Dist1D::Laplace { loc, scale } => {
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Dist1D::Gaussian { mean, stddev } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + stddev * z
            }
            Dist1D::PointMass { loc } => *loc,
            Dist1D::Discrete(d) => d.sample_one(rng),
        }
    }

    /// Draws `n` samples from a generator seeded with `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Independent product of one-dimensional marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDist {
    marginals: Vec<Dist1D>,
}

/// Largest dimension handled by nested (tensor-grid) quadrature.
pub const MAX_TENSOR_DIM: usize = 4;

impl ProductDist {
    pub fn new(marginals: Vec<Dist1D>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::invalid("marginals", "need at least one coordinate"));
        }
        Ok(ProductDist { marginals })
    }

    /// `d` i.i.d. copies of the noise around `locs`.
    pub fn laplace(locs: &[f64], scale: f64) -> Result<Self> {
        Self::new(
            locs.iter()
                .map(|l| Dist1D::laplace(*l, scale))
                .collect::<Result<_>>()?,
        )
    }

    pub fn gaussian(means: &[f64], stddev: f64) -> Result<Self> {
        Self::new(
            means
                .iter()
                .map(|m| Dist1D::gaussian(*m, stddev))
                .collect::<Result<_>>()?,
        )
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Dist1D] {
        &self.marginals
    }

    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(Dist1D::mean).collect()
    }

    pub fn log_mgf(&self, a: &[f64]) -> f64 {
        self.marginals.iter().zip(a).map(|(m, ai)| m.log_mgf(*ai)).sum()
    }

    /// Expectation of a separable integrand `Π f_i(x_i)`; factors exactly.
    pub fn expect_separable(&self, factors: &[&dyn Fn(f64) -> f64], tol: f64) -> Result<f64> {
        if factors.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: factors.len(),
            });
        }
        let mut acc = 1.0;
        for (m, f) in self.marginals.iter().zip(factors) {
            acc *= m.expect(f, tol / self.dim() as f64)?;
        }
        Ok(acc)
    }

    /// Expectation of a general integrand, by nested quadrature for
    /// continuous coordinates and exact enumeration for atomic ones.
    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F, tol: f64) -> Result<f64> {
        let v = self.expect_vec(|x, out| out[0] = f(x), 1, tol)?;
        Ok(v[0])
    }

    pub fn expect_vec<F: Fn(&[f64], &mut [f64])>(&self, f: F, dim: usize, tol: f64) -> Result<Vec<f64>> {
        let continuous = self.marginals.iter().filter(|m| m.is_continuous()).count();
        if continuous > MAX_TENSOR_DIM {
            return Err(Error::Unsupported(format!(
                "non-separable expectation over {continuous} continuous coordinates (max {MAX_TENSOR_DIM})"
            )));
        }
        let mut point = vec![0.0; self.dim()];
        self.nested(0, &mut point, &f, dim, tol)
    }

    fn nested<F: Fn(&[f64], &mut [f64])>(
        &self,
        k: usize,
        point: &mut Vec<f64>,
        f: &F,
        dim: usize,
        tol: f64,
    ) -> Result<Vec<f64>> {
        if k == self.dim() {
            let mut out = vec![0.0; dim];
            f(point, &mut out);
            return Ok(out);
        }
        let mut failure = None;
        let cell = std::cell::RefCell::new(point);
        let result = self.marginals[k].expect_vec(
            |x, out| {
                let mut p = cell.borrow_mut();
                p[k] = x;
                match self.nested(k + 1, &mut p, f, dim, tol) {
                    Ok(v) => out.copy_from_slice(&v),
                    Err(e) => {
                        failure.get_or_insert(e);
                        out.iter_mut().for_each(|o| *o = 0.0);
                    }
                }
            },
            dim,
            &[],
            tol,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(result),
        }
    }

    /// Whether every marginal is atomic.
    pub fn is_atomic(&self) -> bool {
        self.marginals.iter().all(|m| !m.is_continuous())
    }

    /// Joint atoms of an all-atomic product as (point, mass) pairs; `None`
    /// when some marginal is continuous.
    pub fn atoms(&self) -> Option<Vec<(Vec<f64>, f64)>> {
        let mut out = vec![(Vec::with_capacity(self.dim()), 1.0)];
        for m in &self.marginals {
            let atoms = m.atoms()?;
            let mut next = Vec::with_capacity(out.len() * atoms.len());
            for (pt, w) in &out {
                for (x, p) in &atoms {
                    let mut q = pt.clone();
                    q.push(*x);
                    next.push((q, w * p));
                }
            }
            out = next;
        }
        Some(out)
    }

    /// Mass of the single point `x`.
    pub fn mass_at(&self, x: &[f64]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, xi)| m.mass_at(*xi)).product()
    }

    /// Draws `n` points from a generator seeded with `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.marginals.iter().map(|m| m.sample_one(&mut rng)).collect())
            .collect()
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample_one(rng)).collect()
    }
}

impl From<&Dist1D> for ProductDist {
    fn from(d: &Dist1D) -> Self {
        ProductDist {
            marginals: vec![d.clone()],
        }
    }
}

impl From<&ProductDist> for ProductDist {
    fn from(d: &ProductDist) -> Self {
        d.clone()
    }
}

impl From<&Discrete> for ProductDist {
    fn from(d: &Discrete) -> Self {
        ProductDist {
            marginals: vec![Dist1D::Discrete(d.clone())],
        }
    }
}

impl From<Dist1D> for ProductDist {
    fn from(d: Dist1D) -> Self {
        ProductDist { marginals: vec![d] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lap01() -> Dist1D {
        Dist1D::laplace(0.0, 1.0).unwrap()
    }

    fn std_normal() -> Dist1D {
        Dist1D::gaussian(0.0, 1.0).unwrap()
    }

    fn coin() -> Dist1D {
        Dist1D::discrete(vec![0.0, 1.0], vec![0.25, 0.75]).unwrap()
    }

    #[test]
    fn pdf_examples() {
        assert_abs_diff_eq!(lap01().pdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(std_normal().pdf(0.0), 0.398_942_3, epsilon = 1e-7);
        assert_abs_diff_eq!(coin().pdf(1.0), 0.75, epsilon = 0.0);
        assert_eq!(coin().pdf(0.5), 0.0);
        assert_eq!(Dist1D::point_mass(3.0).unwrap().pdf(2.0), 0.0);
    }

    #[test]
    fn mgf_examples() {
        assert_abs_diff_eq!(lap01().mgf(0.5), 4.0 / 3.0, epsilon = 1e-12);
        for d in [lap01(), std_normal(), coin(), Dist1D::point_mass(2.0).unwrap()] {
            assert_eq!(d.mgf(0.0), 1.0);
        }
        assert_eq!(lap01().mgf(1.0), f64::INFINITY);
        assert_eq!(lap01().mgf(-1.5), f64::INFINITY);
        assert_eq!(lap01().log_mgf(1.0), f64::INFINITY);
    }

    #[test]
    fn abs_moment_examples() {
        assert_abs_diff_eq!(std_normal().abs_moment(1.0).unwrap(), (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal().abs_moment(1.0).unwrap(), 0.797_884_6, epsilon = 1e-7);
        assert_abs_diff_eq!(lap01().abs_moment(1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(Dist1D::laplace(0.0, 0.5).unwrap().abs_moment(1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(Dist1D::point_mass(3.0).unwrap().abs_moment(2.0).unwrap(), 0.0);
        assert!(lap01().abs_moment(0.5).is_err());
    }

    #[test]
    fn abs_moment_matches_quadrature() {
        for d in [lap01(), Dist1D::gaussian(1.0, 2.0).unwrap()] {
            for r in [1.0, 1.5, 2.0, 3.3] {
                let c = d.center();
                let q = d.expect_with_breaks(|x| (x - c).abs().powf(r), &[c], 1e-11).unwrap();
                assert_abs_diff_eq!(d.abs_moment(r).unwrap(), q, epsilon = 1e-9 * q.max(1.0));
            }
        }
    }

    #[test]
    fn expectation_examples() {
        assert_abs_diff_eq!(std_normal().expect(|x| x * x, 1e-10).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(lap01().expect(|x| x, 1e-10).unwrap(), 0.0, epsilon = 1e-10);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(coin().expect(f64::exp, 1e-10).unwrap(), 0.25 + 0.75 * e, epsilon = 1e-14);
        assert_abs_diff_eq!(coin().expect(f64::exp, 1e-10).unwrap(), 2.288_711_4, epsilon = 1e-7);
    }

    #[test]
    fn sample_examples() {
        assert_eq!(Dist1D::point_mass(2.0).unwrap().sample(99, 3), vec![2.0, 2.0, 2.0]);

        let n = 1_000_000;
        let xs = lap01().sample(7, n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 0.007, "mean {mean}");

        let ys = coin().sample(1, n);
        let freq = ys.iter().filter(|y| **y == 1.0).count() as f64 / n as f64;
        assert!((freq - 0.75).abs() <= 0.0022, "freq {freq}");

        let zs = std_normal().sample(3, n);
        let m = zs.iter().sum::<f64>() / n as f64;
        assert!(m.abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        for d in [lap01(), std_normal(), coin()] {
            assert_eq!(d.sample(11, 50), d.sample(11, 50));
            assert_ne!(d.sample(11, 50), d.sample(12, 50));
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Dist1D::laplace(0.0, 0.0).is_err());
        assert!(Dist1D::gaussian(0.0, -1.0).is_err());
        assert!(Dist1D::discrete(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(Dist1D::discrete(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(Dist1D::discrete(vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(Dist1D::discrete(vec![0.0], vec![1.0, 0.0]).is_err());
        assert!(ProductDist::new(vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let d: Dist1D = serde_json::from_str(r#"{"kind":"laplace","loc":0.0,"scale":1.0}"#).unwrap();
        assert_eq!(d, lap01());
        let s = serde_json::to_string(&coin()).unwrap();
        assert_eq!(s, r#"{"kind":"discrete","support":[0.0,1.0],"probs":[0.25,0.75]}"#);
        let bad: std::result::Result<Dist1D, _> =
            serde_json::from_str(r#"{"kind":"gaussian","mean":0.0,"stddev":0.0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn product_separable_and_nested_agree() {
        let p = ProductDist::new(vec![lap01(), Dist1D::gaussian(1.0, 0.5).unwrap()]).unwrap();
        let sep = p
            .expect_separable(&[&|x: f64| (0.2 * x).exp(), &|y: f64| y * y], 1e-10)
            .unwrap();
        let nested = p.expect(|v| (0.2 * v[0]).exp() * v[1] * v[1], 1e-9).unwrap();
        assert_abs_diff_eq!(sep, nested, epsilon = 1e-7);
        // closed form: mgf(0.2) * (1 + 0.25)
        assert_abs_diff_eq!(sep, 1.25 / (1.0 - 0.04), epsilon = 1e-9);
    }

    #[test]
    fn product_of_discretes_enumerates() {
        let p = ProductDist::new(vec![coin(), coin()]).unwrap();
        let v = p.expect(|x| x[0] * x[1], 1e-12).unwrap();
        assert_abs_diff_eq!(v, 0.5625, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn normalization(loc in -3.0f64..3.0, scale in 0.1f64..4.0) {
            for d in [Dist1D::laplace(loc, scale).unwrap(), Dist1D::gaussian(loc, scale).unwrap()] {
                let m = d.expect(|_| 1.0, 1e-10).unwrap();
                prop_assert!((m - 1.0).abs() <= 1e-10);
            }
        }

        #[test]
        fn mgf_matches_quadrature(loc in -2.0f64..2.0, scale in 0.2f64..2.0, t in -0.3f64..0.3) {
            // |a| well inside the Laplace convergence region so truncated tails stay < 1e-9
            let a = t / scale;
            for d in [Dist1D::laplace(loc, scale).unwrap(), Dist1D::gaussian(loc, scale).unwrap()] {
                let q = d.expect(|x| (a * x).exp(), 1e-11).unwrap();
                prop_assert!((q - d.mgf(a)).abs() <= 1e-8 * d.mgf(a).max(1.0), "{} vs {}", q, d.mgf(a));
            }
        }

        #[test]
        fn log_mgf_derivatives_match_differences(loc in -2.0f64..2.0, scale in 0.2f64..2.0, t in -0.8f64..0.8) {
            let a = t / scale;
            let coin = Dist1D::discrete(vec![loc, loc + scale], vec![0.3, 0.7]).unwrap();
            for d in [Dist1D::laplace(loc, scale).unwrap(), Dist1D::gaussian(loc, scale).unwrap(), coin] {
                let h = 1e-5 / scale;
                let (f, f1, f2) = d.log_mgf_derivs(a);
                prop_assert!((f - d.log_mgf(a)).abs() <= 1e-12 * f.abs().max(1.0));
                let fd1 = (d.log_mgf(a + h) - d.log_mgf(a - h)) / (2.0 * h);
                let fd2 = (d.log_mgf_derivs(a + h).1 - d.log_mgf_derivs(a - h).1) / (2.0 * h);
                prop_assert!((f1 - fd1).abs() <= 1e-6 * f1.abs().max(1.0), "{} vs {}", f1, fd1);
                prop_assert!((f2 - fd2).abs() <= 1e-5 * f2.abs().max(1.0), "{} vs {}", f2, fd2);
            }
        }

        #[test]
        fn discrete_mgf_matches_sum(ps in proptest::collection::vec(0.01f64..1.0, 1..6), a in -2.0f64..2.0) {
            let total: f64 = ps.iter().sum();
            let probs: Vec<f64> = ps.iter().map(|p| p / total).collect();
            let d = Dist1D::Discrete(Discrete::on_indices(probs).unwrap());
            let direct = d.expect(|x| (a * x).exp(), 1e-12).unwrap();
            prop_assert!((direct - d.mgf(a)).abs() <= 1e-12 * direct.max(1.0));
            prop_assert!((d.log_mgf(a) - direct.ln()).abs() <= 1e-12);
        }

        #[test]
        fn abs_moment_monotone_on_spread_discrete(
            half in proptest::collection::vec((1.0f64..5.0, 0.01f64..1.0), 1..4),
            r1 in 1.0f64..4.0, dr in 0.0f64..3.0,
        ) {
            // symmetric atoms ±t with t >= 1 keep every |x - mean| >= 1
            let mut pts: Vec<(f64, f64)> = Vec::new();
            let mut seen = Vec::new();
            for (t, w) in &half {
                let t = (t * 1000.0).round() / 1000.0;
                if seen.contains(&t) { continue; }
                seen.push(t);
                pts.push((-t, *w));
                pts.push((t, *w));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = pts.iter().map(|p| p.1).sum();
            let d = Dist1D::discrete(
                pts.iter().map(|p| p.0).collect(),
                pts.iter().map(|p| p.1 / total).collect(),
            ).unwrap();
            let lo = d.abs_moment(r1).unwrap();
            let hi = d.abs_moment(r1 + dr).unwrap();
            prop_assert!(hi >= lo * (1.0 - 1e-12));
        }
    }
}

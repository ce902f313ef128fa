//! Restricted divergences computed from their dual variational forms.
//!
//! For a class `H` of adversary functions the restricted f-divergence is
//! `sup_{h ∈ H} E_P[h] − E_Q[f*(h)]`. With `h = a·φ + b` over a finite
//! feature vector `φ`, the objective is concave in `(a, b)` and is maximized
//! with [`crate::optim::maximize`].
//!
//! * KL: `f*(s) = e^{s−1}`. When `H` contains constants the offset is
//!   eliminated and the objective becomes `a·E_P[φ] − log E_Q[e^{a·φ}]`.
//! * α-divergence: `f*(s) = C_α |s|^{α/(α−1)} + 1/(α² − α)`.
//!
//! Polynomial and linear features are centered and scaled by the moments of
//! `Q` before optimizing; reported coefficients are in the original basis.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{Dist1D, Discrete, ProductDist};
use crate::divergences::closed::{alpha_to_renyi, c_alpha, BoundKind, BoundedValue, DivergenceSpec};
use crate::error::{Error, Result};
use crate::optim::{self, Concave, Settings};

/// A real-valued feature of an output point.
pub type Feature = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The shape of an adversary class.
#[derive(Clone)]
pub enum ClassKind {
    /// `{a·x + b}` over `dim`-dimensional outputs.
    Linear(usize),
    /// `span{1, x, …, x^k}` over scalar outputs.
    Poly(usize),
    /// Span of user features.
    FiniteFeatures { name: String, features: Vec<Feature> },
    AllFunctions,
}

impl fmt::Debug for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassKind::Linear(d) => write!(f, "Linear({d})"),
            ClassKind::Poly(k) => write!(f, "Poly({k})"),
            ClassKind::FiniteFeatures { name, features } => {
                write!(f, "FiniteFeatures({name}, {})", features.len())
            }
            ClassKind::AllFunctions => write!(f, "AllFunctions"),
        }
    }
}

/// An adversary function class.
#[derive(Clone, Debug)]
pub struct FunctionClass {
    kind: ClassKind,
    include_constant: bool,
}

impl FunctionClass {
    pub fn linear(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "linear class needs at least one coordinate"));
        }
        Ok(FunctionClass {
            kind: ClassKind::Linear(dim),
            include_constant: true,
        })
    }

    pub fn poly(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("degree", "polynomial degree must be >= 1"));
        }
        Ok(FunctionClass {
            kind: ClassKind::Poly(degree),
            include_constant: true,
        })
    }

    pub fn finite(name: impl Into<String>, features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("features", "need at least one feature"));
        }
        Ok(FunctionClass {
            kind: ClassKind::FiniteFeatures {
                name: name.into(),
                features,
            },
            include_constant: true,
        })
    }

    /// Indicator features `1[x = s]` for each point `s` of a scalar support.
    pub fn indicators(support: &[f64]) -> Result<Self> {
        let features = support
            .iter()
            .map(|&s| Arc::new(move |x: &[f64]| if x[0] == s { 1.0 } else { 0.0 }) as Feature)
            .collect();
        Self::finite("indicator", features)
    }

    pub fn all_functions() -> Self {
        FunctionClass {
            kind: ClassKind::AllFunctions,
            include_constant: true,
        }
    }

    /// Sets whether constants are added to the span. Ignored for `AllFunctions`.
    pub fn with_constant(mut self, include_constant: bool) -> Self {
        if !matches!(self.kind, ClassKind::AllFunctions) {
            self.include_constant = include_constant;
        }
        self
    }

    /// Rebuilds a built-in class from its descriptor. User feature classes
    /// cannot be rebuilt since their features are code.
    pub fn from_descriptor(d: &ClassDescriptor) -> Result<Self> {
        match d {
            ClassDescriptor::Linear { dim, include_constant } => {
                Ok(Self::linear(*dim)?.with_constant(*include_constant))
            }
            ClassDescriptor::Poly { degree, include_constant } => {
                Ok(Self::poly(*degree)?.with_constant(*include_constant))
            }
            ClassDescriptor::FiniteFeatures { name, .. } => Err(Error::Unsupported(format!(
                "feature class `{name}` cannot be rebuilt from a descriptor"
            ))),
            ClassDescriptor::AllFunctions => Ok(Self::all_functions()),
        }
    }

    pub fn kind(&self) -> &ClassKind {
        &self.kind
    }

    pub fn include_constant(&self) -> bool {
        self.include_constant
    }

    pub fn is_convex(&self) -> bool {
        self.descriptor().is_convex()
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.descriptor().is_translation_invariant()
    }

    pub fn is_closed_under_negation(&self) -> bool {
        self.descriptor().is_closed_under_negation()
    }

    pub fn descriptor(&self) -> ClassDescriptor {
        match &self.kind {
            ClassKind::Linear(dim) => ClassDescriptor::Linear {
                dim: *dim,
                include_constant: self.include_constant,
            },
            ClassKind::Poly(degree) => ClassDescriptor::Poly {
                degree: *degree,
                include_constant: self.include_constant,
            },
            ClassKind::FiniteFeatures { name, features } => ClassDescriptor::FiniteFeatures {
                name: name.clone(),
                count: features.len(),
                include_constant: self.include_constant,
            },
            ClassKind::AllFunctions => ClassDescriptor::AllFunctions,
        }
    }
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.descriptor().fmt(f)
    }
}

fn yes() -> bool {
    true
}

/// Serializable description of a [`FunctionClass`], with its structural flags.
///
/// Every built-in class is a linear space of functions, hence convex and
/// closed under negation; it is translation invariant exactly when it
/// contains the constants.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassDescriptor {
    Linear {
        dim: usize,
        #[serde(default = "yes")]
        include_constant: bool,
    },
    Poly {
        degree: usize,
        #[serde(default = "yes")]
        include_constant: bool,
    },
    FiniteFeatures {
        name: String,
        count: usize,
        #[serde(default = "yes")]
        include_constant: bool,
    },
    AllFunctions,
}

impl ClassDescriptor {
    pub fn include_constant(&self) -> bool {
        match self {
            ClassDescriptor::Linear { include_constant, .. }
            | ClassDescriptor::Poly { include_constant, .. }
            | ClassDescriptor::FiniteFeatures { include_constant, .. } => *include_constant,
            ClassDescriptor::AllFunctions => true,
        }
    }

    pub fn is_convex(&self) -> bool {
        true
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.include_constant()
    }

    pub fn is_closed_under_negation(&self) -> bool {
        true
    }
}

impl fmt::Display for ClassDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = if self.include_constant() { "" } else { "/no-const" };
        match self {
            ClassDescriptor::Linear { dim: 1, .. } => write!(f, "lin{suffix}"),
            ClassDescriptor::Linear { dim, .. } => write!(f, "lin({dim}){suffix}"),
            ClassDescriptor::Poly { degree, .. } => write!(f, "poly:{degree}{suffix}"),
            ClassDescriptor::FiniteFeatures { name, count, .. } => write!(f, "{name}[{count}]{suffix}"),
            ClassDescriptor::AllFunctions => write!(f, "all"),
        }
    }
}

/// Optimizer output: the best adversary `h = a·φ + b` found and its dual value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Coefficients in the class's own basis (per coordinate for `Linear`,
    /// monomials `x, …, x^k` for `Poly`, per feature otherwise). Empty for
    /// `AllFunctions`.
    pub coefficients: Vec<f64>,
    pub offset: f64,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn settings(tol: f64) -> Result<Settings> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
    }
    Ok(Settings::with_tol(tol))
}

/// The α-divergence grows like e^{(α−1)R} in the Rényi value R, so the cap
/// is applied on the Rényi scale and the gradient test is relative.
fn alpha_settings(mut s: Settings, alpha: f64) -> Settings {
    let log_cap = (alpha - 1.0) * s.cap;
    s.cap = if log_cap < 690.0 {
        (log_cap.exp() - 1.0) / (alpha * (alpha - 1.0))
    } else {
        1e300
    };
    s.relative = true;
    s
}

fn quad_tol(tol: f64) -> f64 {
    (1e-3 * tol).clamp(1e-13, 1e-7)
}

// ---------------------------------------------------------------------------
// features

#[derive(Clone)]
enum Basis {
    Linear { center: Vec<f64>, scale: Vec<f64> },
    Poly { degree: usize, center: f64, scale: f64 },
    Custom(Vec<Feature>),
}

impl Basis {
    fn dim(&self) -> usize {
        match self {
            Basis::Linear { center, .. } => center.len(),
            Basis::Poly { degree, .. } => *degree,
            Basis::Custom(f) => f.len(),
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Basis::Linear { center, scale } => {
                for i in 0..center.len() {
                    out[i] = (x[i] - center[i]) / scale[i];
                }
            }
            Basis::Poly { degree, center, scale } => {
                let u = (x[0] - center) / scale;
                let mut pow = 1.0;
                for o in out.iter_mut().take(*degree) {
                    pow *= u;
                    *o = pow;
                }
            }
            Basis::Custom(fs) => {
                for (o, f) in out.iter_mut().zip(fs) {
                    *o = f(x);
                }
            }
        }
    }

    /// Maps scaled coefficients back to the class's own basis.
    fn unscale(&self, a: &[f64], b: f64) -> (Vec<f64>, f64) {
        match self {
            Basis::Linear { center, scale } => {
                let coef: Vec<f64> = a.iter().zip(scale).map(|(ai, si)| ai / si).collect();
                let shift: f64 = coef.iter().zip(center).map(|(c, m)| c * m).sum();
                (coef, b - shift)
            }
            Basis::Poly { degree, center, scale } => {
                // ((x − μ)/s)^j = s^{−j} Σ_i C(j, i) x^i (−μ)^{j−i}
                let mut mono = vec![0.0; degree + 1];
                mono[0] = b;
                for j in 1..=*degree {
                    let w = a[j - 1] / scale.powi(j as i32);
                    let mut binom = 1.0;
                    for i in 0..=j {
                        mono[i] += w * binom * (-center).powi((j - i) as i32);
                        binom = binom * (j - i) as f64 / (i + 1) as f64;
                    }
                }
                let offset = mono[0];
                (mono.split_off(1), offset)
            }
            Basis::Custom(_) => (a.to_vec(), b),
        }
    }
}

fn scale_of(sd: f64) -> f64 {
    if sd.is_finite() && sd > 1e-12 {
        sd
    } else {
        1.0
    }
}

fn build_basis(class: &FunctionClass, q: &ProductDist) -> Result<Basis> {
    let centered = class.include_constant;
    match &class.kind {
        ClassKind::Linear(dim) => {
            if *dim != q.dim() {
                return Err(Error::DimensionMismatch {
                    expected: q.dim(),
                    got: *dim,
                });
            }
            let (center, scale) = q
                .marginals()
                .iter()
                .map(|m| {
                    if centered {
                        (m.mean(), scale_of(m.std_dev()))
                    } else {
                        (0.0, scale_of((m.variance() + m.mean() * m.mean()).sqrt()))
                    }
                })
                .unzip();
            Ok(Basis::Linear { center, scale })
        }
        ClassKind::Poly(degree) => {
            if q.dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: q.dim(),
                });
            }
            let m = &q.marginals()[0];
            let (center, scale) = if centered {
                (m.mean(), scale_of(m.std_dev()))
            } else {
                (0.0, scale_of((m.variance() + m.mean() * m.mean()).sqrt()))
            };
            Ok(Basis::Poly {
                degree: *degree,
                center,
                scale,
            })
        }
        ClassKind::FiniteFeatures { features, .. } => Ok(Basis::Custom(features.clone())),
        ClassKind::AllFunctions => Err(Error::Unsupported("AllFunctions has no finite basis".into())),
    }
}

// ---------------------------------------------------------------------------
// expectations under P and Q

#[derive(Clone)]
enum QSide {
    /// Finite support: points' feature vectors and masses.
    Atoms { feats: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Scalar continuous distribution, integrated with breaks at roots of h.
    Line(Dist1D),
    /// Product with a continuous coordinate, by nested quadrature.
    Nested(ProductDist),
    /// Linear features of a product: closed-form log-MGF (KL only).
    LinearMgf(ProductDist),
}

fn q_side(q: &ProductDist, basis: &Basis, for_kl: bool) -> QSide {
    if let Some(atoms) = q.atoms() {
        let m = basis.dim();
        let mut feats = Vec::with_capacity(atoms.len());
        let mut weights = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            let mut f = vec![0.0; m];
            basis.eval(&x, &mut f);
            feats.push(f);
            weights.push(w);
        }
        return QSide::Atoms { feats, weights };
    }
    let linear = matches!(basis, Basis::Linear { .. }) || matches!(basis, Basis::Poly { degree: 1, .. });
    if for_kl && linear {
        return QSide::LinearMgf(q.clone());
    }
    if q.dim() == 1 {
        QSide::Line(q.marginals()[0].clone())
    } else {
        QSide::Nested(q.clone())
    }
}

/// `E_P[φ]`.
fn p_mean(p: &ProductDist, basis: &Basis, tol: f64) -> Result<Vec<f64>> {
    let m = basis.dim();
    if let Basis::Linear { center, scale } = basis {
        if p.dim() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: p.dim(),
            });
        }
        return Ok(p
            .means()
            .iter()
            .zip(center)
            .zip(scale)
            .map(|((mu, c), s)| (mu - c) / s)
            .collect());
    }
    if let Some(atoms) = p.atoms() {
        let mut out = vec![0.0; m];
        let mut f = vec![0.0; m];
        for (x, w) in atoms {
            basis.eval(&x, &mut f);
            for k in 0..m {
                out[k] += w * f[k];
            }
        }
        return Ok(out);
    }
    if p.dim() == 1 {
        return p.marginals()[0].expect_vec(|x, out| basis.eval(&[x], out), m, &[], quad_tol(tol));
    }
    p.expect_vec(|x, out| basis.eval(x, out), m, quad_tol(tol))
}

fn check_dims(p: &ProductDist, q: &ProductDist) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: p.dim(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// KL

struct KlObjective {
    basis: Basis,
    constant: bool,
    p_mean: Vec<f64>,
    q: QSide,
    tol: f64,
}

struct LogPartition {
    value: f64,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

impl KlObjective {
    /// `log E_Q[e^{a·φ}]` with gradient and Hessian; `None` where it diverges.
    fn log_partition(&self, a: &[f64]) -> Result<Option<LogPartition>> {
        let m = a.len();
        match &self.q {
            QSide::Atoms { feats, weights } => {
                let s: Vec<f64> = feats.iter().map(|f| dot(a, f)).collect();
                let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                let mut g = vec![0.0; m];
                let mut h = DMatrix::zeros(m, m);
                for ((f, w), si) in feats.iter().zip(weights).zip(&s) {
                    let e = w * (si - top).exp();
                    z += e;
                    for i in 0..m {
                        g[i] += e * f[i];
                        for j in 0..=i {
                            h[(i, j)] += e * f[i] * f[j];
                        }
                    }
                }
                g.iter_mut().for_each(|gi| *gi /= z);
                for i in 0..m {
                    for j in 0..=i {
                        let v = h[(i, j)] / z - g[i] * g[j];
                        h[(i, j)] = v;
                        h[(j, i)] = v;
                    }
                }
                Ok(Some(LogPartition {
                    value: top + z.ln(),
                    grad: g,
                    hess: h,
                }))
            }
            QSide::LinearMgf(q) => {
                let (center, scale): (Vec<f64>, Vec<f64>) = match &self.basis {
                    Basis::Linear { center, scale } => (center.clone(), scale.clone()),
                    Basis::Poly { center, scale, .. } => (vec![*center], vec![*scale]),
                    Basis::Custom(_) => unreachable!("custom features never use the linear MGF"),
                };
                let mut value = 0.0;
                let mut g = vec![0.0; m];
                let mut h = DMatrix::zeros(m, m);
                for (i, marg) in q.marginals().iter().enumerate() {
                    let c = a[i] / scale[i];
                    let (f0, f1, f2) = marg.log_mgf_derivs(c);
                    if !f0.is_finite() {
                        return Ok(None);
                    }
                    value += f0 - c * center[i];
                    g[i] = (f1 - center[i]) / scale[i];
                    h[(i, i)] = f2 / (scale[i] * scale[i]);
                }
                Ok(Some(LogPartition { value, grad: g, hess: h }))
            }
            QSide::Line(_) | QSide::Nested(_) => {
                // components: e^s, φ e^s, φφᵀ e^s (lower triangle)
                let tri = m * (m + 1) / 2;
                let dim = 1 + m + tri;
                let basis = &self.basis;
                let integrand = |x: &[f64], out: &mut [f64]| {
                    let mut f = vec![0.0; m];
                    basis.eval(x, &mut f);
                    let e = dot(a, &f).exp();
                    out[0] = e;
                    let mut k = 1 + m;
                    for i in 0..m {
                        out[1 + i] = e * f[i];
                        for j in 0..=i {
                            out[k] = e * f[i] * f[j];
                            k += 1;
                        }
                    }
                };
                let v = match &self.q {
                    QSide::Line(d) => d.expect_vec(|x, out| integrand(&[x], out), dim, &[], quad_tol(self.tol))?,
                    QSide::Nested(d) => d.expect_vec(integrand, dim, quad_tol(self.tol))?,
                    _ => unreachable!(),
                };
                let z = v[0];
                if !(z.is_finite() && z > 0.0) {
                    return Ok(None);
                }
                let g: Vec<f64> = (0..m).map(|i| v[1 + i] / z).collect();
                let mut h = DMatrix::zeros(m, m);
                let mut k = 1 + m;
                for i in 0..m {
                    for j in 0..=i {
                        let c = v[k] / z - g[i] * g[j];
                        h[(i, j)] = c;
                        h[(j, i)] = c;
                        k += 1;
                    }
                }
                Ok(Some(LogPartition {
                    value: z.ln(),
                    grad: g,
                    hess: h,
                }))
            }
        }
    }

    fn eval(&self, a: &[f64]) -> Result<Option<(f64, Vec<f64>, DMatrix<f64>)>> {
        let Some(lp) = self.log_partition(a)? else {
            return Ok(None);
        };
        let lin = dot(a, &self.p_mean);
        let m = a.len();
        if self.constant {
            let g = (0..m).map(|i| self.p_mean[i] - lp.grad[i]).collect();
            Ok(Some((lin - lp.value, g, -lp.hess)))
        } else {
            let e = (lp.value - 1.0).exp();
            let g = (0..m).map(|i| self.p_mean[i] - e * lp.grad[i]).collect();
            let mut h = lp.hess;
            for i in 0..m {
                for j in 0..m {
                    h[(i, j)] = -e * (h[(i, j)] + lp.grad[i] * lp.grad[j]);
                }
            }
            Ok(Some((lin - e, g, h)))
        }
    }
}

impl Concave for KlObjective {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn value_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(match self.eval(a)? {
            Some((v, g, _)) if v.is_finite() => (v, g),
            Some((v, g, _)) if v == f64::INFINITY => (v, g),
            _ => (f64::NEG_INFINITY, vec![0.0; a.len()]),
        })
    }

    fn hessian(&self, a: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(self.eval(a)?.map(|(_, _, h)| h))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// α-divergence

struct AlphaObjective {
    basis: Basis,
    constant: bool,
    p_mean: Vec<f64>,
    q: QSide,
    alpha: f64,
    p: f64,
    c: f64,
    tol: f64,
}

impl AlphaObjective {
    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], f64) {
        let m = self.basis.dim();
        let b = if self.constant { theta[m] } else { 0.0 };
        (&theta[..m], b)
    }

    /// Real roots of `h` on a scalar support, used as quadrature breaks.
    fn roots(&self, a: &[f64], b: f64, q: &Dist1D) -> Vec<f64> {
        let (lo, hi) = q.support_bounds();
        match &self.basis {
            Basis::Linear { center, scale } if a.len() == 1 => {
                if a[0] == 0.0 {
                    Vec::new()
                } else {
                    vec![center[0] - scale[0] * b / a[0]]
                }
            }
            Basis::Poly { degree: 1, center, scale } => {
                if a[0] == 0.0 {
                    Vec::new()
                } else {
                    vec![center - scale * b / a[0]]
                }
            }
            _ => {
                let m = a.len();
                let mut f = vec![0.0; m];
                let mut h = |x: f64| {
                    self.basis.eval(&[x], &mut f);
                    dot(a, &f) + b
                };
                let n = 2048;
                let mut roots = Vec::new();
                let mut x0 = lo;
                let mut h0 = h(x0);
                for k in 1..=n {
                    let x1 = lo + (hi - lo) * k as f64 / n as f64;
                    let h1 = h(x1);
                    if h0 == 0.0 {
                        roots.push(x0);
                    } else if h0 * h1 < 0.0 {
                        let (mut l, mut r, mut hl) = (x0, x1, h0);
                        for _ in 0..80 {
                            let mid = 0.5 * (l + r);
                            let hm = h(mid);
                            if hm * hl <= 0.0 {
                                r = mid;
                            } else {
                                l = mid;
                                hl = hm;
                            }
                        }
                        roots.push(0.5 * (l + r));
                    }
                    x0 = x1;
                    h0 = h1;
                }
                roots
            }
        }
    }

    /// `E_Q[|h|^p]` followed by `E_Q[|h|^{p−1} sign(h) ψ]` with `ψ = (φ, 1)`.
    fn moments(&self, a: &[f64], b: f64) -> Result<Vec<f64>> {
        let m = a.len();
        let n = m + usize::from(self.constant);
        let p = self.p;
        let constant = self.constant;
        let basis = &self.basis;
        let integrand = |x: &[f64], out: &mut [f64]| {
            let mut f = vec![0.0; m];
            basis.eval(x, &mut f);
            let h = dot(a, &f) + b;
            let ah = h.abs();
            out[0] = ah.powf(p);
            let d = ah.powf(p - 1.0) * h.signum();
            for i in 0..m {
                out[1 + i] = d * f[i];
            }
            if constant {
                out[1 + m] = if h == 0.0 { 0.0 } else { d };
            }
        };
        match &self.q {
            QSide::Atoms { feats, weights } => {
                let mut acc = vec![0.0; 1 + n];
                let mut tmp = vec![0.0; 1 + n];
                for (f, w) in feats.iter().zip(weights) {
                    let h = dot(a, f) + b;
                    let ah = h.abs();
                    tmp[0] = ah.powf(p);
                    let d = ah.powf(p - 1.0) * h.signum();
                    for i in 0..m {
                        tmp[1 + i] = d * f[i];
                    }
                    if constant {
                        tmp[1 + m] = if h == 0.0 { 0.0 } else { d };
                    }
                    for k in 0..=n {
                        acc[k] += w * tmp[k];
                    }
                }
                Ok(acc)
            }
            QSide::Line(q) => {
                let roots = self.roots(a, b, q);
                q.expect_vec(|x, out| integrand(&[x], out), 1 + n, &roots, quad_tol(self.tol))
            }
            QSide::Nested(q) => q.expect_vec(integrand, 1 + n, quad_tol(self.tol)),
            QSide::LinearMgf(_) => unreachable!("α objectives never use the linear MGF"),
        }
    }

    fn curvature(&self, a: &[f64], b: f64) -> Result<DMatrix<f64>> {
        let m = a.len();
        let n = m + usize::from(self.constant);
        let p = self.p;
        let basis = &self.basis;
        let fill = |x: &[f64], out: &mut [f64]| {
            let mut psi = vec![1.0; n];
            basis.eval(x, &mut psi[..m]);
            let h = dot(a, &psi[..m]) + b;
            let w = h.abs().max(1e-150).powf(p - 2.0);
            let mut k = 0;
            for i in 0..n {
                for j in 0..=i {
                    out[k] = w * psi[i] * psi[j];
                    k += 1;
                }
            }
        };
        let tri = n * (n + 1) / 2;
        let v = match &self.q {
            QSide::Atoms { feats, weights } => {
                let mut acc = vec![0.0; tri];
                let mut tmp = vec![0.0; tri];
                let mut psi = vec![1.0; n];
                for (f, w) in feats.iter().zip(weights) {
                    psi[..m].copy_from_slice(f);
                    let h = dot(a, f) + b;
                    let wh = h.abs().max(1e-150).powf(p - 2.0);
                    let mut k = 0;
                    for i in 0..n {
                        for j in 0..=i {
                            tmp[k] = wh * psi[i] * psi[j];
                            k += 1;
                        }
                    }
                    for k in 0..tri {
                        acc[k] += w * tmp[k];
                    }
                }
                acc
            }
            QSide::Line(q) => {
                let roots = self.roots(a, b, q);
                q.expect_vec_fixed(|x, out| fill(&[x], out), tri, &roots, 8)
            }
            QSide::Nested(q) => q.expect_vec(fill, tri, 1e-6)?,
            QSide::LinearMgf(_) => unreachable!(),
        };
        let scale = -self.c * p * (p - 1.0);
        let mut h = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                h[(i, j)] = scale * v[k];
                h[(j, i)] = scale * v[k];
                k += 1;
            }
        }
        Ok(h)
    }

    fn offset_constant(&self) -> f64 {
        1.0 / (self.alpha * self.alpha - self.alpha)
    }
}

impl Concave for AlphaObjective {
    fn dim(&self) -> usize {
        self.basis.dim() + usize::from(self.constant)
    }

    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = self.split(theta);
        let m = a.len();
        let mo = self.moments(a, b)?;
        let value = dot(a, &self.p_mean) + b - self.c * mo[0] - self.offset_constant();
        let cp = self.c * self.p;
        let mut g: Vec<f64> = (0..m).map(|i| self.p_mean[i] - cp * mo[1 + i]).collect();
        if self.constant {
            g.push(1.0 - cp * mo[1 + m]);
        }
        if value.is_nan() {
            return Ok((f64::NEG_INFINITY, g));
        }
        Ok((value, g))
    }

    fn hessian(&self, theta: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let (a, b) = self.split(theta);
        Ok(Some(self.curvature(a, b)?))
    }
}

// ---------------------------------------------------------------------------
// public objectives

/// A dual objective in the optimizer's internal (centered and scaled)
/// coordinates. Exposed so that gradients can be checked independently.
pub struct DualObjective {
    inner: Box<dyn Concave + Send + Sync>,
    start: Vec<f64>,
}

impl DualObjective {
    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// The optimizer's starting point.
    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.inner.value_grad(theta)?.0)
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inner.value_grad(theta)?.1)
    }
}

fn kl_objective(p: &ProductDist, q: &ProductDist, class: &FunctionClass, tol: f64) -> Result<KlObjective> {
    check_dims(p, q)?;
    if let ClassKind::Poly(k) = class.kind {
        if k >= 2 && !q.is_atomic() {
            return Err(Error::Unsupported(format!(
                "KL dual with degree-{k} polynomial features under a continuous Q: \
                 E_Q[e^h] is infinite or on the integrability boundary for Laplace and \
                 Gaussian noise; use the α-divergence dual or a finite support"
            )));
        }
    }
    let basis = build_basis(class, q)?;
    let p_mean = p_mean(p, &basis, tol)?;
    let q = q_side(q, &basis, true);
    Ok(KlObjective {
        basis,
        constant: class.include_constant,
        p_mean,
        q,
        tol,
    })
}

fn alpha_objective(
    p: &ProductDist,
    q: &ProductDist,
    class: &FunctionClass,
    alpha: f64,
    tol: f64,
) -> Result<AlphaObjective> {
    check_dims(p, q)?;
    let c = c_alpha(alpha)?;
    let basis = build_basis(class, q)?;
    let p_mean = p_mean(p, &basis, tol)?;
    let qs = q_side(q, &basis, false);
    if let QSide::Nested(d) = &qs {
        let continuous = d.marginals().iter().filter(|m| m.is_continuous()).count();
        if continuous > 2 {
            return Err(Error::Unsupported(format!(
                "α dual by nested quadrature over {continuous} continuous coordinates (max 2)"
            )));
        }
    }
    Ok(AlphaObjective {
        basis,
        constant: class.include_constant,
        p_mean,
        q: qs,
        alpha,
        p: alpha / (alpha - 1.0),
        c,
        tol,
    })
}

/// The KL dual objective for `(P, Q, class)`.
pub fn kl_dual_objective(
    p: impl Into<ProductDist>,
    q: impl Into<ProductDist>,
    class: &FunctionClass,
    tol: f64,
) -> Result<DualObjective> {
    let obj = kl_objective(&p.into(), &q.into(), class, tol)?;
    let start = vec![0.0; obj.basis.dim()];
    Ok(DualObjective {
        inner: Box::new(obj),
        start,
    })
}

/// The α-divergence dual objective for `(P, Q, class)`; the last coordinate
/// is the offset when the class includes constants.
pub fn alpha_dual_objective(
    p: impl Into<ProductDist>,
    q: impl Into<ProductDist>,
    class: &FunctionClass,
    alpha: f64,
    tol: f64,
) -> Result<DualObjective> {
    let obj = alpha_objective(&p.into(), &q.into(), class, alpha, tol)?;
    let start = alpha_start(&obj)?;
    Ok(DualObjective {
        inner: Box::new(obj),
        start,
    })
}

/// `a = 0` with `h ≡ f'(1) = 1/(α−1)` when constants are available (the
/// exact optimum for P = Q); otherwise the best point on the ray along
/// `E_P[φ]`, since `h ≡ 0` is a point of unbounded curvature.
fn alpha_start(obj: &AlphaObjective) -> Result<Vec<f64>> {
    let m = obj.basis.dim();
    if obj.constant {
        let mut x = vec![0.0; m + 1];
        x[m] = 1.0 / (obj.alpha - 1.0);
        return Ok(x);
    }
    let dir = obj.p_mean.clone();
    let a2 = dot(&dir, &dir);
    if a2 == 0.0 {
        return Ok(vec![0.0; m]);
    }
    // maximize t·|m|² − C t^p E|m·φ|^p
    let b = obj.moments(&dir, 0.0)?[0];
    if !(b > 0.0) {
        return Ok(dir);
    }
    let t = (a2 / (obj.c * obj.p * b)).powf(1.0 / (obj.p - 1.0));
    Ok(dir.iter().map(|d| t * d).collect())
}

// ---------------------------------------------------------------------------
// primal oracle

struct JointAtoms {
    points: Vec<Vec<f64>>,
    p: Vec<f64>,
    q: Vec<f64>,
}

fn joint_atoms(p: &ProductDist, q: &ProductDist) -> Option<JointAtoms> {
    let pa = p.atoms()?;
    let qa = q.atoms()?;
    let mut points: Vec<Vec<f64>> = pa.iter().chain(&qa).map(|(x, _)| x.clone()).collect();
    points.sort_by(|x, y| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    points.dedup();
    let pw = points.iter().map(|x| p.mass_at(x)).collect();
    let qw = points.iter().map(|x| q.mass_at(x)).collect();
    Some(JointAtoms { points, p: pw, q: qw })
}

fn primal(atoms: &JointAtoms, spec: DivergenceSpec) -> Result<f64> {
    let check_ac = || -> Result<()> {
        for ((x, pi), qi) in atoms.points.iter().zip(&atoms.p).zip(&atoms.q) {
            if *pi > 0.0 && *qi == 0.0 {
                return Err(Error::AbsoluteContinuity { at: x[0] });
            }
        }
        Ok(())
    };
    let pairs = atoms.p.iter().zip(&atoms.q);
    Ok(match spec {
        DivergenceSpec::Kl => {
            check_ac()?;
            pairs.filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
        }
        DivergenceSpec::Alpha(alpha) => {
            check_ac()?;
            let k = alpha * alpha - alpha;
            pairs
                .filter(|(_, qi)| **qi > 0.0)
                .map(|(pi, qi)| qi * ((pi / qi).powf(alpha) - 1.0) / k)
                .sum()
        }
        DivergenceSpec::Renyi(alpha) => {
            check_ac()?;
            let s: f64 = pairs
                .filter(|(pi, qi)| **pi > 0.0 && **qi > 0.0)
                .map(|(pi, qi)| pi.powf(alpha) * qi.powf(1.0 - alpha))
                .sum();
            s.ln() / (alpha - 1.0)
        }
        DivergenceSpec::Tv => 0.5 * pairs.map(|(pi, qi)| (pi - qi).abs()).sum::<f64>(),
    })
}

/// Exact primal divergence `Σ_x Q(x) f(P(x)/Q(x))` between finite distributions.
pub fn brute_force_divergence(p: &Discrete, q: &Discrete, spec: DivergenceSpec) -> Result<f64> {
    let atoms = joint_atoms(&p.into(), &q.into()).expect("discrete distributions are atomic");
    primal(&atoms, spec)
}

fn unrestricted(p: &ProductDist, q: &ProductDist, spec: DivergenceSpec) -> Result<DualSolution> {
    check_dims(p, q)?;
    let Some(atoms) = joint_atoms(p, q) else {
        return Err(Error::Unsupported(
            "the unrestricted class is only computed on finite supports; use the closed forms".into(),
        ));
    };
    Ok(DualSolution {
        coefficients: Vec::new(),
        offset: 0.0,
        objective_value: primal(&atoms, spec)?,
        converged: true,
        iterations: 0,
        gradient_norm: 0.0,
    })
}

// ---------------------------------------------------------------------------
// public solvers

/// Restricted KL divergence `sup_{h ∈ H} E_P[h] − E_Q[e^{h−1}]`.
pub fn restricted_kl(
    p: impl Into<ProductDist>,
    q: impl Into<ProductDist>,
    class: &FunctionClass,
    tol: f64,
) -> Result<DualSolution> {
    let (p, q) = (p.into(), q.into());
    let s = settings(tol)?;
    if let ClassKind::AllFunctions = class.kind {
        return unrestricted(&p, &q, DivergenceSpec::Kl);
    }
    let obj = kl_objective(&p, &q, class, tol)?;
    let out = optim::maximize(&obj, vec![0.0; obj.basis.dim()], &s)?;
    let b = if out.unbounded || !obj.constant {
        0.0
    } else {
        // eliminated offset: b = 1 − log E_Q[e^{a·φ}]
        1.0 - obj.log_partition(&out.x)?.map(|lp| lp.value).unwrap_or(f64::NAN)
    };
    let (coefficients, offset) = obj.basis.unscale(&out.x, b);
    Ok(DualSolution {
        coefficients,
        offset,
        objective_value: out.value,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm: out.grad_norm,
    })
}

/// Restricted α-divergence
/// `sup_{h ∈ H} E_P[h] − C_α E_Q[|h|^{α/(α−1)}] − 1/(α² − α)`.
pub fn restricted_alpha(
    p: impl Into<ProductDist>,
    q: impl Into<ProductDist>,
    class: &FunctionClass,
    alpha: f64,
    tol: f64,
) -> Result<DualSolution> {
    let (p, q) = (p.into(), q.into());
    let spec = DivergenceSpec::alpha(alpha)?;
    let s = settings(tol)?;
    if let ClassKind::AllFunctions = class.kind {
        return unrestricted(&p, &q, spec);
    }
    let obj = alpha_objective(&p, &q, class, alpha, tol)?;
    let x0 = alpha_start(&obj)?;
    let out = optim::maximize(&obj, x0, &alpha_settings(s, alpha))?;
    let m = obj.basis.dim();
    let b = if obj.constant { out.x[m] } else { 0.0 };
    let (coefficients, offset) = obj.basis.unscale(&out.x[..m], b);
    Ok(DualSolution {
        coefficients,
        offset,
        objective_value: out.value,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm: out.grad_norm,
    })
}

fn exact_kind(p: &ProductDist, q: &ProductDist, class: &FunctionClass) -> BoundKind {
    let finite = matches!(class.kind, ClassKind::FiniteFeatures { .. } | ClassKind::AllFunctions);
    if finite && p.is_atomic() && q.is_atomic() {
        BoundKind::Exact
    } else {
        BoundKind::Lower
    }
}

fn certified(sol: &DualSolution) -> Result<f64> {
    if !sol.converged {
        return Err(Error::OptimizerNonConvergence {
            iterations: sol.iterations,
            gradient_norm: sol.gradient_norm,
        });
    }
    Ok(sol.objective_value.max(0.0))
}

/// Restricted Rényi divergence of order α, from the α-divergence dual.
pub fn restricted_renyi(
    p: impl Into<ProductDist>,
    q: impl Into<ProductDist>,
    class: &FunctionClass,
    alpha: f64,
    tol: f64,
) -> Result<BoundedValue> {
    let (p, q) = (p.into(), q.into());
    let kind = exact_kind(&p, &q, class);
    let sol = restricted_alpha(&p, &q, class, alpha, tol)?;
    let d = certified(&sol)?;
    BoundedValue::new(alpha_to_renyi(alpha, d)?, kind)
}

/// Restricted divergence of any supported kind as a bounded value. TV has no
/// smooth dual here and is computed only for the unrestricted class on
/// finite supports.
pub fn restricted_divergence(
    p: impl Into<ProductDist>,
    q: impl Into<ProductDist>,
    class: &FunctionClass,
    spec: DivergenceSpec,
    tol: f64,
) -> Result<BoundedValue> {
    let (p, q) = (p.into(), q.into());
    let kind = exact_kind(&p, &q, class);
    match spec {
        DivergenceSpec::Kl => BoundedValue::new(certified(&restricted_kl(&p, &q, class, tol)?)?, kind),
        DivergenceSpec::Alpha(alpha) => {
            BoundedValue::new(certified(&restricted_alpha(&p, &q, class, alpha, tol)?)?, kind)
        }
        DivergenceSpec::Renyi(alpha) => restricted_renyi(&p, &q, class, alpha, tol),
        DivergenceSpec::Tv => match class.kind {
            ClassKind::AllFunctions => BoundedValue::new(unrestricted(&p, &q, spec)?.objective_value, kind),
            _ => Err(Error::Unsupported(
                "restricted TV has a nonsmooth dual; use the analysis module's IPM".into(),
            )),
        },
    }
}

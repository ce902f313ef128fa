//! Combining privacy reports: sequential and parallel composition, convex
//! mixtures and post-processing.
//!
//! Every result is an `Upper` bound. Class conditions are checked through
//! the declared flags of the classes involved.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{Discrete, Dist1D, ProductDist};
use crate::divergences::closed::{kl_gaussian_exact, BoundKind, BoundedValue, DivergenceSpec};
use crate::divergences::variational::{
    restricted_divergence, restricted_kl, ClassDescriptor, ClassKind, Feature, FunctionClass,
};
use crate::error::{Error, Result};
use crate::mechanisms::{report_with_tol, MechanismConfig, PrivacyReport, DEFAULT_TOL};

/// A map applied to a mechanism's output before the adversary sees it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapDescriptor {
    Identity,
    /// `g(x) = G x` with `G` of shape `rows × cols`.
    Linear { rows: usize, cols: usize },
    /// Anything else; accepted only with a declared [`ClosureWitness`].
    Named { name: String },
}

impl fmt::Display for MapDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapDescriptor::Identity => write!(f, "id"),
            MapDescriptor::Linear { rows, cols } => write!(f, "lin[{rows}x{cols}]"),
            MapDescriptor::Named { name } => write!(f, "{name}"),
        }
    }
}

/// A class built from base classes by sums and composition with maps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassExpr {
    Base(ClassDescriptor),
    /// `{h₁(a) + h₂(b)}` on the joint output `(a, b)`.
    Sum(Box<ClassExpr>, Box<ClassExpr>),
    /// `{i ∘ g | i ∈ outer}`.
    Compose { map: MapDescriptor, outer: Box<ClassExpr> },
}

impl ClassExpr {
    pub fn base(d: ClassDescriptor) -> Self {
        ClassExpr::Base(d)
    }

    /// Sum of classes on a joint output. Two linear classes share their
    /// feature maps (coordinates), so their sum is again linear on the joint
    /// output; anything else stays symbolic.
    pub fn sum(left: ClassExpr, right: ClassExpr) -> Self {
        match (&left, &right) {
            (
                ClassExpr::Base(ClassDescriptor::Linear { dim: d1, include_constant: c1 }),
                ClassExpr::Base(ClassDescriptor::Linear { dim: d2, include_constant: c2 }),
            ) => ClassExpr::Base(ClassDescriptor::Linear {
                dim: d1 + d2,
                include_constant: *c1 || *c2,
            }),
            _ => ClassExpr::Sum(Box::new(left), Box::new(right)),
        }
    }

    pub fn compose(map: MapDescriptor, outer: ClassExpr) -> Self {
        ClassExpr::Compose {
            map,
            outer: Box::new(outer),
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            ClassExpr::Base(d) => d.is_convex(),
            ClassExpr::Sum(a, b) => a.is_convex() && b.is_convex(),
            ClassExpr::Compose { outer, .. } => outer.is_convex(),
        }
    }

    pub fn include_constant(&self) -> bool {
        match self {
            ClassExpr::Base(d) => d.include_constant(),
            ClassExpr::Sum(a, b) => a.include_constant() || b.include_constant(),
            ClassExpr::Compose { outer, .. } => outer.include_constant(),
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        match self {
            ClassExpr::Base(d) => d.is_translation_invariant(),
            // H₁ + H₂ + c = (H₁ + c) + H₂
            ClassExpr::Sum(a, b) => a.is_translation_invariant() || b.is_translation_invariant(),
            ClassExpr::Compose { outer, .. } => outer.is_translation_invariant(),
        }
    }

    /// Sound (not complete) test of `self ⊆ other`.
    pub fn within(&self, other: &ClassExpr) -> bool {
        if self == other {
            return true;
        }
        match (self, other) {
            (_, ClassExpr::Base(ClassDescriptor::AllFunctions)) => true,
            (ClassExpr::Base(a), ClassExpr::Base(b)) => descriptor_within(a, b),
            (ClassExpr::Sum(a1, b1), ClassExpr::Sum(a2, b2)) => a1.within(a2) && b1.within(b2),
            (ClassExpr::Compose { map, outer }, _) => match (map, outer.as_ref()) {
                (MapDescriptor::Identity, inner) => inner.within(other),
                (MapDescriptor::Linear { rows, cols }, ClassExpr::Base(t)) => {
                    pull_back_linear(t, *rows, *cols).is_some_and(|e| ClassExpr::Base(e).within(other))
                }
                _ => false,
            },
            _ => false,
        }
    }
}

impl fmt::Display for ClassExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassExpr::Base(d) => d.fmt(f),
            ClassExpr::Sum(a, b) => write!(f, "({a} + {b})"),
            ClassExpr::Compose { map, outer } => write!(f, "{outer}∘{map}"),
        }
    }
}

fn descriptor_within(a: &ClassDescriptor, b: &ClassDescriptor) -> bool {
    use ClassDescriptor::*;
    if a.include_constant() && !b.include_constant() {
        return false;
    }
    match (a, b) {
        (_, AllFunctions) => true,
        (AllFunctions, _) => false,
        (Linear { dim: d1, .. }, Linear { dim: d2, .. }) => d1 == d2,
        (Linear { dim: 1, .. }, Poly { .. }) => true,
        (Poly { degree: 1, .. }, Linear { dim: 1, .. }) => true,
        (Poly { degree: j, .. }, Poly { degree: k, .. }) => j <= k,
        (FiniteFeatures { name: n1, count: c1, .. }, FiniteFeatures { name: n2, count: c2, .. }) => {
            n1 == n2 && c1 == c2
        }
        _ => false,
    }
}

/// The class `{i ∘ g}` for linear `g: R^cols → R^rows`, when expressible.
fn pull_back_linear(target: &ClassDescriptor, rows: usize, cols: usize) -> Option<ClassDescriptor> {
    let c = target.include_constant();
    match target {
        ClassDescriptor::Linear { dim, .. } if *dim == rows => Some(ClassDescriptor::Linear {
            dim: cols,
            include_constant: c,
        }),
        ClassDescriptor::Poly { degree, .. } if rows == 1 => {
            if cols == 1 {
                Some(ClassDescriptor::Poly {
                    degree: *degree,
                    include_constant: c,
                })
            } else if *degree == 1 {
                Some(ClassDescriptor::Linear {
                    dim: cols,
                    include_constant: c,
                })
            } else {
                None
            }
        }
        _ => None,
    }
}

fn check_bound(r: &PrivacyReport) -> Result<()> {
    if r.epsilon.bound_kind == BoundKind::Lower {
        return Err(Error::Unsupported(format!(
            "`{}` carries a numerical lower bound, which cannot yield an upper bound on the combination",
            r.mechanism
        )));
    }
    Ok(())
}

fn composable_spec(r1: &PrivacyReport, r2: &PrivacyReport) -> Result<DivergenceSpec> {
    if r1.divergence != r2.divergence {
        return Err(Error::invalid(
            "divergence",
            format!("cannot combine {} with {}", r1.divergence, r2.divergence),
        ));
    }
    match r1.divergence {
        DivergenceSpec::Kl | DivergenceSpec::Renyi(_) => Ok(r1.divergence),
        other => Err(Error::Unsupported(format!(
            "composition is established for KL and Rényi only, not {other}"
        ))),
    }
}

fn require(cond: bool, r: &PrivacyReport, what: &str) -> Result<()> {
    if !cond {
        return Err(Error::ClassCondition(format!("class {} of `{}` is not {what}", r.class, r.mechanism)));
    }
    Ok(())
}

fn combined(r1: &PrivacyReport, r2: &PrivacyReport, tag: &str, eps: f64, spec: DivergenceSpec) -> Result<PrivacyReport> {
    Ok(PrivacyReport {
        mechanism: format!("{tag}({}, {})", r1.mechanism, r2.mechanism),
        class: ClassExpr::sum(r1.class.clone(), r2.class.clone()),
        divergence: spec,
        epsilon: BoundedValue::upper(eps)?,
        output_dim: r1.output_dim + r2.output_dim,
    })
}

/// Running two mechanisms on the same data: parameters add, against the
/// sum class. Both classes must be convex, translation invariant and
/// contain the constants.
pub fn compose_sequential(r1: &PrivacyReport, r2: &PrivacyReport) -> Result<PrivacyReport> {
    let spec = composable_spec(r1, r2)?;
    for r in [r1, r2] {
        check_bound(r)?;
        require(r.class.is_convex(), r, "convex")?;
        require(r.class.is_translation_invariant(), r, "translation invariant")?;
        require(r.class.include_constant(), r, "closed under adding constants")?;
    }
    combined(r1, r2, "seq", r1.epsilon.value + r2.epsilon.value, spec)
}

/// Running two mechanisms on disjoint parts of the data (the caller asserts
/// disjointness): the larger parameter, against the sum class.
pub fn compose_parallel(r1: &PrivacyReport, r2: &PrivacyReport) -> Result<PrivacyReport> {
    let spec = composable_spec(r1, r2)?;
    for r in [r1, r2] {
        check_bound(r)?;
        require(r.class.is_convex(), r, "convex")?;
        require(r.class.is_translation_invariant(), r, "translation invariant")?;
    }
    combined(r1, r2, "par", r1.epsilon.value.max(r2.epsilon.value), spec)
}

/// Adaptive composition has no established guarantee and is always refused.
pub fn compose_adaptive(_r1: &PrivacyReport, _r2: &PrivacyReport) -> Result<PrivacyReport> {
    Err(Error::Unsupported(
        "adaptive composition is not covered; compose mechanisms fixed in advance".into(),
    ))
}

/// Running `r1`'s mechanism with probability λ and `r2`'s otherwise.
/// Only f-divergences are convex in this sense, so Rényi is refused. The
/// result is `max(ε₁, ε₂)` regardless of λ, except at λ ∈ {0, 1} where the
/// mixture is one of the inputs.
pub fn mixture(r1: &PrivacyReport, r2: &PrivacyReport, lambda: f64) -> Result<PrivacyReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    if r1.divergence != r2.divergence {
        return Err(Error::invalid(
            "divergence",
            format!("cannot mix {} with {}", r1.divergence, r2.divergence),
        ));
    }
    if let DivergenceSpec::Renyi(_) = r1.divergence {
        return Err(Error::Unsupported(
            "Rényi divergence is not jointly convex, so mixtures do not preserve Rényi guarantees; \
             use the α-divergence instead"
                .into(),
        ));
    }
    if r1.output_dim != r2.output_dim {
        return Err(Error::invalid(
            "r2",
            format!("mixed mechanisms need the same range, got dimensions {} and {}", r1.output_dim, r2.output_dim),
        ));
    }
    if r1.class != r2.class {
        return Err(Error::ClassCondition(format!(
            "mixed mechanisms must be private against the same class, got {} and {}",
            r1.class, r2.class
        )));
    }
    if lambda == 0.0 {
        return Ok(r2.clone());
    }
    if lambda == 1.0 {
        return Ok(r1.clone());
    }
    check_bound(r1)?;
    check_bound(r2)?;
    Ok(PrivacyReport {
        mechanism: format!("mix({}, {}; {lambda})", r1.mechanism, r2.mechanism),
        class: r1.class.clone(),
        divergence: r1.divergence,
        epsilon: BoundedValue::upper(r1.epsilon.value.max(r2.epsilon.value))?,
        output_dim: r1.output_dim,
    })
}

/// A caller's claim that `target ∘ map` lies inside `source`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureWitness {
    pub map: MapDescriptor,
    pub target: ClassDescriptor,
    pub source: ClassExpr,
}

/// Post-processing with the built-in closure rules: identity, and linear
/// maps followed by linear or polynomial targets.
pub fn post_process(r: &PrivacyReport, map: &MapDescriptor, target: &FunctionClass) -> Result<PrivacyReport> {
    post_process_with(r, map, target, &[])
}

/// Post-processing that also accepts caller-declared closure witnesses.
pub fn post_process_with(
    r: &PrivacyReport,
    map: &MapDescriptor,
    target: &FunctionClass,
    witnesses: &[ClosureWitness],
) -> Result<PrivacyReport> {
    let tdesc = target.descriptor();
    let output_dim = match map {
        MapDescriptor::Identity => r.output_dim,
        MapDescriptor::Linear { rows, cols } => {
            if *cols != r.output_dim {
                return Err(Error::DimensionMismatch {
                    expected: r.output_dim,
                    got: *cols,
                });
            }
            *rows
        }
        MapDescriptor::Named { .. } => 0,
    };
    let pulled = ClassExpr::compose(map.clone(), ClassExpr::base(tdesc.clone()));
    let declared = witnesses
        .iter()
        .any(|w| &w.map == map && w.target == tdesc && w.source == r.class);
    if !(declared || pulled.within(&r.class)) {
        return Err(Error::ClassCondition(format!(
            "no closure witness that {pulled} lies inside {}",
            r.class
        )));
    }
    let output_dim = match (map, &tdesc) {
        (MapDescriptor::Named { .. }, ClassDescriptor::Linear { dim, .. }) => *dim,
        (MapDescriptor::Named { .. }, _) => 1,
        _ => output_dim,
    };
    Ok(PrivacyReport {
        mechanism: if *map == MapDescriptor::Identity {
            r.mechanism.clone()
        } else {
            format!("{map}∘{}", r.mechanism)
        },
        class: ClassExpr::base(tdesc),
        divergence: r.divergence,
        epsilon: r.epsilon,
        output_dim,
    })
}

// ---------------------------------------------------------------------------
// pipelines

/// One accountant step. Steps run on a stack: `report` and `given` push,
/// `sequential`, `parallel` and `mixture` pop two, `post_process` pops one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Step {
    Report {
        mechanism: MechanismConfig,
        class: ClassDescriptor,
        divergence: DivergenceSpec,
    },
    Given(PrivacyReport),
    Sequential,
    Parallel,
    Adaptive,
    Mixture {
        lambda: f64,
    },
    PostProcess {
        map: MapDescriptor,
        target: ClassDescriptor,
        #[serde(default)]
        witnesses: Vec<ClosureWitness>,
    },
}

/// Runs a JSON pipeline and returns the single report left on the stack.
/// Matrix paths in mechanism configs resolve against `base`.
pub fn run_pipeline(steps: &[Step], base: &std::path::Path, tol: f64) -> Result<PrivacyReport> {
    if steps.is_empty() {
        return Err(Error::invalid("pipeline", "no steps"));
    }
    let mut stack: Vec<PrivacyReport> = Vec::new();
    let pop = |stack: &mut Vec<PrivacyReport>, i: usize| {
        stack
            .pop()
            .ok_or_else(|| Error::invalid("pipeline", format!("step {i} needs more reports on the stack")))
    };
    for (i, step) in steps.iter().enumerate() {
        let out = match step {
            Step::Report {
                mechanism,
                class,
                divergence,
            } => {
                let mech = mechanism.build(base)?;
                report_with_tol(&mech, &FunctionClass::from_descriptor(class)?, *divergence, tol)?
            }
            Step::Given(r) => {
                BoundedValue::new(r.epsilon.value, r.epsilon.bound_kind)?;
                r.clone()
            }
            Step::Sequential | Step::Parallel | Step::Adaptive | Step::Mixture { .. } => {
                let r2 = pop(&mut stack, i)?;
                let r1 = pop(&mut stack, i)?;
                match step {
                    Step::Sequential => compose_sequential(&r1, &r2)?,
                    Step::Parallel => compose_parallel(&r1, &r2)?,
                    Step::Adaptive => compose_adaptive(&r1, &r2)?,
                    Step::Mixture { lambda } => mixture(&r1, &r2, *lambda)?,
                    _ => unreachable!(),
                }
            }
            Step::PostProcess { map, target, witnesses } => {
                let r = pop(&mut stack, i)?;
                post_process_with(&r, map, &FunctionClass::from_descriptor(target)?, witnesses)?
            }
        };
        stack.push(out);
    }
    match stack.len() {
        1 => Ok(stack.pop().expect("one report")),
        n => Err(Error::invalid("pipeline", format!("finished with {n} reports on the stack, expected 1"))),
    }
}

pub fn parse_pipeline(text: &str) -> Result<Vec<Step>> {
    Ok(serde_json::from_str(text)?)
}

/// [`run_pipeline`] with the default tolerance.
pub fn run_pipeline_default(steps: &[Step], base: &std::path::Path) -> Result<PrivacyReport> {
    run_pipeline(steps, base, DEFAULT_TOL)
}

// ---------------------------------------------------------------------------
// numerical witnesses

/// Left and right sides of a checked inequality `lhs ≤ rhs` (or equality).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sides {
    pub lhs: f64,
    pub rhs: f64,
}

/// The class `{h₁(x[..d1]) + h₂(x[d1..])}` on a joint output, for feature
/// or linear classes.
pub fn sum_class(h1: &FunctionClass, d1: usize, h2: &FunctionClass) -> Result<FunctionClass> {
    let constant = h1.include_constant() || h2.include_constant();
    match (h1.kind(), h2.kind()) {
        (ClassKind::Linear(a), ClassKind::Linear(b)) => {
            if *a != d1 {
                return Err(Error::DimensionMismatch { expected: d1, got: *a });
            }
            Ok(FunctionClass::linear(a + b)?.with_constant(constant))
        }
        (ClassKind::FiniteFeatures { name: n1, features: f1 }, ClassKind::FiniteFeatures { name: n2, features: f2 }) => {
            let mut features: Vec<Feature> = Vec::with_capacity(f1.len() + f2.len());
            for f in f1 {
                let f = f.clone();
                features.push(Arc::new(move |x: &[f64]| f(&x[..d1])));
            }
            for g in f2 {
                let g = g.clone();
                features.push(Arc::new(move |x: &[f64]| g(&x[d1..])));
            }
            Ok(FunctionClass::finite(format!("{n1}+{n2}"), features)?.with_constant(constant))
        }
        _ => Err(Error::Unsupported(format!("sum of {h1} and {h2} has no concrete basis"))),
    }
}

fn product(a: &Discrete, b: &Discrete) -> Result<ProductDist> {
    ProductDist::new(vec![Dist1D::Discrete(a.clone()), Dist1D::Discrete(b.clone())])
}

/// Composition witness: `D^{H₁+H₂}(P₁⊗P₂, Q₁⊗Q₂)` against
/// `D^{H₁}(P₁,Q₁) + D^{H₂}(P₂,Q₂)`.
#[allow(clippy::too_many_arguments)]
pub fn composition_witness(
    p1: &Discrete,
    q1: &Discrete,
    h1: &FunctionClass,
    p2: &Discrete,
    q2: &Discrete,
    h2: &FunctionClass,
    spec: DivergenceSpec,
    tol: f64,
) -> Result<Sides> {
    let h = sum_class(h1, 1, h2)?;
    let lhs = restricted_divergence(&product(p1, p2)?, &product(q1, q2)?, &h, spec, tol)?.value;
    let a = restricted_divergence(p1, q1, h1, spec, tol)?.value;
    let b = restricted_divergence(p2, q2, h2, spec, tol)?.value;
    Ok(Sides { lhs, rhs: a + b })
}

/// Convexity witness: `D^H(λA + (1−λ)B, λA' + (1−λ)B')` against
/// `λ D^H(A, A') + (1−λ) D^H(B, B')`.
#[allow(clippy::too_many_arguments)]
pub fn convexity_witness(
    a: &Discrete,
    a2: &Discrete,
    b: &Discrete,
    b2: &Discrete,
    class: &FunctionClass,
    spec: DivergenceSpec,
    lambda: f64,
    tol: f64,
) -> Result<Sides> {
    if !spec.is_f_divergence() {
        return Err(Error::Unsupported(format!("{spec} is not an f-divergence")));
    }
    let lhs = restricted_divergence(&a.mix(b, lambda)?, &a2.mix(b2, lambda)?, class, spec, tol)?.value;
    let da = restricted_divergence(a, a2, class, spec, tol)?.value;
    let db = restricted_divergence(b, b2, class, spec, tol)?.value;
    Ok(Sides {
        lhs,
        rhs: lambda * da + (1.0 - lambda) * db,
    })
}

/// Post-processing witness: linear KL of `N(cμ₁, c²σ²)` vs `N(cμ₂, c²σ²)`
/// against that of the unmapped pair. Both sides come from the dual solver;
/// the closed form `(μ₁−μ₂)²/(2σ²)` is the shared reference.
pub fn post_processing_witness(mu1: f64, mu2: f64, sigma: f64, c: f64, tol: f64) -> Result<(Sides, f64)> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::invalid("c", "map must be a nonzero finite scaling"));
    }
    let lin = FunctionClass::linear(1)?;
    let src = restricted_kl(&Dist1D::gaussian(mu1, sigma)?, &Dist1D::gaussian(mu2, sigma)?, &lin, tol)?;
    let s = c.abs() * sigma;
    let img = restricted_kl(&Dist1D::gaussian(c * mu1, s)?, &Dist1D::gaussian(c * mu2, s)?, &lin, tol)?;
    if !(src.converged && img.converged) {
        return Err(Error::OptimizerNonConvergence {
            iterations: src.iterations.max(img.iterations),
            gradient_norm: src.gradient_norm.max(img.gradient_norm),
        });
    }
    let exact = kl_gaussian_exact(mu1, mu2, sigma)?.value;
    Ok((
        Sides {
            lhs: img.objective_value,
            rhs: src.objective_value,
        },
        exact,
    ))
}

//! Adaptive Gauss–Legendre quadrature on finite intervals.
//!
//! Every expectation over a continuous distribution in this crate goes through
//! [`integrate_vec`]: a fixed order-20 Gauss–Legendre panel rule with global
//! bisection of the worst panel. A panel's error is the change between the
//! rule on the whole panel and on its two halves. Integrands are
//! vector-valued so that an objective and its gradient share nodes.
//!
//! Callers pass breakpoints (density kinks, sign changes of the integrand) so
//! that no panel straddles a non-smooth point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Number of nodes in the panel rule.
pub const ORDER: usize = 20;

/// Refinement limit; exceeding it is reported as non-convergence.
pub const MAX_PANELS: usize = 50_000;

/// Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Chebyshev-like initial guess for the i-th largest root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Applies the rule on [a, b], accumulating `f` into `out`.
    fn apply<F>(&self, f: &mut F, a: f64, b: f64, scratch: &mut [f64], out: &mut [f64])
    where
        F: FnMut(f64, &mut [f64]),
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            scratch.iter_mut().for_each(|s| *s = 0.0);
            f(mid + half * x, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += w * half * s;
            }
        }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The shared order-20 rule.
pub fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(ORDER))
}

/// Integrates a scalar function over [a, b] to absolute tolerance `tol`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let v = integrate_vec(|x, out| out[0] = f(x), 1, &[a, b], tol)?;
    Ok(v[0])
}

/// Integrates a vector-valued function of dimension `dim` over the interval
/// spanned by `breaks` (sorted; the first and last entries are the limits).
///
/// Globally adaptive: the panel with the largest error estimate is bisected
/// until the summed estimate drops below `tol` (absolute, per component) or
/// below rounding level relative to the result.
pub fn integrate_vec<F>(mut f: F, dim: usize, breaks: &[f64], tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if breaks.len() < 2 {
        return Err(Error::invalid("breaks", "need at least two points"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let gl = rule();
    let mut scratch = vec![0.0; dim];
    let mut inner = vec![0.0; dim];
    let mut eval = |f: &mut F, a: f64, b: f64, whole: &[f64]| -> Panel {
        let scratch = &mut inner;
        let m = 0.5 * (a + b);
        let mut left = vec![0.0; dim];
        let mut right = vec![0.0; dim];
        gl.apply(f, a, m, scratch, &mut left);
        gl.apply(f, m, b, scratch, &mut right);
        let mut err: f64 = 0.0;
        let mut mag: f64 = 0.0;
        for k in 0..dim {
            err = err.max((left[k] + right[k] - whole[k]).abs());
            mag = mag.max(left[k].abs() + right[k].abs());
        }
        if err.is_nan() {
            err = f64::INFINITY;
        }
        Panel { a, b, err, mag, left, right }
    };

    let mut heap = BinaryHeap::new();
    let mut whole = vec![0.0; dim];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        gl.apply(&mut f, a, b, &mut scratch, &mut whole);
        heap.push(eval(&mut f, a, b, &whole));
    }
    let mut panels = heap.len();
    let sums = |heap: &BinaryHeap<Panel>| heap.iter().fold((0.0, 0.0), |(e, m), p| (e + p.err, m + p.mag));
    let (mut total_err, mut total_mag) = sums(&heap);
    loop {
        let Some(worst) = heap.peek() else { break };
        let mut settled = total_err <= tol || total_err <= 64.0 * f64::EPSILON * total_mag;
        if settled {
            // running sums drift; confirm against a fresh total
            (total_err, total_mag) = sums(&heap);
            settled = total_err <= tol || total_err <= 64.0 * f64::EPSILON * total_mag;
        }
        let m = 0.5 * (worst.a + worst.b);
        let unsplittable = !(m > worst.a && m < worst.b);
        if settled || !worst.err.is_finite() || unsplittable {
            break;
        }
        panels += 1;
        if panels > MAX_PANELS {
            return Err(Error::QuadratureNonConvergence {
                tol,
                panels,
                estimate: total_err,
            });
        }
        let worst = heap.pop().expect("peeked");
        let l = eval(&mut f, worst.a, m, &worst.left);
        let r = eval(&mut f, m, worst.b, &worst.right);
        total_err += l.err + r.err - worst.err;
        total_mag += l.mag + r.mag - worst.mag;
        heap.push(l);
        heap.push(r);
    }

    // Neumaier-compensated accumulation in a fixed (left-to-right) order.
    let mut parts: Vec<Panel> = heap.into_vec();
    parts.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut result = vec![0.0; dim];
    let mut comp = vec![0.0; dim];
    for p in &parts {
        for k in 0..dim {
            let v = p.left[k] + p.right[k];
            let t = result[k] + v;
            if result[k].abs() >= v.abs() {
                comp[k] += (result[k] - t) + v;
            } else {
                comp[k] += (v - t) + result[k];
            }
            result[k] = t;
        }
    }
    for k in 0..dim {
        result[k] += comp[k];
    }
    Ok(result)
}

struct Panel {
    a: f64,
    b: f64,
    err: f64,
    mag: f64,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .total_cmp(&other.err)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Fixed composite rule: `panels` equal panels per break interval. Used where a
/// cheap approximation suffices (search directions, nested grids).
pub fn integrate_fixed<F>(mut f: F, dim: usize, breaks: &[f64], panels: usize) -> Vec<f64>
where
    F: FnMut(f64, &mut [f64]),
{
    let gl = rule();
    let mut scratch = vec![0.0; dim];
    let mut part = vec![0.0; dim];
    let mut result = vec![0.0; dim];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let h = (b - a) / panels as f64;
        for j in 0..panels {
            let pa = a + j as f64 * h;
            gl.apply(&mut f, pa, pa + h, &mut scratch, &mut part);
            for k in 0..dim {
                result[k] += part[k];
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let gl = rule();
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 38 is the highest exactly integrated monomial for n = 20
        let v: f64 = gl
            .nodes
            .iter()
            .zip(&gl.weights)
            .map(|(x, w)| w * x.powi(38))
            .sum();
        assert!((v - 2.0 / 39.0).abs() < 1e-13);
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let gl = rule();
        for w in gl.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..ORDER {
            assert!((gl.nodes[i] + gl.nodes[ORDER - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_handles_kink_at_breakpoint() {
        let v = integrate_vec(|x, o| o[0] = x.abs(), 1, &[-1.0, 0.0, 2.0], 1e-12).unwrap();
        assert!((v[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_kink_without_breakpoint() {
        let v = integrate(|x| (x - 0.3).abs(), -1.0, 1.0, 1e-10).unwrap();
        assert!((v - (0.65 * 1.3 + 0.35 * 0.7)).abs() < 1e-10);
    }

    #[test]
    fn endpoint_power_singularity_converges() {
        // ∫_0^1 x^{-1/2} dx = 2
        let v = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-8).unwrap();
        assert!((v - 2.0).abs() < 1e-7);
    }

    #[test]
    fn non_convergence_is_reported() {
        let r = integrate(|x| (1.0 / x).sin() / x, 1e-12, 1.0, 1e-14);
        assert!(matches!(r, Err(Error::QuadratureNonConvergence { .. })));
    }
}

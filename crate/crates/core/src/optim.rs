//! Damped Newton ascent for smooth concave objectives.
//!
//! Objectives report `-∞` outside their domain (an infinite MGF, say); the
//! backtracking line search treats that as a barrier. An objective that climbs
//! past the configured cap is reported as unbounded.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A concave function to maximize.
pub trait Concave {
    fn dim(&self) -> usize;

    /// Value and gradient at `x`; value is `-∞` outside the domain, in which
    /// case the gradient is ignored.
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hessian at `x`, or `None` to fall back to gradient steps. It only
    /// shapes search directions, so a coarse approximation is acceptable.
    fn hessian(&self, _x: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    /// Stop once the gradient ∞-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Objective values above this are reported as unbounded.
    pub cap: f64,
    /// Also accept a Newton decrement below `1e-3·tol·max(1, |f|)` (with no
    /// gradient along flat directions), for objectives whose optimal value
    /// may be astronomically large.
    pub relative: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol: 1e-9,
            max_iter: 10_000,
            cap: 1e6,
            relative: false,
        }
    }
}

impl Settings {
    pub fn with_tol(tol: f64) -> Self {
        Settings {
            tol,
            ..Settings::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    /// `+∞` when the objective is unbounded above.
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub unbounded: bool,
}

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 80;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Step {
    d: Vec<f64>,
    /// `gᵀ(−H)⁺g` over curved directions: twice the predicted remaining gain.
    decrement: f64,
    /// Largest gradient component along flat directions.
    flat_grad: f64,
    /// Share of `gᵀd` contributed by flat directions.
    flat_slope: f64,
}

/// Newton direction `(−H)⁺ g` over directions of significant curvature,
/// plus the plain gradient component along flat directions. Flat directions
/// are either exact invariances (collinear features), where the gradient
/// vanishes, or unbounded rays, which the step expansion follows.
fn newton_step(h: &DMatrix<f64>, g: &[f64]) -> Option<Step> {
    let n = g.len();
    let neg = -h;
    if neg.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = (&neg + neg.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-10 * top;
    let gv = DVector::from_column_slice(g);
    let mut d = DVector::zeros(n);
    let (mut decrement, mut flat_grad, mut flat_slope) = (0.0, 0.0f64, 0.0);
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let c = v.dot(&gv);
        if *lam > floor {
            d += v * (c / lam);
            decrement += c * c / lam;
        } else {
            d += v * c;
            flat_grad = flat_grad.max(c.abs());
            flat_slope += c * c;
        }
    }
    let slope = decrement + flat_slope;
    if d.iter().all(|v| v.is_finite()) && slope > 0.0 {
        Some(Step {
            d: d.as_slice().to_vec(),
            decrement,
            flat_grad,
            flat_slope: flat_slope / slope,
        })
    } else {
        None
    }
}

/// Maximizes `obj` from `x0`, which must have a finite objective value.
pub fn maximize(obj: &dyn Concave, x0: Vec<f64>, settings: &Settings) -> Result<Outcome> {
    let mut x = x0;
    let (mut f, mut g) = obj.value_grad(&x)?;
    if !f.is_finite() {
        return Err(Error::invalid("x0", format!("starting point has objective {f}")));
    }
    let mut grad_step = 1.0;
    let mut iterations = 0;
    let done = |x: Vec<f64>, f: f64, gn: f64, iterations: usize| Outcome {
        x,
        value: f,
        grad_norm: gn,
        iterations,
        converged: true,
        unbounded: false,
    };
    loop {
        let gn = inf_norm(&g);
        if f > settings.cap {
            return Ok(unbounded(x, iterations));
        }
        if gn < settings.tol {
            return Ok(done(x, f, gn, iterations));
        }
        let newton = obj.hessian(&x)?.and_then(|h| newton_step(&h, &g));
        if settings.relative {
            if let Some(st) = &newton {
                // remaining gain negligible relative to |f|, nothing along flat directions
                if 0.5 * st.decrement <= 1e-3 * settings.tol * f.abs().max(1.0) && st.flat_grad < settings.tol {
                    return Ok(done(x, f, gn, iterations));
                }
            }
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let is_newton = newton.is_some();
        let flat_share = newton.as_ref().map_or(1.0, |st| st.flat_slope);
        let d = newton.map_or_else(|| g.clone(), |st| st.d);
        let slope = dot(&g, &d);
        let t0 = if is_newton { 1.0 } else { grad_step };
        let mut t = t0;

        let mut accepted: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..MAX_HALVINGS {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (fv, gv) = obj.value_grad(&xn)?;
            if fv == f64::INFINITY || fv > settings.cap {
                return Ok(unbounded(xn, iterations));
            }
            if fv.is_finite() {
                let armijo = fv >= f + ARMIJO * t * slope;
                // Near the optimum the predicted gain drops below rounding
                // in f; accept the step if it shrinks the gradient instead.
                let rounding = t * slope <= 1e-13 * f.abs().max(1.0) && inf_norm(&gv) < gn;
                if armijo || rounding {
                    accepted = Some((fv, gv, xn, t));
                    break;
                }
            }
            t *= BACKTRACK;
        }
        let Some((mut fv, mut gv, mut xn, t_ok)) = accepted else {
            break;
        };

        // Expand while the full step keeps paying off: gradient steps, and
        // Newton steps dominated by a flat direction along which the
        // objective is still increasing linearly (an unbounded ray).
        let linear = fv - f >= 0.9 * t_ok * slope;
        if t_ok == t0 && (!is_newton || (flat_share > 0.5 && linear)) {
            let mut te = t_ok;
            for _ in 0..2000 {
                te *= 2.0;
                let xe: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + te * di).collect();
                let (fe, ge) = obj.value_grad(&xe)?;
                if fe == f64::INFINITY || fe > settings.cap {
                    return Ok(unbounded(xe, iterations));
                }
                if !(fe.is_finite() && fe > fv && fe >= f + ARMIJO * te * slope) {
                    te *= 0.5;
                    break;
                }
                fv = fe;
                gv = ge;
                xn = xe;
            }
            if !is_newton {
                grad_step = te;
            }
        } else if !is_newton {
            grad_step = t_ok;
        }
        x = xn;
        f = fv;
        g = gv;
    }

    Ok(Outcome {
        x,
        value: f,
        grad_norm: inf_norm(&g),
        iterations,
        converged: false,
        unbounded: false,
    })
}

fn unbounded(x: Vec<f64>, iterations: usize) -> Outcome {
    Outcome {
        x,
        value: f64::INFINITY,
        grad_norm: 0.0,
        iterations,
        converged: true,
        unbounded: true,
    }
}

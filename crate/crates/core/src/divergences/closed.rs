//! Closed-form divergence values and analytic bounds for Laplace and Gaussian
//! location pairs.
//!
//! All mechanism formulas take a sensitivity vector `v`: the outputs on two
//! neighbouring datasets are `noise` and `v + noise` with i.i.d. coordinates.
//! The unidimensional results are the `v = [1]` special case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which divergence Γ measures the privacy loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub enum DivergenceSpec {
    Kl,
    /// The α-divergence, f(t) = (|t|^α − 1)/(α² − α).
    Alpha(f64),
    Renyi(f64),
    Tv,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SpecRepr {
    Kl,
    Alpha { alpha: f64 },
    Renyi { alpha: f64 },
    Tv,
}

impl TryFrom<SpecRepr> for DivergenceSpec {
    type Error = Error;
    fn try_from(r: SpecRepr) -> Result<Self> {
        match r {
            SpecRepr::Kl => Ok(DivergenceSpec::Kl),
            SpecRepr::Tv => Ok(DivergenceSpec::Tv),
            SpecRepr::Alpha { alpha } => DivergenceSpec::alpha(alpha),
            SpecRepr::Renyi { alpha } => DivergenceSpec::renyi(alpha),
        }
    }
}

impl From<DivergenceSpec> for SpecRepr {
    fn from(s: DivergenceSpec) -> Self {
        match s {
            DivergenceSpec::Kl => SpecRepr::Kl,
            DivergenceSpec::Tv => SpecRepr::Tv,
            DivergenceSpec::Alpha(alpha) => SpecRepr::Alpha { alpha },
            DivergenceSpec::Renyi(alpha) => SpecRepr::Renyi { alpha },
        }
    }
}

impl DivergenceSpec {
    pub fn alpha(alpha: f64) -> Result<Self> {
        check_order(alpha)?;
        Ok(DivergenceSpec::Alpha(alpha))
    }

    pub fn renyi(alpha: f64) -> Result<Self> {
        check_order(alpha)?;
        Ok(DivergenceSpec::Renyi(alpha))
    }

    /// Whether Γ is an f-divergence (Rényi is not).
    pub fn is_f_divergence(&self) -> bool {
        !matches!(self, DivergenceSpec::Renyi(_))
    }
}

impl std::fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceSpec::Kl => write!(f, "KL"),
            DivergenceSpec::Alpha(a) => write!(f, "alpha({a})"),
            DivergenceSpec::Renyi(a) => write!(f, "Renyi({a})"),
            DivergenceSpec::Tv => write!(f, "TV"),
        }
    }
}

/// Parses the display form (`KL`, `TV`, `Renyi(2)`, `alpha(3)`) and the
/// shorthand `renyi:2` / `alpha:3`, case-insensitively.
impl std::str::FromStr for DivergenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "kl" => return Ok(DivergenceSpec::Kl),
            "tv" => return Ok(DivergenceSpec::Tv),
            _ => {}
        }
        let (name, arg) = match (t.split_once('('), t.split_once(':')) {
            (Some((n, rest)), _) if rest.ends_with(')') => (n, &rest[..rest.len() - 1]),
            (None, Some((n, a))) => (n, a),
            _ => return Err(Error::Parse(format!("unknown divergence `{s}`"))),
        };
        let order: f64 = arg
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad order in divergence `{s}`")))?;
        match name.trim() {
            "renyi" => DivergenceSpec::renyi(order),
            "alpha" => DivergenceSpec::alpha(order),
            _ => Err(Error::Parse(format!("unknown divergence `{s}`"))),
        }
    }
}

/// How a reported value relates to the true parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Exact,
    Upper,
    Lower,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundKind::Exact => "exact",
            BoundKind::Upper => "upper",
            BoundKind::Lower => "lower",
        })
    }
}

/// A divergence value tagged with its bound kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedValue {
    pub value: f64,
    pub bound_kind: BoundKind,
}

impl BoundedValue {
    /// Values within rounding of zero are clamped to zero; anything more
    /// negative or NaN is rejected.
    pub fn new(value: f64, bound_kind: BoundKind) -> Result<Self> {
        if value.is_nan() || value < -1e-9 {
            return Err(Error::invalid("value", format!("divergence must be >= 0, got {value}")));
        }
        Ok(BoundedValue {
            value: value.max(0.0),
            bound_kind,
        })
    }

    pub fn exact(value: f64) -> Result<Self> {
        Self::new(value, BoundKind::Exact)
    }

    pub fn upper(value: f64) -> Result<Self> {
        Self::new(value, BoundKind::Upper)
    }

    pub fn lower(value: f64) -> Result<Self> {
        Self::new(value, BoundKind::Lower)
    }
}

fn check_order(alpha: f64) -> Result<()> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("order must be finite and > 1, got {alpha}")));
    }
    Ok(())
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(name, format!("must be positive and finite, got {x}")));
    }
    Ok(())
}

fn check_vector(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("v", "sensitivity vector must be nonempty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("v", "sensitivity entries must be finite"));
    }
    Ok(())
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 35.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn p_norm_pow(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum()
}

/// KL(Lap(0, 1/ε) ‖ Lap(1, 1/ε)) = ε − 1 + e^{−ε}.
pub fn kl_laplace_exact(eps: f64) -> Result<BoundedValue> {
    check_positive("eps", eps)?;
    BoundedValue::exact(eps + (-eps).exp_m1())
}

/// KL between i.i.d. Laplace(1/ε) products shifted by `v`.
pub fn kl_laplace_shift(eps: f64, v: &[f64]) -> Result<BoundedValue> {
    check_positive("eps", eps)?;
    check_vector(v)?;
    let total = v
        .iter()
        .map(|vi| {
            let t = eps * vi.abs();
            t + (-t).exp_m1()
        })
        .sum();
    BoundedValue::exact(total)
}

fn lin_kl_laplace_value(eps: f64) -> f64 {
    // s = √(1+ε²) − 1 written without cancellation
    let s = eps * eps / ((1.0 + eps * eps).sqrt() + 1.0);
    let ratio = s / eps;
    s + (-ratio * ratio).ln_1p()
}

/// Linear-restricted KL between Lap(0, 1/ε) and Lap(1, 1/ε).
pub fn lin_kl_laplace_exact(eps: f64) -> Result<BoundedValue> {
    check_positive("eps", eps)?;
    BoundedValue::exact(lin_kl_laplace_value(eps))
}

/// The optimal linear coefficient a* = 1 − √(1+ε²) for [`lin_kl_laplace_exact`].
pub fn lin_kl_laplace_maximizer(eps: f64) -> Result<f64> {
    check_positive("eps", eps)?;
    Ok(-eps * eps / ((1.0 + eps * eps).sqrt() + 1.0))
}

/// Linear-restricted KL for a d-dimensional Laplace shift; the dual problem
/// separates across coordinates.
pub fn lin_kl_laplace_shift(eps: f64, v: &[f64]) -> Result<BoundedValue> {
    check_positive("eps", eps)?;
    check_vector(v)?;
    let total = v
        .iter()
        .filter(|vi| **vi != 0.0)
        .map(|vi| lin_kl_laplace_value(eps * vi.abs()))
        .sum();
    BoundedValue::exact(total)
}

/// KL(N(μ₁, σ²) ‖ N(μ₂, σ²)) = (μ₁ − μ₂)²/(2σ²); equal to the linear-restricted value.
pub fn kl_gaussian_exact(mu1: f64, mu2: f64, sigma: f64) -> Result<BoundedValue> {
    check_positive("sigma", sigma)?;
    let d = mu1 - mu2;
    BoundedValue::exact(d * d / (2.0 * sigma * sigma))
}

pub fn kl_gaussian_shift(sigma: f64, v: &[f64]) -> Result<BoundedValue> {
    check_positive("sigma", sigma)?;
    check_vector(v)?;
    BoundedValue::exact(p_norm_pow(v, 2.0) / (2.0 * sigma * sigma))
}

/// Exact Rényi divergence of order α between Laplace(1/ε) products shifted by `v`.
pub fn renyi_laplace_exact(alpha: f64, eps: f64, v: &[f64]) -> Result<BoundedValue> {
    check_order(alpha)?;
    check_positive("eps", eps)?;
    check_vector(v)?;
    let c = 1.0 / (4.0 * alpha - 2.0);
    let total: f64 = v
        .iter()
        .map(|vi| {
            let t = eps * vi.abs();
            // log((½+c)e^{(α−1)t} + (½−c)e^{−αt}), factoring out e^{(α−1)t}
            (alpha - 1.0) * t + ((0.5 + c) + (0.5 - c) * (-(2.0 * alpha - 1.0) * t).exp()).ln()
        })
        .sum();
    BoundedValue::exact(total / (alpha - 1.0))
}

/// Lower bound ε‖v‖₁ − d·log 2/(α − 1) on the unrestricted Laplace Rényi divergence,
/// clamped at zero.
pub fn renyi_laplace_lower(alpha: f64, eps: f64, v: &[f64]) -> Result<BoundedValue> {
    check_order(alpha)?;
    check_positive("eps", eps)?;
    check_vector(v)?;
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let d = v.len() as f64;
    BoundedValue::lower((eps * l1 - d * std::f64::consts::LN_2 / (alpha - 1.0)).max(0.0))
}

/// Exact Rényi divergence α‖v‖₂²/(2σ²) between Gaussian products.
pub fn renyi_gaussian_exact(alpha: f64, sigma: f64, v: &[f64]) -> Result<BoundedValue> {
    check_order(alpha)?;
    check_positive("sigma", sigma)?;
    check_vector(v)?;
    BoundedValue::exact(alpha * p_norm_pow(v, 2.0) / (2.0 * sigma * sigma))
}

fn check_upper_order(alpha: f64) -> Result<()> {
    check_order(alpha)?;
    if alpha <= 2.0 {
        return Err(Error::invalid(
            "alpha",
            format!("the linear Rényi upper bound is only established for α > 2, got {alpha}"),
        ));
    }
    Ok(())
}

/// Upper bound on the linear-restricted Rényi divergence between `X` and
/// `X + v`, `X` having `d` i.i.d. coordinates symmetric about zero with
/// `E|Y|^{α/(α−1)} = k`:
/// `(1/(α−1)) log(1 + ‖v‖_α^α / (0.5^d k)^{α−1})`.
pub fn lin_renyi_upper_symmetric(alpha: f64, v: &[f64], k: f64, d: usize) -> Result<BoundedValue> {
    check_upper_order(alpha)?;
    check_positive("k", k)?;
    check_vector(v)?;
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let norm = p_norm_pow(v, alpha);
    if norm == 0.0 {
        return BoundedValue::upper(0.0);
    }
    // log of ‖v‖^α / (0.5^d k)^{α−1}
    let z = norm.ln() - (alpha - 1.0) * (k.ln() - d as f64 * std::f64::consts::LN_2);
    BoundedValue::upper(softplus(z) / (alpha - 1.0))
}

/// The Laplace specialization, using K ≥ ε^{−α/(α−1)}.
pub fn lin_renyi_upper_laplace(alpha: f64, eps: f64, v: &[f64]) -> Result<BoundedValue> {
    check_upper_order(alpha)?;
    check_positive("eps", eps)?;
    let k = eps.powf(-alpha / (alpha - 1.0));
    lin_renyi_upper_symmetric(alpha, v, k, v.len())
}

/// The Gaussian specialization, using K ≥ σ^{α/(α−1)} √(2/π).
pub fn lin_renyi_upper_gaussian(alpha: f64, sigma: f64, v: &[f64]) -> Result<BoundedValue> {
    check_upper_order(alpha)?;
    check_positive("sigma", sigma)?;
    let k = sigma.powf(alpha / (alpha - 1.0)) * (2.0 / std::f64::consts::PI).sqrt();
    lin_renyi_upper_symmetric(alpha, v, k, v.len())
}

/// Upper bound `(1/(α−1)) log(1 + 2^{s(α−1)} ε^α)` on the linear Rényi parameter
/// of the matrix mechanism with an `s`-row strategy matrix.
pub fn matrix_mechanism_upper(alpha: f64, eps: f64, s: usize) -> Result<BoundedValue> {
    check_upper_order(alpha)?;
    check_positive("eps", eps)?;
    if s == 0 {
        return Err(Error::invalid("s", "strategy matrix needs at least one row"));
    }
    let z = s as f64 * (alpha - 1.0) * std::f64::consts::LN_2 + alpha * eps.ln();
    BoundedValue::upper(softplus(z) / (alpha - 1.0))
}

/// Rényi divergence of order α from the α-divergence value.
pub fn alpha_to_renyi(alpha: f64, d_alpha: f64) -> Result<f64> {
    check_order(alpha)?;
    if !(d_alpha >= 0.0) {
        return Err(Error::invalid("d_alpha", format!("must be >= 0, got {d_alpha}")));
    }
    Ok((alpha * (alpha - 1.0) * d_alpha).ln_1p() / (alpha - 1.0))
}

/// Inverse of [`alpha_to_renyi`].
pub fn renyi_to_alpha(alpha: f64, renyi: f64) -> Result<f64> {
    check_order(alpha)?;
    if !(renyi >= 0.0) {
        return Err(Error::invalid("renyi", format!("must be >= 0, got {renyi}")));
    }
    Ok(((alpha - 1.0) * renyi).exp_m1() / (alpha * (alpha - 1.0)))
}

/// C_α = (α−1)^{α/(α−1)}/α, the coefficient of the α-divergence conjugate.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    check_order(alpha)?;
    Ok((alpha - 1.0).powf(alpha / (alpha - 1.0)) / alpha)
}

/// `max_{a ≥ 0} a − X a^{α/(α−1)} = (α−1)^{α−1}/(α^α X^{α−1})`.
pub fn dual_max(alpha: f64, x: f64) -> Result<f64> {
    check_order(alpha)?;
    check_positive("x", x)?;
    Ok(((alpha - 1.0) * (alpha - 1.0).ln() - alpha * alpha.ln() - (alpha - 1.0) * x.ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Golden-section maximization; independent oracle for `dual_max`.
    fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        for _ in 0..200 {
            if f(c) > f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - g * (hi - lo);
            d = lo + g * (hi - lo);
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn kl_laplace_examples() {
        let v = kl_laplace_exact(1.0).unwrap();
        assert_abs_diff_eq!(v.value, 0.367_879_4, epsilon = 1e-7);
        assert_eq!(v.bound_kind, BoundKind::Exact);
        assert_abs_diff_eq!(kl_laplace_exact(2.0).unwrap().value, 1.135_335_3, epsilon = 1e-7);
        let tiny = kl_laplace_exact(1e-8).unwrap().value;
        assert!((0.0..1e-15).contains(&tiny));
        assert!(kl_laplace_exact(0.0).is_err());
    }

    #[test]
    fn lin_kl_laplace_examples() {
        assert_abs_diff_eq!(lin_kl_laplace_exact(1.0).unwrap().value, 0.225_988_0, epsilon = 1e-6);
        let direct = 2f64.sqrt() - 1.0 + (1.0 - (2f64.sqrt() - 1.0).powi(2)).ln();
        assert_abs_diff_eq!(lin_kl_laplace_exact(1.0).unwrap().value, direct, epsilon = 1e-15);
        assert_abs_diff_eq!(lin_kl_laplace_maximizer(1.0).unwrap(), -0.414_213_6, epsilon = 1e-7);
        let tiny = lin_kl_laplace_exact(1e-6).unwrap().value;
        assert!((0.0..1e-11).contains(&tiny));
    }

    #[test]
    fn lin_kl_maximizer_solves_stationarity() {
        for eps in [0.3, 1.0, 2.5] {
            let a = lin_kl_laplace_maximizer(eps).unwrap();
            // a² − 2a − ε² = 0
            assert_abs_diff_eq!(a * a - 2.0 * a - eps * eps, 0.0, epsilon = 1e-12);
            let obj = |a: f64| (1.0 - a * a / (eps * eps)).ln() - a;
            let best = golden_max(obj, -eps + 1e-12, eps - 1e-12);
            assert_abs_diff_eq!(best, lin_kl_laplace_exact(eps).unwrap().value, epsilon = 1e-10);
        }
    }

    #[test]
    fn kl_gaussian_examples() {
        assert_abs_diff_eq!(kl_gaussian_exact(0.0, 1.0, 1.0).unwrap().value, 0.5, epsilon = 1e-15);
        assert_eq!(kl_gaussian_exact(0.7, 0.7, 1.0).unwrap().value, 0.0);
        assert_abs_diff_eq!(kl_gaussian_exact(0.0, 1.0, 2.0).unwrap().value, 0.125, epsilon = 1e-15);
    }

    #[test]
    fn renyi_laplace_examples() {
        assert_abs_diff_eq!(renyi_laplace_exact(2.0, 1.0, &[1.0]).unwrap().value, 0.6191, epsilon = 1e-4);
        let direct = ((2.0 / 3.0) * 1f64.exp() + (1.0 / 3.0) * (-2f64).exp()).ln();
        assert_abs_diff_eq!(renyi_laplace_exact(2.0, 1.0, &[1.0]).unwrap().value, direct, epsilon = 1e-14);
        assert_eq!(renyi_laplace_exact(2.0, 1.0, &[0.0]).unwrap().value, 0.0);
        assert_abs_diff_eq!(renyi_laplace_exact(2.0, 1.0, &[1.0, 1.0]).unwrap().value, 2.0 * direct, epsilon = 1e-14);
        assert_abs_diff_eq!(renyi_laplace_exact(2.0, 1.0, &[1.0, 1.0]).unwrap().value, 1.2383, epsilon = 1e-4);
    }

    #[test]
    fn renyi_gaussian_examples() {
        assert_abs_diff_eq!(renyi_gaussian_exact(2.0, 1.0, &[1.0]).unwrap().value, 1.0, epsilon = 1e-15);
        assert_eq!(renyi_gaussian_exact(2.0, 1.0, &[0.0, 0.0]).unwrap().value, 0.0);
        assert_abs_diff_eq!(renyi_gaussian_exact(3.0, 2.0, &[1.0, 1.0]).unwrap().value, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn lin_renyi_upper_examples() {
        let lap = lin_renyi_upper_laplace(3.0, 1.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(lap.value, 0.5 * 5f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(lap.value, 0.804_719_0, epsilon = 1e-7);
        assert_eq!(lap.bound_kind, BoundKind::Upper);
        let gau = lin_renyi_upper_gaussian(3.0, 1.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(gau.value, 0.5 * (1.0 + 2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
        assert_eq!(lin_renyi_upper_symmetric(3.0, &[0.0], 1.0, 1).unwrap().value, 0.0);
        assert!(lin_renyi_upper_laplace(2.0, 1.0, &[1.0]).is_err());
        assert!(lin_renyi_upper_symmetric(1.5, &[1.0], 1.0, 1).is_err());
        assert!(lin_renyi_upper_symmetric(3.0, &[1.0], 1.0, 2).is_err());
    }

    #[test]
    fn table_one_rows_match_general_forms() {
        // 1-d Laplace row: (1/(α−1)) log(1 + 2^{α−1} ε^α)
        for (alpha, eps) in [(2.5f64, 0.5f64), (3.0, 1.0), (7.0, 2.0)] {
            let row = (1.0 + 2f64.powf(alpha - 1.0) * eps.powf(alpha)).ln() / (alpha - 1.0);
            assert_abs_diff_eq!(lin_renyi_upper_laplace(alpha, eps, &[1.0]).unwrap().value, row, epsilon = 1e-12);
        }
        // 1-d Gaussian row: (1/(α−1)) log(1 + √(2π)^{α−1}/σ^α)
        for (alpha, sigma) in [(2.5f64, 0.5f64), (3.0, 1.0), (7.0, 2.0)] {
            let row = (1.0 + (2.0 * std::f64::consts::PI).sqrt().powf(alpha - 1.0) / sigma.powf(alpha)).ln()
                / (alpha - 1.0);
            assert_abs_diff_eq!(lin_renyi_upper_gaussian(alpha, sigma, &[1.0]).unwrap().value, row, epsilon = 1e-12);
        }
        // d-dim Gaussian row: 2^{d(α−1)} √(π/2)^{α−1} ‖v‖_α^α / σ^α
        let (alpha, sigma, v) = (3.5f64, 1.5f64, [0.5f64, -1.0, 0.25]);
        let norm: f64 = v.iter().map(|x: &f64| x.abs().powf(alpha)).sum();
        let row = (1.0
            + 2f64.powf(3.0 * (alpha - 1.0)) * (std::f64::consts::PI / 2.0).sqrt().powf(alpha - 1.0) * norm
                / sigma.powf(alpha))
        .ln()
            / (alpha - 1.0);
        assert_abs_diff_eq!(lin_renyi_upper_gaussian(alpha, sigma, &v).unwrap().value, row, epsilon = 1e-12);
    }

    #[test]
    fn matrix_upper_example() {
        assert_abs_diff_eq!(matrix_mechanism_upper(3.0, 1.0, 2).unwrap().value, 17f64.ln() / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(matrix_mechanism_upper(3.0, 1.0, 2).unwrap().value, 1.4166, epsilon = 1e-4);
        assert!(matrix_mechanism_upper(2.0, 1.0, 2).is_err());
    }

    #[test]
    fn conversion_examples() {
        assert_abs_diff_eq!(alpha_to_renyi(2.0, 1.0).unwrap(), 3f64.ln(), epsilon = 1e-15);
        assert_eq!(alpha_to_renyi(2.0, 0.0).unwrap(), 0.0);
        let back = alpha_to_renyi(3.0, renyi_to_alpha(3.0, 0.37).unwrap()).unwrap();
        assert_abs_diff_eq!(back, 0.37, epsilon = 1e-12);
        let back = renyi_to_alpha(3.0, alpha_to_renyi(3.0, 0.37).unwrap()).unwrap();
        assert_abs_diff_eq!(back, 0.37, epsilon = 1e-12);
        assert_eq!(alpha_to_renyi(2.0, f64::INFINITY).unwrap(), f64::INFINITY);
    }

    #[test]
    fn c_alpha_and_dual_max_examples() {
        assert_abs_diff_eq!(c_alpha(2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dual_max(2.0, 1.0).unwrap(), 0.25, epsilon = 1e-15);
        for x in [0.5, 2.0, 10.0] {
            assert_abs_diff_eq!(dual_max(2.0, x).unwrap(), 1.0 / (4.0 * x), epsilon = 1e-14);
        }
    }

    #[test]
    fn dual_max_matches_golden_section() {
        for alpha in [1.5f64, 2.0, 3.0, 6.0] {
            for x in [0.5f64, 2.0, 10.0] {
                let p = alpha / (alpha - 1.0);
                let a_star = ((alpha - 1.0) / (alpha * x)).powf(alpha - 1.0);
                let best = golden_max(|a| a - x * a.powf(p), 0.0, 4.0 * a_star + 1.0);
                assert_abs_diff_eq!(dual_max(alpha, x).unwrap(), best, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn serde_spec_shape() {
        let s: DivergenceSpec = serde_json::from_str(r#"{"kind":"renyi","alpha":3.0}"#).unwrap();
        assert_eq!(s, DivergenceSpec::Renyi(3.0));
        assert!(serde_json::from_str::<DivergenceSpec>(r#"{"kind":"alpha","alpha":1.0}"#).is_err());
        assert_eq!(serde_json::to_string(&DivergenceSpec::Kl).unwrap(), r#"{"kind":"kl"}"#);
    }

    #[test]
    fn lin_kl_below_kl_on_grid() {
        for i in 1..=50 {
            let eps = 5.0 * i as f64 / 50.0;
            assert!(lin_kl_laplace_exact(eps).unwrap().value < kl_laplace_exact(eps).unwrap().value);
        }
    }

    #[test]
    fn renyi_laplace_monotone_in_alpha_and_above_lower_bound() {
        let mut prev = 0.0;
        let mut alpha = 1.01;
        while alpha <= 20.0 {
            let v = renyi_laplace_exact(alpha, 1.0, &[1.0]).unwrap().value;
            assert!(v > prev);
            assert!(v >= 1.0 - std::f64::consts::LN_2 / (alpha - 1.0));
            assert!(v >= renyi_laplace_lower(alpha, 1.0, &[1.0]).unwrap().value);
            prev = v;
            alpha += 0.01;
        }
    }

    /// Smallest α on a 0.01 grid above 2 where the upper bound drops below
    /// the exact unrestricted value.
    fn crossover<U: Fn(f64) -> f64, E: Fn(f64) -> f64>(upper: U, exact: E) -> f64 {
        let mut k = 201;
        loop {
            let alpha = k as f64 / 100.0;
            if upper(alpha) < exact(alpha) {
                return alpha;
            }
            k += 1;
            assert!(k < 2000);
        }
    }

    #[test]
    fn crossover_windows() {
        let lap = crossover(
            |a| lin_renyi_upper_laplace(a, 1.0, &[1.0]).unwrap().value,
            |a| renyi_laplace_exact(a, 1.0, &[1.0]).unwrap().value,
        );
        assert!((3.1..=3.5).contains(&lap), "laplace crossover {lap}");
        let gau = crossover(
            |a| lin_renyi_upper_gaussian(a, 1.0, &[1.0]).unwrap().value,
            |a| renyi_gaussian_exact(a, 1.0, &[1.0]).unwrap().value,
        );
        assert!((2.1..=2.5).contains(&gau), "gaussian crossover {gau}");
    }

    proptest! {
        #[test]
        fn renyi_gaussian_scaling(alpha in 1.01f64..20.0, sigma in 0.1f64..5.0, v in proptest::collection::vec(-3.0f64..3.0, 1..5)) {
            let base = renyi_gaussian_exact(alpha, sigma, &v).unwrap().value;
            let doubled_sigma = renyi_gaussian_exact(alpha, 2.0 * sigma, &v).unwrap().value;
            prop_assert!((doubled_sigma * 4.0 - base).abs() <= 1e-12 * base.max(1.0));
            let doubled_alpha = renyi_gaussian_exact(2.0 * alpha, sigma, &v).unwrap().value;
            prop_assert!((doubled_alpha - 2.0 * base).abs() <= 1e-12 * base.max(1.0));
            let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
            let doubled_v = renyi_gaussian_exact(alpha, sigma, &v2).unwrap().value;
            prop_assert!((doubled_v - 4.0 * base).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn alpha_renyi_roundtrip(alpha in 1.01f64..30.0, d in 0.0f64..50.0) {
            let r = alpha_to_renyi(alpha, d).unwrap();
            let back = renyi_to_alpha(alpha, r).unwrap();
            prop_assert!((back - d).abs() <= 1e-12 * d.max(1.0));
            let r = d / (alpha - 1.0);
            let r2 = alpha_to_renyi(alpha, renyi_to_alpha(alpha, r).unwrap()).unwrap();
            prop_assert!((r2 - r).abs() <= 1e-12 * r.max(1.0));
        }

        #[test]
        fn alpha_to_renyi_increasing(alpha in 1.01f64..30.0, d in 0.0f64..50.0, dd in 1e-6f64..1.0) {
            prop_assert!(alpha_to_renyi(alpha, d + dd).unwrap() > alpha_to_renyi(alpha, d).unwrap());
        }
    }

    #[test]
    fn spec_parses_its_display_form() {
        for spec in [DivergenceSpec::Kl, DivergenceSpec::Tv, DivergenceSpec::Renyi(2.5), DivergenceSpec::Alpha(3.0)] {
            assert_eq!(spec.to_string().parse::<DivergenceSpec>().unwrap(), spec);
        }
        assert_eq!("renyi:4".parse::<DivergenceSpec>().unwrap(), DivergenceSpec::Renyi(4.0));
        assert!("renyi:1".parse::<DivergenceSpec>().is_err());
        assert!("hellinger".parse::<DivergenceSpec>().is_err());
    }
}

//! Univariate standard normal functions and the small dense linear algebra
//! used throughout the crate.
//!
//! Matrices here are at most a few hundred rows, so everything is dense and
//! row-major.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{invalid, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal cdf, accurate to machine precision in both tails.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn std_normal_sf(x: f64) -> f64 {
    std_normal_cdf(-x)
}

/// `Φ(upper) - Φ(lower)` evaluated on whichever tail keeps precision.
#[inline]
pub fn std_normal_interval(lower: f64, upper: f64) -> f64 {
    if lower > 0.0 {
        (std_normal_sf(lower) - std_normal_sf(upper)).max(0.0)
    } else {
        (std_normal_cdf(upper) - std_normal_cdf(lower)).max(0.0)
    }
}

// Rational approximation of the lower-tail quantile (relative error ~1e-9),
// polished below with one Halley step against `std_normal_cdf`.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.024_25;

fn rational_lower(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Quantile for `p` in `(0, 0.5]`.
fn quantile_lower(p: f64) -> f64 {
    let x = rational_lower(p);
    // exp(x^2/2) overflows past here; the rational value is already within 1e-9.
    if x < -37.0 {
        return x;
    }
    let e = std_normal_cdf(x) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Quantile without argument checking. `p` must lie in `[0, 1]`.
#[inline]
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p <= 0.5 {
        quantile_lower(p)
    } else {
        // 1 - p is exact for p in [0.5, 1].
        -quantile_lower(1.0 - p)
    }
}

/// Standard normal quantile `Φ⁻¹(p)`; `Φ⁻¹(0) = -∞`, `Φ⁻¹(1) = +∞`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("probability {p} outside [0, 1]"));
    }
    Ok(quantile_unchecked(p))
}

/// Quantile of the upper tail: returns `x` with `1 - Φ(x) = q`.
#[cfg(test)]
#[inline]
pub(crate) fn quantile_upper_unchecked(q: f64) -> f64 {
    -quantile_unchecked(q)
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major entries, checking symmetry to 1e-12.
    pub fn new(order: usize, data: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return invalid("matrix order must be positive");
        }
        if data.len() != order * order {
            return Err(Error::DimensionMismatch { expected: order * order, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix has non-finite entries");
        }
        for i in 0..order {
            for j in 0..i {
                let (a, b) = (data[i * order + j], data[j * order + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return invalid(format!("matrix not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(SymMatrix { order, data })
    }

    pub fn identity(order: usize) -> Self {
        Self::from_fn(order, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Builds from `f(i, j)` evaluated for `i >= j` and mirrored.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; order * order];
        for i in 0..order {
            for j in 0..=i {
                let v = f(i, j);
                data[i * order + j] = v;
                data[j * order + i] = v;
            }
        }
        SymMatrix { order, data }
    }

    /// `(1 - rho) I + rho J`.
    pub fn exchangeable(order: usize, rho: f64) -> Self {
        Self::from_fn(order, |i, j| if i == j { 1.0 } else { rho })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        cholesky(self)
    }

    /// Checks the correlation-matrix invariants: unit diagonal, off-diagonals
    /// in (-1, 1) and positive definiteness.
    pub fn validate_correlation(&self) -> Result<()> {
        for i in 0..self.order {
            if (self.get(i, i) - 1.0).abs() > 1e-10 {
                return invalid(format!("correlation diagonal {i} is {}", self.get(i, i)));
            }
            for j in 0..i {
                let r = self.get(i, j);
                if r <= -1.0 || r >= 1.0 {
                    return invalid(format!("correlation ({i}, {j}) = {r} outside (-1, 1)"));
                }
            }
        }
        self.cholesky().map(|_| ())
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.order)
            .map(|i| self.data[i * self.order..(i + 1) * self.order].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &SymMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    order: usize,
    lower: Vec<f64>,
}

/// Factorizes `s`. A pivot below `1e-12 * max diagonal` is reported as
/// "not positive definite" with its 1-based index.
pub fn cholesky(s: &SymMatrix) -> Result<Cholesky> {
    let n = s.order;
    let max_diag = (0..n).map(|i| s.get(i, i)).fold(0.0_f64, f64::max);
    let tol = 1e-12 * max_diag;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = s.get(j, j);
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > tol) {
            return Err(Error::NotPositiveDefinite { pivot: j + 1 });
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / ljj;
        }
    }
    Ok(Cholesky { order: n, lower: l })
}

impl Cholesky {
    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.order + j]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.order).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= self.lower[i * n + k] * y[k];
            }
            y[i] = v / self.lower[i * n + i];
        }
        y
    }

    /// Solves `S x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut x = self.solve_lower(b);
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= self.lower[k * n + i] * x[k];
            }
            x[i] = v / self.lower[i * n + i];
        }
        x
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.order;
        let mut data = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
        // Round-off leaves the solve result asymmetric in the last bits.
        SymMatrix::from_fn(n, |i, j| 0.5 * (data[i * n + j] + data[j * n + i]))
    }

    /// `L v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.order;
        (0..n).map(|i| (0..=i).map(|k| self.lower[i * n + k] * v[k]).sum()).collect()
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.order;
        SymMatrix::from_fn(n, |i, j| (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum())
    }
}

/// Log density of `N(0, R)` at `z`.
pub fn mvn_log_density(z: &[f64], r: &SymMatrix) -> Result<f64> {
    if z.len() != r.order() {
        return Err(Error::DimensionMismatch { expected: r.order(), found: z.len() });
    }
    let chol = r.cholesky()?;
    let w = chol.solve_lower(z);
    let quad: f64 = w.iter().map(|v| v * v).sum();
    Ok(-0.5 * (z.len() as f64 * LN_2PI + chol.log_det() + quad))
}

/// `log(2π)`, exposed for callers that assemble densities by hand.
pub const fn ln_2pi() -> f64 {
    LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // Simpson's rule on the density from 0 to x; an independent route to Φ.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut s = std_normal_pdf(0.0) + std_normal_pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * std_normal_pdf(i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
        let oracle = cdf_by_quadrature(1.96);
        assert!((oracle - 0.9750021).abs() < 1e-7);
        assert!((std_normal_cdf(1.96) - oracle).abs() < 1e-13);
        for &x in &[0.3, 1.0, 2.5, 4.0] {
            assert!((std_normal_cdf(x) - cdf_by_quadrature(x)).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert_eq!(std_normal_quantile(0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(std_normal_quantile(1.0).unwrap(), f64::INFINITY);
        assert!(std_normal_quantile(1.5).is_err());
        assert!(std_normal_quantile(-0.1).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
        // bisection against the cdf
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < 0.975 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((lo - 1.959964).abs() < 1e-6);
        assert!((std_normal_quantile(0.975).unwrap() - lo).abs() < 1e-12);
    }

    #[test]
    fn quantile_relative_roundtrip_in_tails() {
        let mut p = 1e-299;
        while p < 1.0 - 1e-12 {
            let x = std_normal_quantile(p).unwrap();
            let back = std_normal_cdf(x);
            assert!(((back - p) / p).abs() < 1e-9, "p={p} back={back}");
            p *= 3.7;
        }
        for &p in &[0.9, 0.99, 0.999_999, 1.0 - 1e-11] {
            let x = std_normal_quantile(p).unwrap();
            assert!(((std_normal_cdf(x) - p) / p).abs() < 1e-9);
        }
    }

    #[test]
    fn cholesky_examples() {
        let id = SymMatrix::identity(3);
        assert_eq!(id.cholesky().unwrap().reconstruct(), id);
        let s = SymMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let l = s.cholesky().unwrap();
        assert!((l.get(1, 0) - 0.5).abs() < 1e-15);
        assert!((l.get(1, 1) - 0.75_f64.sqrt()).abs() < 1e-15);
        let singular = SymMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(singular.cholesky().unwrap_err(), Error::NotPositiveDefinite { pivot: 2 });
        assert_eq!(
            singular.cholesky().unwrap_err().to_string(),
            "not positive definite at pivot 2"
        );
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(SymMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(SymMatrix::new(2, vec![1.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn mvn_log_density_examples() {
        let i2 = SymMatrix::identity(2);
        let ln2pi = (2.0 * PI).ln();
        assert!((mvn_log_density(&[0.0, 0.0], &i2).unwrap() + ln2pi).abs() < 1e-14);
        let r = SymMatrix::exchangeable(2, 0.5);
        let want = -ln2pi - 0.5 * 0.75_f64.ln();
        assert!((mvn_log_density(&[0.0, 0.0], &r).unwrap() - want).abs() < 1e-14);
        assert!((mvn_log_density(&[1.0, 1.0], &i2).unwrap() - (-ln2pi - 1.0)).abs() < 1e-14);
        assert!(mvn_log_density(&[1.0], &i2).is_err());
    }

    #[test]
    fn inverse_and_solve() {
        let s = SymMatrix::new(3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let inv = s.cholesky().unwrap().inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| s.get(i, k) * inv.get(k, j)).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    fn random_pd(d: usize, seeds: &[f64]) -> SymMatrix {
        // A Aᵀ + d I from a pseudo-random A
        let a: Vec<f64> = (0..d * d).map(|k| (seeds[k % seeds.len()] * (k as f64 + 1.3)).sin()).collect();
        SymMatrix::from_fn(d, |i, j| {
            (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>() + if i == j { d as f64 * 0.1 } else { 0.0 }
        })
    }

    proptest! {
        #[test]
        fn cdf_symmetry(x in -40.0f64..40.0) {
            prop_assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() <= 1e-14);
        }

        #[test]
        fn quantile_inverts_cdf(x in -8.0f64..8.0) {
            // Φ(x) for x > 5.5 sits within an ulp of 1, so the upper half goes
            // through the tail it is stored in.
            let back = if x <= 0.0 {
                std_normal_quantile(std_normal_cdf(x)).unwrap()
            } else {
                quantile_upper_unchecked(std_normal_sf(x))
            };
            prop_assert!((back - x).abs() < 1e-8, "x={} back={}", x, back);
        }

        #[test]
        fn cdf_monotone(x in -30.0f64..30.0, dx in 0.0f64..1.0) {
            prop_assert!(std_normal_cdf(x) <= std_normal_cdf(x + dx));
        }

        #[test]
        fn cholesky_roundtrip(d in 1usize..50, s in proptest::collection::vec(-3.0f64..3.0, 7)) {
            let m = random_pd(d, &s);
            let rec = m.cholesky().unwrap().reconstruct();
            prop_assert!(rec.frobenius_distance(&m) <= 1e-10 * m.frobenius_norm());
        }
    }
}

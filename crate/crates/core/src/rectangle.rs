//! Multivariate normal rectangle probabilities `P(a < Z <= b)`,
//! `Z ~ N(0, R)`.
//!
//! Three engines:
//! * [`rectangle_rqmc`]: sequential conditioning (Genz–Bretz separation of
//!   variables) integrated with randomly shifted rank-1 lattice points, for
//!   any correlation matrix;
//! * [`rectangle_exchangeable`]: exact one-dimensional reduction for
//!   `R = (1 - ρ) I + ρ J`, `ρ >= 0`;
//! * [`rectangle_bruteforce`]: nested adaptive quadrature, `d <= 3`, kept as a
//!   test oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::normal::{
    quantile_unchecked, std_normal_cdf, std_normal_interval, std_normal_pdf, std_normal_sf, Cholesky, SymMatrix,
};
use crate::quadrature::integrate;

/// Integration limits in latent normal space. Infinite limits are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        if lower.is_empty() {
            return invalid("rectangle must have at least one dimension");
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return invalid(format!("rectangle bound {j}: lower {l} > upper {u}"));
            }
        }
        Ok(Rectangle { lower, upper })
    }

    /// The whole space `(-∞, ∞)^d`.
    pub fn full(d: usize) -> Self {
        Rectangle { lower: vec![f64::NEG_INFINITY; d], upper: vec![f64::INFINITY; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

/// Randomized lattice settings. `num_shifts` independent shifts give the error
/// estimate, so at least two are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RqmcConfig {
    pub points_per_shift: usize,
    pub num_shifts: usize,
    pub seed: u64,
}

impl RqmcConfig {
    pub fn new(points_per_shift: usize, num_shifts: usize, seed: u64) -> Result<Self> {
        let cfg = RqmcConfig { points_per_shift, num_shifts, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 2000 x 12 up to d = 20, 8000 x 12 above.
    pub fn default_for_dim(d: usize, seed: u64) -> Self {
        let points_per_shift = if d <= 20 { 2000 } else { 8000 };
        RqmcConfig { points_per_shift, num_shifts: 12, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_shift < 8 {
            return invalid(format!("points_per_shift {} < 8", self.points_per_shift));
        }
        if self.num_shifts < 2 {
            return invalid(format!("num_shifts {} < 2", self.num_shifts));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RqmcEstimate {
    pub probability: f64,
    /// 3.5 standard errors across shifts.
    pub error: f64,
}

const ERROR_MULTIPLIER: f64 = 3.5;
const COND_CLAMP: f64 = 1e-16;

/// Variable ordering plus the Cholesky factor of the correlation matrix
/// permuted into that order.
#[derive(Debug, Clone)]
pub struct ConditioningPlan {
    order: Vec<usize>,
    chol: Cholesky,
}

impl ConditioningPlan {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Uses a caller-supplied ordering (must be a permutation of `0..d`).
    pub fn with_order(r: &SymMatrix, order: &[usize]) -> Result<Self> {
        let d = r.order();
        let mut seen = vec![false; d];
        if order.len() != d || order.iter().any(|&k| k >= d || std::mem::replace(&mut seen[k], true)) {
            return invalid("ordering is not a permutation");
        }
        let permuted = SymMatrix::from_fn(d, |i, j| r.get(order[i], order[j]));
        Ok(ConditioningPlan { order: order.to_vec(), chol: permuted.cholesky()? })
    }

    /// Chooses at each step the remaining variable with the narrowest
    /// conditional interval, conditioning on the truncated means of the
    /// variables already placed.
    pub fn prioritized(rect: &Rectangle, r: &SymMatrix) -> Result<Self> {
        let d = r.order();
        if rect.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: rect.dim() });
        }
        let max_diag = (0..d).map(|i| r.get(i, i)).fold(0.0_f64, f64::max);
        let tol = 1e-12 * max_diag;
        let mut perm: Vec<usize> = (0..d).collect();
        // rows follow `perm`; columns are conditioning steps
        let mut l = vec![0.0; d * d];
        let mut means = vec![0.0; d];
        for i in 0..d {
            let mut best = i;
            let mut best_width = f64::INFINITY;
            for j in i..d {
                let pj = perm[j];
                let mut var = r.get(pj, pj);
                let mut s = 0.0;
                for k in 0..i {
                    var -= l[j * d + k] * l[j * d + k];
                    s += l[j * d + k] * means[k];
                }
                if var <= tol {
                    continue;
                }
                let sd = var.sqrt();
                let w = std_normal_interval((rect.lower[pj] - s) / sd, (rect.upper[pj] - s) / sd);
                if w < best_width {
                    best_width = w;
                    best = j;
                }
            }
            if best != i {
                perm.swap(i, best);
                for k in 0..i {
                    l.swap(i * d + k, best * d + k);
                }
            }
            let pi = perm[i];
            let mut var = r.get(pi, pi);
            let mut s = 0.0;
            for k in 0..i {
                var -= l[i * d + k] * l[i * d + k];
                s += l[i * d + k] * means[k];
            }
            if !(var > tol) {
                return Err(Error::NotPositiveDefinite { pivot: i + 1 });
            }
            let lii = var.sqrt();
            l[i * d + i] = lii;
            for j in (i + 1)..d {
                let pj = perm[j];
                let mut v = r.get(pj, pi);
                for k in 0..i {
                    v -= l[j * d + k] * l[i * d + k];
                }
                l[j * d + i] = v / lii;
            }
            let a = (rect.lower[pi] - s) / lii;
            let b = (rect.upper[pi] - s) / lii;
            means[i] = truncated_mean(a, b);
        }
        let permuted = SymMatrix::from_fn(d, |i, j| r.get(perm[i], perm[j]));
        Ok(ConditioningPlan { order: perm, chol: permuted.cholesky()? })
    }
}

/// Mean of a standard normal truncated to `(a, b]`.
fn truncated_mean(a: f64, b: f64) -> f64 {
    let w = std_normal_interval(a, b);
    if w > 1e-300 {
        (std_normal_pdf(a) - std_normal_pdf(b)) / w
    } else if a.is_finite() && b.is_finite() {
        0.5 * (a + b)
    } else if a.is_finite() {
        a
    } else if b.is_finite() {
        b
    } else {
        0.0
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Richtmyer generators `frac(sqrt(p_j))` over the first `n` primes.
fn lattice_generators(n: usize) -> Vec<f64> {
    first_primes(n).into_iter().map(|p| (p as f64).sqrt().fract()).collect()
}

/// Shift vectors for one CRN stream, drawn from a counter-based generator
/// keyed by `(seed, stream)`.
pub(crate) fn shift_vectors(seed: u64, stream: u64, shifts: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..shifts * dim).map(|_| rng.random::<f64>()).collect()
}

/// One evaluation of the sequential-conditioning integrand at `w`.
fn conditioned_integrand(
    lower: &[f64],
    upper: &[f64],
    chol: &Cholesky,
    w: &[f64],
    y: &mut [f64],
) -> f64 {
    let d = lower.len();
    let mut prob = 1.0;
    for i in 0..d {
        let mut s = 0.0;
        for k in 0..i {
            s += chol.get(i, k) * y[k];
        }
        let lii = chol.get(i, i);
        let a = (lower[i] - s) / lii;
        let b = (upper[i] - s) / lii;
        let width = std_normal_interval(a, b);
        prob *= width;
        if prob == 0.0 {
            return 0.0;
        }
        if i + 1 < d {
            // Draw from the conditional interval on the tail that holds it.
            y[i] = if a > 0.0 {
                let upper_tail = (std_normal_sf(a) - w[i] * width).clamp(COND_CLAMP, 1.0 - COND_CLAMP);
                -quantile_unchecked(upper_tail)
            } else {
                let u = (std_normal_cdf(a) + w[i] * width).clamp(COND_CLAMP, 1.0 - COND_CLAMP);
                quantile_unchecked(u)
            };
        }
    }
    prob
}

/// RQMC estimate with the given plan and CRN stream.
pub fn rectangle_rqmc_with_plan(
    rect: &Rectangle,
    plan: &ConditioningPlan,
    cfg: &RqmcConfig,
    stream: u64,
) -> Result<RqmcEstimate> {
    cfg.validate()?;
    let d = rect.dim();
    if plan.order.len() != d {
        return Err(Error::DimensionMismatch { expected: plan.order.len(), found: d });
    }
    let lower: Vec<f64> = plan.order.iter().map(|&k| rect.lower[k]).collect();
    let upper: Vec<f64> = plan.order.iter().map(|&k| rect.upper[k]).collect();
    if d == 1 {
        let p = std_normal_interval(lower[0], upper[0]);
        return Ok(RqmcEstimate { probability: p, error: 0.0 });
    }
    let m = d - 1;
    let gens = lattice_generators(m);
    let shifts = shift_vectors(cfg.seed, stream, cfg.num_shifts, m);
    let mut w = vec![0.0; m];
    let mut w_anti = vec![0.0; m];
    let mut y = vec![0.0; d];
    let mut estimates = Vec::with_capacity(cfg.num_shifts);
    for s in 0..cfg.num_shifts {
        let shift = &shifts[s * m..(s + 1) * m];
        let mut total = 0.0;
        for k in 1..=cfg.points_per_shift {
            for j in 0..m {
                let x = (k as f64 * gens[j] + shift[j]).fract();
                // baker's transform periodizes the integrand
                w[j] = (2.0 * x - 1.0).abs();
                w_anti[j] = 1.0 - w[j];
            }
            let f1 = conditioned_integrand(&lower, &upper, &plan.chol, &w, &mut y);
            let f2 = conditioned_integrand(&lower, &upper, &plan.chol, &w_anti, &mut y);
            total += 0.5 * (f1 + f2);
        }
        estimates.push(total / cfg.points_per_shift as f64);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok(RqmcEstimate { probability: mean.clamp(0.0, 1.0), error: ERROR_MULTIPLIER * (var / n).sqrt() })
}

/// RQMC rectangle probability for a general correlation matrix; CRN stream 0.
/// Deterministic in `(rect, r, cfg)`.
pub fn rectangle_rqmc(rect: &Rectangle, r: &SymMatrix, cfg: &RqmcConfig) -> Result<RqmcEstimate> {
    rectangle_rqmc_keyed(rect, r, cfg, 0)
}

/// As [`rectangle_rqmc`] but drawing shifts from CRN stream `stream`.
pub fn rectangle_rqmc_keyed(rect: &Rectangle, r: &SymMatrix, cfg: &RqmcConfig, stream: u64) -> Result<RqmcEstimate> {
    if rect.dim() != r.order() {
        return Err(Error::DimensionMismatch { expected: r.order(), found: rect.dim() });
    }
    let plan = ConditioningPlan::prioritized(rect, r)?;
    rectangle_rqmc_with_plan(rect, &plan, cfg, stream)
}

/// Exact probability for the exchangeable correlation `(1 - ρ) I + ρ J` by
/// the one-dimensional reduction
/// `∫ φ(t) Π_j [Φ((u_j - √ρ t)/√(1-ρ)) - Φ((l_j - √ρ t)/√(1-ρ))] dt`.
pub fn rectangle_exchangeable(rect: &Rectangle, rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("exchangeable rho {rho} outside [0, 1)"));
    }
    let (lo, up) = (&rect.lower, &rect.upper);
    if rho == 0.0 {
        return Ok(lo.iter().zip(up).map(|(&a, &b)| std_normal_interval(a, b)).product());
    }
    let sr = rho.sqrt();
    let sc = (1.0 - rho).sqrt();
    let integrand = |t: f64| {
        let mut v = std_normal_pdf(t);
        for (&a, &b) in lo.iter().zip(up) {
            v *= std_normal_interval((a - sr * t) / sc, (b - sr * t) / sc);
            if v == 0.0 {
                break;
            }
        }
        v
    };
    // φ has mass < 1e-16 beyond ±8.5
    let r = integrate(integrand, -8.5, 8.5, 1e-300, 1e-12, 4000);
    Ok(r.value.clamp(0.0, 1.0))
}

const BRUTE_LIMIT: f64 = 9.0;

fn brute_recurse(level: usize, lower: &[f64], upper: &[f64], chol: &Cholesky, e: &mut Vec<f64>) -> f64 {
    let d = lower.len();
    let s: f64 = (0..level).map(|k| chol.get(level, k) * e[k]).sum();
    let lii = chol.get(level, level);
    let a = (lower[level] - s) / lii;
    let b = (upper[level] - s) / lii;
    if level + 1 == d {
        return std_normal_interval(a, b);
    }
    let a = a.max(-BRUTE_LIMIT);
    let b = b.min(BRUTE_LIMIT);
    if a >= b {
        return 0.0;
    }
    let tol = if level == 0 { 1e-10 } else { 1e-12 };
    integrate(
        |t| {
            e.truncate(level);
            e.push(t);
            std_normal_pdf(t) * brute_recurse(level + 1, lower, upper, chol, e)
        },
        a,
        b,
        tol,
        1e-10,
        400,
    )
    .value
}

/// Nested adaptive quadrature of the MVN density over the rectangle (d <= 3).
/// Independent of both other engines; used as a test oracle.
pub fn rectangle_bruteforce(rect: &Rectangle, r: &SymMatrix) -> Result<f64> {
    let d = rect.dim();
    if d > 3 {
        return invalid(format!("bruteforce supports d <= 3, got {d}"));
    }
    if r.order() != d {
        return Err(Error::DimensionMismatch { expected: r.order(), found: d });
    }
    let chol = r.cholesky()?;
    let mut e = Vec::with_capacity(d);
    Ok(brute_recurse(0, &rect.lower, &rect.upper, &chol, &mut e).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const NINF: f64 = f64::NEG_INFINITY;
    const INF: f64 = f64::INFINITY;

    fn orthant(d: usize) -> Rectangle {
        Rectangle::new(vec![NINF; d], vec![0.0; d]).unwrap()
    }

    #[test]
    fn rejects_bad_rectangles_and_configs() {
        assert!(Rectangle::new(vec![1.0], vec![0.0]).is_err());
        assert!(Rectangle::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(RqmcConfig::new(4, 12, 1).is_err());
        assert!(RqmcConfig::new(100, 1, 1).is_err());
        assert!(rectangle_exchangeable(&orthant(2), 1.0).is_err());
        assert!(rectangle_exchangeable(&orthant(2), -0.1).is_err());
        assert!(rectangle_bruteforce(&orthant(4), &SymMatrix::identity(4)).is_err());
    }

    #[test]
    fn rqmc_examples() {
        let cfg = RqmcConfig::default_for_dim(2, 7);
        let est = rectangle_rqmc(&orthant(2), &SymMatrix::identity(2), &cfg).unwrap();
        assert!((est.probability - 0.25).abs() <= est.error.max(1e-12));
        let biv = 0.25 + (0.5f64).asin() / (2.0 * PI);
        assert!((biv - 1.0 / 3.0).abs() < 1e-15);
        let est = rectangle_rqmc(&orthant(2), &SymMatrix::exchangeable(2, 0.5), &cfg).unwrap();
        assert!((est.probability - biv).abs() < 1e-6, "{est:?}");
    }

    #[test]
    fn rqmc_matches_exchangeable_on_poisson_outcome() {
        // Poisson(2) outcome y = (1, 2, 0): bounds Φ⁻¹(F(y-1)), Φ⁻¹(F(y))
        let f = |k: i32| -> f64 { (0..=k).map(|j| (-2.0f64).exp() * 2f64.powi(j) / (1..=j).product::<i32>().max(1) as f64).sum() };
        let q = |p: f64| quantile_unchecked(p);
        let rect = Rectangle::new(vec![q(f(0)), q(f(1)), NINF], vec![q(f(1)), q(f(2)), q(f(0))]).unwrap();
        let exact = rectangle_exchangeable(&rect, 0.3).unwrap();
        let est = rectangle_rqmc(&rect, &SymMatrix::exchangeable(3, 0.3), &RqmcConfig::default_for_dim(3, 11)).unwrap();
        assert!((est.probability - exact).abs() <= 5e-4);
    }

    #[test]
    fn exchangeable_examples() {
        let rect = Rectangle::new(vec![NINF, NINF], vec![0.0, 1.0]).unwrap();
        let p = rectangle_exchangeable(&rect, 0.0).unwrap();
        assert!((p - 0.5 * std_normal_cdf(1.0)).abs() < 1e-15);
        assert!((p - 0.420_672_4).abs() < 1e-7);
        assert!((rectangle_exchangeable(&orthant(2), 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-10);
        let tri = 0.125 + 3.0 * (0.5f64).asin() / (4.0 * PI);
        assert!((tri - 0.25).abs() < 1e-15);
        assert!((rectangle_exchangeable(&orthant(3), 0.5).unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn bruteforce_examples() {
        let r1 = SymMatrix::identity(1);
        let p = rectangle_bruteforce(&Rectangle::new(vec![NINF], vec![0.0]).unwrap(), &r1).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        let q = Rectangle::new(vec![0.0, 0.0], vec![INF, INF]).unwrap();
        assert!((rectangle_bruteforce(&q, &SymMatrix::identity(2)).unwrap() - 0.25).abs() < 1e-9);
        let p = rectangle_bruteforce(&orthant(2), &SymMatrix::exchangeable(2, 0.5)).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-6);
        let p = rectangle_bruteforce(&orthant(3), &SymMatrix::exchangeable(3, 0.5)).unwrap();
        assert!((p - 0.25).abs() < 1e-6);
    }

    #[test]
    fn full_space_is_one() {
        for d in 1..=3 {
            let full = Rectangle::full(d);
            let r = SymMatrix::exchangeable(d, 0.4);
            assert!((rectangle_exchangeable(&full, 0.4).unwrap() - 1.0).abs() < 1e-6);
            assert!((rectangle_bruteforce(&full, &r).unwrap() - 1.0).abs() < 1e-6);
            let est = rectangle_rqmc(&full, &r, &RqmcConfig::default_for_dim(d, 3)).unwrap();
            assert!((est.probability - 1.0).abs() < 1e-6);
        }
        let full = Rectangle::full(10);
        let est = rectangle_rqmc(&full, &SymMatrix::exchangeable(10, 0.4), &RqmcConfig::new(64, 4, 1).unwrap()).unwrap();
        assert!((est.probability - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rqmc_is_seed_deterministic_and_seed_sensitive() {
        let rect = Rectangle::new(vec![-1.0, -0.5, 0.2], vec![0.5, 1.0, 2.0]).unwrap();
        let r = SymMatrix::exchangeable(3, 0.6);
        let cfg = RqmcConfig::new(200, 5, 99).unwrap();
        let a = rectangle_rqmc(&rect, &r, &cfg).unwrap();
        let b = rectangle_rqmc(&rect, &r, &cfg).unwrap();
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        assert_eq!(a.error.to_bits(), b.error.to_bits());
        let c = rectangle_rqmc_keyed(&rect, &r, &cfg, 1).unwrap();
        assert_ne!(a.probability.to_bits(), c.probability.to_bits());
    }

    #[test]
    fn rqmc_reports_non_pd() {
        let r = SymMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let err = rectangle_rqmc(&orthant(2), &r, &RqmcConfig::default_for_dim(2, 1)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn plan_orders_narrow_intervals_first() {
        let rect = Rectangle::new(vec![NINF, 0.0, -3.0], vec![INF, 0.1, 3.0]).unwrap();
        let plan = ConditioningPlan::prioritized(&rect, &SymMatrix::exchangeable(3, 0.3)).unwrap();
        assert_eq!(plan.order()[0], 1);
        assert!(ConditioningPlan::with_order(&SymMatrix::identity(3), &[0, 0, 1]).is_err());
    }

    fn bound(v: f64) -> f64 {
        if v < -3.5 {
            NINF
        } else if v > 3.5 {
            INF
        } else {
            v
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn engines_agree(
            d in 2usize..=3,
            rho in 0.0f64..0.95,
            lo in proptest::collection::vec(-4.0f64..2.0, 3),
            width in proptest::collection::vec(0.05f64..4.0, 3),
            seed in 0u64..1000,
        ) {
            let lower: Vec<f64> = lo[..d].iter().map(|&v| bound(v)).collect();
            let upper: Vec<f64> = lo[..d].iter().zip(&width).map(|(&v, &w)| bound(v + w).max(bound(v))).collect();
            let rect = Rectangle::new(lower, upper).unwrap();
            let r = SymMatrix::exchangeable(d, rho);
            let ex = rectangle_exchangeable(&rect, rho).unwrap();
            let bf = rectangle_bruteforce(&rect, &r).unwrap();
            let qm = rectangle_rqmc(&rect, &r, &RqmcConfig::default_for_dim(d, seed)).unwrap();
            prop_assert!((ex - bf).abs() <= 2e-6, "ex {} bf {}", ex, bf);
            prop_assert!((qm.probability - ex).abs() <= qm.error.max(5e-4));
        }

        #[test]
        fn exchangeable_monotone_in_rectangle(
            d in 2usize..=5,
            rho in 0.0f64..0.95,
            lo in proptest::collection::vec(-3.0f64..1.0, 5),
            width in proptest::collection::vec(0.0f64..3.0, 5),
            grow in proptest::collection::vec(0.0f64..1.0, 10),
        ) {
            let lower: Vec<f64> = lo[..d].to_vec();
            let upper: Vec<f64> = lo[..d].iter().zip(&width).map(|(a, w)| a + w).collect();
            let inner = Rectangle::new(lower.clone(), upper.clone()).unwrap();
            let outer = Rectangle::new(
                lower.iter().zip(&grow).map(|(a, g)| a - g).collect(),
                upper.iter().zip(&grow[5..]).map(|(b, g)| b + g).collect(),
            ).unwrap();
            let pi = rectangle_exchangeable(&inner, rho).unwrap();
            let po = rectangle_exchangeable(&outer, rho).unwrap();
            prop_assert!(po >= pi - 1e-13);
        }
    }
}

//! Limiting (large-sample) estimators under an exchangeable model with a
//! common marginal mean, computed by weighting per-outcome objective terms
//! with their true probabilities over a truncated outcome space.
//!
//! Because the model is exchangeable, permutations of an outcome share
//! both probability and objective value, so the table stores one sorted
//! representative per multiset together with its multiplicity.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inference::{covariance_from_hessian, maximize, numerical_hessian, Method, OptimConfig, ParamTransform};
use crate::likelihood::{response_rectangle, sl_term, PROB_FLOOR, U_CLAMP};
use crate::margins::{CdfInterval, Family, UnitMargin};
use crate::normal::SymMatrix;
use crate::rectangle::{rectangle_exchangeable, ConditioningPlan, Rectangle, RqmcConfig};

/// True data-generating values: common mean, NB dispersion, exchangeable `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitTruth {
    pub family: Family,
    pub mu: f64,
    pub gamma: Option<f64>,
    pub rho: f64,
}

impl LimitTruth {
    /// `(μ, [γ], ρ)`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = vec![self.mu];
        v.extend(self.gamma);
        v.push(self.rho);
        v
    }

    pub fn names(&self) -> Vec<&'static str> {
        if self.gamma.is_some() {
            vec!["mu", "gamma", "rho"]
        } else {
            vec!["mu", "rho"]
        }
    }

    fn transforms(&self) -> Vec<ParamTransform> {
        let mut v = vec![if self.family == Family::Bernoulli { ParamTransform::Logit } else { ParamTransform::Log }];
        if self.gamma.is_some() {
            v.push(ParamTransform::Log);
        }
        v.push(ParamTransform::Logit);
        v
    }

    fn with_parameters(&self, theta: &[f64]) -> LimitTruth {
        let (gamma, rho) = match self.gamma {
            Some(_) => (Some(theta[1]), theta[2]),
            None => (None, theta[1]),
        };
        LimitTruth { family: self.family, mu: theta[0], gamma, rho }
    }

    fn margin(&self) -> Result<UnitMargin> {
        UnitMargin::new(self.family, self.mu, self.gamma)
    }
}

/// How far each margin's support is enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Smallest `T` with upper-tail mass `1 - F(T)` at most the given value.
    PerMargin(f64),
    /// Per-margin tail `(1 - total) / d`, so the product grid holds at least
    /// `total` by the union bound.
    UnionBound(f64),
}

impl Truncation {
    fn tail(self, d: usize) -> f64 {
        match self {
            Truncation::PerMargin(t) => t,
            Truncation::UnionBound(total) => (1.0 - total) / d as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitOptions {
    pub truncation: Truncation,
    /// Largest allowed `d·(T+1)^d`.
    pub budget: f64,
    pub rqmc: RqmcConfig,
    pub optim: OptimConfig,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions {
            truncation: Truncation::PerMargin(1e-7),
            budget: 1e7,
            rqmc: RqmcConfig::default_for_dim(2, 0),
            optim: OptimConfig::default(),
        }
    }
}

/// One multiset of outcomes, represented by its sorted member.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub y: Vec<i64>,
    /// Number of distinct permutations of `y`.
    pub multiplicity: f64,
    /// Probability of each single permutation.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable {
    pub truth: LimitTruth,
    pub d: usize,
    /// Largest enumerated value per margin.
    pub truncation: i64,
    pub outcomes: Vec<Outcome>,
    pub total_mass: f64,
}

impl OutcomeTable {
    /// Number of outcome vectors in the full product grid.
    pub fn grid_size(&self) -> f64 {
        self.outcomes.iter().map(|o| o.multiplicity).sum()
    }
}

fn multisets(d: usize, top: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut cur = vec![0i64; d];
    loop {
        out.push(cur.clone());
        // advance to the next nondecreasing sequence
        let mut k = d;
        while k > 0 && cur[k - 1] == top {
            k -= 1;
        }
        if k == 0 {
            return out;
        }
        let v = cur[k - 1] + 1;
        for c in &mut cur[k - 1..] {
            *c = v;
        }
    }
}

fn permutations_of(y: &[i64]) -> f64 {
    let mut ln = libm::lgamma(y.len() as f64 + 1.0);
    let mut run = 1usize;
    for k in 1..=y.len() {
        if k < y.len() && y[k] == y[k - 1] {
            run += 1;
        } else {
            ln -= libm::lgamma(run as f64 + 1.0);
            run = 1;
        }
    }
    ln.exp().round()
}

fn truncation_point(m: &UnitMargin, tail: f64) -> i64 {
    if m.family() == Family::Bernoulli {
        return 1;
    }
    let mut t = 0;
    while m.sf(t) > tail {
        t += 1;
    }
    t
}

fn value_intervals(m: &UnitMargin, top: i64) -> Vec<CdfInterval> {
    (0..=top).map(|y| m.interval(y)).collect()
}

fn rect_from(y: &[i64], iv: &[CdfInterval]) -> Result<Rectangle> {
    let (lower, upper) = y.iter().map(|&v| iv[v as usize].latent_bounds()).unzip();
    Rectangle::new(lower, upper)
}

/// Enumerates the truncated product grid (as multisets) with true
/// probabilities from the exact exchangeable engine.
pub fn enumerate_outcomes(truth: &LimitTruth, d: usize, opts: &LimitOptions) -> Result<OutcomeTable> {
    if d < 2 {
        return invalid(format!("dimension {d} must be at least 2"));
    }
    if !(0.0..1.0).contains(&truth.rho) {
        return invalid(format!("rho {} outside [0, 1)", truth.rho));
    }
    let m = truth.margin()?;
    let tail = opts.truncation.tail(d);
    if !(tail > 0.0 && tail < 1.0) {
        return invalid(format!("truncation tail {tail} outside (0, 1)"));
    }
    let top = truncation_point(&m, tail);
    let size = d as f64 * ((top + 1) as f64).powi(d as i32);
    if size > opts.budget {
        return Err(Error::BudgetExceeded { size, budget: opts.budget });
    }
    let iv = value_intervals(&m, top);
    let outcomes = multisets(d, top)
        .into_par_iter()
        .map(|y| {
            let p = rectangle_exchangeable(&rect_from(&y, &iv)?, truth.rho)?;
            Ok(Outcome { multiplicity: permutations_of(&y), y, probability: p })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|o| o.probability > 0.0)
        .collect::<Vec<_>>();
    let total_mass = outcomes.iter().map(|o| o.multiplicity * o.probability).sum();
    Ok(OutcomeTable { truth: *truth, d, truncation: top, outcomes, total_mass })
}

/// Exchangeable copula log density from `Σq` and `Σq²`.
fn exchangeable_copula(sum: f64, sum_sq: f64, d: usize, rho: f64) -> f64 {
    let df = d as f64;
    let denom = 1.0 + (df - 1.0) * rho;
    let log_det = (df - 1.0) * (-rho).ln_1p() + denom.ln();
    let quad_inv = (sum_sq - rho / denom * sum * sum) / (1.0 - rho);
    -0.5 * log_det + 0.5 * (sum_sq - quad_inv)
}

/// Weighted limit objective `Σ_t p_t ℓ(y_t; θ)` for one method.
pub struct LimitObjective<'a> {
    method: Method,
    table: &'a OutcomeTable,
    rqmc: RqmcConfig,
    orders: Option<Vec<Vec<usize>>>,
}

impl<'a> LimitObjective<'a> {
    /// For [`Method::Sl`] the conditioning order of each outcome is frozen
    /// at `at` so the objective is smooth in `θ`.
    pub fn new(method: Method, table: &'a OutcomeTable, at: &[f64], rqmc: RqmcConfig) -> Result<Self> {
        let orders = match method {
            Method::Sl => {
                let truth = table.truth.with_parameters(at);
                let r = SymMatrix::exchangeable(table.d, truth.rho);
                let iv = value_intervals(&truth.margin()?, table.truncation);
                let orders = table
                    .outcomes
                    .par_iter()
                    .map(|o| Ok(ConditioningPlan::prioritized(&rect_from(&o.y, &iv)?, &r)?.order().to_vec()))
                    .collect::<Result<Vec<_>>>()?;
                Some(orders)
            }
            _ => None,
        };
        Ok(LimitObjective { method, table, rqmc, orders })
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let t = self.table.truth.with_parameters(theta);
        if !(0.0..1.0).contains(&t.rho) {
            return invalid(format!("rho {} outside [0, 1)", t.rho));
        }
        let m = t.margin()?;
        let iv = value_intervals(&m, self.table.truncation);
        let d = self.table.d;
        let terms: Vec<f64> = match self.method {
            Method::Dt => {
                let per_value: Vec<(f64, f64)> = iv
                    .iter()
                    .enumerate()
                    .map(|(y, v)| (m.log_pmf(y as i64), v.midpoint_score(U_CLAMP)))
                    .collect();
                self.table
                    .outcomes
                    .iter()
                    .map(|o| {
                        let (mut lf, mut s, mut s2) = (0.0, 0.0, 0.0);
                        for &y in &o.y {
                            let (l, q) = per_value[y as usize];
                            lf += l;
                            s += q;
                            s2 += q * q;
                        }
                        lf + exchangeable_copula(s, s2, d, t.rho)
                    })
                    .collect()
            }
            Method::Exact => self
                .table
                .outcomes
                .par_iter()
                .map(|o| Ok(rectangle_exchangeable(&rect_from(&o.y, &iv)?, t.rho)?.max(PROB_FLOOR).ln()))
                .collect::<Result<Vec<_>>>()?,
            Method::Sl => {
                let r = SymMatrix::exchangeable(d, t.rho);
                let orders = self.orders.as_ref().ok_or_else(|| Error::InvalidArgument("missing orders".into()))?;
                let margins = vec![m; d];
                let mut plans = std::collections::HashMap::new();
                for order in orders {
                    if !plans.contains_key(order) {
                        plans.insert(order.clone(), ConditioningPlan::with_order(&r, order)?);
                    }
                }
                self.table
                    .outcomes
                    .par_iter()
                    .enumerate()
                    .map(|(k, o)| sl_term(&o.y, &margins, Some(&plans[&orders[k]]), &r, &self.rqmc, k as u64))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(terms.iter().zip(&self.table.outcomes).map(|(l, o)| o.multiplicity * o.probability * l).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub method: Method,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl fmt::Display for LimitEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.method)?;
        for (n, v) in self.names.iter().zip(&self.values) {
            write!(f, " {n}={v:.4}")?;
        }
        Ok(())
    }
}

/// Maximizes the limit objective, starting from the true values unless
/// `start` is given.
pub fn limiting_fit(method: Method, table: &OutcomeTable, start: Option<&[f64]>, opts: &LimitOptions) -> Result<LimitEstimate> {
    let truth = table.truth.parameters();
    let start = start.unwrap_or(&truth);
    if start.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: start.len() });
    }
    let objective = LimitObjective::new(method, table, start, opts.rqmc)?;
    let best = maximize(
        |theta| objective.value(theta).unwrap_or(f64::NEG_INFINITY),
        start,
        &table.truth.transforms(),
        &opts.optim,
    )?;
    Ok(LimitEstimate {
        method,
        names: table.truth.names().into_iter().map(String::from).collect(),
        values: best.theta,
        objective: best.value,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// `√(H_kk / n)` with `H` the negative inverse Hessian of the limit
/// objective at `estimate`.
pub fn limiting_se(method: Method, table: &OutcomeTable, estimate: &[f64], n: usize, opts: &LimitOptions) -> Result<Vec<f64>> {
    if n == 0 {
        return invalid("sample size must be positive");
    }
    let objective = LimitObjective::new(method, table, estimate, opts.rqmc)?;
    let h = numerical_hessian(|theta| objective.value(theta).unwrap_or(f64::NEG_INFINITY), estimate)?;
    let cov = covariance_from_hessian(&h)?;
    Ok((0..estimate.len()).map(|k| (cov.get(k, k) / n as f64).sqrt()).collect())
}

/// Limiting estimates and SEs for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub truth: LimitTruth,
    pub d: usize,
    pub estimate: LimitEstimate,
    pub se: Option<Vec<f64>>,
}

pub fn limits(method: Method, truth: &LimitTruth, d: usize, se_n: Option<usize>, opts: &LimitOptions) -> Result<LimitRow> {
    let table = enumerate_outcomes(truth, d, opts)?;
    let estimate = limiting_fit(method, &table, None, opts)?;
    let se = match se_n {
        Some(n) => Some(limiting_se(method, &table, &estimate.values, n, opts)?),
        None => None,
    };
    Ok(LimitRow { truth: *truth, d, estimate, se })
}

/// Grid-size helper for callers that want to check the budget up front.
pub fn enumeration_size(truth: &LimitTruth, d: usize, truncation: Truncation) -> Result<f64> {
    let top = truncation_point(&truth.margin()?, truncation.tail(d));
    Ok(d as f64 * ((top + 1) as f64).powi(d as i32))
}

/// Response rectangle for callers holding explicit margins.
pub fn outcome_rectangle(y: &[i64], truth: &LimitTruth) -> Result<Rectangle> {
    response_rectangle(y, &vec![truth.margin()?; y.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::copula_log_density;

    fn bern(mu: f64, rho: f64) -> LimitTruth {
        LimitTruth { family: Family::Bernoulli, mu, gamma: None, rho }
    }

    fn pois(mu: f64, rho: f64) -> LimitTruth {
        LimitTruth { family: Family::Poisson, mu, gamma: None, rho }
    }

    #[test]
    fn multiset_enumeration() {
        let m = multisets(3, 2);
        assert_eq!(m.len(), 10);
        let total: f64 = m.iter().map(|y| permutations_of(y)).sum();
        assert_eq!(total, 27.0);
        assert_eq!(permutations_of(&[0, 0, 1, 2]), 12.0);
    }

    #[test]
    fn bernoulli_tables() {
        let opts = LimitOptions::default();
        let t = enumerate_outcomes(&bern(0.3, 0.4), 2, &opts).unwrap();
        assert_eq!(t.grid_size(), 4.0);
        assert!((t.total_mass - 1.0).abs() < 1e-9);
        let t = enumerate_outcomes(&bern(0.5, 0.0), 2, &opts).unwrap();
        for o in &t.outcomes {
            assert!((o.probability - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_mass_and_budget() {
        let opts = LimitOptions::default();
        let t = enumerate_outcomes(&pois(1.0, 0.2), 2, &opts).unwrap();
        assert!(t.total_mass >= 0.999 && t.total_mass <= 1.0 + 1e-9);
        let union = LimitOptions { truncation: Truncation::UnionBound(0.999), ..LimitOptions::default() };
        let t = enumerate_outcomes(&pois(1.0, 0.2), 2, &union).unwrap();
        assert!(t.total_mass >= 0.999);
        let tiny = LimitOptions { budget: 10.0, ..LimitOptions::default() };
        assert!(matches!(enumerate_outcomes(&pois(5.0, 0.2), 3, &tiny), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn exchangeable_copula_closed_form() {
        let q = [0.3, -1.2, 0.7];
        let u: Vec<f64> = q.iter().map(|&v| crate::normal::std_normal_cdf(v)).collect();
        let want = copula_log_density(&u, &SymMatrix::exchangeable(3, 0.45)).unwrap();
        let s: f64 = q.iter().sum();
        let s2: f64 = q.iter().map(|v| v * v).sum();
        assert!((exchangeable_copula(s, s2, 3, 0.45) - want).abs() < 1e-10);
    }

    #[test]
    fn dt_bernoulli_example() {
        let opts = LimitOptions::default();
        let t = enumerate_outcomes(&bern(0.2, 0.2), 2, &opts).unwrap();
        let est = limiting_fit(Method::Dt, &t, None, &opts).unwrap();
        assert!(est.converged);
        assert!((est.values[0] - 0.225).abs() < 0.005 && (est.values[1] - 0.605).abs() < 0.005, "{est}");
        let t = enumerate_outcomes(&bern(0.5, 0.5), 3, &opts).unwrap();
        let est = limiting_fit(Method::Dt, &t, None, &opts).unwrap();
        assert!((est.values[0] - 0.5).abs() < 1e-4, "{est}");
        assert!(est.values[1] > 0.5);
    }

    #[test]
    fn exact_limit_is_unbiased() {
        let opts = LimitOptions::default();
        for truth in [bern(0.3, 0.5), pois(1.5, 0.4)] {
            let t = enumerate_outcomes(&truth, 3, &opts).unwrap();
            let est = limiting_fit(Method::Exact, &t, Some(&[truth.mu * 1.1, 0.3]), &opts).unwrap();
            assert!((est.values[0] - truth.mu).abs() < 1e-3, "{est}");
            assert!((est.values[1] - truth.rho).abs() < 1e-3, "{est}");
        }
    }

    #[test]
    fn se_for_quadratic_curvature() {
        // ℓ = -c/2 (θ - θ0)² gives √(1 / (n c))
        let c = 4.0;
        let h = numerical_hessian(|t| -0.5 * c * (t[0] - 1.0).powi(2), &[1.0]).unwrap();
        let cov = covariance_from_hessian(&h).unwrap();
        assert!(((cov.get(0, 0) / 100.0).sqrt() - (1.0f64 / 400.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn poisson_limiting_se() {
        let opts = LimitOptions::default();
        let t = enumerate_outcomes(&pois(0.5, 0.2), 2, &opts).unwrap();
        let se = limiting_se(Method::Exact, &t, &[0.5, 0.2], 100, &opts).unwrap();
        assert!((se[0] - 0.054).abs() < 0.003 && (se[1] - 0.135).abs() < 0.003, "{se:?}");
        let est = limiting_fit(Method::Dt, &t, None, &opts).unwrap();
        let se = limiting_se(Method::Dt, &t, &est.values, 100, &opts).unwrap();
        assert!((se[0] - 0.055).abs() < 0.003 && (se[1] - 0.133).abs() < 0.003, "{se:?}");
    }
}

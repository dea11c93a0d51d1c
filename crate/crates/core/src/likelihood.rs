//! Simulated, distributional-transform and exact-exchangeable log-likelihoods.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::margins::{mean_from_covariates, MarginSpec, UnitMargin};
use crate::normal::{quantile_unchecked, Cholesky, SymMatrix};
use crate::rectangle::{
    rectangle_exchangeable, rectangle_rqmc_with_plan, ConditioningPlan, Rectangle, RqmcConfig,
};
use crate::structures::CorrelationModel;

/// Smallest joint probability that is logged.
pub const PROB_FLOOR: f64 = 1e-300;
/// Clamping window for copula arguments before `Φ⁻¹`.
pub const U_CLAMP: f64 = 1e-12;

/// `n` observations of `d` units, each unit with `p` covariates and an offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    p: usize,
    y: Vec<i64>,
    x: Vec<f64>,
    offsets: Vec<f64>,
    // (first index, multiplicity) of each distinct observation, in order of first appearance
    groups: Vec<(usize, usize)>,
}

impl Dataset {
    /// `y` is `n×d`, `x` is `n×d×p`, `offsets` is `n×d` (all row-major).
    pub fn new(n: usize, d: usize, p: usize, y: Vec<i64>, x: Vec<f64>, offsets: Option<Vec<f64>>) -> Result<Self> {
        if n == 0 || d == 0 {
            return invalid("dataset needs at least one observation and one unit");
        }
        if y.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: y.len() });
        }
        if x.len() != n * d * p {
            return Err(Error::DimensionMismatch { expected: n * d * p, found: x.len() });
        }
        let offsets = offsets.unwrap_or_else(|| vec![1.0; n * d]);
        if offsets.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: offsets.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite covariate");
        }
        if offsets.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("offsets must be positive");
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            let key: Vec<u64> = y[i * d..(i + 1) * d]
                .iter()
                .map(|&v| v as u64)
                .chain(x[i * d * p..(i + 1) * d * p].iter().map(|v| v.to_bits()))
                .chain(offsets[i * d..(i + 1) * d].iter().map(|v| v.to_bits()))
                .collect();
            match index.get(&key) {
                Some(&g) => groups[g].1 += 1,
                None => {
                    index.insert(key, groups.len());
                    groups.push((i, 1));
                }
            }
        }
        Ok(Dataset { n, d, p, y, x, offsets, groups })
    }

    /// Distinct observations as `(first index, count)` in order of appearance.
    pub fn groups(&self) -> &[(usize, usize)] {
        &self.groups
    }

    /// Responses `rows` (each of length `d`) sharing one `d×p` covariate
    /// matrix and offset vector across observations.
    pub fn with_shared_design(rows: &[Vec<i64>], x_units: &[Vec<f64>], offsets: Option<&[f64]>) -> Result<Self> {
        let n = rows.len();
        let d = x_units.len();
        let p = x_units.first().map_or(0, Vec::len);
        if x_units.iter().any(|r| r.len() != p) {
            return invalid("ragged covariate matrix");
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
        let y = rows.iter().flatten().copied().collect();
        let x_once: Vec<f64> = x_units.iter().flatten().copied().collect();
        let x = (0..n).flat_map(|_| x_once.iter().copied()).collect();
        let offsets = offsets.map(|o| (0..n).flat_map(|_| o.iter().copied()).collect());
        Self::new(n, d, p, y, x, offsets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn response(&self, i: usize) -> &[i64] {
        &self.y[i * self.d..(i + 1) * self.d]
    }

    pub fn covariates(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.d + j) * self.p;
        &self.x[k..k + self.p]
    }

    pub fn offset(&self, i: usize, j: usize) -> f64 {
        self.offsets[i * self.d + j]
    }

    pub fn responses(&self) -> &[i64] {
        &self.y
    }
}

/// Margins plus latent correlation structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub margin: MarginSpec,
    pub correlation: CorrelationModel,
}

impl ModelSpec {
    /// Checks that `data` is compatible with this model.
    pub fn check(&self, data: &Dataset) -> Result<()> {
        self.margin.validate()?;
        if self.correlation.dim() != data.d {
            return Err(Error::DimensionMismatch { expected: self.correlation.dim(), found: data.d });
        }
        if self.margin.beta.len() != data.p {
            return Err(Error::DimensionMismatch { expected: self.margin.beta.len(), found: data.p });
        }
        if let Some(y) = data.y.iter().find(|&&y| !self.margin.family.accepts(y)) {
            return invalid(format!("response {y} invalid for {}", self.margin.family));
        }
        Ok(())
    }

    /// Unit margins for observation `i`.
    pub fn unit_margins(&self, data: &Dataset, i: usize) -> Result<Vec<UnitMargin>> {
        (0..data.d)
            .map(|j| self.margin.unit(mean_from_covariates(&self.margin, data.covariates(i, j), data.offset(i, j))?))
            .collect()
    }
}

/// Latent rectangle for response `y` under the given margins.
pub fn response_rectangle(y: &[i64], margins: &[UnitMargin]) -> Result<Rectangle> {
    if y.len() != margins.len() {
        return Err(Error::DimensionMismatch { expected: margins.len(), found: y.len() });
    }
    let (lower, upper) = y.iter().zip(margins).map(|(&yj, m)| m.interval(yj).latent_bounds()).unzip();
    Rectangle::new(lower, upper)
}

pub(crate) fn sl_term(
    y: &[i64],
    margins: &[UnitMargin],
    plan: Option<&ConditioningPlan>,
    r: &SymMatrix,
    cfg: &RqmcConfig,
    stream: u64,
) -> Result<f64> {
    if y.len() == 1 {
        return Ok(margins[0].log_pmf(y[0]).max(PROB_FLOOR.ln()));
    }
    let rect = response_rectangle(y, margins)?;
    let est = match plan {
        Some(plan) => rectangle_rqmc_with_plan(&rect, plan, cfg, stream)?,
        None => rectangle_rqmc_with_plan(&rect, &ConditioningPlan::prioritized(&rect, r)?, cfg, stream)?,
    };
    Ok(est.probability.max(PROB_FLOOR).ln())
}

/// RQMC joint pmf of `y` for units with means `means`; CRN stream 0.
pub fn joint_pmf_rqmc(y: &[i64], means: &[f64], model: &ModelSpec, cfg: &RqmcConfig) -> Result<f64> {
    let r = model.correlation.materialize()?;
    if y.len() != r.order() || means.len() != r.order() {
        return Err(Error::DimensionMismatch { expected: r.order(), found: y.len().min(means.len()) });
    }
    if let Some(bad) = y.iter().find(|&&v| !model.margin.family.accepts(v)) {
        return invalid(format!("response {bad} invalid for {}", model.margin.family));
    }
    let margins = means.iter().map(|&mu| model.margin.unit(mu)).collect::<Result<Vec<_>>>()?;
    if y.len() == 1 {
        return Ok(margins[0].pmf(y[0]).max(PROB_FLOOR));
    }
    let rect = response_rectangle(y, &margins)?;
    let plan = ConditioningPlan::prioritized(&rect, &r)?;
    Ok(rectangle_rqmc_with_plan(&rect, &plan, cfg, 0)?.probability.max(PROB_FLOOR))
}

fn sum_terms<F>(n: usize, term: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let terms = (0..n).into_par_iter().map(term).collect::<Result<Vec<f64>>>()?;
    // left-to-right so the total is independent of scheduling
    Ok(terms.iter().sum())
}

/// Sum over distinct observations of `count * term(first index)`.
fn sum_grouped<F>(data: &Dataset, term: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let terms = data.groups.par_iter().map(|&(i, _)| term(i)).collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().zip(&data.groups).map(|(t, &(_, c))| c as f64 * t).sum())
}

/// Independence log-likelihood `Σ_i Σ_j log f_j(y_ij)`.
pub fn independence_loglik(margin: &MarginSpec, data: &Dataset) -> Result<f64> {
    let model = ModelSpec { margin: margin.clone(), correlation: CorrelationModel::Exchangeable { d: data.d, rho: 0.0 } };
    model.check(data)?;
    sum_grouped(data, |i| {
        let ms = model.unit_margins(data, i)?;
        Ok(data.response(i).iter().zip(&ms).map(|(&y, m)| m.log_pmf(y)).sum())
    })
}

/// Simulated log-likelihood. Observation `i` draws its shifts from CRN
/// stream `i`, and each rectangle uses the prioritized ordering at the
/// supplied parameters.
pub fn sl_loglik(model: &ModelSpec, data: &Dataset, cfg: &RqmcConfig) -> Result<f64> {
    model.check(data)?;
    cfg.validate()?;
    let r = model.correlation.materialize()?;
    sum_terms(data.n, |i| sl_term(data.response(i), &model.unit_margins(data, i)?, None, &r, cfg, i as u64))
}

/// Simulated log-likelihood with variable orderings frozen at construction,
/// so that the objective is a smooth function of the parameters.
#[derive(Debug, Clone)]
pub struct SlObjective<'a> {
    data: &'a Dataset,
    cfg: RqmcConfig,
    orders: Vec<Vec<usize>>,
}

impl<'a> SlObjective<'a> {
    /// Freezes the prioritized ordering of each observation at `model`.
    pub fn new(model: &ModelSpec, data: &'a Dataset, cfg: RqmcConfig) -> Result<Self> {
        model.check(data)?;
        cfg.validate()?;
        let r = model.correlation.materialize()?;
        let orders = (0..data.n)
            .into_par_iter()
            .map(|i| {
                let rect = response_rectangle(data.response(i), &model.unit_margins(data, i)?)?;
                Ok(ConditioningPlan::prioritized(&rect, &r)?.order().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SlObjective { data, cfg, orders })
    }

    pub fn config(&self) -> &RqmcConfig {
        &self.cfg
    }

    pub fn loglik(&self, model: &ModelSpec) -> Result<f64> {
        model.check(self.data)?;
        let r = model.correlation.materialize()?;
        let mut plans: HashMap<&[usize], ConditioningPlan> = HashMap::new();
        for order in &self.orders {
            if !plans.contains_key(order.as_slice()) {
                plans.insert(order, ConditioningPlan::with_order(&r, order)?);
            }
        }
        sum_terms(self.data.n, |i| {
            let plan = &plans[self.orders[i].as_slice()];
            sl_term(self.data.response(i), &model.unit_margins(self.data, i)?, Some(plan), &r, &self.cfg, i as u64)
        })
    }
}

fn copula_from_scores(q: &[f64], chol: &Cholesky) -> f64 {
    let z = chol.solve_lower(q);
    let qq: f64 = q.iter().map(|v| v * v).sum();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * chol.log_det() + 0.5 * (qq - zz)
}

/// Log density of the Gaussian copula with correlation `r` at `u`.
pub fn copula_log_density(u: &[f64], r: &SymMatrix) -> Result<f64> {
    if u.len() != r.order() {
        return Err(Error::DimensionMismatch { expected: r.order(), found: u.len() });
    }
    if let Some(bad) = u.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return invalid(format!("copula argument {bad} outside (0, 1)"));
    }
    let q: Vec<f64> = u.iter().map(|&v| quantile_unchecked(v.clamp(U_CLAMP, 1.0 - U_CLAMP))).collect();
    Ok(copula_from_scores(&q, &r.cholesky()?))
}

pub(crate) fn dt_term(y: &[i64], margins: &[UnitMargin], chol: &Cholesky) -> f64 {
    let mut log_f = 0.0;
    let mut q = Vec::with_capacity(y.len());
    for (&yj, m) in y.iter().zip(margins) {
        let iv = m.interval(yj);
        log_f += m.log_pmf(yj);
        q.push(iv.midpoint_score(U_CLAMP));
    }
    copula_from_scores(&q, chol) + log_f
}

/// Distributional-transform surrogate log-likelihood.
pub fn dt_loglik(model: &ModelSpec, data: &Dataset) -> Result<f64> {
    model.check(data)?;
    let chol = model.correlation.materialize()?.cholesky()?;
    sum_grouped(data, |i| Ok(dt_term(data.response(i), &model.unit_margins(data, i)?, &chol)))
}

pub(crate) fn exact_term(y: &[i64], margins: &[UnitMargin], rho: f64) -> Result<f64> {
    let p = rectangle_exchangeable(&response_rectangle(y, margins)?, rho)?;
    Ok(p.max(PROB_FLOOR).ln())
}

/// Exact log-likelihood for an exchangeable correlation structure.
pub fn exact_exch_loglik(model: &ModelSpec, data: &Dataset) -> Result<f64> {
    let rho = match model.correlation {
        CorrelationModel::Exchangeable { rho, .. } => rho,
        _ => return invalid("exact likelihood requires an exchangeable structure"),
    };
    model.check(data)?;
    sum_grouped(data, |i| exact_term(data.response(i), &model.unit_margins(data, i)?, rho))
}

//! Quasi-Newton maximization, numerical Hessians, Wald tests and AIC.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::likelihood::{dt_loglik, exact_exch_loglik, independence_loglik, Dataset, ModelSpec, SlObjective};
use crate::margins::MarginSpec;
use crate::normal::{std_normal_sf, SymMatrix};
use crate::rectangle::RqmcConfig;
use crate::structures::CorrelationModel;

/// Map from a constrained parameter to an unconstrained coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamTransform {
    Identity,
    /// `(0, ∞)` via `log`.
    Log,
    /// `(0, 1)` via `logit`.
    Logit,
}

impl ParamTransform {
    pub fn to_free(self, theta: f64) -> Result<f64> {
        match self {
            ParamTransform::Identity if theta.is_finite() => Ok(theta),
            ParamTransform::Log if theta > 0.0 && theta.is_finite() => Ok(theta.ln()),
            ParamTransform::Logit if theta > 0.0 && theta < 1.0 => Ok((theta / (1.0 - theta)).ln()),
            _ => invalid(format!("parameter value {theta} outside the range of its {self:?} transform")),
        }
    }

    pub fn to_natural(self, x: f64) -> f64 {
        match self {
            ParamTransform::Identity => x,
            ParamTransform::Log => x.exp(),
            ParamTransform::Logit => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Relative objective change threshold.
    pub ftol: f64,
    /// Gradient max-norm threshold on the transformed scale.
    pub gtol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { max_iter: 500, ftol: 1e-8, gtol: 1e-5 }
    }
}

/// Optimizer outcome on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn grad_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central-difference gradient of `phi` (to be minimized) at `x`.
fn gradient(phi: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = grad_step(x[k]);
            xp[k] = x[k] + h;
            let fp = phi(&xp);
            xp[k] = x[k] - h;
            let fm = phi(&xp);
            xp[k] = x[k];
            let g = (fp - fm) / (2.0 * h);
            if g.is_finite() {
                g
            } else {
                0.0
            }
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes `f` (a function of natural-scale parameters) by BFGS with
/// backtracking line search in the transformed coordinates.
pub fn maximize<F>(f: F, start: &[f64], transforms: &[ParamTransform], cfg: &OptimConfig) -> Result<Maximum>
where
    F: Fn(&[f64]) -> f64,
{
    let k = start.len();
    if transforms.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: transforms.len() });
    }
    let natural = |x: &[f64]| -> Vec<f64> { x.iter().zip(transforms).map(|(v, t)| t.to_natural(*v)).collect() };
    let phi = |x: &[f64]| -> f64 {
        let v = -f(&natural(x));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut x: Vec<f64> = start.iter().zip(transforms).map(|(v, t)| t.to_free(*v)).collect::<Result<_>>()?;
    let mut fx = phi(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut g = gradient(&phi, &x);
    let mut hinv = identity(k);
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut dir: Vec<f64> = (0..k).map(|i| -(0..k).map(|j| hinv[i * k + j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            hinv = identity(k);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // keep trial points within a sane distance in transformed space
        let len = max_abs(&dir);
        if len > 5.0 {
            dir.iter_mut().for_each(|v| *v *= 5.0 / len);
            slope *= 5.0 / len;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let fn_ = phi(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            converged = stalled_converged(&g, fx, cfg);
            break;
        };
        let gn = gradient(&phi, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let rel_change = (fx - fn_).abs() / fx.abs().max(1.0);
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if iterations == 1 {
                let yy: f64 = yv.iter().map(|v| v * v).sum();
                hinv = identity(k);
                hinv.iter_mut().for_each(|v| *v *= sy / yy);
            }
            bfgs_update(&mut hinv, &s, &yv, sy);
        }
        stalls = if fn_ < fx { 0 } else { stalls + 1 };
        x = xn;
        fx = fn_;
        g = gn;
        if rel_change < cfg.ftol && max_abs(&g) < cfg.gtol {
            converged = true;
            break;
        }
        if stalls >= 3 {
            converged = stalled_converged(&g, fx, cfg);
            break;
        }
    }
    Ok(Maximum { theta: natural(&x), value: -fx, iterations, converged })
}

/// When no step can lower the objective any further, the gradient is
/// judged relative to the objective's magnitude, since differences below
/// its rounding level are unresolvable.
fn stalled_converged(g: &[f64], fx: f64, cfg: &OptimConfig) -> bool {
    max_abs(g) < cfg.gtol * fx.abs().max(1.0)
}

fn identity(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0;
    }
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[i * k + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn hess_step(theta: f64) -> f64 {
    (1e-4 * theta.abs()).max(1e-4)
}

/// Central second differences of `f` at `theta` on the natural scale.
pub fn numerical_hessian<F>(f: F, theta: &[f64]) -> Result<SymMatrix>
where
    F: Fn(&[f64]) -> f64,
{
    let k = theta.len();
    let h: Vec<f64> = theta.iter().map(|&t| hess_step(t)).collect();
    let mut x = theta.to_vec();
    let eval = |x: &[f64]| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            invalid("objective non-finite near the optimum")
        }
    };
    let f0 = eval(&x)?;
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        x[i] = theta[i] + h[i];
        let fp = eval(&x)?;
        x[i] = theta[i] - h[i];
        let fm = eval(&x)?;
        x[i] = theta[i];
        data[i * k + i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let v = eval(&x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            data[i * k + j] = v;
            data[j * k + i] = v;
        }
    }
    SymMatrix::new(k, data)
}

/// `(-H)⁻¹`, or an error when `-H` is not positive definite.
pub fn covariance_from_hessian(h: &SymMatrix) -> Result<SymMatrix> {
    let neg = SymMatrix::from_fn(h.order(), |i, j| -h.get(i, j));
    neg.cholesky().map(|c| c.inverse()).map_err(|_| Error::HessianNotNegativeDefinite)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dt,
    Sl,
    Exact,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dt => "dt",
            Method::Sl => "sl",
            Method::Exact => "exact",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dt" => Ok(Method::Dt),
            "sl" => Ok(Method::Sl),
            "exact" => Ok(Method::Exact),
            other => invalid(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub estimates: Vec<Estimate>,
    pub loglik: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: Option<u64>,
    pub rqmc: Option<RqmcConfig>,
    /// Row-major inverse negative Hessian, when available.
    pub covariance: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.estimate).collect()
    }
}

/// Fills in Wald statistics and AIC.
pub fn wald_and_aic(mut fit: FitResult) -> FitResult {
    for e in &mut fit.estimates {
        match e.se {
            Some(se) if se > 0.0 => {
                let z = e.estimate / se;
                e.z = Some(z);
                e.p = Some((2.0 * std_normal_sf(z.abs())).min(1.0));
            }
            _ => {
                e.z = None;
                e.p = None;
            }
        }
    }
    fit.aic = -2.0 * fit.loglik + 2.0 * fit.estimates.len() as f64;
    fit
}

/// Parameter layout of a model: `β`, then `γ` for NB, then `ρ`/`ϱ`.
pub fn model_parameters(model: &ModelSpec) -> Vec<f64> {
    let mut v = model.margin.beta.clone();
    v.extend(model.margin.gamma);
    v.extend(model.correlation.parameter());
    v
}

pub fn model_transforms(model: &ModelSpec) -> Vec<ParamTransform> {
    let mut v = vec![ParamTransform::Identity; model.margin.beta.len()];
    if model.margin.gamma.is_some() {
        v.push(ParamTransform::Log);
    }
    if model.correlation.parameter().is_some() {
        v.push(ParamTransform::Logit);
    }
    v
}

/// Names in [`model_parameters`] order; `covariates` name the `β` entries.
pub fn model_parameter_names(model: &ModelSpec, covariates: &[String]) -> Vec<String> {
    let mut v: Vec<String> = (0..model.margin.beta.len())
        .map(|k| covariates.get(k).cloned().unwrap_or_else(|| format!("beta{k}")))
        .collect();
    if model.margin.gamma.is_some() {
        v.push("gamma".into());
    }
    match model.correlation {
        CorrelationModel::Exchangeable { .. } => v.push("rho".into()),
        CorrelationModel::Car { .. } => v.push("varrho".into()),
        CorrelationModel::Fixed(_) => {}
    }
    v
}

/// `model` with parameters replaced from `theta` (same layout as
/// [`model_parameters`]).
pub fn model_with_parameters(model: &ModelSpec, theta: &[f64]) -> ModelSpec {
    let p = model.margin.beta.len();
    let mut m = model.clone();
    m.margin.beta = theta[..p].to_vec();
    let mut k = p;
    if m.margin.gamma.is_some() {
        m.margin.gamma = Some(theta[k]);
        k += 1;
    }
    if model.correlation.parameter().is_some() {
        m.correlation = model.correlation.with_parameter(theta[k]);
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Required for [`Method::Sl`].
    pub rqmc: Option<RqmcConfig>,
    pub optim: OptimConfig,
    /// Starting values in [`model_parameters`] layout; defaults when absent.
    pub start: Option<Vec<f64>>,
    /// Names for the `β` entries.
    pub covariate_names: Vec<String>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { rqmc: None, optim: OptimConfig::default(), start: None, covariate_names: Vec::new() }
    }
}

/// Independence-model `β` (with `γ` held at 1 for NB), `γ = 1`, and a
/// dependence parameter of 0.2.
pub fn default_start(model: &ModelSpec, data: &Dataset, optim: &OptimConfig) -> Result<Vec<f64>> {
    let gamma = model.margin.gamma.map(|_| 1.0);
    let p = model.margin.beta.len();
    let template = MarginSpec { gamma, ..model.margin.clone() };
    let objective = |beta: &[f64]| {
        let m = MarginSpec { beta: beta.to_vec(), ..template.clone() };
        independence_loglik(&m, data).unwrap_or(f64::NEG_INFINITY)
    };
    let glm = maximize(objective, &vec![0.0; p], &vec![ParamTransform::Identity; p], optim)?;
    let mut start = glm.theta;
    start.extend(gamma);
    start.extend(model.correlation.parameter().map(|_| 0.2));
    Ok(start)
}

/// Margin fitted by maximizing the independence likelihood over `β` and `γ`.
pub fn fit_independence(margin: &MarginSpec, data: &Dataset, optim: &OptimConfig) -> Result<MarginSpec> {
    let p = margin.beta.len();
    let template = margin.clone();
    let objective = |theta: &[f64]| {
        let m = MarginSpec { beta: theta[..p].to_vec(), gamma: theta.get(p).copied(), ..template.clone() };
        independence_loglik(&m, data).unwrap_or(f64::NEG_INFINITY)
    };
    let mut start = vec![0.0; p];
    let mut transforms = vec![ParamTransform::Identity; p];
    if margin.gamma.is_some() {
        start.push(1.0);
        transforms.push(ParamTransform::Log);
    }
    let best = maximize(objective, &start, &transforms, optim)?;
    Ok(MarginSpec { beta: best.theta[..p].to_vec(), gamma: best.theta.get(p).copied(), ..margin.clone() })
}

/// Maximizes the chosen likelihood over all model parameters and reports
/// Hessian-based standard errors, Wald tests and AIC.
pub fn fit(method: Method, model: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    model.check(data)?;
    if method == Method::Exact && !matches!(model.correlation, CorrelationModel::Exchangeable { .. }) {
        return invalid("exact likelihood requires an exchangeable structure");
    }
    let start = match &opts.start {
        Some(s) => {
            if s.len() != model_parameters(model).len() {
                return Err(Error::DimensionMismatch { expected: model_parameters(model).len(), found: s.len() });
            }
            s.clone()
        }
        None => default_start(model, data, &opts.optim)?,
    };
    let start_model = model_with_parameters(model, &start);
    let sl = match method {
        Method::Sl => {
            let cfg = opts.rqmc.ok_or_else(|| Error::InvalidArgument("sl requires an RQMC configuration".into()))?;
            Some(SlObjective::new(&start_model, data, cfg)?)
        }
        _ => None,
    };
    let objective = |theta: &[f64]| -> f64 {
        let m = model_with_parameters(model, theta);
        let v = match method {
            Method::Dt => dt_loglik(&m, data),
            Method::Exact => exact_exch_loglik(&m, data),
            Method::Sl => sl.as_ref().map_or_else(|| invalid("missing objective"), |o| o.loglik(&m)),
        };
        v.unwrap_or(f64::NEG_INFINITY)
    };
    let transforms = model_transforms(model);
    let best = maximize(&objective, &start, &transforms, &opts.optim)?;
    let names = model_parameter_names(model, &opts.covariate_names);
    let mut warnings = Vec::new();
    if !best.converged {
        warnings.push(format!("optimizer did not converge after {} iterations", best.iterations));
    }
    let cov = numerical_hessian(&objective, &best.theta).and_then(|h| covariance_from_hessian(&h));
    let cov = match cov {
        Ok(c) => Some(c),
        Err(e) => {
            warnings.push(format!("{e}; standard errors unavailable"));
            None
        }
    };
    let estimates = names
        .into_iter()
        .zip(&best.theta)
        .enumerate()
        .map(|(k, (name, &est))| Estimate {
            name,
            estimate: est,
            se: cov.as_ref().map(|c| c.get(k, k).max(0.0).sqrt()),
            z: None,
            p: None,
        })
        .collect();
    Ok(wald_and_aic(FitResult {
        method,
        estimates,
        loglik: best.value,
        aic: f64::NAN,
        iterations: best.iterations,
        converged: best.converged,
        seed: match method {
            Method::Sl => opts.rqmc.map(|c| c.seed),
            _ => None,
        },
        rqmc: if method == Method::Sl { opts.rqmc } else { None },
        covariance: cov.map(|c| c.as_slice().to_vec()),
        warnings,
    }))
}

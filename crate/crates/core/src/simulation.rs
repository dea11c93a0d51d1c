//! Sampling from copula models and bias/SD/RMSE method-comparison studies.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inference::{fit, model_parameter_names, model_parameters, FitOptions, Method};
use crate::likelihood::{Dataset, ModelSpec};
use crate::margins::{mean_from_covariates, Family, Link, MarginSpec};
use crate::normal::{std_normal_cdf, std_normal_sf, Cholesky, SymMatrix};
use crate::rectangle::RqmcConfig;
use crate::structures::{car_covariance, lattice_graph, CorrelationModel};

/// `L ε` for `ε` drawn from `rng`.
pub fn sample_mvn_with<R: Rng>(chol: &Cholesky, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..chol.order()).map(|_| rng.sample(StandardNormal)).collect();
    chol.mul_vec(&e)
}

/// One draw from `N(0, Σ)`, deterministic in `seed`.
pub fn sample_mvn(sigma: &SymMatrix, seed: u64) -> Result<Vec<f64>> {
    let chol = sigma.cholesky()?;
    Ok(sample_mvn_with(&chol, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Latent covariance used for sampling: `(D - ϱA)⁻¹` for CAR, `R` otherwise.
fn latent_covariance(model: &CorrelationModel) -> Result<SymMatrix> {
    match model {
        CorrelationModel::Car { varrho, graph } => Ok(car_covariance(graph, *varrho)?.0),
        other => other.materialize(),
    }
}

/// Response sampler for a fixed model and unit design.
pub struct ResponseSampler {
    chol: Cholesky,
    sds: Vec<f64>,
    margins: Vec<crate::margins::UnitMargin>,
}

impl ResponseSampler {
    /// `x_units` is `d×p`; `offsets` defaults to 1.
    pub fn new(model: &ModelSpec, x_units: &[Vec<f64>], offsets: Option<&[f64]>) -> Result<Self> {
        let sigma = latent_covariance(&model.correlation)?;
        let d = sigma.order();
        if x_units.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x_units.len() });
        }
        let margins = x_units
            .iter()
            .enumerate()
            .map(|(j, x)| model.margin.unit(mean_from_covariates(&model.margin, x, offsets.map_or(1.0, |o| o[j]))?))
            .collect::<Result<Vec<_>>>()?;
        let sds = sigma.diagonal().iter().map(|v| v.sqrt()).collect();
        Ok(ResponseSampler { chol: sigma.cholesky()?, sds, margins })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<i64> {
        let z = sample_mvn_with(&self.chol, rng);
        z.iter()
            .zip(&self.sds)
            .zip(&self.margins)
            .map(|((&zj, &s), m)| {
                let t = zj / s;
                // from the upper tail when t > 0 so u never rounds to 1
                let u = if t <= 0.0 { std_normal_cdf(t) } else { 1.0 - std_normal_sf(t) };
                let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                m.quantile(u).unwrap_or(0)
            })
            .collect()
    }
}

/// One response vector, deterministic in `seed`.
pub fn sample_response(model: &ModelSpec, x_units: &[Vec<f64>], offsets: Option<&[f64]>, seed: u64) -> Result<Vec<i64>> {
    let s = ResponseSampler::new(model, x_units, offsets)?;
    Ok(s.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Seed for replicate `r`: the first output of the `r`-th stream under `base`.
pub fn replicate_seed(base: u64, r: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(r);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum StudyStructure {
    /// `m × m` rook lattice with CAR dependence; unit covariates are the
    /// node coordinates.
    Lattice { m: usize },
    /// `d` exchangeable units with an intercept-only design.
    Exchangeable { d: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub structure: StudyStructure,
    pub family: Family,
    pub link: Link,
    pub beta: Vec<f64>,
    pub gamma: Option<f64>,
    /// `ϱ` for lattices, `ρ` for exchangeable designs.
    pub dependence: f64,
    pub replicates: usize,
    /// Observations per replicate.
    pub observations: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Lattice size and shift count for SL; its seed is replaced per replicate.
    pub rqmc: RqmcConfig,
}

impl StudyDesign {
    /// Lattice CAR design with `β = (2, -2)` on the coordinates.
    pub fn lattice(m: usize, family: Family, varrho: f64, replicates: usize, methods: Vec<Method>, seed: u64) -> Self {
        let gamma = family.has_dispersion().then_some(1.0);
        StudyDesign {
            structure: StudyStructure::Lattice { m },
            family,
            link: family.default_link(),
            beta: vec![2.0, -2.0],
            gamma,
            dependence: varrho,
            replicates,
            observations: 1,
            methods,
            seed,
            rqmc: RqmcConfig::default_for_dim(m * m, seed),
        }
    }

    pub fn dim(&self) -> usize {
        match self.structure {
            StudyStructure::Lattice { m } => m * m,
            StudyStructure::Exchangeable { d } => d,
        }
    }

    /// True model and the `d×p` unit covariates.
    pub fn model(&self) -> Result<(ModelSpec, Vec<Vec<f64>>)> {
        if self.replicates == 0 || self.observations == 0 {
            return invalid("replicates and observations must be positive");
        }
        if self.methods.is_empty() {
            return invalid("no methods to compare");
        }
        let margin = MarginSpec::new(self.family, self.link, self.beta.clone(), self.gamma)?;
        let (correlation, x) = match self.structure {
            StudyStructure::Lattice { m } => {
                let graph = lattice_graph(m)?;
                let x = graph.coords().iter().map(|&(a, b)| vec![a, b]).collect();
                (CorrelationModel::Car { varrho: self.dependence, graph }, x)
            }
            StudyStructure::Exchangeable { d } => {
                (CorrelationModel::Exchangeable { d, rho: self.dependence }, vec![vec![1.0]; d])
            }
        };
        if x[0].len() != self.beta.len() {
            return Err(Error::DimensionMismatch { expected: x[0].len(), found: self.beta.len() });
        }
        Ok((ModelSpec { margin, correlation }, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: Method,
    pub parameter: String,
    pub d_bias: f64,
    pub d_sd: f64,
    pub d_rmse: f64,
    pub d_bias_median: f64,
    pub d_rmse_median: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    /// Scale factor (number of units).
    pub d: usize,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn row(&self, method: Method, parameter: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.method == method && r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# format_version: 1\nmethod,parameter,d_bias,d_sd,d_rmse,d_bias_median,d_rmse_median,excluded\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method, r.parameter, r.d_bias, r.d_sd, r.d_rmse, r.d_bias_median, r.d_rmse_median, r.excluded
            );
        }
        s
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Summary of the estimates of one parameter. SD uses the population
/// divisor so that `RMSE² = bias² + SD²`.
pub fn summarize(estimates: &[f64], truth: f64, scale: f64) -> (f64, f64, f64, f64, f64) {
    if estimates.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    let bias = mean - truth;
    let bias_med = median(&mut estimates.to_vec()) - truth;
    let (b, s, bm) = (scale * bias, scale * sd, scale * bias_med);
    (b, s, (b * b + s * s).sqrt(), bm, (bm * bm + s * s).sqrt())
}

/// Per-replicate estimates; `None` marks an excluded fit.
pub type ReplicateEstimates = Vec<Vec<Option<Vec<f64>>>>;

/// Simulates and fits every replicate, returning `[replicate][method]`.
pub fn run_replicates(design: &StudyDesign) -> Result<ReplicateEstimates> {
    let (model, x) = design.model()?;
    let sampler = ResponseSampler::new(&model, &x, None)?;
    let truth = model_parameters(&model);
    (0..design.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(design.seed, r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<i64>> = (0..design.observations).map(|_| sampler.sample(&mut rng)).collect();
            let data = Dataset::with_shared_design(&rows, &x, None)?;
            let per_method = design
                .methods
                .iter()
                .map(|&method| {
                    let opts = FitOptions {
                        rqmc: Some(RqmcConfig { seed, ..design.rqmc }),
                        ..FitOptions::default()
                    };
                    match fit(method, &model, &data, &opts) {
                        Ok(f) if f.converged && f.values().len() == truth.len() => Some(f.values()),
                        _ => None,
                    }
                })
                .collect();
            Ok(per_method)
        })
        .collect()
}

/// Runs the study and aggregates `d`-scaled bias, SD and RMSE.
pub fn run_study(design: &StudyDesign) -> Result<StudyTable> {
    let (model, _) = design.model()?;
    let truth = model_parameters(&model);
    let names = model_parameter_names(&model, &[]);
    let names: Vec<String> = match design.structure {
        StudyStructure::Lattice { .. } => {
            let mut n = vec!["beta1".to_string(), "beta2".to_string()];
            n.extend(names.into_iter().skip(2));
            n
        }
        StudyStructure::Exchangeable { .. } => names,
    };
    let reps = run_replicates(design)?;
    let scale = design.dim() as f64;
    let mut rows = Vec::new();
    for (mi, &method) in design.methods.iter().enumerate() {
        let ok: Vec<&Vec<f64>> = reps.iter().filter_map(|r| r[mi].as_ref()).collect();
        let excluded = reps.len() - ok.len();
        for (k, name) in names.iter().enumerate() {
            let est: Vec<f64> = ok.iter().map(|v| v[k]).collect();
            let (d_bias, d_sd, d_rmse, d_bias_median, d_rmse_median) = summarize(&est, truth[k], scale);
            rows.push(StudyRow {
                method,
                parameter: name.clone(),
                d_bias,
                d_sd,
                d_rmse,
                d_bias_median,
                d_rmse_median,
                excluded,
            });
        }
    }
    Ok(StudyTable { d: design.dim(), rows })
}

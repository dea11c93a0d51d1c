//! Discrete marginal families and their regression links.
//!
//! NB2 has variance `μ(1 + γμ)` (size `1/γ`), NB1 has variance `μ(1 + γ)`
//! (size `μ/γ`, success probability `1/(1 + γ)`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::normal::{quantile_unchecked, std_normal_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bernoulli,
    Poisson,
    Nb1,
    Nb2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Logit,
    Probit,
}

impl Family {
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Nb1 | Family::Nb2)
    }

    pub fn is_count(self) -> bool {
        !matches!(self, Family::Bernoulli)
    }

    pub fn default_link(self) -> Link {
        if self.is_count() {
            Link::Log
        } else {
            Link::Logit
        }
    }

    /// Whether `y` is in the support.
    pub fn accepts(self, y: i64) -> bool {
        match self {
            Family::Bernoulli => y == 0 || y == 1,
            _ => y >= 0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::Nb1 => "nb1",
            Family::Nb2 => "nb2",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" => Ok(Family::Bernoulli),
            "poisson" => Ok(Family::Poisson),
            "nb1" => Ok(Family::Nb1),
            "nb2" => Ok(Family::Nb2),
            other => invalid(format!("unknown family '{other}'")),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Log => "log",
            Link::Logit => "logit",
            Link::Probit => "probit",
        })
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(Link::Log),
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            other => invalid(format!("unknown link '{other}'")),
        }
    }
}

/// Family, link, regression coefficients and (for NB) dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub family: Family,
    pub link: Link,
    pub beta: Vec<f64>,
    pub gamma: Option<f64>,
}

impl MarginSpec {
    pub fn new(family: Family, link: Link, beta: Vec<f64>, gamma: Option<f64>) -> Result<Self> {
        let spec = MarginSpec { family, link, beta, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.family.has_dispersion(), self.gamma) {
            (true, None) => return invalid(format!("{} requires gamma", self.family)),
            (false, Some(_)) => return invalid(format!("{} takes no gamma", self.family)),
            (true, Some(g)) if !(g > 0.0 && g.is_finite()) => return invalid(format!("gamma {g} must be positive")),
            _ => {}
        }
        match (self.family, self.link) {
            (Family::Bernoulli, Link::Log) => invalid("bernoulli requires logit or probit link"),
            (f, l) if f.is_count() && l != Link::Log => invalid(format!("{f} requires log link")),
            _ if self.beta.iter().any(|b| !b.is_finite()) => invalid("non-finite regression coefficient"),
            _ => Ok(()),
        }
    }

    /// Marginal distribution for a unit with mean `mu`.
    pub fn unit(&self, mu: f64) -> Result<UnitMargin> {
        UnitMargin::new(self.family, mu, self.gamma)
    }
}

/// Applies the inverse link to `βᵀx`; count families multiply by `offset`.
pub fn mean_from_covariates(spec: &MarginSpec, x: &[f64], offset: f64) -> Result<f64> {
    if x.len() != spec.beta.len() {
        return Err(Error::DimensionMismatch { expected: spec.beta.len(), found: x.len() });
    }
    if !(offset > 0.0 && offset.is_finite()) {
        return invalid(format!("offset {offset} must be positive"));
    }
    let eta: f64 = spec.beta.iter().zip(x).map(|(b, v)| b * v).sum();
    Ok(inverse_link(spec.link, eta, offset))
}

pub(crate) fn inverse_link(link: Link, eta: f64, offset: f64) -> f64 {
    let eta = eta.clamp(-700.0, 700.0);
    match link {
        Link::Log => offset * eta.exp(),
        Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        Link::Probit => std_normal_cdf(eta),
    }
}

/// A resolved marginal distribution (family, mean, dispersion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitMargin {
    family: Family,
    mu: f64,
    gamma: f64,
    // negative binomial size and log(1 - p); unused otherwise
    size: f64,
    ln_q: f64,
    ln_p_size: f64,
}

/// pmf and cdf/sf values at `y - 1` and `y` from one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfInterval {
    pub pmf: f64,
    pub cdf_below: f64,
    pub cdf: f64,
    pub sf_below: f64,
    pub sf: f64,
}

impl CdfInterval {
    /// `Φ⁻¹(F(y-1))`, `Φ⁻¹(F(y))`, each taken from the tail it is stored in.
    pub fn latent_bounds(&self) -> (f64, f64) {
        (latent_point(self.cdf_below, self.sf_below), latent_point(self.cdf, self.sf))
    }

    /// Distributional-transform midpoint `½(F(y) + F(y-1))` as a normal score,
    /// with the midpoint clamped to `[clamp, 1 - clamp]`.
    pub fn midpoint_score(&self, clamp: f64) -> f64 {
        let v = 0.5 * (self.cdf + self.cdf_below);
        if v <= 0.5 {
            quantile_unchecked(v.max(clamp))
        } else {
            let upper = 0.5 * (self.sf + self.sf_below);
            -quantile_unchecked(upper.max(clamp))
        }
    }
}

fn latent_point(cdf: f64, sf: f64) -> f64 {
    if cdf <= 0.5 {
        quantile_unchecked(cdf)
    } else {
        -quantile_unchecked(sf)
    }
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

impl UnitMargin {
    pub fn new(family: Family, mu: f64, gamma: Option<f64>) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return invalid(format!("mean {mu} must be positive"));
        }
        if family == Family::Bernoulli && mu >= 1.0 {
            return invalid(format!("bernoulli probability {mu} must be below 1"));
        }
        let gamma = match (family.has_dispersion(), gamma) {
            (true, Some(g)) if g > 0.0 && g.is_finite() => g,
            (true, _) => return invalid(format!("{family} requires a positive gamma")),
            (false, _) => 0.0,
        };
        let (size, ln_q, ln_p_size) = match family {
            Family::Nb2 => {
                let gm = gamma * mu;
                (1.0 / gamma, gm.ln() - gm.ln_1p(), -gm.ln_1p() / gamma)
            }
            Family::Nb1 => (mu / gamma, gamma.ln() - gamma.ln_1p(), -(mu / gamma) * gamma.ln_1p()),
            _ => (0.0, 0.0, 0.0),
        };
        Ok(UnitMargin { family, mu, gamma, size, ln_q, ln_p_size })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            Family::Bernoulli => self.mu * (1.0 - self.mu),
            Family::Poisson => self.mu,
            Family::Nb1 => self.mu * (1.0 + self.gamma),
            Family::Nb2 => self.mu * (1.0 + self.gamma * self.mu),
        }
    }

    /// Log pmf; `-∞` outside the support.
    pub fn log_pmf(&self, y: i64) -> f64 {
        if !self.family.accepts(y) {
            return f64::NEG_INFINITY;
        }
        let yf = y as f64;
        match self.family {
            Family::Bernoulli => {
                if y == 1 {
                    self.mu.ln()
                } else {
                    (-self.mu).ln_1p()
                }
            }
            Family::Poisson => yf * self.mu.ln() - self.mu - ln_gamma(yf + 1.0),
            Family::Nb1 | Family::Nb2 => {
                // log Γ(y + r) / Γ(r) by direct sum while short, avoiding
                // cancellation when r is large
                let rising = if y < 64 {
                    (0..y).map(|k| (self.size + k as f64).ln()).sum::<f64>()
                } else {
                    ln_gamma(yf + self.size) - ln_gamma(self.size)
                };
                rising - ln_gamma(yf + 1.0) + self.ln_p_size + yf * self.ln_q
            }
        }
    }

    pub fn pmf(&self, y: i64) -> f64 {
        self.log_pmf(y).exp()
    }

    /// Ratio `f(k + 1) / f(k)`.
    #[inline]
    fn step_ratio(&self, k: i64) -> f64 {
        let kf = k as f64;
        match self.family {
            Family::Poisson => self.mu / (kf + 1.0),
            Family::Nb1 | Family::Nb2 => (kf + self.size) / (kf + 1.0) * self.ln_q.exp(),
            Family::Bernoulli => {
                if k == 0 {
                    self.mu / (1.0 - self.mu)
                } else {
                    0.0
                }
            }
        }
    }

    /// `Σ_{k <= y} f(k)` by forward recurrence.
    pub fn cdf(&self, y: i64) -> f64 {
        if y < 0 {
            return 0.0;
        }
        if self.family == Family::Bernoulli {
            return if y == 0 { 1.0 - self.mu } else { 1.0 };
        }
        let lf0 = self.log_pmf(0);
        if lf0 < -700.0 {
            // f(0) underflows; sum in log space term by term
            return (0..=y).map(|k| self.pmf(k)).sum::<f64>().min(1.0);
        }
        let mut term = lf0.exp();
        let mut total = term;
        for k in 0..y {
            term *= self.step_ratio(k);
            total += term;
        }
        total.min(1.0)
    }

    /// `1 - F(y)` without cancellation in the upper tail.
    pub fn sf(&self, y: i64) -> f64 {
        if y < 0 {
            return 1.0;
        }
        if self.family == Family::Bernoulli {
            return if y == 0 { self.mu } else { 0.0 };
        }
        let c = self.cdf(y);
        if c <= 0.5 {
            return 1.0 - c;
        }
        self.tail_sum(y + 1, self.pmf(y + 1))
    }

    fn tail_sum(&self, from: i64, first: f64) -> f64 {
        let mode = self.mu.floor() as i64 + 1;
        let mut term = first;
        let mut total = 0.0;
        let mut k = from;
        loop {
            total += term;
            if (k > mode && term <= 1e-18 * total) || term == 0.0 || k - from > 10_000_000 {
                break;
            }
            term *= self.step_ratio(k);
            k += 1;
        }
        total
    }

    /// All cdf/sf quantities needed for the bounds at `y` from one pass.
    pub fn interval(&self, y: i64) -> CdfInterval {
        let pmf = self.pmf(y);
        let cdf_below = self.cdf(y - 1);
        let cdf = (cdf_below + pmf).min(1.0);
        let sf = if y < 0 {
            1.0
        } else if self.family == Family::Bernoulli {
            if y == 0 {
                self.mu
            } else {
                0.0
            }
        } else if cdf <= 0.5 {
            1.0 - cdf
        } else {
            self.tail_sum(y + 1, pmf * self.step_ratio(y))
        };
        CdfInterval { pmf, cdf_below, cdf, sf_below: sf + pmf, sf }
    }

    /// `min{y : F(y) >= u}` for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<i64> {
        if !(u > 0.0 && u < 1.0) {
            return invalid(format!("quantile level {u} outside (0, 1)"));
        }
        if self.family == Family::Bernoulli {
            return Ok(if u <= 1.0 - self.mu { 0 } else { 1 });
        }
        let mode = self.mu.floor() as i64 + 1;
        let lf0 = self.log_pmf(0);
        let mut k = 0i64;
        let mut term = if lf0 < -700.0 { 0.0 } else { lf0.exp() };
        let mut total = term;
        while total < u {
            if term == 0.0 && k >= mode {
                // beyond representable tail mass
                break;
            }
            term = if term == 0.0 { self.pmf(k + 1) } else { term * self.step_ratio(k) };
            k += 1;
            total += term;
        }
        Ok(k)
    }
}

/// Marginal pmf `f(y)` for a unit with mean `mu`.
pub fn margin_pmf(spec: &MarginSpec, mu: f64, y: i64) -> Result<f64> {
    if !spec.family.accepts(y) {
        return invalid(format!("response {y} invalid for {}", spec.family));
    }
    Ok(spec.unit(mu)?.pmf(y))
}

/// Marginal cdf `F(y)`; `F(y) = 0` for `y < 0`.
pub fn margin_cdf(spec: &MarginSpec, mu: f64, y: i64) -> Result<f64> {
    Ok(spec.unit(mu)?.cdf(y))
}

pub fn margin_quantile(spec: &MarginSpec, mu: f64, u: f64) -> Result<i64> {
    spec.unit(mu)?.quantile(u)
}

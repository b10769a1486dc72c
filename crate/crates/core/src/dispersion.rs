//! Exponential dispersion model primitives for the three response families:
//! Gamma, binomial and Gamma-compound-Poisson (Tweedie with power index in
//! `(1, 2)`).
//!
//! All families are parameterised by their mean and a dispersion `phi`, with
//! `Var(Y) = phi * V(mean)`. The binomial mean lives on the count scale
//! (`mean = size * probability`) and its dispersion is fixed at 1.
//!
//! The compound-Poisson density has no closed form. Its positive part is
//! evaluated through the Wright-type series
//!
//! `f(y) = W(y, phi, p) / y * exp((y mu^(1-p)/(1-p) - mu^(2-p)/(2-p)) / phi)`
//!
//! summed outward from the index of the largest term until the terms are
//! negligible relative to the running sum.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::quad;

/// Relative size below which series terms are dropped.
const SERIES_REL_TOL: f64 = 1e-12;
const SERIES_MAX_TERMS: usize = 1_000_000;
const CDF_ABS_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub enum Family {
    Gamma,
    Binomial { size: u32 },
    /// Tweedie family with power variance `V(mu) = mu^power`, `1 < power < 2`.
    CompoundPoisson { power: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
enum FamilyRepr {
    Gamma,
    Binomial { size: u32 },
    CompoundPoisson { power: f64 },
}

impl TryFrom<FamilyRepr> for Family {
    type Error = Error;

    fn try_from(r: FamilyRepr) -> Result<Self> {
        match r {
            FamilyRepr::Gamma => Ok(Family::Gamma),
            FamilyRepr::Binomial { size } => Family::binomial(size),
            FamilyRepr::CompoundPoisson { power } => Family::compound_poisson(power),
        }
    }
}

impl From<Family> for FamilyRepr {
    fn from(f: Family) -> Self {
        match f {
            Family::Gamma => FamilyRepr::Gamma,
            Family::Binomial { size } => FamilyRepr::Binomial { size },
            Family::CompoundPoisson { power } => FamilyRepr::CompoundPoisson { power },
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gamma => write!(f, "gamma"),
            Family::Binomial { size } => write!(f, "binomial(size={size})"),
            Family::CompoundPoisson { power } => write!(f, "compound-poisson(p={power})"),
        }
    }
}

impl Family {
    pub fn binomial(size: u32) -> Result<Self> {
        if size == 0 {
            return Err(Error::Parameter("binomial size must be at least 1".into()));
        }
        Ok(Family::Binomial { size })
    }

    pub fn compound_poisson(power: f64) -> Result<Self> {
        if !(power > 1.0 && power < 2.0) {
            return Err(Error::Parameter(format!(
                "compound-Poisson power index must lie strictly inside (1, 2), got {power}"
            )));
        }
        Ok(Family::CompoundPoisson { power })
    }

    /// Re-validates a value that may have been built with a struct literal.
    pub fn validate(self) -> Result<Self> {
        match self {
            Family::Gamma => Ok(self),
            Family::Binomial { size } => Family::binomial(size),
            Family::CompoundPoisson { power } => Family::compound_poisson(power),
        }
    }

    pub fn has_fixed_dispersion(&self) -> bool {
        matches!(self, Family::Binomial { .. })
    }

    /// True when the family puts positive mass on single points.
    pub fn has_atoms(&self) -> bool {
        !matches!(self, Family::Gamma)
    }

    fn check_mean(&self, mean: f64) -> Result<()> {
        let ok = match *self {
            Family::Binomial { size } => mean > 0.0 && mean <= size as f64,
            _ => mean > 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("mean {mean} outside the mean domain of {self}")))
        }
    }

    /// Checks that `y` lies in the support of the family.
    pub fn check_support(&self, y: f64) -> Result<()> {
        let ok = match *self {
            Family::Gamma => y > 0.0 && y.is_finite(),
            Family::Binomial { size } => y >= 0.0 && y <= size as f64 && y.fract() == 0.0,
            Family::CompoundPoisson { .. } => y >= 0.0 && y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("value {y} outside the support of {self}")))
        }
    }
}

/// Mean and dispersion of one conditional distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispersionParams {
    mean: f64,
    dispersion: f64,
}

impl DispersionParams {
    /// Binomial means may equal the size (probability one); the sampler
    /// supports that degenerate case.
    pub fn new(family: Family, mean: f64, dispersion: f64) -> Result<Self> {
        family.check_mean(mean)?;
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(Error::Domain(format!("dispersion must be positive, got {dispersion}")));
        }
        if family.has_fixed_dispersion() && dispersion != 1.0 {
            return Err(Error::Domain(format!(
                "binomial dispersion is fixed at 1, got {dispersion}"
            )));
        }
        Ok(Self { mean, dispersion })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }
}

/// Unit variance function `V(mean)`.
pub fn variance_function(family: Family, mean: f64) -> Result<f64> {
    family.check_mean(mean)?;
    Ok(match family {
        Family::Gamma => mean * mean,
        Family::Binomial { size } => mean * (1.0 - mean / size as f64),
        Family::CompoundPoisson { power } => mean.powf(power),
    })
}

/// Poisson rate, Gamma shape and Gamma scale of the compound-Poisson
/// representation `Y = sum_{i <= N} G_i`, `N ~ Poisson(rate)`.
pub(crate) fn compound_poisson_parts(power: f64, mean: f64, dispersion: f64) -> (f64, f64, f64) {
    let rate = mean.powf(2.0 - power) / (dispersion * (2.0 - power));
    let shape = (2.0 - power) / (power - 1.0);
    let scale = dispersion * (power - 1.0) * mean.powf(power - 1.0);
    (rate, shape, scale)
}

/// Probability of observing exactly zero.
pub fn zero_probability(family: Family, params: DispersionParams) -> f64 {
    let DispersionParams { mean, dispersion } = params;
    match family {
        Family::Gamma => 0.0,
        Family::Binomial { size } => {
            let n = size as f64;
            (1.0 - mean / n).powi(size as i32)
        }
        Family::CompoundPoisson { power } => {
            (-mean.powf(2.0 - power) / (dispersion * (2.0 - power))).exp()
        }
    }
}

/// Log of the density (Gamma, compound-Poisson positive part) or of the
/// probability mass (binomial, compound-Poisson at zero).
pub fn log_density(family: Family, params: DispersionParams, y: f64) -> Result<f64> {
    family.check_support(y)?;
    let DispersionParams { mean, dispersion } = params;
    match family {
        Family::Gamma => {
            let shape = 1.0 / dispersion;
            let scale = mean * dispersion;
            Ok((shape - 1.0) * y.ln() - y / scale - shape * scale.ln() - ln_gamma(shape))
        }
        Family::Binomial { size } => {
            let n = size as f64;
            let prob = mean / n;
            let log_choose = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
            let succ = if y > 0.0 { y * prob.ln() } else { 0.0 };
            let fail = if y < n { (n - y) * (-prob).ln_1p() } else { 0.0 };
            Ok(log_choose + succ + fail)
        }
        Family::CompoundPoisson { power } => {
            let theta_part = compound_poisson_mean_part(power, mean, dispersion, y);
            if y == 0.0 {
                Ok(theta_part)
            } else {
                Ok(compound_poisson_log_w(y, dispersion, power)? - y.ln() + theta_part)
            }
        }
    }
}

/// The part of the log-density that does not depend on the mean; together
/// with the mean-dependent part it gives [`log_density`].
pub(crate) fn log_normalizer(family: Family, y: f64, dispersion: f64) -> Result<f64> {
    match family {
        Family::Gamma => {
            let shape = 1.0 / dispersion;
            Ok((shape - 1.0) * y.ln() - shape * dispersion.ln() - ln_gamma(shape))
        }
        Family::Binomial { size } => {
            let n = size as f64;
            Ok(ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0))
        }
        Family::CompoundPoisson { power } => {
            if y == 0.0 {
                Ok(0.0)
            } else {
                Ok(compound_poisson_log_w(y, dispersion, power)? - y.ln())
            }
        }
    }
}

/// The mean-dependent part `(y mu^(1-p)/(1-p) - mu^(2-p)/(2-p)) / phi` of
/// the compound-Poisson log-density.
pub(crate) fn compound_poisson_mean_part(power: f64, mean: f64, dispersion: f64, y: f64) -> f64 {
    (y * mean.powf(1.0 - power) / (1.0 - power) - mean.powf(2.0 - power) / (2.0 - power))
        / dispersion
}

/// `log W(y, phi, p)` for `y > 0`: the mean-free factor of the
/// compound-Poisson density.
pub(crate) fn compound_poisson_log_w(y: f64, dispersion: f64, power: f64) -> Result<f64> {
    // alpha < 0, so -j*alpha > 0 in the Gamma function below.
    let alpha = (2.0 - power) / (1.0 - power);
    let log_z = -alpha * y.ln() + alpha * (power - 1.0).ln()
        - (1.0 - alpha) * dispersion.ln()
        - (2.0 - power).ln();
    let log_term = |j: f64| j * log_z - ln_gamma(j + 1.0) - ln_gamma(-j * alpha);

    let peak = (y.powf(2.0 - power) / (dispersion * (2.0 - power))).round().max(1.0);
    let log_peak = log_term(peak);
    if !log_peak.is_finite() {
        return Err(Error::Numerical(format!(
            "compound-Poisson series: non-finite peak term at j={peak} (y={y}, phi={dispersion}, p={power})"
        )));
    }
    let cutoff = SERIES_REL_TOL.ln();
    // Terms relative to the peak term; the peak contributes exp(0) = 1.
    let mut sum = 1.0;
    let mut terms = 1usize;
    let mut j = peak + 1.0;
    loop {
        let rel = log_term(j) - log_peak;
        let t = rel.exp();
        sum += t;
        terms += 1;
        if rel - sum.ln() < cutoff {
            break;
        }
        if terms > SERIES_MAX_TERMS {
            return Err(series_failure(y, dispersion, power, peak, terms, j));
        }
        j += 1.0;
    }
    let mut j = peak - 1.0;
    while j >= 1.0 {
        let rel = log_term(j) - log_peak;
        sum += rel.exp();
        terms += 1;
        if rel - sum.ln() < cutoff {
            break;
        }
        if terms > SERIES_MAX_TERMS {
            return Err(series_failure(y, dispersion, power, peak, terms, j));
        }
        j -= 1.0;
    }
    Ok(log_peak + sum.ln())
}

fn series_failure(y: f64, dispersion: f64, power: f64, peak: f64, terms: usize, last: f64) -> Error {
    Error::Numerical(format!(
        "compound-Poisson series did not converge: y={y:e}, phi={dispersion}, p={power}, \
         peak index {peak:.0e}, {terms} terms summed, stopped at index {last:.0e}"
    ))
}

/// `P(Y <= y)`.
pub fn cdf(family: Family, params: DispersionParams, y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(Error::Domain("cdf evaluated at NaN".into()));
    }
    let DispersionParams { mean, dispersion } = params;
    match family {
        Family::Gamma => {
            if y <= 0.0 {
                return Ok(0.0);
            }
            if y.is_infinite() {
                return Ok(1.0);
            }
            let shape = 1.0 / dispersion;
            Ok(gamma_lr(shape, y / (mean * dispersion)))
        }
        Family::Binomial { size } => {
            if y < 0.0 {
                return Ok(0.0);
            }
            let top = y.floor().min(size as f64) as u32;
            let mut total = 0.0;
            for k in 0..=top {
                total += log_density(family, params, k as f64)?.exp();
            }
            Ok(total.min(1.0))
        }
        Family::CompoundPoisson { power } => {
            if y < 0.0 {
                return Ok(0.0);
            }
            let atom = zero_probability(family, params);
            if y == 0.0 {
                return Ok(atom);
            }
            if y.is_infinite() {
                return Ok(1.0);
            }
            Ok((atom + compound_poisson_positive_mass(power, mean, dispersion, y)?).min(1.0))
        }
    }
}

/// Left limit `P(Y < y)`.
pub fn cdf_left(family: Family, params: DispersionParams, y: f64) -> Result<f64> {
    match family {
        Family::Gamma => cdf(family, params, y),
        Family::Binomial { .. } => {
            if y.fract() == 0.0 {
                cdf(family, params, y - 1.0)
            } else {
                cdf(family, params, y)
            }
        }
        Family::CompoundPoisson { .. } => {
            if y <= 0.0 {
                Ok(0.0)
            } else {
                cdf(family, params, y)
            }
        }
    }
}

/// Integral of the continuous compound-Poisson density over `(0, upper]`.
///
/// Near zero the density behaves like `t^(shape - 1)`, which is unbounded
/// when `p > 1.5`; the substitution `t = upper * s^m` smooths it out.
fn compound_poisson_positive_mass(power: f64, mean: f64, dispersion: f64, upper: f64) -> Result<f64> {
    let (_, shape, _) = compound_poisson_parts(power, mean, dispersion);
    let m = (2.0 / shape).ceil().max(1.0);
    let params = DispersionParams { mean, dispersion };
    let family = Family::CompoundPoisson { power };
    let failure = std::cell::Cell::new(None);
    let integrand = |s: f64| {
        let t = upper * s.powf(m);
        if t <= 0.0 || s <= 0.0 {
            return 0.0;
        }
        match log_density(family, params, t) {
            Ok(ld) => (ld + (m * upper).ln() + (m - 1.0) * s.ln()).exp(),
            Err(e) => {
                failure.set(Some(e.to_string()));
                0.0
            }
        }
    };
    let value = quad::integrate(integrand, 0.0, 1.0, CDF_ABS_TOL)?;
    if let Some(msg) = failure.take() {
        return Err(Error::Numerical(format!("compound-Poisson cdf: {msg}")));
    }
    Ok(value)
}

/// Draw one value.
pub fn sample<R: Rng + ?Sized>(family: Family, params: DispersionParams, rng: &mut R) -> f64 {
    let DispersionParams { mean, dispersion } = params;
    match family {
        Family::Gamma => {
            let shape = 1.0 / dispersion;
            Gamma::new(shape, mean * dispersion)
                .expect("validated gamma parameters")
                .sample(rng)
        }
        Family::Binomial { size } => {
            let prob = (mean / size as f64).clamp(0.0, 1.0);
            Binomial::new(size as u64, prob)
                .expect("validated binomial parameters")
                .sample(rng) as f64
        }
        Family::CompoundPoisson { power } => {
            let (rate, shape, scale) = compound_poisson_parts(power, mean, dispersion);
            let count = Poisson::new(rate).expect("positive rate").sample(rng);
            if count < 0.5 {
                0.0
            } else {
                Gamma::new(count * shape, scale)
                    .expect("positive gamma parameters")
                    .sample(rng)
            }
        }
    }
}

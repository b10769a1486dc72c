//! Univariate GLMM with a categorical time effect and one Gaussian random
//! intercept per group, fitted by maximising the Laplace approximation of
//! the marginal likelihood.
//!
//! For a group `g` with observations `y_gt` the marginal likelihood is
//!
//! `L_g = ∫ prod_t f(y_gt; h^-1(theta_t + u)) N(u; 0, sigma^2) du`
//!
//! and the Laplace approximation around the mode `u_g` of the integrand is
//!
//! `log L_g ≈ sum_t log f(y_gt; .) - u_g^2 / (2 sigma^2) - log(1 + sigma^2 J_g) / 2`
//!
//! with `J_g` the negative second derivative of the conditional
//! log-likelihood at `u_g`. The modes are the random-effect predictions.

use serde::{Deserialize, Serialize};

use crate::data_io::{label_cmp, ObservationTable};
use crate::dispersion::{log_normalizer, variance_function, Family};
use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};

/// Random-effect variances below this at the optimum are treated as zero.
const RE_VARIANCE_FLOOR: f64 = 1e-8;
const LOG_RE_VARIANCE_MIN: f64 = -40.0;
const LOG_DISPERSION_RANGE: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Logit,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Logit => sigmoid(eta),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResponseSpec {
    pub name: String,
    pub family: Family,
    pub link: Link,
}

impl ResponseSpec {
    pub fn new(name: impl Into<String>, family: Family, link: Link) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            family: family.validate()?,
            link,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Log link for Gamma and compound-Poisson, logit for binomial.
    pub fn with_default_link(name: impl Into<String>, family: Family) -> Result<Self> {
        let link = match family {
            Family::Binomial { .. } => Link::Logit,
            _ => Link::Log,
        };
        Self::new(name, family, link)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        match (self.family, self.link) {
            (Family::Binomial { .. }, Link::Logit)
            | (Family::Gamma, Link::Log)
            | (Family::CompoundPoisson { .. }, Link::Log) => Ok(()),
            (family, link) => Err(Error::Input(format!(
                "response '{}': {family} with {link:?} link is not supported",
                self.name
            ))),
        }
    }

    /// Mean on the response scale (binomial: count scale).
    pub fn mean_from_eta(&self, eta: f64) -> f64 {
        match self.family {
            Family::Binomial { size } => size as f64 * sigmoid(eta),
            _ => self.link.inverse(eta),
        }
    }

    fn eta_from_mean(&self, mean: f64) -> f64 {
        match self.family {
            Family::Binomial { size } => {
                let p = mean / size as f64;
                (p / (1.0 - p)).ln()
            }
            _ => mean.ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LevelEffect {
    pub level: String,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GroupPrediction {
    pub group: String,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FittedGlmm {
    pub spec: ResponseSpec,
    /// One effect per time level, in label order.
    pub fixed_effects: Vec<LevelEffect>,
    /// Estimated dispersion; 1 for binomial responses.
    pub dispersion: f64,
    pub re_variance: f64,
    /// Empirical-Bayes modes, in label order of the groups.
    pub re_predictions: Vec<GroupPrediction>,
    /// Laplace-approximate marginal log-likelihood at the estimates.
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    /// Moment estimate `sum (y - mu)^2 / V(mu) / (N - levels)` at the
    /// conditional fitted means. Diagnostic only.
    pub pearson_dispersion: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedGlmm {
    pub fn fixed_effect(&self, level: &str) -> Option<f64> {
        self.fixed_effects
            .iter()
            .find(|e| e.level == level)
            .map(|e| e.estimate)
    }

    pub fn prediction(&self, group: &str) -> Option<f64> {
        self.re_predictions
            .iter()
            .find(|p| p.group == group)
            .map(|p| p.prediction)
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Hold the random-effect variance at this value instead of estimating it.
    pub fixed_re_variance: Option<f64>,
    pub inner_tol: f64,
    pub inner_max_iterations: usize,
    pub outer: BfgsOptions,
    pub initial_re_variance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed_re_variance: None,
            inner_tol: 1e-10,
            inner_max_iterations: 50,
            outer: BfgsOptions::default(),
            initial_re_variance: 0.1,
        }
    }
}

/// Observations of one response arranged by group, in canonical order.
#[derive(Clone, Debug)]
pub(crate) struct GroupedData {
    pub spec: ResponseSpec,
    pub levels: Vec<String>,
    pub groups: Vec<String>,
    /// Per group: `(level index, y)`, sorted by level.
    pub obs: Vec<Vec<(usize, f64)>>,
}

impl GroupedData {
    pub fn from_table(table: &ObservationTable, spec: &ResponseSpec) -> Result<Self> {
        spec.validate()?;
        if table.is_empty() {
            return Err(Error::Input("empty observation table".into()));
        }
        let col = table.response_index(&spec.name)?;
        let present: Vec<_> = table
            .rows()
            .iter()
            .filter_map(|r| r.values[col].map(|y| (r, y)))
            .collect();
        if present.is_empty() {
            return Err(Error::Input(format!("response '{}' has no observations", spec.name)));
        }
        let mut levels: Vec<String> = present.iter().map(|(r, _)| r.time.clone()).collect();
        levels.sort_by(|a, b| label_cmp(a, b));
        levels.dedup();
        let mut groups: Vec<String> = present.iter().map(|(r, _)| r.group.clone()).collect();
        groups.sort_by(|a, b| label_cmp(a, b));
        groups.dedup();
        if groups.len() < 2 {
            return Err(Error::Input(format!(
                "response '{}' needs at least 2 groups, found {}",
                spec.name,
                groups.len()
            )));
        }
        let mut obs = vec![Vec::new(); groups.len()];
        for (row, y) in present {
            spec.family.check_support(y).map_err(|_| {
                Error::Input(format!(
                    "response '{}': value {y} at ({}, {}) outside the support of {}",
                    spec.name, row.group, row.time, spec.family
                ))
            })?;
            let g = groups.binary_search_by(|x| label_cmp(x, &row.group)).expect("group listed");
            let t = levels.binary_search_by(|x| label_cmp(x, &row.time)).expect("level listed");
            obs[g].push((t, y));
        }
        for o in &mut obs {
            o.sort_by_key(|&(t, _)| t);
        }
        if spec.family == Family::Gamma {
            let first = obs[0][0].1;
            if obs.iter().flatten().all(|&(_, y)| y == first) {
                return Err(Error::Input(format!(
                    "response '{}' is constant; the Gamma dispersion is not identifiable",
                    spec.name
                )));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            levels,
            groups,
            obs,
        })
    }

    fn n_obs(&self) -> usize {
        self.obs.iter().map(Vec::len).sum()
    }

    fn level_means(&self) -> Vec<f64> {
        let mut values = vec![Vec::new(); self.levels.len()];
        for &(t, y) in self.obs.iter().flatten() {
            values[t].push(y);
        }
        values
            .into_iter()
            .map(|v| {
                let n = v.len() as f64;
                order_free_sum(v) / n
            })
            .collect()
    }
}

/// Conditional log-likelihood of one observation as a function of the
/// linear predictor, without the mean-free normaliser, and its first two
/// derivatives in `eta`.
fn eta_terms(family: Family, y: f64, eta: f64, dispersion: f64) -> (f64, f64, f64) {
    match family {
        Family::Gamma => {
            let ye = y * (-eta).exp();
            (-(ye + eta) / dispersion, (ye - 1.0) / dispersion, -ye / dispersion)
        }
        Family::CompoundPoisson { power } => {
            let a = y * ((1.0 - power) * eta).exp();
            let b = ((2.0 - power) * eta).exp();
            (
                (a / (1.0 - power) - b / (2.0 - power)) / dispersion,
                (a - b) / dispersion,
                ((1.0 - power) * a - (2.0 - power) * b) / dispersion,
            )
        }
        Family::Binomial { size } => {
            let n = size as f64;
            let p = sigmoid(eta);
            let value = y * eta - n * softplus(eta);
            (value, y - n * p, -n * p * sigmoid(-eta))
        }
    }
}

/// Mode of one group's integrand and its Laplace contribution (without
/// the normalisers, which do not depend on the random effect).
pub(crate) struct GroupMode {
    pub mode: f64,
    pub log_lik: f64,
}

pub(crate) fn group_laplace(
    family: Family,
    obs: &[(usize, f64)],
    eta: &[f64],
    dispersion: f64,
    re_variance: f64,
    opts: &FitOptions,
    group: &str,
) -> Result<GroupMode> {
    let eval = |u: f64| {
        let mut v = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for &(t, y) in obs {
            let (a, b, c) = eta_terms(family, y, eta[t] + u, dispersion);
            v += a;
            d1 += b;
            d2 += c;
        }
        (v, d1, d2)
    };
    if re_variance == 0.0 {
        return Ok(GroupMode {
            mode: 0.0,
            log_lik: eval(0.0).0,
        });
    }
    let objective = |u: f64, v: f64| v - u * u / (2.0 * re_variance);
    let mut u = 0.0;
    let (mut v, mut d1, mut d2) = eval(u);
    for _ in 0..opts.inner_max_iterations {
        let grad = d1 - u / re_variance;
        let hess = d2 - 1.0 / re_variance;
        let mut step = -grad / hess;
        if !step.is_finite() {
            return Err(inner_failure(group, u));
        }
        let current = objective(u, v);
        let mut next = eval(u + step);
        let mut halvings = 0;
        while !(objective(u + step, next.0) >= current) {
            step *= 0.5;
            halvings += 1;
            if halvings > 60 {
                break;
            }
            next = eval(u + step);
        }
        if halvings > 60 {
            // Already at the maximum to machine precision.
            break;
        }
        u += step;
        (v, d1, d2) = next;
        if !(u.is_finite() && v.is_finite()) {
            return Err(inner_failure(group, u));
        }
        if step.abs() < opts.inner_tol {
            break;
        }
    }
    let info = -d2;
    let log_lik = objective(u, v) - 0.5 * (re_variance * info).ln_1p();
    if !log_lik.is_finite() {
        return Err(inner_failure(group, u));
    }
    Ok(GroupMode { mode: u, log_lik })
}

fn inner_failure(group: &str, u: f64) -> Error {
    Error::Numerical(format!(
        "inner Newton iteration for the random effect of group '{group}' diverged (at u={u})"
    ))
}

/// Parameter vector layout: fixed effects, then `ln(dispersion)` unless it
/// is fixed by the family, then `ln(re_variance)` unless pinned.
struct Layout {
    levels: usize,
    dispersion: bool,
    re_variance: bool,
}

impl Layout {
    fn unpack(&self, x: &[f64], fixed_re_variance: Option<f64>) -> (Vec<f64>, f64, f64) {
        let eta = x[..self.levels].to_vec();
        let mut i = self.levels;
        let dispersion = if self.dispersion {
            i += 1;
            x[i - 1].clamp(-LOG_DISPERSION_RANGE, LOG_DISPERSION_RANGE).exp()
        } else {
            1.0
        };
        let re_variance = if self.re_variance {
            x[i].max(LOG_RE_VARIANCE_MIN).exp()
        } else {
            fixed_re_variance.unwrap_or(0.0)
        };
        (eta, dispersion, re_variance)
    }
}

struct Evaluation {
    log_lik: f64,
    modes: Vec<f64>,
}

fn evaluate(
    data: &GroupedData,
    eta: &[f64],
    dispersion: f64,
    re_variance: f64,
    opts: &FitOptions,
) -> Result<Evaluation> {
    let family = data.spec.family;
    let mut terms = Vec::with_capacity(data.groups.len());
    let mut modes = Vec::with_capacity(data.groups.len());
    for (obs, group) in data.obs.iter().zip(&data.groups) {
        let gm = group_laplace(family, obs, eta, dispersion, re_variance, opts, group)?;
        let mut term = gm.log_lik;
        for &(_, y) in obs {
            term += log_normalizer(family, y, dispersion)?;
        }
        terms.push(term);
        modes.push(gm.mode);
    }
    Ok(Evaluation {
        log_lik: order_free_sum(terms),
        modes,
    })
}

/// Fit with default options.
pub fn fit(table: &ObservationTable, spec: &ResponseSpec) -> Result<FittedGlmm> {
    fit_with(table, spec, &FitOptions::default())
}

pub fn fit_with(table: &ObservationTable, spec: &ResponseSpec, opts: &FitOptions) -> Result<FittedGlmm> {
    let data = GroupedData::from_table(table, spec)?;
    fit_grouped(&data, opts)
}

pub(crate) fn fit_grouped(data: &GroupedData, opts: &FitOptions) -> Result<FittedGlmm> {
    if let Some(v) = opts.fixed_re_variance {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("random-effect variance must be >= 0, got {v}")));
        }
    }
    let first = fit_once(data, opts)?;
    if opts.fixed_re_variance.is_none() && first.re_variance < RE_VARIANCE_FLOOR {
        // Boundary optimum: the Laplace likelihood tends to the plain GLM
        // likelihood as the variance vanishes, so refit on the boundary.
        let pinned = FitOptions {
            fixed_re_variance: Some(0.0),
            ..opts.clone()
        };
        let mut boundary = fit_once(data, &pinned)?;
        if boundary.log_likelihood >= first.log_likelihood - 1e-9 {
            boundary.initial_log_likelihood = first.initial_log_likelihood;
            boundary.iterations += first.iterations;
            boundary.converged &= first.converged;
            return Ok(boundary);
        }
    }
    Ok(first)
}

fn fit_once(data: &GroupedData, opts: &FitOptions) -> Result<FittedGlmm> {
    let spec = &data.spec;
    let family = spec.family;
    let layout = Layout {
        levels: data.levels.len(),
        dispersion: !family.has_fixed_dispersion(),
        re_variance: opts.fixed_re_variance.is_none(),
    };

    let mut x0: Vec<f64> = data
        .level_means()
        .into_iter()
        .map(|m| {
            let m = match family {
                Family::Binomial { size } => {
                    let n = size as f64;
                    m.clamp(0.05, n - 0.05)
                }
                _ => m.max(1e-3),
            };
            spec.eta_from_mean(m)
        })
        .collect();
    if layout.dispersion {
        let mut fitted = Vec::with_capacity(data.n_obs());
        for &(t, y) in data.obs.iter().flatten() {
            fitted.push((y, spec.mean_from_eta(x0[t])));
        }
        let phi = pearson(family, &fitted, data.levels.len()).clamp(1e-3, 1e3);
        x0.push(phi.ln());
    }
    if layout.re_variance {
        x0.push(opts.initial_re_variance.ln());
    }

    let objective = |x: &[f64]| -> Result<f64> {
        let (eta, phi, s2) = layout.unpack(x, opts.fixed_re_variance);
        Ok(-evaluate(data, &eta, phi, s2, opts)?.log_lik)
    };
    let result = optim::minimize(objective, &x0, &opts.outer)?;

    let (eta, dispersion, mut re_variance) = layout.unpack(&result.x, opts.fixed_re_variance);
    let mut eval = evaluate(data, &eta, dispersion, re_variance, opts)?;
    if layout.re_variance && re_variance < RE_VARIANCE_FLOOR {
        re_variance = re_variance.max(0.0);
        eval.modes.iter_mut().for_each(|m| *m = if m.abs() < 1e-300 { 0.0 } else { *m });
    }

    let mut fitted = Vec::with_capacity(data.n_obs());
    for (obs, &u) in data.obs.iter().zip(&eval.modes) {
        for &(t, y) in obs {
            fitted.push((y, spec.mean_from_eta(eta[t] + u)));
        }
    }
    Ok(FittedGlmm {
        spec: spec.clone(),
        fixed_effects: data
            .levels
            .iter()
            .zip(&eta)
            .map(|(l, &e)| LevelEffect {
                level: l.clone(),
                estimate: e,
            })
            .collect(),
        dispersion,
        re_variance,
        re_predictions: data
            .groups
            .iter()
            .zip(&eval.modes)
            .map(|(g, &u)| GroupPrediction {
                group: g.clone(),
                prediction: u,
            })
            .collect(),
        log_likelihood: eval.log_lik,
        initial_log_likelihood: -result.history[0],
        pearson_dispersion: pearson(family, &fitted, data.levels.len()),
        iterations: result.iterations,
        converged: result.converged,
    })
}

fn pearson(family: Family, fitted: &[(f64, f64)], levels: usize) -> f64 {
    let dof = fitted.len().saturating_sub(levels).max(1) as f64;
    let terms = fitted
        .iter()
        .map(|&(y, mu)| {
            let v = variance_function(family, mu).unwrap_or(f64::NAN);
            (y - mu) * (y - mu) / v
        })
        .filter(|r| r.is_finite())
        .collect();
    order_free_sum(terms) / dof
}

/// Sum that does not depend on the order of its terms, so relabelling
/// groups cannot move the optimiser.
fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Laplace log-likelihood of `table` under the given parameter values,
/// together with the random-effect modes.
pub fn laplace_log_likelihood(
    table: &ObservationTable,
    spec: &ResponseSpec,
    fixed_effects: &[f64],
    dispersion: f64,
    re_variance: f64,
) -> Result<(f64, Vec<(String, f64)>)> {
    let data = GroupedData::from_table(table, spec)?;
    if fixed_effects.len() != data.levels.len() {
        return Err(Error::Input(format!(
            "{} fixed effects given for {} time levels",
            fixed_effects.len(),
            data.levels.len()
        )));
    }
    let eval = evaluate(&data, fixed_effects, dispersion, re_variance, &FitOptions::default())?;
    Ok((
        eval.log_lik,
        data.groups.into_iter().zip(eval.modes).collect(),
    ))
}

/// Random-effect predictions in group label order.
pub fn predict_random_effects(fit: &FittedGlmm) -> Result<Vec<(String, f64)>> {
    if !fit.converged {
        return Err(Error::State(format!(
            "fit of '{}' did not converge; predictions are unavailable",
            fit.spec.name
        )));
    }
    Ok(fit
        .re_predictions
        .iter()
        .map(|p| (p.group.clone(), p.prediction))
        .collect())
}

/// Conditional means `h^-1(theta_t + u_g)` for every row of `table`.
pub fn fitted_means(fit: &FittedGlmm, table: &ObservationTable) -> Result<Vec<f64>> {
    table
        .rows()
        .iter()
        .map(|row| {
            let theta = fit.fixed_effect(&row.time).ok_or_else(|| {
                Error::Input(format!(
                    "time level '{}' is unknown to the fit of '{}'",
                    row.time, fit.spec.name
                ))
            })?;
            let u = fit.prediction(&row.group).ok_or_else(|| {
                Error::Input(format!(
                    "group '{}' is unknown to the fit of '{}'",
                    row.group, fit.spec.name
                ))
            })?;
            Ok(fit.spec.mean_from_eta(theta + u))
        })
        .collect()
}

//! Pearson residuals and probability-integral-transform checks for a
//! fitted marginal model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::ObservationTable;
use crate::dispersion::{cdf, cdf_left, variance_function, DispersionParams, Family};
use crate::error::{Error, Result};
use crate::glmm::{fitted_means, FittedGlmm};

const KOLMOGOROV_TERMS: usize = 100;
const KOLMOGOROV_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ObservationDiagnostic {
    pub group: String,
    pub time: String,
    pub observed: f64,
    pub fitted_mean: f64,
    pub pearson_residual: f64,
    pub pit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResidualReport {
    pub response: String,
    pub per_observation: Vec<ObservationDiagnostic>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl ResidualReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("glass,week,observed,fitted_mean,pearson_residual,pit\n");
        for o in &self.per_observation {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&o.group),
                csv_field(&o.time),
                o.observed,
                o.fitted_mean,
                o.pearson_residual,
                o.pit
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn require_converged(fit: &FittedGlmm) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::State(format!(
            "fit of '{}' did not converge; diagnostics are unavailable",
            fit.spec.name
        )))
    }
}

/// `(observed, fitted mean, row index)` for every non-missing value.
fn observed_with_means(fit: &FittedGlmm, table: &ObservationTable) -> Result<Vec<(f64, f64, usize)>> {
    let col = table.response_index(&fit.spec.name)?;
    let means = fitted_means(fit, table)?;
    Ok(table
        .rows()
        .iter()
        .zip(means)
        .enumerate()
        .filter_map(|(i, (row, mu))| row.values[col].map(|y| (y, mu, i)))
        .collect())
}

fn dispersion_of(fit: &FittedGlmm) -> f64 {
    if fit.spec.family.has_fixed_dispersion() {
        1.0
    } else {
        fit.dispersion
    }
}

/// `(y - mu) / sqrt(phi V(mu))` per observed value, in table row order.
pub fn pearson_residuals(fit: &FittedGlmm, table: &ObservationTable) -> Result<Vec<f64>> {
    require_converged(fit)?;
    let phi = dispersion_of(fit);
    observed_with_means(fit, table)?
        .into_iter()
        .map(|(y, mu, _)| pearson(fit.spec.family, phi, y, mu))
        .collect()
}

fn pearson(family: Family, phi: f64, y: f64, mu: f64) -> Result<f64> {
    Ok((y - mu) / (phi * variance_function(family, mu)?).sqrt())
}

/// PIT values with a KS test against Uniform(0, 1). Binomial values and
/// compound-Poisson zeros get a randomized PIT, one uniform each, drawn in
/// row order; continuous values consume nothing from `rng`.
pub fn pit_uniformity<R: Rng + ?Sized>(
    fit: &FittedGlmm,
    table: &ObservationTable,
    rng: &mut R,
) -> Result<ResidualReport> {
    require_converged(fit)?;
    let family = fit.spec.family;
    let phi = dispersion_of(fit);
    let mut per_observation = Vec::new();
    for (y, mu, i) in observed_with_means(fit, table)? {
        let params = DispersionParams::new(family, mu, phi)?;
        let atom = match family {
            Family::Binomial { .. } => true,
            Family::CompoundPoisson { .. } => y == 0.0,
            Family::Gamma => false,
        };
        let upper = cdf(family, params, y)?;
        let pit = if atom {
            let lower = cdf_left(family, params, y)?;
            let v: f64 = rng.random();
            lower + v * (upper - lower)
        } else {
            upper
        };
        let row = &table.rows()[i];
        per_observation.push(ObservationDiagnostic {
            group: row.group.clone(),
            time: row.time.clone(),
            observed: y,
            fitted_mean: mu,
            pearson_residual: pearson(family, phi, y, mu)?,
            pit: pit.clamp(0.0, 1.0),
        });
    }
    if per_observation.is_empty() {
        return Err(Error::Input(format!("no observations of '{}'", fit.spec.name)));
    }
    let pits: Vec<f64> = per_observation.iter().map(|o| o.pit).collect();
    let (ks_statistic, ks_p_value) = ks_uniform(&pits);
    Ok(ResidualReport {
        response: fit.spec.name.clone(),
        per_observation,
        ks_statistic,
        ks_p_value,
    })
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0, 1) and its
/// asymptotic p-value.
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    let mut u = values.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i + 1) as f64 / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0f64, f64::max)
        .clamp(0.0, 1.0);
    let sqrt_n = n.sqrt();
    // Stephens' small-sample correction of the argument.
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        // Theta-function form, fast for small arguments:
        // P(K <= l) = sqrt(2 pi) / l * sum exp(-(2k - 1)^2 pi^2 / (8 l^2)).
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let term = (c * ((2 * k - 1) as f64).powi(2)).exp();
            sum += term;
            if term < KOLMOGOROV_TOL * sum {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < KOLMOGOROV_TOL {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::{GroupPrediction, LevelEffect, Link, ResponseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fit_for(family: Family, mean: f64, dispersion: f64) -> FittedGlmm {
        let spec = ResponseSpec::with_default_link("y", family).unwrap();
        let eta = match spec.link {
            Link::Log => mean.ln(),
            Link::Logit => {
                let Family::Binomial { size } = family else { unreachable!() };
                let p = mean / size as f64;
                (p / (1.0 - p)).ln()
            }
        };
        FittedGlmm {
            spec,
            fixed_effects: vec![LevelEffect {
                level: "1".into(),
                estimate: eta,
            }],
            dispersion,
            re_variance: 0.0,
            re_predictions: vec![GroupPrediction {
                group: "a".into(),
                prediction: 0.0,
            }],
            log_likelihood: 0.0,
            initial_log_likelihood: 0.0,
            pearson_dispersion: dispersion,
            iterations: 1,
            converged: true,
        }
    }

    fn one_value(y: f64) -> ObservationTable {
        let mut t = ObservationTable::new(vec!["y".into()]).unwrap();
        t.push_row("a", "1", vec![Some(y)]).unwrap();
        t
    }

    #[test]
    fn residual_examples() {
        let fit = fit_for(Family::Gamma, 1.0, 1.0);
        let r = pearson_residuals(&fit, &one_value(2.0)).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        let r = pearson_residuals(&fit, &one_value(1.0)).unwrap();
        assert!(r[0].abs() < 1e-12);
    }

    #[test]
    fn single_observation_statistic() {
        let fit = fit_for(Family::Gamma, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = pit_uniformity(&fit, &one_value(0.7), &mut rng).unwrap();
        let u = rep.per_observation[0].pit;
        assert!((rep.ks_statistic - u.max(1.0 - u)).abs() < 1e-15);
    }

    #[test]
    fn continuous_pit_consumes_no_randomness() {
        let fit = fit_for(Family::Gamma, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        pit_uniformity(&fit, &one_value(0.7), &mut rng).unwrap();
        let next: u64 = rng.random();
        let mut fresh = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(next, fresh.random::<u64>());

        let fit = fit_for(Family::CompoundPoisson { power: 1.5 }, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        pit_uniformity(&fit, &one_value(0.0), &mut rng).unwrap();
        let mut fresh = ChaCha8Rng::seed_from_u64(5);
        let _: f64 = fresh.random();
        assert_eq!(rng.random::<u64>(), fresh.random::<u64>());
    }

    #[test]
    fn randomized_pit_lies_in_atom() {
        let fam = Family::Binomial { size: 9 };
        let fit = fit_for(fam, 4.5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = pit_uniformity(&fit, &one_value(3.0), &mut rng).unwrap();
        let params = DispersionParams::new(fam, 4.5, 1.0).unwrap();
        let lo = cdf(fam, params, 2.0).unwrap();
        let hi = cdf(fam, params, 3.0).unwrap();
        let u = rep.per_observation[0].pit;
        assert!(u >= lo && u <= hi);
    }

    #[test]
    fn unconverged_fit_is_rejected() {
        let mut fit = fit_for(Family::Gamma, 1.0, 1.0);
        fit.converged = false;
        assert!(matches!(
            pearson_residuals(&fit, &one_value(1.0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Both series are exact; compare them where both converge quickly.
        for &l in &[0.6, 0.8, 1.0, 1.2] {
            let c = -std::f64::consts::PI.powi(2) / (8.0 * l * l);
            let theta: f64 = (1..200).map(|k| (c * ((2 * k - 1) as f64).powi(2)).exp()).sum();
            let a = 1.0 - (2.0 * std::f64::consts::PI).sqrt() / l * theta;
            let b: f64 = 2.0
                * (1..200)
                    .map(|k| {
                        let t = (-2.0 * (k * k) as f64 * l * l).exp();
                        if k % 2 == 1 { t } else { -t }
                    })
                    .sum::<f64>();
            assert!((a - b).abs() < 1e-9, "{l}: {a} vs {b}");
            assert!((kolmogorov_survival(l) - b).abs() < 1e-9);
        }
        // Tabulated critical values.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }
}

//! The multi-response pipeline: one marginal GLMM per response, coupled
//! downstream through the matrix of predicted random components.
//!
//! The covariance of the random components is not fitted jointly. Its
//! empirical counterpart, the sample covariance of the per-group
//! predictions, is what the graph search works on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{label_cmp, ObservationTable};
use crate::dispersion::Family;
use crate::error::{Error, Result};
use crate::glmm::{self, FitOptions, FittedGlmm, ResponseSpec};
use crate::tweedie_index::{self, PowerGridResult};

/// Groups × responses matrix of predicted random components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct RandomEffectsMatrix {
    group_ids: Vec<String>,
    response_names: Vec<String>,
    values: Vec<Vec<f64>>,
    empirical_covariance: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct MatrixRepr {
    group_ids: Vec<String>,
    response_names: Vec<String>,
    values: Vec<Vec<f64>>,
    empirical_covariance: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRepr> for RandomEffectsMatrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        let m = RandomEffectsMatrix::new(r.group_ids, r.response_names, r.values)?;
        let stored_ok = r.empirical_covariance.len() == m.empirical_covariance.len()
            && r
                .empirical_covariance
                .iter()
                .flatten()
                .zip(m.empirical_covariance.iter().flatten())
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        if !stored_ok {
            return Err(Error::Input(
                "stored empirical covariance does not match the stored values".into(),
            ));
        }
        Ok(m)
    }
}

impl From<RandomEffectsMatrix> for MatrixRepr {
    fn from(m: RandomEffectsMatrix) -> Self {
        MatrixRepr {
            group_ids: m.group_ids,
            response_names: m.response_names,
            values: m.values,
            empirical_covariance: m.empirical_covariance,
        }
    }
}

impl RandomEffectsMatrix {
    pub fn new(group_ids: Vec<String>, response_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != group_ids.len() {
            return Err(Error::Input(format!(
                "{} rows of values for {} groups",
                values.len(),
                group_ids.len()
            )));
        }
        for (g, row) in group_ids.iter().zip(&values) {
            if row.len() != response_names.len() {
                return Err(Error::Input(format!(
                    "row for group '{g}' has {} entries, expected {}",
                    row.len(),
                    response_names.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("non-finite prediction for group '{g}'")));
            }
        }
        let empirical_covariance = sample_covariance(&values, response_names.len());
        Ok(Self {
            group_ids,
            response_names,
            values,
            empirical_covariance,
        })
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Sample covariance with denominator `groups - 1`.
    pub fn empirical_covariance(&self) -> &[Vec<f64>] {
        &self.empirical_covariance
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.response_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some(self.values.iter().map(|r| r[c]).collect())
    }

    /// Columns rescaled to unit sample variance. Constant columns are left
    /// as they are.
    pub fn standardized(&self) -> Result<Self> {
        let sd: Vec<f64> = (0..self.response_names.len())
            .map(|c| self.empirical_covariance[c][c].sqrt())
            .collect();
        let values = self
            .values
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&sd)
                    .map(|(v, &s)| if s > 0.0 { v / s } else { *v })
                    .collect()
            })
            .collect();
        Self::new(self.group_ids.clone(), self.response_names.clone(), values)
    }

    /// The same matrix restricted to the named columns.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Input(format!("unknown response '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self
            .values
            .iter()
            .map(|row| idx.iter().map(|&i| row[i]).collect())
            .collect();
        Self::new(self.group_ids.clone(), names.to_vec(), values)
    }
}

fn sample_covariance(values: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
    let n = values.len();
    let means: Vec<f64> = (0..p)
        .map(|c| values.iter().map(|r| r[c]).sum::<f64>() / n.max(1) as f64)
        .collect();
    let denom = n.saturating_sub(1).max(1) as f64;
    let mut cov = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let s: f64 = values
                .iter()
                .map(|r| (r[a] - means[a]) * (r[b] - means[b]))
                .sum();
            cov[a][b] = s / denom;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MglmmFit {
    /// In declared response order.
    pub marginals: Vec<FittedGlmm>,
    pub re_matrix: RandomEffectsMatrix,
    pub power_index_results: Vec<PowerGridResult>,
}

impl MglmmFit {
    pub fn marginal(&self, name: &str) -> Option<&FittedGlmm> {
        self.marginals.iter().find(|m| m.spec.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct MglmmOptions {
    /// Grid searched for each compound-Poisson response. `None` keeps the
    /// power index declared in its spec.
    pub power_grid: Option<Vec<f64>>,
    pub workers: usize,
    pub fit: FitOptions,
    /// Rescale prediction columns to unit variance.
    pub standardize: bool,
}

impl Default for MglmmOptions {
    fn default() -> Self {
        Self {
            power_grid: Some(tweedie_index::default_grid()),
            workers: 1,
            fit: FitOptions::default(),
            standardize: false,
        }
    }
}

struct MarginalOutcome {
    fit: FittedGlmm,
    grid: Option<PowerGridResult>,
}

fn fit_marginal(table: &ObservationTable, spec: &ResponseSpec, opts: &MglmmOptions) -> Result<MarginalOutcome> {
    match (spec.family, &opts.power_grid) {
        (Family::CompoundPoisson { .. }, Some(grid)) => {
            let grid_result = tweedie_index::select_power_index(table, spec, grid, &opts.fit)?;
            let chosen = ResponseSpec {
                family: Family::compound_poisson(grid_result.chosen)?,
                ..spec.clone()
            };
            Ok(MarginalOutcome {
                fit: glmm::fit_with(table, &chosen, &opts.fit)?,
                grid: Some(grid_result),
            })
        }
        _ => Ok(MarginalOutcome {
            fit: glmm::fit_with(table, spec, &opts.fit)?,
            grid: None,
        }),
    }
}

/// Fit every response's marginal GLMM (after choosing the power index of
/// each compound-Poisson response) and assemble the prediction matrix.
pub fn fit_all(table: &ObservationTable, specs: &[ResponseSpec], opts: &MglmmOptions) -> Result<MglmmFit> {
    if specs.is_empty() {
        return Err(Error::Input("no responses to fit".into()));
    }
    if opts.workers == 0 {
        return Err(Error::Input("worker count must be at least 1".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate()?;
        table.response_index(&s.name)?;
        if specs[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::Input(format!("response '{}' listed twice", s.name)));
        }
    }
    if let Some(grid) = &opts.power_grid {
        if specs.iter().any(|s| matches!(s.family, Family::CompoundPoisson { .. })) {
            tweedie_index::validate_grid(grid)?;
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Input(format!("cannot start {} workers: {e}", opts.workers)))?;
    let outcomes: Vec<Result<MarginalOutcome>> =
        pool.install(|| specs.par_iter().map(|s| fit_marginal(table, s, opts)).collect());

    let mut marginals = Vec::with_capacity(specs.len());
    let mut grids = Vec::new();
    let mut failure = None;
    for (spec, outcome) in specs.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                marginals.push(o.fit);
                grids.extend(o.grid);
            }
            Err(e) if failure.is_none() => failure = Some((spec.name.clone(), e)),
            Err(_) => {}
        }
    }
    if let Some((response, source)) = failure {
        return Err(Error::MarginalFit {
            response,
            source: Box::new(source),
            partial: marginals,
        });
    }

    let re_matrix = assemble(&marginals)?;
    let re_matrix = if opts.standardize {
        re_matrix.standardized()?
    } else {
        re_matrix
    };
    Ok(MglmmFit {
        marginals,
        re_matrix,
        power_index_results: grids,
    })
}

fn assemble(marginals: &[FittedGlmm]) -> Result<RandomEffectsMatrix> {
    let mut groups: Vec<String> = marginals
        .iter()
        .flat_map(|m| m.re_predictions.iter().map(|p| p.group.clone()))
        .collect();
    groups.sort_by(|a, b| label_cmp(a, b));
    groups.dedup();
    let mut values = vec![Vec::with_capacity(marginals.len()); groups.len()];
    for m in marginals {
        let preds = glmm::predict_random_effects(m)?;
        for (g, row) in groups.iter().zip(values.iter_mut()) {
            let v = preds
                .iter()
                .find(|(id, _)| id == g)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    Error::Input(format!(
                        "response '{}' has no observations for group '{g}'",
                        m.spec.name
                    ))
                })?;
            row.push(v);
        }
    }
    RandomEffectsMatrix::new(
        groups,
        marginals.iter().map(|m| m.spec.name.clone()).collect(),
        values,
    )
}

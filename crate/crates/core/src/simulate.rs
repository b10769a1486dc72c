//! Synthetic data from the full multivariate model: per group a Gaussian
//! vector of random components `B_g ~ N(0, Sigma)`, and per group, time
//! level and response an independent draw from the response family at mean
//! `h^-1(theta_t + B_g[r])`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::ObservationTable;
use crate::dispersion::{self, DispersionParams};
use crate::error::{Error, Result};
use crate::glmm::ResponseSpec;
use crate::graph::LabeledGraph;
use crate::rng::Streams;

const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimResponse {
    pub spec: ResponseSpec,
    /// One per time level, in the order of `MglmmSpec::time_levels`.
    pub fixed_effects: Vec<f64>,
    /// Ignored for binomial responses, whose dispersion is 1.
    pub dispersion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MglmmSpec {
    pub responses: Vec<SimResponse>,
    /// Covariance of the random components, responses × responses.
    pub sigma: Vec<Vec<f64>>,
    pub groups: usize,
    pub time_levels: Vec<String>,
}

impl MglmmSpec {
    pub fn validate(&self) -> Result<()> {
        let r = self.responses.len();
        if r == 0 {
            return Err(Error::Parameter("spec has no responses".into()));
        }
        if self.groups == 0 {
            return Err(Error::Parameter("spec needs at least one group".into()));
        }
        if self.time_levels.is_empty() {
            return Err(Error::Parameter("spec needs at least one time level".into()));
        }
        for (i, t) in self.time_levels.iter().enumerate() {
            if self.time_levels[..i].contains(t) {
                return Err(Error::Parameter(format!("time level '{t}' repeated")));
            }
        }
        for (i, resp) in self.responses.iter().enumerate() {
            resp.spec.validate()?;
            if self.responses[..i].iter().any(|o| o.spec.name == resp.spec.name) {
                return Err(Error::Parameter(format!("response '{}' repeated", resp.spec.name)));
            }
            if resp.fixed_effects.len() != self.time_levels.len() {
                return Err(Error::Parameter(format!(
                    "response '{}' has {} fixed effects for {} time levels",
                    resp.spec.name,
                    resp.fixed_effects.len(),
                    self.time_levels.len()
                )));
            }
            if resp.fixed_effects.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "response '{}' has a non-finite fixed effect",
                    resp.spec.name
                )));
            }
            if !resp.spec.family.has_fixed_dispersion() && !(resp.dispersion > 0.0 && resp.dispersion.is_finite()) {
                return Err(Error::Parameter(format!(
                    "response '{}' needs a positive dispersion",
                    resp.spec.name
                )));
            }
        }
        if self.sigma.len() != r || self.sigma.iter().any(|row| row.len() != r) {
            return Err(Error::Parameter(format!("sigma must be {r} x {r}")));
        }
        for i in 0..r {
            for j in 0..i {
                let (a, b) = (self.sigma[i][j], self.sigma[j][i]);
                if !a.is_finite() || (a - b).abs() > PSD_TOL * (1.0 + a.abs()) {
                    return Err(Error::Parameter(format!("sigma is not symmetric at ({i}, {j})")));
                }
            }
        }
        pivoted_cholesky(&self.sigma).map(|_| ())
    }

    fn dispersion_of(&self, r: usize) -> f64 {
        let resp = &self.responses[r];
        if resp.spec.family.has_fixed_dispersion() {
            1.0
        } else {
            resp.dispersion
        }
    }
}

/// Factor `L` with `L L^T = sigma` for a positive semidefinite `sigma`,
/// by Cholesky with diagonal pivoting. Rows of `L` follow the original
/// variable order.
pub fn pivoted_cholesky(sigma: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = sigma.len();
    let scale = (0..n).map(|i| sigma[i][i].abs()).fold(1.0f64, f64::max);
    let tol = PSD_TOL * scale;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = vec![vec![0.0; n]; n];
    let mut residual: Vec<f64> = (0..n).map(|i| sigma[i][i]).collect();
    let mut rank = n;
    for k in 0..n {
        let (best, &dmax) = residual[k..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        if dmax <= tol {
            rank = k;
            break;
        }
        let j = k + best;
        perm.swap(k, j);
        residual.swap(k, j);
        l.swap(k, j);
        let pivot = dmax.sqrt();
        l[k][k] = pivot;
        for i in k + 1..n {
            let mut s = sigma[perm[i]][perm[k]];
            for m in 0..k {
                s -= l[i][m] * l[k][m];
            }
            l[i][k] = s / pivot;
            residual[i] -= l[i][k] * l[i][k];
        }
    }
    if residual[rank..].iter().any(|&d| d < -tol) {
        return Err(not_psd());
    }
    let mut out = vec![vec![0.0; n]; n];
    for (k, &p) in perm.iter().enumerate() {
        out[p] = l[k].clone();
    }
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|m| out[i][m] * out[j][m]).sum();
            if (v - sigma[i][j]).abs() > 1e-8 * scale {
                return Err(not_psd());
            }
        }
    }
    Ok(out)
}

fn not_psd() -> Error {
    Error::Parameter("sigma is not positive semidefinite".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GroundTruth {
    pub group_ids: Vec<String>,
    pub response_names: Vec<String>,
    /// The drawn random components, groups × responses.
    pub random_components: Vec<Vec<f64>>,
    pub seed: u64,
    pub spec: MglmmSpec,
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub table: ObservationTable,
    pub truth: GroundTruth,
}

/// Draw a dataset. Group ids are `1..=groups`; each random-component
/// vector and each cell uses its own child stream of `seed`.
pub fn simulate_dataset(spec: &MglmmSpec, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let streams = Streams::new(seed);
    let factor = pivoted_cholesky(&spec.sigma)?;
    let r = spec.responses.len();
    let names: Vec<String> = spec.responses.iter().map(|s| s.spec.name.clone()).collect();
    let group_ids: Vec<String> = (1..=spec.groups).map(|g| g.to_string()).collect();

    let mut components = Vec::with_capacity(spec.groups);
    for g in 0..spec.groups {
        let mut rng = streams.child("random-components", &[g as u64]);
        let z: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
        components.push(
            factor
                .iter()
                .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum())
                .collect::<Vec<f64>>(),
        );
    }

    let mut table = ObservationTable::new(names.clone())?;
    for (g, id) in group_ids.iter().enumerate() {
        for (t, level) in spec.time_levels.iter().enumerate() {
            let mut values = Vec::with_capacity(r);
            for (k, resp) in spec.responses.iter().enumerate() {
                let eta = resp.fixed_effects[t] + components[g][k];
                let mean = resp.spec.mean_from_eta(eta);
                let family = resp.spec.family;
                let params = DispersionParams::new(family, mean, spec.dispersion_of(k)).map_err(|e| {
                    Error::Parameter(format!(
                        "response '{}', group {id}, level {level}: {e}",
                        resp.spec.name
                    ))
                })?;
                let mut rng = streams.child("cell", &[g as u64, k as u64, t as u64]);
                values.push(Some(dispersion::sample(family, params, &mut rng)));
            }
            table.push_row(id.clone(), level.clone(), values)?;
        }
    }
    Ok(SimulatedData {
        table,
        truth: GroundTruth {
            group_ids,
            response_names: names,
            random_components: components,
            seed,
            spec: spec.clone(),
        },
    })
}

/// Covariance whose inverse has unit diagonal, `-partial_correlation` at
/// the graph's edges and zeros elsewhere, so its conditional-independence
/// graph is exactly `graph`.
pub fn graph_to_sigma(graph: &LabeledGraph, partial_correlation: f64) -> Result<Vec<Vec<f64>>> {
    if !(partial_correlation > 0.0 && partial_correlation < 1.0) {
        return Err(Error::Parameter(format!(
            "partial correlation must lie in (0, 1), got {partial_correlation}"
        )));
    }
    let n = graph.len();
    let mut precision = DMatrix::<f64>::identity(n, n);
    for (i, j) in graph.edges() {
        precision[(i, j)] = -partial_correlation;
        precision[(j, i)] = -partial_correlation;
    }
    let Some(chol) = precision.clone().cholesky() else {
        let mut adjacency = DMatrix::<f64>::zeros(n, n);
        for (i, j) in graph.edges() {
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        let spectral = SymmetricEigen::new(adjacency).eigenvalues.max();
        return Err(Error::Parameter(format!(
            "precision matrix with partial correlation {partial_correlation} is not positive definite; \
             use a value below {:.4} (1 / largest adjacency eigenvalue {spectral:.4})",
            1.0 / spectral
        )));
    };
    let cov = chol.inverse();
    Ok((0..n)
        .map(|i| (0..n).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
        .collect())
}

//! Choice of the compound-Poisson power index by matching zero counts.
//!
//! For each candidate index the GLMM is refitted, every observation's
//! probability of being zero is evaluated at its conditional fitted mean and
//! the estimated dispersion, and these probabilities are summed within each
//! time level. The chosen index minimises the Euclidean distance between the
//! expected and observed per-level zero counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{label_cmp, ObservationTable};
use crate::dispersion::{zero_probability, DispersionParams, Family};
use crate::error::{Error, Result};
use crate::glmm::{self, FitOptions, ResponseSpec};

/// `1.05, 1.10, ..., 1.95`.
pub fn default_grid() -> Vec<f64> {
    (0..19).map(|k| (105 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PowerGridResult {
    pub response: String,
    pub grid: Vec<f64>,
    /// `None` where the fit at that index failed.
    pub distances: Vec<Option<f64>>,
    pub chosen: f64,
    /// Whether another grid value attained the same minimal distance.
    pub tie: bool,
    pub levels: Vec<String>,
    pub observed_zeros: Vec<usize>,
    /// Per grid value, expected zero counts per level.
    pub expected_zeros: Vec<Option<Vec<f64>>>,
    pub failures: Vec<Option<String>>,
}

/// Sorted, de-duplicated grid with every value strictly inside `(1, 2)`.
pub fn validate_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Input(
            "power-index grid required for compound-Poisson responses (grid is empty)".into(),
        ));
    }
    if let Some(bad) = grid.iter().find(|p| !(**p > 1.0 && **p < 2.0)) {
        return Err(Error::Input(format!(
            "power-index grid values must lie strictly inside (1, 2), got {bad}"
        )));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

pub fn select_power_index(
    table: &ObservationTable,
    spec: &ResponseSpec,
    grid: &[f64],
    opts: &FitOptions,
) -> Result<PowerGridResult> {
    if !matches!(spec.family, Family::CompoundPoisson { .. }) {
        return Err(Error::Input(format!(
            "power-index selection needs a compound-Poisson response, '{}' is {}",
            spec.name, spec.family
        )));
    }
    let grid = validate_grid(grid)?;
    let col = table.response_index(&spec.name)?;

    let mut levels: Vec<String> = table
        .rows()
        .iter()
        .filter(|r| r.values[col].is_some())
        .map(|r| r.time.clone())
        .collect();
    levels.sort_by(|a, b| label_cmp(a, b));
    levels.dedup();
    let level_of = |time: &str| levels.iter().position(|l| l == time);
    let mut observed_zeros = vec![0usize; levels.len()];
    for row in table.rows() {
        if row.values[col] == Some(0.0) {
            observed_zeros[level_of(&row.time).expect("level listed")] += 1;
        }
    }

    let expected_at = |power: f64| -> Result<Vec<f64>> {
        let family = Family::compound_poisson(power)?;
        let candidate = ResponseSpec {
            family,
            ..spec.clone()
        };
        let fit = glmm::fit_with(table, &candidate, opts)?;
        let means = glmm::fitted_means(&fit, table)?;
        let mut expected = vec![0.0; levels.len()];
        for (row, mean) in table.rows().iter().zip(means) {
            if row.values[col].is_some() {
                let params = DispersionParams::new(family, mean, fit.dispersion)?;
                expected[level_of(&row.time).expect("level listed")] += zero_probability(family, params);
            }
        }
        Ok(expected)
    };
    let outcomes: Vec<Result<Vec<f64>>> = grid.par_iter().map(|&p| expected_at(p)).collect();

    let mut distances = Vec::with_capacity(grid.len());
    let mut expected_zeros = Vec::with_capacity(grid.len());
    let mut failures = Vec::with_capacity(grid.len());
    for outcome in outcomes {
        match outcome {
            Ok(expected) => {
                let d = expected
                    .iter()
                    .zip(&observed_zeros)
                    .map(|(e, &o)| (e - o as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                distances.push(Some(d));
                expected_zeros.push(Some(expected));
                failures.push(None);
            }
            Err(e) => {
                distances.push(None);
                expected_zeros.push(None);
                failures.push(Some(e.to_string()));
            }
        }
    }

    let Some((k, tie)) = argmin_with_tie(&distances) else {
        return Err(Error::Numerical(format!(
            "every power-index fit failed for '{}': {}",
            spec.name,
            failures.iter().flatten().cloned().collect::<Vec<_>>().join("; ")
        )));
    };
    Ok(PowerGridResult {
        response: spec.name.clone(),
        chosen: grid[k],
        grid,
        distances,
        tie,
        levels,
        observed_zeros,
        expected_zeros,
        failures,
    })
}

/// Index of the smallest available distance, the first one on ties, and
/// whether a tie occurred.
fn argmin_with_tie(distances: &[Option<f64>]) -> Option<(usize, bool)> {
    let mut best: Option<(usize, f64)> = None;
    let mut tie = false;
    for (k, d) in distances.iter().enumerate() {
        let Some(d) = *d else { continue };
        match best {
            None => best = Some((k, d)),
            Some((_, b)) if d < b => {
                best = Some((k, d));
                tie = false;
            }
            Some((_, b)) if d == b => tie = true,
            _ => {}
        }
    }
    best.map(|(k, _)| (k, tie))
}

use std::path::Path;

use mglmm::dispersion::Family;
use mglmm::glmm::{FitOptions, ResponseSpec};
use mglmm::graph_select::ModelClass;
use mglmm::{Error, Result};
use serde::{Deserialize, Serialize};

/// Run configuration read from `--config`. Command-line flags override it.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub schema: Vec<ResponseSpec>,
    /// Absent: the default grid. Present but empty is an error once a
    /// compound-Poisson response has to be fitted.
    #[serde(default)]
    pub power_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub model_class: Option<ModelClass>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub worker_count: Option<usize>,
    /// Vertices highlighted in DOT output and used for the blanket report.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Tolerances {
    pub inner_tol: Option<f64>,
    pub inner_max_iterations: Option<usize>,
    pub param_tol: Option<f64>,
    pub objective_tol: Option<f64>,
    pub max_iterations: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("invalid config {}: {e}", path.display())))?;
        for s in &cfg.schema {
            s.validate()?;
        }
        if cfg.worker_count == Some(0) {
            return Err(Error::Input("workerCount must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn table_schema(&self) -> Result<Vec<(String, Family)>> {
        if self.schema.is_empty() {
            return Err(Error::Input("config must declare a response schema".into()));
        }
        Ok(self.schema.iter().map(|s| (s.name.clone(), s.family)).collect())
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        let mut o = FitOptions::default();
        let t = &self.tolerances;
        for (name, v) in [
            ("innerTol", t.inner_tol),
            ("paramTol", t.param_tol),
            ("objectiveTol", t.objective_tol),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Input(format!("tolerance {name} must be positive, got {v}")));
                }
            }
        }
        if let Some(v) = t.inner_tol {
            o.inner_tol = v;
        }
        if let Some(v) = t.inner_max_iterations {
            o.inner_max_iterations = v;
        }
        if let Some(v) = t.param_tol {
            o.outer.param_tol = v;
        }
        if let Some(v) = t.objective_tol {
            o.outer.objective_tol = v;
        }
        if let Some(v) = t.max_iterations {
            o.outer.max_iterations = v;
        }
        Ok(o)
    }
}

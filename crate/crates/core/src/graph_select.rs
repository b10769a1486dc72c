//! Gaussian graphical model selection over the random-effect predictions by
//! BIC minimisation.
//!
//! Only decomposable (chordal) graphs are scored. Their maximum-likelihood
//! covariance factorises over a perfect ordering, so with `S` the MLE
//! sample covariance and `pa(v)` the earlier neighbours of `v` in a
//! maximum-cardinality-search order,
//!
//! `log det Sigma_hat = sum_v [log det S_{v ∪ pa(v)} - log det S_{pa(v)}]`
//!
//! and the maximised log-likelihood is
//! `-(n/2) (p (1 + ln 2π) + log det Sigma_hat)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::mglmm::RandomEffectsMatrix;

/// Correlation-matrix determinant below which a clique block is singular.
const SINGULAR_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    Forest,
    Decomposable,
}

impl std::str::FromStr for ModelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" => Ok(ModelClass::Forest),
            "decomposable" => Ok(ModelClass::Decomposable),
            other => Err(Error::Input(format!(
                "unknown model class '{other}' (expected 'forest' or 'decomposable')"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SearchStep {
    pub edge: [String; 2],
    pub delta_bic: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GraphSearchResult {
    pub graph: LabeledGraph,
    pub bic: f64,
    pub search_trace: Vec<SearchStep>,
    pub model_class: ModelClass,
}

/// MLE covariance (divisor `n`) of the columns named by the graph vertices.
struct SampleCovariance {
    n: usize,
    cov: DMatrix<f64>,
}

impl SampleCovariance {
    fn new(matrix: &RandomEffectsMatrix, graph: &LabeledGraph) -> Result<Self> {
        let n = matrix.group_ids().len();
        if n < 2 {
            return Err(Error::Input(format!("need at least 2 rows, found {n}")));
        }
        let cols = graph
            .vertices()
            .iter()
            .map(|v| {
                matrix.column_index(v).ok_or_else(|| {
                    Error::Input(format!("graph vertex '{v}' is not a column of the matrix"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = cols.len();
        let values = matrix.values();
        let means: Vec<f64> = cols
            .iter()
            .map(|&c| values.iter().map(|row| row[c]).sum::<f64>() / n as f64)
            .collect();
        let mut cov = DMatrix::zeros(p, p);
        for row in values {
            for a in 0..p {
                let da = row[cols[a]] - means[a];
                for b in a..p {
                    cov[(a, b)] += da * (row[cols[b]] - means[b]);
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                cov[(a, b)] /= n as f64;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        Ok(Self { n, cov })
    }

    fn log_det(&self, graph: &LabeledGraph, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let k = idx.len();
        let block = DMatrix::from_fn(k, k, |a, b| self.cov[(idx[a], idx[b])]);
        let singular = || {
            Error::Numerical(format!(
                "singular covariance block for clique {{{}}}",
                graph.labels_of(idx.iter().copied()).join(", ")
            ))
        };
        let diag_log: f64 = idx.iter().map(|&i| self.cov[(i, i)].ln()).sum();
        if !diag_log.is_finite() {
            return Err(singular());
        }
        let chol = block.cholesky().ok_or_else(singular)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() || log_det - diag_log < SINGULAR_DET.ln() {
            return Err(singular());
        }
        Ok(log_det)
    }

    fn bic(&self, graph: &LabeledGraph) -> Result<f64> {
        if !graph.is_chordal() {
            return Err(Error::Unsupported(
                "BIC is only available in closed form for chordal (decomposable) graphs".into(),
            ));
        }
        let n = self.n as f64;
        let p = graph.len();
        let mut log_det = 0.0;
        for (v, pa) in graph.mcs_parents() {
            let mut family = pa.clone();
            family.push(v);
            log_det += self.log_det(graph, &family)? - self.log_det(graph, &pa)?;
        }
        let log_lik = -0.5 * n * (p as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + log_det);
        let k = 2 * p + graph.edge_count();
        Ok(-2.0 * log_lik + k as f64 * n.ln())
    }

    fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)] / (self.cov[(i, i)] * self.cov[(j, j)]).sqrt()
    }
}

/// BIC of the Gaussian graphical model with the graph's conditional
/// independences: `-2 log L + k ln n`, `k = 2 * vertices + edges`.
pub fn gaussian_bic(matrix: &RandomEffectsMatrix, graph: &LabeledGraph) -> Result<f64> {
    SampleCovariance::new(matrix, graph)?.bic(graph)
}

/// Minimal-BIC graph over all matrix columns.
///
/// Forests are searched exactly: adding an edge between two trees changes
/// the BIC by `n ln(1 - r^2) + ln n`, so Kruskal on the positive gains
/// `-n ln(1 - r^2) - ln n` yields the optimum. The decomposable search
/// starts from that forest and greedily adds the single edge with the most
/// negative BIC change that keeps the graph chordal, until none improves.
/// Candidates whose largest clique would reach the number of rows are
/// skipped, which keeps every clique covariance block nonsingular.
pub fn search_min_bic(matrix: &RandomEffectsMatrix, model_class: ModelClass) -> Result<GraphSearchResult> {
    let n = matrix.group_ids().len();
    if n < 3 {
        return Err(Error::Input(format!("graph search needs at least 3 rows, found {n}")));
    }
    let mut graph = LabeledGraph::new(matrix.response_names().to_vec())?;
    let stats = SampleCovariance::new(matrix, &graph)?;
    let p = graph.len();
    let nf = n as f64;
    let mut trace = Vec::new();
    let edge_labels = |g: &LabeledGraph, i: usize, j: usize| {
        [g.vertices()[i].clone(), g.vertices()[j].clone()]
    };

    let mut candidates = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            let r = stats.correlation(i, j);
            if !r.is_finite() {
                return Err(Error::Numerical(format!(
                    "correlation of '{}' and '{}' is undefined (zero variance)",
                    graph.vertices()[i],
                    graph.vertices()[j]
                )));
            }
            let gain = -nf * (1.0 - r * r).ln() - nf.ln();
            if gain > 0.0 {
                candidates.push((gain, i, j));
            }
        }
    }
    // Descending gain; equal gains keep lexicographic edge order.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (gain, i, j) in candidates {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        let accepted = ri != rj;
        if accepted {
            parent[ri] = rj;
            graph.add_edge_index(i, j)?;
        }
        trace.push(SearchStep {
            edge: edge_labels(&graph, i, j),
            delta_bic: -gain,
            accepted,
        });
    }

    if model_class == ModelClass::Decomposable {
        let mut current = stats.bic(&graph)?;
        loop {
            let non_edges: Vec<(usize, usize)> = (0..p)
                .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
                .filter(|&(i, j)| !graph.has_edge_index(i, j))
                .collect();
            let scored: Vec<Option<(f64, usize, usize)>> = non_edges
                .par_iter()
                .map(|&(i, j)| {
                    let mut trial = graph.clone();
                    trial.add_edge_index(i, j).ok()?;
                    if !trial.is_chordal() || trial.max_clique_size() >= n {
                        return None;
                    }
                    let bic = stats.bic(&trial).ok()?;
                    Some((bic - current, i, j))
                })
                .collect();
            let mut best: Option<(f64, usize, usize)> = None;
            for s in scored.into_iter().flatten() {
                if best.is_none_or(|b| s.0 < b.0) {
                    best = Some(s);
                }
            }
            let Some((delta, i, j)) = best else { break };
            let accepted = delta < 0.0;
            trace.push(SearchStep {
                edge: edge_labels(&graph, i, j),
                delta_bic: delta,
                accepted,
            });
            if !accepted {
                break;
            }
            graph.add_edge_index(i, j)?;
            current += delta;
        }
    }

    let bic = stats.bic(&graph)?;
    Ok(GraphSearchResult {
        graph,
        bic,
        search_trace: trace,
        model_class,
    })
}

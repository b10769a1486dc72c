use mglmm::graph::{is_separator, minimal_markov_blanket, LabeledGraph};
use mglmm::graph_select::{gaussian_bic, search_min_bic, ModelClass};
use mglmm::mglmm::RandomEffectsMatrix;
use mglmm::rng::Streams;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("v{i}")).collect()
}

/// Rows of `p` columns, each `x_j = coupling * x_{j-1} + noise` when
/// `coupling` is nonzero.
fn gaussian_rows(n: usize, p: usize, coupling: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Streams::new(seed).child("rows", &[]);
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = Vec::with_capacity(p);
            for j in 0..p {
                let e: f64 = StandardNormal.sample(&mut rng);
                let prev = if j == 0 { 0.0 } else { row[j - 1] };
                row.push(coupling * prev + e);
            }
            row
        })
        .collect()
}

fn matrix(rows: Vec<Vec<f64>>, labels: Vec<String>) -> RandomEffectsMatrix {
    let groups = (1..=rows.len()).map(|g| g.to_string()).collect();
    RandomEffectsMatrix::new(groups, labels, rows).unwrap()
}

/// `-2 log L + k ln n` of an unrestricted normal, MLE covariance.
fn saturated_bic(rows: &[Vec<f64>]) -> f64 {
    let (n, p) = (rows.len(), rows[0].len());
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mean[j]);
    let s = centred.transpose() * &centred / n as f64;
    let nf = n as f64;
    let log_lik = -0.5 * nf * (p as f64 * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + p as f64);
    let k = 2 * p + p * (p - 1) / 2;
    -2.0 * log_lik + k as f64 * nf.ln()
}

#[test]
fn complete_graph_matches_unrestricted_normal() {
    let rows = gaussian_rows(40, 3, 0.7, 1);
    let m = matrix(rows.clone(), names(3));
    let complete = LabeledGraph::from_edges(names(3), &[("v0", "v1"), ("v1", "v2"), ("v0", "v2")]).unwrap();
    let bic = gaussian_bic(&m, &complete).unwrap();
    let oracle = saturated_bic(&rows);
    assert!((bic - oracle).abs() < 1e-8 * oracle.abs(), "{bic} vs {oracle}");
}

#[test]
fn independent_columns_give_no_edges() {
    let m = matrix(gaussian_rows(200, 3, 0.0, 2), names(3));
    for class in [ModelClass::Forest, ModelClass::Decomposable] {
        assert_eq!(search_min_bic(&m, class).unwrap().graph.edge_count(), 0);
    }
}

#[test]
fn chain_is_recovered() {
    let m = matrix(gaussian_rows(200, 3, 0.8, 3), names(3));
    let chain = LabeledGraph::from_edges(names(3), &[("v0", "v1"), ("v1", "v2")]).unwrap();
    for class in [ModelClass::Forest, ModelClass::Decomposable] {
        assert_eq!(search_min_bic(&m, class).unwrap().graph, chain);
    }
}

#[test]
fn trace_is_consistent_with_final_bic() {
    let m = matrix(gaussian_rows(60, 7, 0.5, 4), names(7));
    let r = search_min_bic(&m, ModelClass::Decomposable).unwrap();
    let start = gaussian_bic(&m, &LabeledGraph::new(names(7)).unwrap()).unwrap();
    let accepted: f64 = r.search_trace.iter().filter(|s| s.accepted).map(|s| s.delta_bic).sum();
    assert!(r.search_trace.iter().filter(|s| s.accepted).all(|s| s.delta_bic < 0.0));
    assert!((start + accepted - r.bic).abs() < 1e-6);
    assert!((gaussian_bic(&m, &r.graph).unwrap() - r.bic).abs() < 1e-8);
    assert!(r.graph.is_chordal());
    for s in r.search_trace.iter().filter(|s| s.accepted) {
        assert!(r.graph.has_edge(&s.edge[0], &s.edge[1]));
    }
}

#[test]
fn forest_search_returns_a_forest() {
    let m = matrix(gaussian_rows(80, 8, 0.6, 5), names(8));
    let r = search_min_bic(&m, ModelClass::Forest).unwrap();
    assert!(r.graph.is_forest());
    let d = search_min_bic(&m, ModelClass::Decomposable).unwrap();
    assert!(d.bic <= r.bic + 1e-9);
}

#[test]
fn relabelling_columns_relabels_the_graph() {
    let rows = gaussian_rows(100, 6, 0.5, 6);
    let a = search_min_bic(&matrix(rows.clone(), names(6)), ModelClass::Decomposable).unwrap();
    let rename = |l: &str| format!("z{}", 9 - l[1..].parse::<usize>().unwrap());
    let renamed: Vec<String> = names(6).iter().map(|l| rename(l)).collect();
    let b = search_min_bic(&matrix(rows, renamed), ModelClass::Decomposable).unwrap();
    assert_eq!(a.graph.relabel(rename).unwrap(), b.graph);
    assert!((a.bic - b.bic).abs() < 1e-8);
}

#[test]
fn too_few_rows_is_an_error() {
    let m = matrix(gaussian_rows(2, 3, 0.0, 7), names(3));
    assert!(search_min_bic(&m, ModelClass::Forest).is_err());
}

fn graph_and_targets() -> impl Strategy<Value = (LabeledGraph, Vec<String>)> {
    (3usize..9).prop_flat_map(|p| {
        let pairs = p * (p - 1) / 2;
        (
            proptest::collection::vec(any::<bool>(), pairs),
            proptest::collection::vec(any::<bool>(), p),
        )
            .prop_map(move |(edges, chosen)| {
                let mut g = LabeledGraph::new(names(p)).unwrap();
                let mut k = 0;
                for i in 0..p {
                    for j in i + 1..p {
                        if edges[k] {
                            g.add_edge_index(i, j).unwrap();
                        }
                        k += 1;
                    }
                }
                let mut targets: Vec<String> =
                    names(p).into_iter().zip(&chosen).filter(|(_, c)| **c).map(|(l, _)| l).collect();
                if targets.is_empty() {
                    targets.push("v0".into());
                }
                (g, targets)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn blanket_separates_targets_from_the_rest((graph, targets) in graph_and_targets()) {
        let b = minimal_markov_blanket(&graph, &targets).unwrap();
        prop_assert_eq!(b.targets.len() + b.blanket.len() + b.separated.len(), graph.len());
        if !b.separated.is_empty() {
            prop_assert!(is_separator(&graph, &b.targets, &b.separated, &b.blanket).unwrap());
        }
        for v in &b.blanket {
            prop_assert!(b.targets.iter().any(|t| graph.has_edge(t, v)));
        }
        for v in &b.separated {
            prop_assert!(b.targets.iter().all(|t| !graph.has_edge(t, v)));
        }
    }
}

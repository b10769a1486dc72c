#![allow(dead_code)]

use mglmm::data_io::ObservationTable;
use mglmm::dispersion::{log_density, DispersionParams};
use mglmm::glmm::ResponseSpec;
use mglmm::simulate::{MglmmSpec, SimResponse};

pub fn single_response(spec: ResponseSpec, theta: Vec<f64>, dispersion: f64, re_variance: f64, groups: usize) -> MglmmSpec {
    let time_levels = (1..=theta.len()).map(|t| t.to_string()).collect();
    MglmmSpec {
        responses: vec![SimResponse {
            spec,
            fixed_effects: theta,
            dispersion,
        }],
        sigma: vec![vec![re_variance]],
        groups,
        time_levels,
    }
}

/// Gauss-Hermite rule for weight `e^{-x^2}` from the eigen-decomposition
/// of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Marginal log-likelihood of one response by adaptive Gauss-Hermite
/// quadrature around each group's mode (golden-section search).
pub fn aghq_log_likelihood(
    table: &ObservationTable,
    spec: &ResponseSpec,
    theta: &[f64],
    dispersion: f64,
    re_variance: f64,
    nodes: usize,
) -> f64 {
    let rule = gauss_hermite(nodes);
    let levels = table.time_levels();
    let col = table.response_index(&spec.name).unwrap();
    let mut total = 0.0;
    for g in table.group_ids() {
        let obs: Vec<(f64, f64)> = table
            .rows()
            .iter()
            .filter(|r| r.group == g)
            .filter_map(|r| {
                let t = levels.iter().position(|l| *l == r.time).unwrap();
                r.values[col].map(|y| (theta[t], y))
            })
            .collect();
        let conditional = |u: f64| -> f64 {
            obs.iter()
                .map(|&(th, y)| {
                    let params = DispersionParams::new(spec.family, spec.mean_from_eta(th + u), dispersion).unwrap();
                    log_density(spec.family, params, y).unwrap()
                })
                .sum()
        };
        if re_variance == 0.0 {
            total += conditional(0.0);
            continue;
        }
        let h = |u: f64| {
            conditional(u) - u * u / (2.0 * re_variance) - 0.5 * (2.0 * std::f64::consts::PI * re_variance).ln()
        };
        let (mut a, mut b) = (-30.0f64, 30.0f64);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        while b - a > 1e-11 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if h(c) > h(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let mode = 0.5 * (a + b);
        let step = 1e-4;
        let curvature = -(h(mode + step) - 2.0 * h(mode) + h(mode - step)) / (step * step);
        let scale = 1.0 / curvature.sqrt();
        let hm = h(mode);
        let sum: f64 = rule
            .iter()
            .map(|&(x, w)| w * (x * x).exp() * (h(mode + std::f64::consts::SQRT_2 * scale * x) - hm).exp())
            .sum();
        total += hm + (std::f64::consts::SQRT_2 * scale * sum).ln();
    }
    total
}

pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

mod common;

use common::single_response;
use mglmm::dispersion::Family;
use mglmm::fixtures;
use mglmm::glmm::ResponseSpec;
use mglmm::simulate::{graph_to_sigma, simulate_dataset, MglmmSpec, SimResponse};

#[test]
fn storage_shaped_dataset() {
    let sim = simulate_dataset(&fixtures::apple_storage_spec(10, 0.18).unwrap(), 1).unwrap();
    assert_eq!(sim.table.len(), 30);
    assert_eq!(sim.table.response_names().len(), 16);
    assert_eq!(sim.table.time_levels(), vec!["6", "12", "18"]);
    assert_eq!(sim.truth.random_components.len(), 10);
    assert!(sim.table.rows().iter().all(|r| r.values.iter().all(Option::is_some)));
}

#[test]
fn compound_poisson_zero_fraction() {
    // mu = 1, phi = 1, p = 1.5, no random effect: P(0) = exp(-2).
    let spec = ResponseSpec::with_default_link("y", Family::CompoundPoisson { power: 1.5 }).unwrap();
    let sim = simulate_dataset(&single_response(spec, vec![0.0; 10], 1.0, 0.0, 10_000), 2).unwrap();
    let n = sim.table.len() as f64;
    let zeros = sim.table.rows().iter().filter(|r| r.values[0] == Some(0.0)).count() as f64;
    let p0 = (-2.0f64).exp();
    let se = (p0 * (1.0 - p0) / n).sqrt();
    assert!((zeros / n - p0).abs() < 4.0 * se, "{} vs {p0}", zeros / n);
}

#[test]
fn random_components_have_the_requested_covariance() {
    let gamma = |n: &str| ResponseSpec::with_default_link(n, Family::Gamma).unwrap();
    let sigma = vec![
        vec![1.0, 0.5, 0.0],
        vec![0.5, 1.0, 0.3],
        vec![0.0, 0.3, 0.8],
    ];
    let spec = MglmmSpec {
        responses: ["a", "b", "c"]
            .iter()
            .map(|n| SimResponse {
                spec: gamma(n),
                fixed_effects: vec![0.0],
                dispersion: 1.0,
            })
            .collect(),
        sigma: sigma.clone(),
        groups: 10_000,
        time_levels: vec!["1".into()],
    };
    let b = simulate_dataset(&spec, 3).unwrap().truth.random_components;
    let n = b.len() as f64;
    let mut frob = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let (mi, mj) = (b.iter().map(|r| r[i]).sum::<f64>() / n, b.iter().map(|r| r[j]).sum::<f64>() / n);
            let c = b.iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum::<f64>() / (n - 1.0);
            frob += (c - sigma[i][j]).powi(2);
        }
    }
    assert!(frob.sqrt() < 0.1, "{}", frob.sqrt());
}

#[test]
fn values_respect_family_supports() {
    let sim = simulate_dataset(&fixtures::apple_storage_spec(50, 0.18).unwrap(), 4).unwrap();
    for (c, spec) in fixtures::response_specs().iter().enumerate() {
        for row in sim.table.rows() {
            let y = row.values[c].unwrap();
            assert!(spec.family.check_support(y).is_ok(), "{}: {y}", spec.name);
            if spec.family == Family::Gamma {
                assert!(y > 0.0);
            }
        }
    }
}

#[test]
fn same_seed_same_data_and_different_seed_differs() {
    let spec = fixtures::apple_storage_spec(10, 0.18).unwrap();
    let a = simulate_dataset(&spec, 5).unwrap();
    let b = simulate_dataset(&spec, 5).unwrap();
    let c = simulate_dataset(&spec, 6).unwrap();
    assert_eq!(a.table.rows(), b.table.rows());
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.table.rows(), c.table.rows());
}

#[test]
fn more_groups_extend_the_same_draws() {
    let small = simulate_dataset(&fixtures::apple_storage_spec(5, 0.18).unwrap(), 7).unwrap();
    let large = simulate_dataset(&fixtures::apple_storage_spec(8, 0.18).unwrap(), 7).unwrap();
    assert_eq!(small.truth.random_components[..], large.truth.random_components[..5]);
}

#[test]
fn infeasible_partial_correlation_is_rejected() {
    let err = graph_to_sigma(&fixtures::storage_graph(), 0.35).unwrap_err();
    assert!(err.to_string().contains("not positive definite"), "{err}");
    assert!(graph_to_sigma(&fixtures::storage_graph(), 0.18).is_ok());
}

#[test]
fn singular_covariance_is_allowed() {
    let gamma = ResponseSpec::with_default_link("a", Family::Gamma).unwrap();
    let mut spec = single_response(gamma.clone(), vec![0.0], 1.0, 1.0, 20);
    spec.responses.push(SimResponse {
        spec: ResponseSpec { name: "b".into(), ..gamma },
        fixed_effects: vec![0.0],
        dispersion: 1.0,
    });
    spec.sigma = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let b = simulate_dataset(&spec, 8).unwrap().truth.random_components;
    assert!(b.iter().all(|r| (r[0] - r[1]).abs() < 1e-12));
}

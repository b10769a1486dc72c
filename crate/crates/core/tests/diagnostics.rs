mod common;

use common::single_response;
use mglmm::diagnostics::{ks_uniform, pearson_residuals, pit_uniformity};
use mglmm::dispersion::Family;
use mglmm::glmm::{self, ResponseSpec};
use mglmm::rng::Streams;
use mglmm::simulate::{simulate_dataset, SimulatedData};
use rand::Rng;

/// 50 groups at three levels: 150 observations.
fn fixture(family: Family, seed: u64) -> (ResponseSpec, SimulatedData) {
    fixture_with_variance(family, 0.3, seed)
}

fn fixture_with_variance(family: Family, re_variance: f64, seed: u64) -> (ResponseSpec, SimulatedData) {
    let spec = ResponseSpec::with_default_link("y", family).unwrap();
    let theta = match family {
        Family::Binomial { .. } => vec![-1.0, 0.0, 1.0],
        _ => vec![0.2, 0.6, 1.0],
    };
    let sim = simulate_dataset(&single_response(spec.clone(), theta, 0.5, re_variance, 50), seed).unwrap();
    (spec, sim)
}

#[test]
fn gamma_residual_variance_near_one() {
    // Residuals are taken about the conditional means, and every group's
    // prediction absorbs part of its three observations' spread, so a
    // small random-effect variance keeps that loss modest.
    let (spec, sim) = fixture_with_variance(Family::Gamma, 0.1, 1);
    let fit = glmm::fit(&sim.table, &spec).unwrap();
    let r = pearson_residuals(&fit, &sim.table).unwrap();
    assert_eq!(r.len(), 150);
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((0.7..=1.3).contains(&var), "{var}");
}

#[test]
fn continuous_pit_draws_nothing_and_atoms_draw_one_each() {
    let (spec, sim) = fixture(Family::Gamma, 2);
    let fit = glmm::fit(&sim.table, &spec).unwrap();
    let fresh = Streams::new(3).child("pit", &[]);
    let mut rng = fresh.clone();
    pit_uniformity(&fit, &sim.table, &mut rng).unwrap();
    assert_eq!(rng, fresh);

    let (spec, sim) = fixture(Family::Binomial { size: 9 }, 2);
    let fit = glmm::fit(&sim.table, &spec).unwrap();
    let mut rng = fresh.clone();
    pit_uniformity(&fit, &sim.table, &mut rng).unwrap();
    let mut expected = fresh.clone();
    for _ in 0..150 {
        let _: f64 = expected.random();
    }
    assert_eq!(rng, expected);

    let (spec, sim) = fixture(Family::CompoundPoisson { power: 1.5 }, 2);
    let zeros = sim.table.rows().iter().filter(|r| r.values[0] == Some(0.0)).count();
    assert!(zeros > 0);
    let fit = glmm::fit(&sim.table, &spec).unwrap();
    let mut rng = fresh.clone();
    pit_uniformity(&fit, &sim.table, &mut rng).unwrap();
    let mut expected = fresh.clone();
    for _ in 0..zeros {
        let _: f64 = expected.random();
    }
    assert_eq!(rng, expected);
}

#[test]
fn same_seed_same_report() {
    let (spec, sim) = fixture(Family::CompoundPoisson { power: 1.5 }, 4);
    let fit = glmm::fit(&sim.table, &spec).unwrap();
    let run = || pit_uniformity(&fit, &sim.table, &mut Streams::new(8).child("pit", &[])).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.ks_statistic.to_bits(), b.ks_statistic.to_bits());
    assert_eq!(a.to_csv(), b.to_csv());
    assert!((0.0..=1.0).contains(&a.ks_statistic));
}

#[test]
fn single_value_statistic() {
    for u in [0.1, 0.5, 0.93] {
        let (d, p) = ks_uniform(&[u]);
        assert!((d - f64::max(u, 1.0 - u)).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn rejection_rate_is_calibrated() {
    let replicates = 200;
    let mut rejected = 0;
    for k in 0..replicates {
        let (spec, sim) = fixture(Family::Gamma, 1000 + k);
        let fit = glmm::fit(&sim.table, &spec).unwrap();
        let report = pit_uniformity(&fit, &sim.table, &mut Streams::new(k).child("pit", &[])).unwrap();
        if report.ks_p_value < 0.05 {
            rejected += 1;
        }
    }
    let fraction = rejected as f64 / replicates as f64;
    println!("fraction of p < 0.05: {fraction}");
    assert!((0.01..=0.10).contains(&fraction), "{fraction}");
}

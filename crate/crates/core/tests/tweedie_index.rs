mod common;

use common::single_response;
use mglmm::data_io::ObservationTable;
use mglmm::dispersion::Family;
use mglmm::glmm::{FitOptions, ResponseSpec};
use mglmm::rng::Streams;
use mglmm::simulate::simulate_dataset;
use mglmm::tweedie_index::{default_grid, select_power_index};
use rand::seq::SliceRandom;

fn compound_poisson(name: &str) -> ResponseSpec {
    ResponseSpec::with_default_link(name, Family::CompoundPoisson { power: 1.5 }).unwrap()
}

fn simulated(power: f64, groups: usize, seed: u64) -> ObservationTable {
    let spec = ResponseSpec::with_default_link("area", Family::CompoundPoisson { power }).unwrap();
    simulate_dataset(&single_response(spec, vec![-0.8, 0.0, 0.6], 1.0, 0.4, groups), seed)
        .unwrap()
        .table
}

#[test]
fn strictly_positive_data_distances_are_expected_norms() {
    // Gamma draws contain no zeros, so observed counts are all zero.
    let gamma = ResponseSpec::with_default_link("area", Family::Gamma).unwrap();
    let sim = simulate_dataset(&single_response(gamma, vec![0.5, 1.0, 1.5], 0.3, 0.2, 12), 3).unwrap();
    let grid = [1.2, 1.5, 1.8];
    let r = select_power_index(&sim.table, &compound_poisson("area"), &grid, &FitOptions::default()).unwrap();
    assert_eq!(r.observed_zeros, vec![0, 0, 0]);
    let mut best = (f64::INFINITY, 0.0);
    for ((d, e), &p) in r.distances.iter().zip(&r.expected_zeros).zip(&grid) {
        let (d, e) = (d.unwrap(), e.as_ref().unwrap());
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((d - norm).abs() < 1e-12);
        if d < best.0 {
            best = (d, p);
        }
    }
    assert_eq!(r.chosen, best.1);
}

#[test]
fn singleton_grid_is_chosen() {
    let table = simulated(1.5, 15, 11);
    let r = select_power_index(&table, &compound_poisson("area"), &[1.3], &FitOptions::default()).unwrap();
    assert_eq!(r.chosen, 1.3);
    assert!(!r.tie);
    assert_eq!(r.distances.len(), 1);
}

#[test]
fn expected_counts_lie_between_zero_and_level_size() {
    let table = simulated(1.4, 20, 12);
    let r = select_power_index(&table, &compound_poisson("area"), &[1.1, 1.4, 1.7, 1.9], &FitOptions::default()).unwrap();
    for expected in r.expected_zeros.iter().flatten() {
        for &e in expected {
            assert!((0.0..=20.0).contains(&e), "{e}");
        }
    }
    let observed: usize = table.rows().iter().filter(|r| r.values[0] == Some(0.0)).count();
    assert_eq!(r.observed_zeros.iter().sum::<usize>(), observed);
}

#[test]
fn shuffling_rows_within_levels_changes_nothing() {
    let table = simulated(1.5, 15, 13);
    let mut rows = table.rows().to_vec();
    rows.shuffle(&mut Streams::new(1).child("rows", &[]));
    let mut shuffled = ObservationTable::new(table.response_names().to_vec()).unwrap();
    for r in rows {
        shuffled.push_row(r.group, r.time, r.values).unwrap();
    }
    let grid = [1.2, 1.5, 1.8];
    let spec = compound_poisson("area");
    let a = select_power_index(&table, &spec, &grid, &FitOptions::default()).unwrap();
    let b = select_power_index(&shuffled, &spec, &grid, &FitOptions::default()).unwrap();
    assert_eq!(a.chosen, b.chosen);
    for (x, y) in a.distances.iter().zip(&b.distances) {
        assert!((x.unwrap() - y.unwrap()).abs() < 1e-8);
    }
}

#[test]
fn recovers_power_near_truth() {
    let table = simulated(1.5, 80, 14);
    let r = select_power_index(&table, &compound_poisson("area"), &default_grid(), &FitOptions::default()).unwrap();
    assert!((r.chosen - 1.5).abs() <= 0.2, "chose {}", r.chosen);
}

#[test]
fn rejects_bad_grids_and_families() {
    let table = simulated(1.5, 5, 15);
    let opts = FitOptions::default();
    assert!(select_power_index(&table, &compound_poisson("area"), &[], &opts).is_err());
    assert!(select_power_index(&table, &compound_poisson("area"), &[1.0, 1.5], &opts).is_err());
    let gamma = ResponseSpec::with_default_link("area", Family::Gamma).unwrap();
    assert!(select_power_index(&table, &gamma, &[1.5], &opts).is_err());
}

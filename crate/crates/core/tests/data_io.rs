use mglmm::data_io::{
    parse_table, read_json, read_table, table_to_csv, write_json, write_table, ObservationTable,
};
use mglmm::dispersion::Family;
use mglmm::fixtures;
use mglmm::graph::{to_dot, LabeledGraph};
use mglmm::graph_select::{gaussian_bic, search_min_bic, GraphSearchResult, ModelClass};
use mglmm::mglmm::{fit_all, MglmmFit, MglmmOptions};
use mglmm::simulate::simulate_dataset;
use proptest::prelude::*;

fn schema() -> Vec<(String, Family)> {
    fixtures::response_specs().into_iter().map(|s| (s.name, s.family)).collect()
}

fn fitted(seed: u64) -> MglmmFit {
    let sim = simulate_dataset(&fixtures::apple_storage_spec(10, 0.18).unwrap(), seed).unwrap();
    let opts = MglmmOptions {
        power_grid: None,
        ..MglmmOptions::default()
    };
    fit_all(&sim.table, &fixtures::response_specs(), &opts).unwrap()
}

#[test]
fn reads_a_storage_shaped_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let sim = simulate_dataset(&fixtures::apple_storage_spec(10, 0.18).unwrap(), 1).unwrap();
    write_table(&sim.table, &path).unwrap();
    let loaded = read_table(&path, &schema()).unwrap();
    assert_eq!(loaded.table.len(), 30);
    assert_eq!(loaded.table.response_names().len(), 16);
    assert_eq!(loaded.table.rows(), sim.table.rows());
}

#[test]
fn empty_input_and_support_violations() {
    let err = parse_table("", &schema()).unwrap_err();
    assert!(err.to_string().contains("missing header"), "{err}");
    let sick = vec![(fixtures::INFECTION_PROPORTION.to_owned(), Family::Binomial { size: 9 })];
    let text = format!("glass,week,{}\n1,6,3\n2,6,10\n", fixtures::INFECTION_PROPORTION);
    let err = parse_table(&text, &sick).unwrap_err().to_string();
    assert!(err.contains("10") && err.contains("line 3"), "{err}");
}

#[test]
fn missing_cells_stay_missing() {
    let schema = vec![("a".to_owned(), Family::Gamma), ("b".to_owned(), Family::Gamma)];
    let t = parse_table("glass,week,a,b\n1,6,1.5,\n2,6,NA,2\n", &schema).unwrap().table;
    assert_eq!(t.rows()[0].values, vec![Some(1.5), None]);
    assert_eq!(t.rows()[1].values, vec![None, Some(2.0)]);
    assert!(!table_to_csv(&t).contains("NA"));
}

#[test]
fn fit_documents_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fitted(2);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    write_json("mglmmFit", &fit, &a).unwrap();
    write_json("mglmmFit", &fitted(2), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back: MglmmFit = read_json("mglmmFit", &a).unwrap();
    assert_eq!(back, fit);
}

#[test]
fn search_result_round_trip_keeps_bic() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fitted(3);
    let result = search_min_bic(&fit.re_matrix, ModelClass::Decomposable).unwrap();
    let path = dir.path().join("graph.json");
    write_json("graphSearch", &result, &path).unwrap();
    let back: GraphSearchResult = read_json("graphSearch", &path).unwrap();
    let bic = gaussian_bic(&fit.re_matrix, &back.graph).unwrap();
    assert!((bic - result.bic).abs() < 1e-8);
    assert_eq!(back, result);
}

#[test]
fn strict_documents() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.json");
    let g = LabeledGraph::from_edges(vec!["a".into(), "b".into()], &[("a", "b")]).unwrap();
    write_json("graph", &g, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"edges\"", "\"extra\": 1, \"edges\"")).unwrap();
    assert!(read_json::<LabeledGraph>("graph", &path).is_err());
    write_json("graph", &g, &path).unwrap();
    assert!(read_json::<LabeledGraph>("graphSearch", &path).is_err());
}

#[test]
fn two_vertex_dot_has_one_edge_line() {
    let g = LabeledGraph::from_edges(vec!["a".into(), "b".into()], &[("a", "b")]).unwrap();
    let dot = to_dot(&g, &["a".into()]).unwrap();
    assert_eq!(dot.lines().filter(|l| l.contains("--")).count(), 1);
}

fn fifteen_digits(x: f64) -> f64 {
    format!("{x:.14e}").parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_lossless(values in proptest::collection::vec(1e-6f64..1e6, 1..20)) {
        let schema = vec![("y".to_owned(), Family::Gamma)];
        let mut t = ObservationTable::new(vec!["y".into()]).unwrap();
        for (g, v) in values.iter().enumerate() {
            t.push_row((g + 1).to_string(), "6", vec![Some(fifteen_digits(*v))]).unwrap();
        }
        let back = parse_table(&table_to_csv(&t), &schema).unwrap().table;
        prop_assert_eq!(back.rows(), t.rows());
    }
}

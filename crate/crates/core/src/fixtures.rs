//! The 16-response storage-apple layout: fourteen Gamma VOC
//! concentrations, a binomial infection count (size 9) and a compound-Poisson
//! lesion area, with the published conditional-independence graph over
//! their random components.

use crate::dispersion::Family;
use crate::error::Result;
use crate::glmm::ResponseSpec;
use crate::graph::LabeledGraph;
use crate::simulate::{graph_to_sigma, MglmmSpec, SimResponse};

pub const INFECTION_PROPORTION: &str = "infection proportion";
pub const LESION_AREA: &str = "lesion area";
pub const BINOMIAL_SIZE: u32 = 9;
pub const LESION_POWER: f64 = 1.5;

/// The VOCs adjacent to the infection responses.
pub const BLANKET_VOCS: [&str; 4] = [
    "anisole",
    "3-pentanone",
    "2-methyl-1-propanol",
    "2-phenylethanol",
];

pub const PERIPHERAL_VOCS: [&str; 10] = [
    "ethanol",
    "acetone",
    "1-propanol",
    "pentane",
    "3-methylfuran",
    "ethyl 2-methylbutanoate",
    "styrene",
    "unknown",
    "1-ethyl-4-methoxybenzene",
    "3-methyl-1-butanol",
];

pub const WEEKS: [&str; 3] = ["6", "12", "18"];

/// Largest partial correlation for which the unit-diagonal precision
/// matrix on this graph is positive definite is about 0.198; the default
/// stays below it.
pub const DEFAULT_PARTIAL_CORRELATION: f64 = 0.18;

const EDGES: [(&str, &str); 36] = [
    (INFECTION_PROPORTION, LESION_AREA),
    ("anisole", "3-pentanone"),
    ("ethanol", "acetone"),
    (INFECTION_PROPORTION, "anisole"),
    ("anisole", "ethanol"),
    (LESION_AREA, "3-pentanone"),
    ("3-pentanone", "acetone"),
    (INFECTION_PROPORTION, "3-pentanone"),
    (LESION_AREA, "anisole"),
    ("anisole", "acetone"),
    ("ethanol", "3-pentanone"),
    ("2-methyl-1-propanol", "anisole"),
    ("2-methyl-1-propanol", "2-phenylethanol"),
    ("2-phenylethanol", INFECTION_PROPORTION),
    ("2-methyl-1-propanol", INFECTION_PROPORTION),
    ("2-phenylethanol", "anisole"),
    ("acetone", "pentane"),
    ("acetone", "3-methylfuran"),
    ("acetone", "1-propanol"),
    ("pentane", "3-methylfuran"),
    ("pentane", "1-propanol"),
    ("pentane", "3-pentanone"),
    ("3-methylfuran", "1-propanol"),
    ("3-methylfuran", "3-pentanone"),
    ("1-propanol", "3-pentanone"),
    ("2-phenylethanol", "ethyl 2-methylbutanoate"),
    ("ethyl 2-methylbutanoate", "styrene"),
    ("ethyl 2-methylbutanoate", "unknown"),
    ("ethyl 2-methylbutanoate", "1-ethyl-4-methoxybenzene"),
    ("ethyl 2-methylbutanoate", "3-methyl-1-butanol"),
    ("styrene", "unknown"),
    ("styrene", "1-ethyl-4-methoxybenzene"),
    ("styrene", "3-methyl-1-butanol"),
    ("unknown", "1-ethyl-4-methoxybenzene"),
    ("unknown", "3-methyl-1-butanol"),
    ("1-ethyl-4-methoxybenzene", "3-methyl-1-butanol"),
];

/// The fourteen VOCs (blanket first), then the two infection responses.
pub fn labels() -> Vec<String> {
    BLANKET_VOCS
        .iter()
        .chain(PERIPHERAL_VOCS.iter())
        .chain([INFECTION_PROPORTION, LESION_AREA].iter())
        .map(|s| s.to_string())
        .collect()
}

pub fn targets() -> Vec<String> {
    vec![INFECTION_PROPORTION.to_owned(), LESION_AREA.to_owned()]
}

pub fn storage_graph() -> LabeledGraph {
    LabeledGraph::from_edges(labels(), &EDGES).expect("static graph is valid")
}

pub fn response_specs() -> Vec<ResponseSpec> {
    labels()
        .into_iter()
        .map(|name| {
            let family = match name.as_str() {
                INFECTION_PROPORTION => Family::Binomial { size: BINOMIAL_SIZE },
                LESION_AREA => Family::CompoundPoisson { power: LESION_POWER },
                _ => Family::Gamma,
            };
            ResponseSpec::with_default_link(name, family).expect("valid pairing")
        })
        .collect()
}

/// Generative spec on the published graph: Sigma from [`graph_to_sigma`],
/// weeks 6, 12 and 18, and rising infection over time.
pub fn apple_storage_spec(groups: usize, partial_correlation: f64) -> Result<MglmmSpec> {
    let sigma = graph_to_sigma(&storage_graph(), partial_correlation)?;
    let responses = response_specs()
        .into_iter()
        .enumerate()
        .map(|(k, spec)| {
            let (fixed_effects, dispersion) = match spec.name.as_str() {
                INFECTION_PROPORTION => (vec![-1.5, 0.0, 1.5], 1.0),
                LESION_AREA => (vec![-1.0, 0.3, 1.0], 1.0),
                _ => {
                    let base = 0.1 * (k % 5) as f64;
                    (vec![base - 0.5, base, base + 0.3], 0.3)
                }
            };
            SimResponse {
                spec,
                fixed_effects,
                dispersion,
            }
        })
        .collect();
    Ok(MglmmSpec {
        responses,
        sigma,
        groups,
        time_levels: WEEKS.iter().map(|s| s.to_string()).collect(),
    })
}

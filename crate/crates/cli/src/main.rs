mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mglmm::data_io::{self, read_json, read_table, write_json, write_table, write_text, LoadedTable};
use mglmm::diagnostics::pit_uniformity;
use mglmm::dispersion::Family;
use mglmm::fixtures;
use mglmm::graph::{from_dot, induced_separation_statement, is_separator, minimal_markov_blanket, to_dot, LabeledGraph};
use mglmm::graph_select::{search_min_bic, GraphSearchResult, ModelClass};
use mglmm::mglmm::{fit_all, MglmmFit, MglmmOptions};
use mglmm::rng::Streams;
use mglmm::simulate::{simulate_dataset, MglmmSpec};
use mglmm::tweedie_index::{default_grid, select_power_index};
use mglmm::{Error, Result};
use serde::Serialize;

use config::RunConfig;

const FIT_KIND: &str = "mglmmFit";
const GRAPH_KIND: &str = "graphSearch";
const SPEC_KIND: &str = "mglmmSpec";

#[derive(Parser)]
#[command(name = "mglmm", version, about = "Multivariate GLMMs with graphical-model selection over random effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, env = "MGLMM_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for output files, created if missing.
    #[arg(long, env = "MGLMM_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; overrides `workerCount`.
    #[arg(long, env = "MGLMM_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every response's marginal GLMM and collect the random-effect predictions.
    Fit {
        /// Observation table (CSV).
        #[arg(long)]
        input: PathBuf,
        /// Power-index grid, comma separated; overrides `powerGrid`.
        #[arg(long, env = "MGLMM_GRID", value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Choose the power index of each compound-Poisson response.
    PowerIndex {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, env = "MGLMM_GRID", value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Select a graph over the random effects of a fit by minimum BIC.
    Graph {
        /// Fit document written by `fit`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, env = "MGLMM_MODEL_CLASS")]
        model_class: Option<ModelClass>,
        /// Vertices whose Markov blanket is reported, comma separated.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Check whether `--given` separates `--targets` from every other vertex.
    Separate {
        /// Graph as DOT or as a graph-search JSON document.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        given: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a dataset from a model spec or a built-in fixture.
    Simulate {
        /// Model spec document.
        #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
        input: Option<PathBuf>,
        #[arg(long)]
        fixture: Option<FixtureName>,
        /// Number of groups for `--fixture`.
        #[arg(long, default_value_t = 10)]
        groups: usize,
        /// Partial correlation on the fixture graph's edges.
        #[arg(long, default_value_t = fixtures::DEFAULT_PARTIAL_CORRELATION)]
        partial_correlation: f64,
        #[arg(long, env = "MGLMM_SEED")]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Pearson residuals and PIT uniformity tests for a fit.
    Diagnose {
        /// Fit document written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// The observation table the fit was made on.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, env = "MGLMM_SEED")]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureName {
    /// Sixteen-response apple-storage layout.
    AppleStorage,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit { input, grid, common } => cmd_fit(&input, grid, &common),
        Command::PowerIndex { input, grid, common } => cmd_power_index(&input, grid, &common),
        Command::Graph {
            input,
            model_class,
            targets,
            common,
        } => cmd_graph(&input, model_class, targets, &common),
        Command::Separate {
            input,
            targets,
            given,
            common,
        } => cmd_separate(&input, &targets, &given, &common),
        Command::Simulate {
            input,
            fixture,
            groups,
            partial_correlation,
            seed,
            common,
        } => cmd_simulate(input.as_deref(), fixture, groups, partial_correlation, seed, &common),
        Command::Diagnose {
            fit,
            input,
            seed,
            common,
        } => cmd_diagnose(&fit, &input, seed, &common),
    }
}

struct Context {
    config: RunConfig,
    out_dir: PathBuf,
    workers: usize,
}

fn context(common: &Common) -> Result<Context> {
    let config = RunConfig::load(common.config.as_deref())?;
    let workers = common.workers.or(config.worker_count).unwrap_or(1);
    if workers == 0 {
        return Err(Error::Input("worker count must be at least 1".into()));
    }
    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Error::Input(format!("cannot create {}: {e}", common.out_dir.display())))?;
    Ok(Context {
        config,
        out_dir: common.out_dir.clone(),
        workers,
    })
}

fn load_table(path: &Path, config: &RunConfig) -> Result<LoadedTable> {
    let loaded = read_table(path, &config.table_schema()?)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Input(format!("cannot start {workers} workers: {e}")))
}

fn cmd_fit(input: &Path, grid: Option<Vec<f64>>, common: &Common) -> Result<()> {
    let ctx = context(common)?;
    let table = load_table(input, &ctx.config)?.table;
    let opts = MglmmOptions {
        power_grid: Some(grid.or(ctx.config.power_grid.clone()).unwrap_or_else(default_grid)),
        workers: ctx.workers,
        fit: ctx.config.fit_options()?,
        standardize: ctx.config.standardize,
    };
    let fit = match fit_all(&table, &ctx.config.schema, &opts) {
        Ok(fit) => fit,
        Err(Error::MarginalFit {
            response,
            source,
            partial,
        }) => {
            if !partial.is_empty() {
                write_json("partialFits", &partial, ctx.out_dir.join("partial_fits.json"))?;
            }
            return Err(Error::MarginalFit {
                response,
                source,
                partial,
            });
        }
        Err(e) => return Err(e),
    };
    write_json(FIT_KIND, &fit, ctx.out_dir.join("fit.json"))?;
    write_text(ctx.out_dir.join("random_effects.csv"), &matrix_csv(&fit))?;
    for m in &fit.marginals {
        if !m.converged {
            eprintln!("warning: fit of '{}' did not converge", m.spec.name);
        }
    }
    println!(
        "fitted {} responses over {} groups",
        fit.marginals.len(),
        fit.re_matrix.group_ids().len()
    );
    Ok(())
}

fn matrix_csv(fit: &MglmmFit) -> String {
    let m = &fit.re_matrix;
    let mut out = csv_line(std::iter::once(data_io::GROUP_COLUMN.to_owned()).chain(m.response_names().iter().cloned()));
    for (g, row) in m.group_ids().iter().zip(m.values()) {
        out.push_str(&csv_line(std::iter::once(g.clone()).chain(row.iter().map(|v| v.to_string()))));
    }
    out
}

fn csv_line(fields: impl Iterator<Item = String>) -> String {
    let mut w = fields
        .map(|f| {
            if f.contains([',', '"', '\n']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f
            }
        })
        .collect::<Vec<_>>()
        .join(",");
    w.push('\n');
    w
}

fn cmd_power_index(input: &Path, grid: Option<Vec<f64>>, common: &Common) -> Result<()> {
    let ctx = context(common)?;
    let table = load_table(input, &ctx.config)?.table;
    let grid = grid.or(ctx.config.power_grid.clone()).unwrap_or_else(default_grid);
    let opts = ctx.config.fit_options()?;
    let specs: Vec<_> = ctx
        .config
        .schema
        .iter()
        .filter(|s| matches!(s.family, Family::CompoundPoisson { .. }))
        .collect();
    if specs.is_empty() {
        return Err(Error::Input("schema has no compound-Poisson response".into()));
    }
    let results = pool(ctx.workers)?.install(|| {
        specs
            .iter()
            .map(|s| select_power_index(&table, s, &grid, &opts))
            .collect::<Result<Vec<_>>>()
    })?;
    write_json("powerIndex", &results, ctx.out_dir.join("power_index.json"))?;
    for r in &results {
        println!(
            "{}: p = {}{}",
            r.response,
            r.chosen,
            if r.tie { " (tie, smaller index taken)" } else { "" }
        );
    }
    Ok(())
}

/// Targets for DOT output: explicit, else configured, else every
/// non-Gamma response.
fn graph_targets(fit: &MglmmFit, flag: Option<Vec<String>>, config: &RunConfig) -> Vec<String> {
    flag.or_else(|| config.targets.clone()).unwrap_or_else(|| {
        fit.marginals
            .iter()
            .filter(|m| m.spec.family != Family::Gamma)
            .map(|m| m.spec.name.clone())
            .collect()
    })
}

fn cmd_graph(input: &Path, model_class: Option<ModelClass>, targets: Option<Vec<String>>, common: &Common) -> Result<()> {
    let ctx = context(common)?;
    let fit: MglmmFit = read_json(FIT_KIND, input)?;
    let p = fit.re_matrix.response_names().len();
    if p < 3 {
        return Err(Error::Input(format!(
            "graph selection needs at least 3 responses, the fit has {p}"
        )));
    }
    let class = model_class.or(ctx.config.model_class).unwrap_or(ModelClass::Decomposable);
    let result = pool(ctx.workers)?.install(|| search_min_bic(&fit.re_matrix, class))?;
    let targets = graph_targets(&fit, targets, &ctx.config);
    write_json(GRAPH_KIND, &result, ctx.out_dir.join("graph.json"))?;
    write_text(ctx.out_dir.join("graph.dot"), &to_dot(&result.graph, &targets)?)?;
    if !targets.is_empty() {
        let mb = minimal_markov_blanket(&result.graph, &targets)?;
        write_json("markovBlanket", &mb, ctx.out_dir.join("blanket.json"))?;
        println!("{}", mb.statement);
    }
    println!(
        "{} graph with {} edges, BIC {:.4}",
        serde_json::to_value(class).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
        result.graph.edge_count(),
        result.bic
    );
    Ok(())
}

fn read_graph(path: &Path) -> Result<LabeledGraph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let result: GraphSearchResult = data_io::from_json(GRAPH_KIND, &text)?;
        Ok(result.graph)
    } else {
        from_dot(&text)
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SeparationReport {
    targets: Vec<String>,
    given: Vec<String>,
    others: Vec<String>,
    separated: bool,
    statement: Option<String>,
}

fn cmd_separate(input: &Path, targets: &[String], given: &[String], common: &Common) -> Result<()> {
    let ctx = context(common)?;
    let graph = read_graph(input)?;
    for v in targets.iter().chain(given) {
        graph.index_of(v)?;
    }
    let others: Vec<String> = graph
        .vertices()
        .iter()
        .filter(|v| !targets.contains(v) && !given.contains(v))
        .cloned()
        .collect();
    if others.is_empty() {
        return Err(Error::Input(
            "targets and given set cover every vertex; nothing is left to separate".into(),
        ));
    }
    let separated = is_separator(&graph, targets, &others, given)?;
    let report = SeparationReport {
        targets: targets.to_vec(),
        given: given.to_vec(),
        others: others.clone(),
        separated,
        statement: separated.then(|| induced_separation_statement(targets, &others, given)),
    };
    write_json("separation", &report, ctx.out_dir.join("separation.json"))?;
    println!("separated: {separated}");
    if let Some(s) = &report.statement {
        println!("{s}");
    }
    Ok(())
}

fn require_seed(flag: Option<u64>, config: &RunConfig) -> Result<u64> {
    flag.or(config.seed)
        .ok_or_else(|| Error::Input("a seed is required (--seed or `seed` in the config)".into()))
}

fn cmd_simulate(
    input: Option<&Path>,
    fixture: Option<FixtureName>,
    groups: usize,
    partial_correlation: f64,
    seed: Option<u64>,
    common: &Common,
) -> Result<()> {
    let ctx = context(common)?;
    let seed = require_seed(seed, &ctx.config)?;
    let spec: MglmmSpec = match (input, fixture) {
        (Some(path), _) => read_json(SPEC_KIND, path)?,
        (None, Some(FixtureName::AppleStorage)) => fixtures::apple_storage_spec(groups, partial_correlation)?,
        (None, None) => return Err(Error::Input("give --input or --fixture".into())),
    };
    let sim = simulate_dataset(&spec, seed)?;
    write_table(&sim.table, ctx.out_dir.join("data.csv"))?;
    write_json("groundTruth", &sim.truth, ctx.out_dir.join("truth.json"))?;
    let config = RunConfig {
        schema: spec.responses.iter().map(|r| r.spec.clone()).collect(),
        seed: Some(seed),
        ..RunConfig::default()
    };
    let mut text = serde_json::to_string_pretty(&config).map_err(|e| Error::Input(e.to_string()))?;
    text.push('\n');
    write_text(ctx.out_dir.join("config.json"), &text)?;
    println!(
        "simulated {} rows of {} responses",
        sim.table.len(),
        sim.table.response_names().len()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DiagnosticSummary {
    response: String,
    observations: usize,
    pearson_dispersion: f64,
    ks_statistic: f64,
    ks_p_value: f64,
    residual_file: String,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn cmd_diagnose(fit_path: &Path, input: &Path, seed: Option<u64>, common: &Common) -> Result<()> {
    let ctx = context(common)?;
    let seed = require_seed(seed, &ctx.config)?;
    let fit: MglmmFit = read_json(FIT_KIND, fit_path)?;
    let config = RunConfig {
        schema: fit.marginals.iter().map(|m| m.spec.clone()).collect(),
        ..RunConfig::default()
    };
    let table = load_table(input, &config)?.table;
    let streams = Streams::new(seed);
    let mut summaries = Vec::new();
    for (k, m) in fit.marginals.iter().enumerate() {
        let mut rng = streams.child("pit", &[k as u64]);
        let report = pit_uniformity(m, &table, &mut rng)?;
        let file = format!("residuals_{:02}_{}.csv", k + 1, file_stem(&m.spec.name));
        write_text(ctx.out_dir.join(&file), &report.to_csv())?;
        println!("{}: KS p-value {:.4}", m.spec.name, report.ks_p_value);
        summaries.push(DiagnosticSummary {
            response: report.response,
            observations: report.per_observation.len(),
            pearson_dispersion: m.pearson_dispersion,
            ks_statistic: report.ks_statistic,
            ks_p_value: report.ks_p_value,
            residual_file: file,
        });
    }
    write_json("diagnostics", &summaries, ctx.out_dir.join("diagnostics.json"))
}

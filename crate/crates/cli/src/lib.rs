//! Command dispatch for the `rck` binary.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rck_core::config::{load_config, LoadOptions, Model};
use rck_core::output::{format_real, to_canonical_json, write_csv};
use rck_core::rck::{path_map, rck_family, relative_measure, PathQuery};
use rck_core::scm::{
    apply_intervention, generate_ck, intervention_map, observational_measure, Intervention,
};
use rck_core::search::{search_section, Parametrization, SearchResult};
use rck_core::sheaf::{energy, is_global_section, Cochain0, DEFAULT_SECTION_TOL};
use rck_core::simulate::{run_simulate, Policy, Scenario};
use rck_core::{Error, GaussianMixture};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_BUDGET: usize = 10_000;
const SEARCH_HEADER: [&str; 5] = ["eval", "node", "edge", "disagreement", "energy"];

#[derive(Debug, Parser)]
#[command(
    name = "rck",
    version,
    about = "Relative causal knowledge on networks of linear-Gaussian SCMs"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Network configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed for `section --search` and `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tolerance for consistency and section checks.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Keep going when the configuration fails validation.
    #[arg(long, global = true)]
    allow_invalid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the configuration and print the report.
    Validate,
    /// Observational measure of every node (or one).
    Observe {
        #[arg(long)]
        node: Option<String>,
    },
    /// Interventional measure and intervention map at one node.
    Intervene {
        #[arg(long)]
        node: String,
        /// Intervention as JSON, or `@file`.
        #[arg(long)]
        intervention: String,
    },
    /// Causal knowledge of one node under a list of interventions.
    Ck {
        #[arg(long)]
        node: String,
        /// JSON array of interventions, or `@file`.
        #[arg(long)]
        interventions: Option<String>,
    },
    /// A node's measure as seen from another node along a path.
    Rck {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Comma-separated edge ids.
        #[arg(long, value_delimiter = ',', required = true)]
        edges: Vec<String>,
        /// JSON array of interventions at the source, or `@file`.
        #[arg(long)]
        interventions: Option<String>,
    },
    /// Global-section verdict, or a search for one with `--search`.
    Section {
        /// 0-cochain as a JSON object of node measures, or `@file`.
        #[arg(long, conflicts_with = "search")]
        cochain: Option<String>,
        /// Start from this scenario's initial interventions.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        search: bool,
        /// Free coefficients as JSON `{node: [{child, parent}]}`, or `@file`.
        #[arg(long)]
        free: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
    },
    /// Run a scenario and export its trajectory.
    Simulate {
        #[arg(long)]
        scenario: Option<String>,
    },
}

/// Outcome of a command that ran to completion.
struct Output {
    code: i32,
    body: String,
    /// Printed to stdout when the body goes to `--out`.
    summary: Option<String>,
}

enum Failure {
    Usage(String),
    Domain(Error),
    /// Validation failed; the report is still printed.
    Report(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(report) => match to_canonical_json(&report_json(&report)) {
                Ok(body) => Failure::Report(body),
                Err(e) => Failure::Domain(e),
            },
            e => Failure::Domain(e),
        }
    }
}

type CmdResult = Result<Output, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 on success, 1 on domain or validation failure, 2 on usage errors.
pub fn run_command<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(output) => match emit(&cli.common, &output, out) {
            Ok(()) => output.code,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_FAILURE
            }
        },
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Domain(e)) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            EXIT_FAILURE
        }
        Err(Failure::Report(body)) => {
            let _ = out.write_all(body.as_bytes());
            let _ = writeln!(err, "error: configuration failed validation");
            EXIT_FAILURE
        }
    }
}

fn emit(common: &Common, output: &Output, out: &mut dyn Write) -> std::io::Result<()> {
    match &common.out {
        Some(path) => {
            std::fs::write(path, &output.body)?;
            if let Some(summary) = &output.summary {
                out.write_all(summary.as_bytes())?;
            }
        }
        None => out.write_all(output.body.as_bytes())?,
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CmdResult {
    let common = &cli.common;
    if let Some(tol) = common.tol {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Failure::Usage(format!(
                "--tol must be finite and non-negative, got {tol}"
            )));
        }
    }
    let csv_ok = matches!(
        cli.command,
        Command::Simulate { .. } | Command::Section { search: true, .. }
    );
    if common.format == Format::Csv && !csv_ok {
        return Err(Failure::Usage(
            "--format csv is only available for `simulate` and `section --search`".into(),
        ));
    }
    let config = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config <path> is required".into()))?;
    let tol = common.tol.unwrap_or(DEFAULT_SECTION_TOL);

    if let Command::Validate = cli.command {
        let model = load_config(
            config,
            LoadOptions {
                allow_invalid: true,
                tol,
            },
        )?;
        let code = if model.report.is_clean() {
            EXIT_OK
        } else {
            EXIT_FAILURE
        };
        return json_output(&report_json(&model.report)).map(|o| Output { code, ..o });
    }

    let model = load_config(
        config,
        LoadOptions {
            allow_invalid: common.allow_invalid,
            tol,
        },
    )?;
    match &cli.command {
        Command::Validate => unreachable!(),
        Command::Observe { node } => observe(&model, node.as_deref()),
        Command::Intervene { node, intervention } => intervene(&model, node, intervention),
        Command::Ck {
            node,
            interventions,
        } => ck(&model, node, interventions.as_deref()),
        Command::Rck {
            source,
            target,
            edges,
            interventions,
        } => rck(&model, source, target, edges, interventions.as_deref()),
        Command::Section {
            cochain,
            scenario,
            search,
            free,
            budget,
        } => {
            if *search {
                section_search(
                    &model,
                    common,
                    scenario.as_deref(),
                    free.as_deref(),
                    *budget,
                )
            } else {
                section(&model, tol, cochain.as_deref(), scenario.as_deref())
            }
        }
        Command::Simulate { scenario } => simulate(&model, common, scenario.as_deref()),
    }
}

fn json_output(v: &Value) -> CmdResult {
    Ok(Output {
        code: EXIT_OK,
        body: to_canonical_json(v)?,
        summary: None,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v)
        .map_err(|e| Failure::Domain(Error::InvalidInput(format!("serialization failed: {e}"))))
}

fn report_json(report: &rck_core::Report) -> Value {
    json!({
        "clean": report.is_clean(),
        "violations": report.violations,
        "residuals": report.residuals,
    })
}

/// Reads a JSON argument given inline or as `@path`.
fn json_arg<T: serde::de::DeserializeOwned>(flag: &str, raw: &str) -> Result<T, Failure> {
    let text = match raw.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Failure::Domain(Error::Io(e)))?,
        None => raw.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| {
        Failure::Domain(Error::Config {
            path: flag.to_string(),
            message: e.to_string(),
        })
    })
}

fn observe(model: &Model, node: Option<&str>) -> CmdResult {
    let mut measures = BTreeMap::new();
    for (id, scm) in model.sheaf.node_stalks() {
        if node.is_none_or(|n| n == id) {
            measures.insert(id.clone(), observational_measure(scm)?);
        }
    }
    if let Some(n) = node {
        if measures.is_empty() {
            return Err(Error::UnknownId {
                kind: "node",
                id: n.to_string(),
            }
            .into());
        }
    }
    json_output(&json!({ "measures": to_value(&measures)? }))
}

fn intervene(model: &Model, node: &str, raw: &str) -> CmdResult {
    let iv: Intervention = json_arg("--intervention", raw)?;
    let scm = model.sheaf.node_stalk(node)?;
    let measure = observational_measure(&apply_intervention(scm, &iv)?)?;
    let map = intervention_map(scm, &iv)?;
    json_output(&json!({
        "node": node,
        "intervention": to_value(&iv)?,
        "measure": to_value(&measure)?,
        "map": to_value(&map)?,
    }))
}

fn interventions_arg(raw: Option<&str>) -> Result<Vec<Intervention>, Failure> {
    raw.map(|r| json_arg("--interventions", r))
        .transpose()
        .map(Option::unwrap_or_default)
}

fn ck(model: &Model, node: &str, raw: Option<&str>) -> CmdResult {
    let ivs = interventions_arg(raw)?;
    let ck = generate_ck(model.sheaf.node_stalk(node)?, &ivs)?;
    json_output(&json!({ "node": node, "ck": to_value(&ck)? }))
}

fn rck(
    model: &Model,
    source: &str,
    target: &str,
    edges: &[String],
    raw: Option<&str>,
) -> CmdResult {
    let edges: Vec<&str> = edges.iter().map(String::as_str).collect();
    let path = PathQuery::new(source, target, &edges);
    let scm = model.sheaf.node_stalk(source)?;
    let map = path_map(&model.sheaf, &path)?;
    let measure = relative_measure(&model.sheaf, &path, &observational_measure(scm)?)?;
    let mut v = json!({
        "path": to_value(&path)?,
        "map": to_value(&map)?,
        "measure": to_value(&measure)?,
    });
    if raw.is_some() {
        let ivs = interventions_arg(raw)?;
        let family = rck_family(&model.sheaf, &path, &generate_ck(scm, &ivs)?)?;
        v["interventions"] = to_value(&ivs)?;
        v["family"] = to_value(&family)?;
    }
    json_output(&v)
}

fn find_scenario<'a>(model: &'a Model, id: Option<&str>) -> Result<&'a Scenario, Failure> {
    match id {
        Some(id) => Ok(model.scenario(id)?),
        None => match model.scenarios.as_slice() {
            [only] => Ok(only),
            [] => Err(Failure::Usage("the configuration has no scenarios".into())),
            _ => Err(Failure::Usage(
                "several scenarios are defined; pick one with --scenario".into(),
            )),
        },
    }
}

fn section(model: &Model, tol: f64, cochain: Option<&str>, scenario: Option<&str>) -> CmdResult {
    let c0 = match (cochain, scenario) {
        (Some(raw), _) => {
            let values: BTreeMap<String, GaussianMixture> = json_arg("--cochain", raw)?;
            Cochain0::new(values)
        }
        (None, Some(id)) => {
            Cochain0::from_models(&model.scenario(id)?.start_models(&model.sheaf)?)?
        }
        (None, None) => Cochain0::observational(&model.sheaf)?,
    };
    let verdict = is_global_section(&model.sheaf, &c0, tol)?;
    let e = energy(&model.sheaf, &c0)?;
    json_output(&json!({ "energy": e, "verdict": to_value(&verdict)? }))
}

fn section_search(
    model: &Model,
    common: &Common,
    scenario: Option<&str>,
    free: Option<&str>,
    budget: usize,
) -> CmdResult {
    let (start, param, seed) = match (scenario, free) {
        (id, Some(raw)) => {
            let param: Parametrization = json_arg("--free", raw)?;
            let start = match id {
                Some(id) => model.scenario(id)?.start_models(&model.sheaf)?,
                None => model.sheaf.node_stalks().clone(),
            };
            let seed = id
                .map(|id| model.scenario(id).map(|s| s.seed))
                .transpose()?;
            (start, param, seed.unwrap_or(0))
        }
        (id, None) => {
            let s = find_scenario(model, id)?;
            let Policy::GreedyLocal { free } = &s.policy else {
                return Err(Failure::Usage(format!(
                    "scenario `{}` declares no free coefficients; pass --free",
                    s.id
                )));
            };
            (s.start_models(&model.sheaf)?, free.clone(), s.seed)
        }
    };
    let seed = common.seed.unwrap_or(seed);
    let result = search_section(&model.sheaf, &start, &param, seed, budget)?;
    let summary = search_json(&result, seed, budget)?;
    match common.format {
        Format::Json => Ok(Output {
            code: EXIT_OK,
            body: summary,
            summary: None,
        }),
        Format::Csv => Ok(Output {
            code: EXIT_OK,
            body: search_csv(&result)?,
            summary: Some(summary),
        }),
    }
}

fn search_json(result: &SearchResult, seed: u64, budget: usize) -> Result<String, Failure> {
    let mut v = to_value(result)?;
    v["seed"] = json!(seed);
    v["budget"] = json!(budget);
    Ok(to_canonical_json(&v)?)
}

fn search_csv(result: &SearchResult) -> Result<String, Failure> {
    let rows: Vec<Vec<String>> = result
        .trajectory
        .iter()
        .map(|r| {
            vec![
                r.eval.to_string(),
                r.node.clone(),
                r.edge.clone(),
                format_real(r.disagreement),
                format_real(r.energy),
            ]
        })
        .collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &SEARCH_HEADER, &rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn simulate(model: &Model, common: &Common, id: Option<&str>) -> CmdResult {
    let mut scenario = find_scenario(model, id)?.clone();
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    if let Some(tol) = common.tol {
        scenario.tol = tol;
    }
    let trajectory = run_simulate(&model.sheaf, &scenario)?;
    let mut csv = Vec::new();
    trajectory.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    let summary = to_canonical_json(&json!({
        "scenario": scenario.id,
        "seed": scenario.seed,
        "rounds": scenario.rounds,
        "energies": trajectory.energies,
        "final_energy": trajectory.energies.last(),
        "verdict": to_value(&trajectory.verdict)?,
        "models": to_value(&trajectory.models)?,
    }))?;
    // CSV goes to --out or stdout with --format csv; the summary goes to
    // stdout otherwise.
    let (body, summary) = match (common.format, &common.out) {
        (_, Some(_)) => (csv, Some(summary)),
        (Format::Csv, None) => (csv, None),
        (Format::Json, None) => (summary, None),
    };
    Ok(Output {
        code: EXIT_OK,
        body,
        summary,
    })
}

//! File-based command line front end: one subcommand per pipeline stage.
//!
//! Outputs land under `--out` with fixed names, next to a `manifest.json`
//! recording the subcommand, resolved options, SHA-256 digests of every input
//! file, and the seed actually used. Rerunning with the flags recorded in a
//! manifest reproduces the primary outputs byte for byte; stochastic
//! subcommands therefore refuse to invent a seed unless `--entropy ok`
//! explicitly opts in (the drawn seed still lands in the manifest).
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure (non-convergence, state guard exceeded).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::bayes::{
    self, BayesError, GaussianPrior, PoolPeriod, PosteriorSamples, SamplerConfig,
};
use crate::centrality::{centrality_report, CbMode, CentralityError, PairWeights};
use crate::coupled::{fit_coupled, trajectory_csv, CoupledError, FixedPointOptions};
use crate::ctp::{
    simulate_policy, solve_exact, CtpError, CtpQuery, ForcedState, DEFAULT_STATE_GUARD,
};
use crate::elicit::{elicit_prior, load_assessments, ElicitConfig, ElicitError};
use crate::glm::{
    build_design, fit_model, load_panel, save_panel, Coefficients, DeploymentPanel, GlmError,
    ModelSpec, ResponseWindow,
};
use crate::netmodel::{
    load_network, save_network, validate_file, EdgeKey, NetworkError, NetworkFile, NodeId,
    RoadNetwork, Severity,
};
use crate::routing::{shortest_path, RoutingError};
use crate::simgen::{generate_scenario, probabilities_csv, ScenarioConfig, SimgenError, Topology};

#[derive(Debug, Parser)]
#[command(name = "canbet", version, about = "Road networks under adversarial blocking: \
travel plans with recourse, blocking-aware centrality, and deployment models")]
struct Cli {
    /// Directory receiving outputs and the run manifest (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Cap on worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Pass `ok` to let a stochastic subcommand draw its own seed.
    #[arg(long, global = true, value_parser = ["ok"])]
    entropy: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a network file against the format invariants.
    Validate(ValidateArgs),
    /// Shortest route between two intersections, avoiding roads known blocked.
    Route(RouteArgs),
    /// Expected-cost-optimal travel plan when blockages are found on arrival.
    CtpSolve(CtpSolveArgs),
    /// Node and road centrality scores, including blocking-aware road scores.
    Centrality(CentralityArgs),
    /// Probit fit of road deployment outcomes on network covariates.
    Fit(FitArgs),
    /// Probit fit with a betweenness covariate recomputed to a fixed point.
    FitCoupled(FitCoupledArgs),
    /// Generate a synthetic network and deployment panel from known coefficients.
    Simulate(SimulateArgs),
    /// Period-by-period Bayesian update of the coefficient belief.
    Update(UpdateArgs),
    /// Turn one expert's road assessments into a coefficient prior.
    Elicit(ElicitArgs),
    /// Deployment probabilities for the next period from posterior draws.
    Predict(PredictArgs),
    /// Combine competing probability forecasts with multiplicative weights.
    Pool(PoolArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Network JSON file to check.
    #[arg(long)]
    network: PathBuf,
}

#[derive(Debug, Args)]
struct RouteArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Start intersection id.
    #[arg(long)]
    from: String,
    /// Destination intersection id.
    #[arg(long)]
    to: String,
    /// Comma list of roads known blocked, as FROM-TO pairs.
    #[arg(long, value_delimiter = ',')]
    blocked: Vec<String>,
}

#[derive(Debug, Args)]
struct CtpSolveArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Start intersection id.
    #[arg(long)]
    from: String,
    /// Destination intersection id.
    #[arg(long)]
    to: String,
    /// Wait cost at a blocked road until it reopens; `inf` forbids waiting.
    #[arg(long, default_value_t = f64::INFINITY)]
    xr: f64,
    /// Roads pinned to a known state, as FROM-TO=open or FROM-TO=blocked.
    #[arg(long, value_delimiter = ',')]
    forced: Vec<String>,
    /// Refuse networks with more than this many undetermined roads.
    #[arg(long, default_value_t = DEFAULT_STATE_GUARD)]
    guard: usize,
    /// Also walk the plan over this many simulated blockage draws.
    #[arg(long)]
    simulate: Option<usize>,
    /// RNG seed for --simulate.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CentralityArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Wait cost used by the blocking-aware road score.
    #[arg(long, default_value_t = f64::INFINITY)]
    xr: f64,
    /// Estimate the blocking-aware score from this many sampled realizations.
    #[arg(long)]
    samples: Option<usize>,
    /// RNG seed for --samples.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV of trip weights (`from,to,weight`); default weighs all pairs equally.
    #[arg(long)]
    trips: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Deployment panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Response period label; omit to pool all periods as ever-deployed.
    #[arg(long)]
    period: Option<String>,
    /// Lagged-outcome order K.
    #[arg(long, default_value_t = 0)]
    lags: usize,
    /// Ridge penalty on non-intercept coefficients.
    #[arg(long)]
    ridge: Option<f64>,
    /// Covariate blocks to include: node-local, node-global, edge-local,
    /// edge-global, or none. Default is all four.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct FitCoupledArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Deployment panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Edge-global column that carries the recomputed betweenness.
    #[arg(long)]
    cb_slot: usize,
    /// Response period label; omit to pool all periods as ever-deployed.
    #[arg(long)]
    period: Option<String>,
    /// Lagged-outcome order K.
    #[arg(long, default_value_t = 0)]
    lags: usize,
    /// Ridge penalty on non-intercept coefficients.
    #[arg(long)]
    ridge: Option<f64>,
    /// Covariate blocks to include (see `fit`).
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
    /// Stop when no probability moves by more than this.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Iteration cap for the fixed point.
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Weight kept on the previous probability iterate, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// Wait cost inside the betweenness computation.
    #[arg(long, default_value_t = f64::INFINITY)]
    xr: f64,
    /// Sample the betweenness from this many realizations instead of exactly.
    #[arg(long)]
    samples: Option<usize>,
    /// RNG seed for --samples.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Intersections for a random topology (needs --density).
    #[arg(long)]
    nodes: Option<usize>,
    /// Road probability per intersection pair, in (0, 1].
    #[arg(long)]
    density: Option<f64>,
    /// Grid topology as ROWSxCOLS, e.g. 3x4.
    #[arg(long)]
    grid: Option<String>,
    /// Number of deployment periods.
    #[arg(long)]
    periods: usize,
    /// Intercept of the generating model.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    /// Node-local coefficients (comma list; length sets the covariate count).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Vec<f64>,
    /// Node-global coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Vec<f64>,
    /// Road-local coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    gamma: Vec<f64>,
    /// Road-global coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta: Vec<f64>,
    /// Lag coefficients, most recent period first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    tau: Vec<f64>,
    /// Road-global slot fed the self-consistent betweenness each period.
    #[arg(long)]
    cb_slot: Option<usize>,
    /// Wait cost for the injected betweenness.
    #[arg(long, default_value_t = f64::INFINITY)]
    xr: f64,
    /// RNG seed for the scenario.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct UpdateArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Deployment panel CSV, one belief update per period.
    #[arg(long)]
    panel: PathBuf,
    /// Prior JSON to start from.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Start from a zero-mean prior with this variance instead (default 100).
    #[arg(long)]
    diffuse: Option<f64>,
    /// Lagged-outcome order K.
    #[arg(long, default_value_t = 0)]
    lags: usize,
    /// Covariate blocks to include (see `fit`).
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
    /// Warm-up steps discarded per period.
    #[arg(long)]
    warmup: Option<usize>,
    /// Kept posterior draws per period.
    #[arg(long)]
    draws: Option<usize>,
    /// RNG seed; period i samples with seed + i.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ElicitArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Assessment CSV (`road_from,road_to,mean,sd,expert_id`).
    #[arg(long)]
    assessments: PathBuf,
    /// Expert to use when the file holds several.
    #[arg(long)]
    expert: Option<String>,
    /// Observation variance of the probit regression behind the prior.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Total mixture repetitions; the first uses stated means, the rest draw.
    #[arg(long, default_value_t = 1000)]
    repetitions: usize,
    /// Covariate blocks to include (see `fit`).
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
    /// RNG seed for the Beta draws (needed when repetitions > 1).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Posterior draws CSV, one column per coefficient.
    #[arg(long)]
    samples: PathBuf,
    /// Deployment panel CSV supplying the lag history.
    #[arg(long)]
    panel: PathBuf,
    /// Lagged-outcome order K.
    #[arg(long, default_value_t = 0)]
    lags: usize,
    /// Covariate blocks to include (see `fit`).
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct PoolArgs {
    /// Two or more prediction CSVs (`road_from,road_to,period,probability`).
    #[arg(long, value_delimiter = ',', required = true)]
    predictions: Vec<PathBuf>,
    /// Deployment panel CSV with the realized outcomes.
    #[arg(long)]
    panel: PathBuf,
    /// Learning rate of the weight update.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
}

/// Failure classified by exit code.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

/// Keep `like`'s exit class but replace the message.
fn reclass(like: CliError, message: String) -> CliError {
    match like {
        CliError::Usage(_) => CliError::Usage(message),
        CliError::Data(_) => CliError::Data(message),
        CliError::Numerical(_) => CliError::Numerical(message),
    }
}

fn net_err(e: NetworkError) -> CliError {
    CliError::Data(e.to_string())
}

fn routing_err(e: RoutingError) -> CliError {
    CliError::Data(e.to_string())
}

fn ctp_err(e: CtpError) -> CliError {
    let msg = e.to_string();
    match e {
        CtpError::GuardExceeded { .. } => CliError::Numerical(msg),
        CtpError::BadRepairWait(_) | CtpError::NoRealizations => CliError::Usage(msg),
        _ => CliError::Data(msg),
    }
}

fn glm_err(e: GlmError) -> CliError {
    let msg = e.to_string();
    match e {
        GlmError::NonConvergence { .. }
        | GlmError::SingularInformation
        | GlmError::DegenerateResponse(_) => CliError::Numerical(msg),
        _ => CliError::Data(msg),
    }
}

fn centrality_err(e: CentralityError) -> CliError {
    let msg = e.to_string();
    match e {
        CentralityError::Network(inner) => net_err(inner),
        CentralityError::Routing(inner) => routing_err(inner),
        CentralityError::Ctp(inner) => ctp_err(inner),
        CentralityError::NoSamples => CliError::Usage(msg),
        _ => CliError::Data(msg),
    }
}

fn coupled_err(e: CoupledError) -> CliError {
    let msg = e.to_string();
    match e {
        CoupledError::Network(inner) => net_err(inner),
        CoupledError::Fit { source, .. } => reclass(glm_err(source), msg),
        CoupledError::Betweenness { source, .. } => reclass(centrality_err(source), msg),
        CoupledError::Oscillating { .. } => CliError::Numerical(msg),
        CoupledError::BadDamping(_) | CoupledError::BadTol(_) => CliError::Usage(msg),
    }
}

fn simgen_err(e: SimgenError) -> CliError {
    let msg = e.to_string();
    match e {
        SimgenError::Network(inner) => net_err(inner),
        SimgenError::Glm(inner) => reclass(glm_err(inner), msg),
        SimgenError::Betweenness(inner) => reclass(centrality_err(inner), msg),
        SimgenError::RetriesExhausted(_) | SimgenError::CbDiverged(_) => CliError::Numerical(msg),
        _ => CliError::Usage(msg),
    }
}

fn elicit_err(e: ElicitError) -> CliError {
    let msg = e.to_string();
    match e {
        ElicitError::Network(inner) => net_err(inner),
        ElicitError::Glm(inner) => reclass(glm_err(inner), msg),
        ElicitError::BadSigma | ElicitError::NoRepetitions | ElicitError::LagsUnsupported => {
            CliError::Usage(msg)
        }
        ElicitError::RankDeficient => CliError::Numerical(msg),
        _ => CliError::Data(msg),
    }
}

fn bayes_err(e: BayesError) -> CliError {
    let msg = e.to_string();
    match e {
        BayesError::Period { source, .. } => reclass(bayes_err(*source), msg),
        BayesError::Glm(inner) => reclass(glm_err(inner), msg),
        BayesError::NoDraws | BayesError::BadLearningRate | BayesError::NeedTwoSources => {
            CliError::Usage(msg)
        }
        _ => CliError::Data(msg),
    }
}

/// Everything `manifest.json` records about a run.
#[derive(Serialize)]
struct Manifest {
    subcommand: String,
    version: &'static str,
    options: BTreeMap<String, String>,
    /// Input path -> SHA-256 of the file bytes.
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    duration_seconds: f64,
}

impl Manifest {
    fn new(subcommand: &str) -> Self {
        Manifest {
            subcommand: subcommand.to_owned(),
            version: env!("CARGO_PKG_VERSION"),
            options: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seed: None,
            duration_seconds: 0.0,
        }
    }

    fn option(&mut self, key: &str, value: impl std::fmt::Display) {
        self.options.insert(key.to_owned(), value.to_string());
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Write `manifest.json` and return its path.
    fn finish(mut self, out: &Path, started: Instant) -> Result<PathBuf, CliError> {
        self.duration_seconds = started.elapsed().as_secs_f64();
        let path = out.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        write_file(&path, &text)?;
        Ok(path)
    }
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("failed to read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("failed to write {}: {e}", path.display())))
}

fn write_json(out: &Path, name: &str, doc: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).expect("document serializes");
    text.push('\n');
    write_file(&out.join(name), &text)
}

/// Infinite values have no JSON number; fall back to their display form.
fn finite_json(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

/// `A-B`, or a bare two-letter pair like `BD` for single-letter ids.
fn parse_edge(token: &str) -> Result<EdgeKey, CliError> {
    if let Some((a, b)) = token.split_once('-') {
        if !a.is_empty() && !b.is_empty() {
            return Ok(EdgeKey::new(a, b));
        }
    } else {
        let chars: Vec<char> = token.chars().collect();
        if chars.len() == 2 {
            return Ok(EdgeKey::new(chars[0].to_string(), chars[1].to_string()));
        }
    }
    Err(CliError::Usage(format!(
        "road `{token}` must be written FROM-TO"
    )))
}

fn parse_forced(token: &str) -> Result<(EdgeKey, ForcedState), CliError> {
    let (road, state) = token.split_once('=').ok_or_else(|| {
        CliError::Usage(format!("forced road `{token}` must be FROM-TO=open|blocked"))
    })?;
    let state = match state {
        "open" => ForcedState::Open,
        "blocked" => ForcedState::Blocked,
        other => {
            return Err(CliError::Usage(format!(
                "forced state `{other}` must be open or blocked"
            )))
        }
    };
    Ok((parse_edge(road)?, state))
}

fn parse_grid(token: &str) -> Result<Topology, CliError> {
    let bad = || CliError::Usage(format!("grid `{token}` must be ROWSxCOLS, e.g. 3x4"));
    let (rows, cols) = token
        .split_once(['x', 'X'])
        .ok_or_else(bad)?;
    Ok(Topology::Grid {
        rows: rows.parse().map_err(|_| bad())?,
        cols: cols.parse().map_err(|_| bad())?,
    })
}

/// A stochastic run needs an explicit seed unless `--entropy ok` opted into a
/// drawn one; either way the value used ends up in the manifest.
fn resolve_seed(seed: Option<u64>, entropy_ok: bool) -> Result<u64, CliError> {
    match seed {
        Some(s) => Ok(s),
        None if entropy_ok => Ok(rand::rng().random()),
        None => Err(CliError::Usage(
            "this run draws random numbers; pass --seed N, or --entropy ok to draw one".into(),
        )),
    }
}

/// Translate `--blocks`/`--lags`/`--ridge` into a model spec. An explicit
/// list starts from no blocks; `none` is the empty list spelled out.
fn model_spec(
    blocks: &Option<Vec<String>>,
    lags: usize,
    ridge: Option<f64>,
    cb_slot: Option<usize>,
) -> Result<ModelSpec, CliError> {
    let mut spec = ModelSpec {
        lags,
        cb_slot,
        ..ModelSpec::default()
    };
    if let Some(r) = ridge {
        spec.ridge = r;
    }
    if let Some(list) = blocks {
        spec.node_local = false;
        spec.node_global = false;
        spec.edge_local = false;
        spec.edge_global = false;
        for token in list {
            match token.as_str() {
                "node-local" => spec.node_local = true,
                "node-global" => spec.node_global = true,
                "edge-local" => spec.edge_local = true,
                "edge-global" => spec.edge_global = true,
                "none" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown covariate block `{other}` (node-local, node-global, \
                         edge-local, edge-global, or none)"
                    )))
                }
            }
        }
    }
    Ok(spec)
}

/// Column labels of the design implied by `spec`, mirroring the fit output.
fn column_labels(net: &RoadNetwork, spec: &ModelSpec) -> Vec<String> {
    let names = net.covariate_names();
    let mut labels = vec!["intercept".to_owned()];
    if spec.node_local {
        labels.extend(names.node_local.iter().map(|n| format!("node_local:{n}")));
    }
    if spec.node_global {
        labels.extend(names.node_global.iter().map(|n| format!("node_global:{n}")));
    }
    if spec.edge_local {
        labels.extend(names.edge_local.iter().map(|n| format!("edge_local:{n}")));
    }
    if spec.edge_global {
        labels.extend(names.edge_global.iter().map(|n| format!("edge_global:{n}")));
    }
    for k in 1..=spec.lags {
        labels.push(format!("lag{k}"));
    }
    labels
}

struct Ctx {
    out: PathBuf,
    entropy_ok: bool,
    started: Instant,
}

impl Ctx {
    fn finish(&self, manifest: Manifest, summary: String) -> Result<(), CliError> {
        let path = manifest.finish(&self.out, self.started)?;
        println!("{summary}");
        println!("manifest={}", path.display());
        Ok(())
    }
}

/// Entry point behind the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        out: cli.out,
        entropy_ok: cli.entropy.is_some(),
        started: Instant::now(),
    };
    fs::create_dir_all(&ctx.out).map_err(|e| {
        CliError::Usage(format!(
            "cannot create output directory {}: {e}",
            ctx.out.display()
        ))
    })?;
    match cli.command {
        Command::Validate(a) => cmd_validate(a, &ctx),
        Command::Route(a) => cmd_route(a, &ctx),
        Command::CtpSolve(a) => cmd_ctp_solve(a, &ctx),
        Command::Centrality(a) => cmd_centrality(a, &ctx),
        Command::Fit(a) => cmd_fit(a, &ctx),
        Command::FitCoupled(a) => cmd_fit_coupled(a, &ctx),
        Command::Simulate(a) => cmd_simulate(a, &ctx),
        Command::Update(a) => cmd_update(a, &ctx),
        Command::Elicit(a) => cmd_elicit(a, &ctx),
        Command::Predict(a) => cmd_predict(a, &ctx),
        Command::Pool(a) => cmd_pool(a, &ctx),
    }
}

fn cmd_validate(args: ValidateArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("validate");
    manifest.input(&args.network)?;
    let text = fs::read_to_string(&args.network)
        .map_err(|e| CliError::Data(format!("failed to read {}: {e}", args.network.display())))?;
    let file: NetworkFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("failed to parse {}: {e}", args.network.display())))?;
    let diags = validate_file(&file);
    for d in &diags {
        println!("{d}");
    }
    let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
    if errors > 0 {
        return Err(CliError::Data(format!(
            "{} invariant violation(s) in {}",
            errors,
            args.network.display()
        )));
    }
    let summary = format!(
        "ok intersections={} roads={} warnings={}",
        file.intersections.len(),
        file.roads.len(),
        diags.len()
    );
    ctx.finish(manifest, summary)
}

fn cmd_route(args: RouteArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("route");
    manifest.input(&args.network)?;
    manifest.option("from", &args.from);
    manifest.option("to", &args.to);
    let net = load_network(&args.network).map_err(net_err)?;
    let mut blocked = BTreeSet::new();
    for token in &args.blocked {
        let key = parse_edge(token)?;
        net.road(&key).map_err(net_err)?;
        blocked.insert(key);
    }
    let blocked_list: Vec<String> = blocked.iter().map(|k| k.to_string()).collect();
    manifest.option("blocked", blocked_list.join(","));

    let route = shortest_path(
        &net,
        &NodeId::new(args.from.clone()),
        &NodeId::new(args.to.clone()),
        &blocked,
    )
    .map_err(routing_err)?;
    let path: Vec<String> = route.nodes.iter().map(|n| n.to_string()).collect();
    write_json(
        &ctx.out,
        "solution.json",
        &json!({
            "from": args.from,
            "to": args.to,
            "blocked": blocked_list,
            "distance": route.cost,
            "path": path,
        }),
    )?;
    ctx.finish(
        manifest,
        format!("distance={:?} path={}", route.cost, path.join(",")),
    )
}

fn cmd_ctp_solve(args: CtpSolveArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("ctp-solve");
    manifest.input(&args.network)?;
    manifest.option("from", &args.from);
    manifest.option("to", &args.to);
    manifest.option("xr", args.xr);
    manifest.option("guard", args.guard);
    let net = load_network(&args.network).map_err(net_err)?;
    let mut query = CtpQuery::new(args.from.clone(), args.to.clone()).with_repair_wait(args.xr);
    query.guard_max_stochastic = args.guard;
    let mut forced_list = Vec::new();
    for token in &args.forced {
        let (key, state) = parse_forced(token)?;
        forced_list.push(format!(
            "{key}={}",
            if state == ForcedState::Blocked { "blocked" } else { "open" }
        ));
        query = query.with_forced(key, state);
    }
    manifest.option("forced", forced_list.join(","));

    let solution = solve_exact(&net, &query).map_err(ctp_err)?;
    let first_action = solution
        .first_action
        .as_ref()
        .map(|a| a.to_string())
        .unwrap_or_else(|| "none".to_owned());
    let mut doc = json!({
        "from": args.from,
        "to": args.to,
        "repair_wait": finite_json(args.xr),
        "forced": forced_list,
        "expected_cost": solution.expected_cost,
        "first_action": first_action,
        "node_expansions": solution.node_expansions,
        "policy": solution.policy,
    });
    if let Some(n) = args.simulate {
        let seed = resolve_seed(args.seed, ctx.entropy_ok)?;
        manifest.seed = Some(seed);
        manifest.option("simulate", n);
        let sim = simulate_policy(&net, &query, n, seed).map_err(ctp_err)?;
        doc["simulation"] = json!({
            "mean": sim.mean,
            "std_error": sim.std_error,
            "unreachable_fraction": sim.unreachable_fraction,
            "realizations": sim.realizations,
        });
    }
    write_json(&ctx.out, "solution.json", &doc)?;
    ctx.finish(
        manifest,
        format!(
            "expected_cost={:?} first_action={first_action}",
            solution.expected_cost
        ),
    )
}

#[derive(Deserialize)]
struct TripRecord {
    from: String,
    to: String,
    weight: f64,
}

fn load_trips(path: &Path) -> Result<Vec<(NodeId, NodeId, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("failed to read {}: {e}", path.display())))?;
    let mut trips = Vec::new();
    for (i, record) in reader.deserialize::<TripRecord>().enumerate() {
        let r = record
            .map_err(|e| CliError::Data(format!("{} record {}: {e}", path.display(), i + 2)))?;
        trips.push((NodeId::new(r.from), NodeId::new(r.to), r.weight));
    }
    Ok(trips)
}

fn cmd_centrality(args: CentralityArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("centrality");
    manifest.input(&args.network)?;
    manifest.option("xr", args.xr);
    let net = load_network(&args.network).map_err(net_err)?;
    let weights = match &args.trips {
        None => PairWeights::Equal,
        Some(path) => {
            manifest.input(path)?;
            PairWeights::Trips(load_trips(path)?)
        }
    };
    let mode = match args.samples {
        None => CbMode::Exact,
        Some(n) => {
            let seed = resolve_seed(args.seed, ctx.entropy_ok)?;
            manifest.seed = Some(seed);
            manifest.option("samples", n);
            CbMode::Sampled { samples: n, seed }
        }
    };
    let report = centrality_report(&net, args.xr, &weights, &mode).map_err(centrality_err)?;

    let mut roads = String::from("road,edge_betweenness,canadian_betweenness,method,std_error\n");
    for (key, s) in &report.roads {
        let se = s.canadian_std_error.map(|v| v.to_string()).unwrap_or_default();
        roads.push_str(&format!(
            "{key},{},{},{},{se}\n",
            s.betweenness, s.canadian_betweenness, report.mode
        ));
    }
    write_file(&ctx.out.join("centrality.csv"), &roads)?;
    let mut nodes = String::from("node,degree,closeness,betweenness\n");
    for (id, s) in &report.nodes {
        nodes.push_str(&format!("{id},{},{},{}\n", s.degree, s.closeness, s.betweenness));
    }
    write_file(&ctx.out.join("nodes.csv"), &nodes)?;
    ctx.finish(
        manifest,
        format!(
            "roads={} intersections={} mode={} skipped_pairs={}",
            report.roads.len(),
            report.nodes.len(),
            report.mode,
            report.skipped_pairs.len()
        ),
    )
}

fn record_model_options(manifest: &mut Manifest, spec: &ModelSpec, period: &Option<String>) {
    manifest.option("period", period.as_deref().unwrap_or("any"));
    manifest.option("lags", spec.lags);
    manifest.option("ridge", spec.ridge);
    let mut blocks = Vec::new();
    if spec.node_local {
        blocks.push("node-local");
    }
    if spec.node_global {
        blocks.push("node-global");
    }
    if spec.edge_local {
        blocks.push("edge-local");
    }
    if spec.edge_global {
        blocks.push("edge-global");
    }
    manifest.option("blocks", if blocks.is_empty() { "none".to_owned() } else { blocks.join(",") });
}

fn response_window(period: &Option<String>) -> ResponseWindow {
    match period {
        Some(label) => ResponseWindow::Period(label.clone()),
        None => ResponseWindow::AnyPeriod,
    }
}

fn cmd_fit(args: FitArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("fit");
    manifest.input(&args.network)?;
    manifest.input(&args.panel)?;
    let spec = model_spec(&args.blocks, args.lags, args.ridge, None)?;
    record_model_options(&mut manifest, &spec, &args.period);
    let net = load_network(&args.network).map_err(net_err)?;
    let panel = load_panel(&args.panel, None).map_err(glm_err)?;
    let model = fit_model(&net, &spec, &panel, &response_window(&args.period)).map_err(glm_err)?;

    let standard_errors: Option<Vec<f64>> = model
        .fit
        .covariance
        .as_ref()
        .map(|c| (0..c.nrows()).map(|i| c[(i, i)].sqrt()).collect());
    write_json(
        &ctx.out,
        "coefficients.json",
        &json!({
            "labels": model.design.labels,
            "theta": model.fit.theta.iter().copied().collect::<Vec<f64>>(),
            "standard_errors": standard_errors,
            "coefficients": serde_json::to_value(&model.coefficients).expect("serializes"),
            "log_likelihood": model.fit.log_likelihood,
            "iterations": model.fit.iterations,
            "max_abs_gradient": model.fit.max_abs_gradient,
            "separation": model.fit.separation,
        }),
    )?;
    ctx.finish(
        manifest,
        format!(
            "log_likelihood={:?} iterations={} separation={}",
            model.fit.log_likelihood, model.fit.iterations, model.fit.separation
        ),
    )
}

fn cmd_fit_coupled(args: FitCoupledArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("fit-coupled");
    manifest.input(&args.network)?;
    manifest.input(&args.panel)?;
    let spec = model_spec(&args.blocks, args.lags, args.ridge, Some(args.cb_slot))?;
    record_model_options(&mut manifest, &spec, &args.period);
    manifest.option("cb_slot", args.cb_slot);
    manifest.option("tol", args.tol);
    manifest.option("max_iter", args.max_iter);
    manifest.option("damping", args.damping);
    manifest.option("xr", args.xr);
    let net = load_network(&args.network).map_err(net_err)?;
    let panel = load_panel(&args.panel, None).map_err(glm_err)?;
    let mode = match args.samples {
        None => CbMode::Exact,
        Some(n) => {
            let seed = resolve_seed(args.seed, ctx.entropy_ok)?;
            manifest.seed = Some(seed);
            manifest.option("samples", n);
            CbMode::Sampled { samples: n, seed }
        }
    };
    let options = FixedPointOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        damping: args.damping,
        repair_wait: args.xr,
        weights: PairWeights::Equal,
        mode,
        window: response_window(&args.period),
    };
    let state = fit_coupled(&net, &spec, &panel, &options).map_err(coupled_err)?;
    if !state.converged {
        return Err(CliError::Numerical(format!(
            "fixed point did not converge within {} iterations (last max_delta {:e})",
            state.iteration, state.max_delta
        )));
    }

    write_json(
        &ctx.out,
        "coefficients.json",
        &json!({
            "labels": column_labels(&net, &spec),
            "coefficients": serde_json::to_value(&state.coefficients).expect("serializes"),
            "iterations": state.iteration,
            "max_delta": state.max_delta,
            "converged": state.converged,
        }),
    )?;
    write_file(&ctx.out.join("trajectory.csv"), &trajectory_csv(&state))?;
    let mut probs = String::from("road_from,road_to,probability\n");
    for (key, p) in &state.probabilities {
        probs.push_str(&format!("{},{},{p}\n", key.first(), key.second()));
    }
    write_file(&ctx.out.join("probabilities.csv"), &probs)?;
    ctx.finish(
        manifest,
        format!(
            "converged={} iterations={} max_delta={:e}",
            state.converged, state.iteration, state.max_delta
        ),
    )
}

fn cmd_simulate(args: SimulateArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("simulate");
    let topology = match (&args.nodes, &args.grid) {
        (Some(n), None) => {
            let density = args.density.ok_or_else(|| {
                CliError::Usage("--nodes needs --density to set road coverage".into())
            })?;
            manifest.option("topology", format!("random nodes={n} density={density}"));
            Topology::Random { nodes: *n, density }
        }
        (None, Some(g)) => {
            if args.density.is_some() {
                return Err(CliError::Usage("--density only applies to --nodes".into()));
            }
            manifest.option("topology", format!("grid {g}"));
            parse_grid(g)?
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --nodes (with --density) or --grid".into(),
            ))
        }
    };
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    manifest.option("mu", args.mu);
    manifest.option("alpha", join(&args.alpha));
    manifest.option("beta", join(&args.beta));
    manifest.option("gamma", join(&args.gamma));
    manifest.option("delta", join(&args.delta));
    manifest.option("tau", join(&args.tau));
    manifest.option("periods", args.periods);
    if let Some(slot) = args.cb_slot {
        manifest.option("cb_slot", slot);
        manifest.option("xr", args.xr);
    }
    let seed = resolve_seed(args.seed, ctx.entropy_ok)?;
    manifest.seed = Some(seed);

    let coefficients = Coefficients {
        mu: args.mu,
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        delta: args.delta,
        tau: args.tau,
        covariance: None,
    };
    let mut config = ScenarioConfig::new(topology, coefficients, args.periods, seed);
    config.cb_slot = args.cb_slot;
    config.repair_wait = args.xr;
    let scenario = generate_scenario(&config).map_err(simgen_err)?;

    save_network(&scenario.network, ctx.out.join("network.json")).map_err(net_err)?;
    save_panel(&scenario.panel, ctx.out.join("panel.csv")).map_err(glm_err)?;
    write_file(&ctx.out.join("probabilities.csv"), &probabilities_csv(&scenario))?;
    if let Some(trajectory) = &scenario.betweenness_trajectory {
        let mut text = String::from("road_from,road_to,period,betweenness\n");
        for (t, per_road) in trajectory.iter().enumerate() {
            let period = &scenario.panel.periods()[t];
            for (key, value) in per_road {
                text.push_str(&format!("{},{},{period},{value}\n", key.first(), key.second()));
            }
        }
        write_file(&ctx.out.join("betweenness.csv"), &text)?;
    }
    ctx.finish(
        manifest,
        format!(
            "intersections={} roads={} periods={}",
            scenario.network.node_count(),
            scenario.network.existing_roads().count(),
            args.periods
        ),
    )
}

fn prior_value(prior: &GaussianPrior) -> serde_json::Value {
    let dim = prior.dim();
    json!({
        "mean": prior.mean.iter().copied().collect::<Vec<f64>>(),
        "covariance": (0..dim)
            .map(|i| (0..dim).map(|j| prior.covariance[(i, j)]).collect::<Vec<f64>>())
            .collect::<Vec<_>>(),
    })
}

fn cmd_update(args: UpdateArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("update");
    manifest.input(&args.network)?;
    manifest.input(&args.panel)?;
    let spec = model_spec(&args.blocks, args.lags, None, None)?;
    record_model_options(&mut manifest, &spec, &None);
    let net = load_network(&args.network).map_err(net_err)?;
    let panel = load_panel(&args.panel, None).map_err(glm_err)?;

    let dim = column_labels(&net, &spec).len();
    let prior = match (&args.prior, args.diffuse) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("pass --prior or --diffuse, not both".into()))
        }
        (Some(path), None) => {
            manifest.input(path)?;
            let prior = bayes::load_prior(path).map_err(bayes_err)?;
            if prior.dim() != dim {
                return Err(CliError::Data(format!(
                    "prior in {} covers {} coefficients but the model has {dim}",
                    path.display(),
                    prior.dim()
                )));
            }
            prior
        }
        (None, variance) => {
            let v = variance.unwrap_or(100.0);
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Usage(format!(
                    "--diffuse variance must be positive, got {v}"
                )));
            }
            manifest.option("diffuse", v);
            GaussianPrior::diffuse(dim, v)
        }
    };

    let mut cfg = SamplerConfig::default();
    if let Some(w) = args.warmup {
        cfg.warmup = w;
    }
    if let Some(d) = args.draws {
        cfg.draws = d;
    }
    cfg.seed = resolve_seed(args.seed, ctx.entropy_ok)?;
    manifest.seed = Some(cfg.seed);
    manifest.option("warmup", cfg.warmup);
    manifest.option("draws", cfg.draws);

    let result = bayes::sequential_update(&prior, &net, &spec, &panel, &cfg).map_err(bayes_err)?;
    let last = result.priors.last().expect("one belief per period");
    write_file(&ctx.out.join("prior.json"), &bayes::prior_to_json(last))?;
    let periods: Vec<serde_json::Value> = panel
        .periods()
        .iter()
        .zip(&result.priors)
        .map(|(label, p)| {
            let mut value = prior_value(p);
            value["period"] = json!(label);
            value
        })
        .collect();
    write_json(&ctx.out, "priors.json", &json!(periods))?;
    let labels = column_labels(&net, &spec);
    let csv = bayes::samples_csv(&result.samples, &labels).map_err(bayes_err)?;
    write_file(&ctx.out.join("samples.csv"), &csv)?;

    let min_ess = result
        .samples
        .effective_sample_size
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    ctx.finish(
        manifest,
        format!(
            "periods={} acceptance_rate={:.3} min_ess={:.1} jittered={}",
            panel.periods().len(),
            result.samples.acceptance_rate,
            min_ess,
            if result.jittered_periods.is_empty() {
                "none".to_owned()
            } else {
                result.jittered_periods.join(",")
            }
        ),
    )
}

fn cmd_elicit(args: ElicitArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("elicit");
    manifest.input(&args.network)?;
    manifest.input(&args.assessments)?;
    manifest.option("sigma2", args.sigma2);
    manifest.option("repetitions", args.repetitions);
    let net = load_network(&args.network).map_err(net_err)?;
    let all = load_assessments(&args.assessments).map_err(elicit_err)?;
    let assessment = match &args.expert {
        Some(id) => all.iter().find(|a| a.expert == *id).ok_or_else(|| {
            CliError::Data(format!(
                "expert `{id}` not found in {}",
                args.assessments.display()
            ))
        })?,
        None if all.len() == 1 => &all[0],
        None => {
            return Err(CliError::Usage(format!(
                "{} experts in {}; pick one with --expert",
                all.len(),
                args.assessments.display()
            )))
        }
    };
    manifest.option("expert", &assessment.expert);

    let spec = model_spec(&args.blocks, 0, None, None)?;
    let seed = if args.repetitions > 1 {
        let seed = resolve_seed(args.seed, ctx.entropy_ok)?;
        manifest.seed = Some(seed);
        seed
    } else {
        0
    };
    let config = ElicitConfig {
        sigma2: args.sigma2,
        repetitions: args.repetitions,
        seed,
    };
    let prior = elicit_prior(&net, &spec, assessment, &config).map_err(elicit_err)?;
    write_file(&ctx.out.join("prior.json"), &bayes::prior_to_json(&prior))?;
    ctx.finish(
        manifest,
        format!(
            "expert={} coefficients={} repetitions={}",
            assessment.expert,
            prior.dim(),
            args.repetitions
        ),
    )
}

fn load_draws(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("failed to read {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let dim = header.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::Data(format!("{} record {}: {e}", path.display(), i + 2)))?;
        if record.len() != dim {
            return Err(CliError::Data(format!(
                "{} record {}: {} fields, expected {dim}",
                path.display(),
                i + 2,
                record.len()
            )));
        }
        for field in record.iter() {
            values.push(field.trim().parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "{} record {}: `{field}` is not a number",
                    path.display(),
                    i + 2
                ))
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Data(format!("{} holds no draws", path.display())));
    }
    Ok((header, DMatrix::from_row_iterator(rows, dim, values)))
}

fn cmd_predict(args: PredictArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("predict");
    manifest.input(&args.network)?;
    manifest.input(&args.samples)?;
    manifest.input(&args.panel)?;
    let spec = model_spec(&args.blocks, args.lags, None, None)?;
    record_model_options(&mut manifest, &spec, &None);
    let net = load_network(&args.network).map_err(net_err)?;
    let panel = load_panel(&args.panel, None).map_err(glm_err)?;

    // The design for "the period after the panel": append a phantom period
    // whose response is ignored, so the lag columns read the panel's tail.
    let mut phantom = "forecast".to_owned();
    while panel.periods().contains(&phantom) {
        phantom.push('+');
    }
    let mut periods = panel.periods().to_vec();
    periods.push(phantom.clone());
    let mut entries: Vec<(EdgeKey, String, bool)> = Vec::new();
    for road in panel.roads() {
        for (idx, label) in panel.periods().iter().enumerate() {
            if let Some(y) = panel.outcome(road, idx) {
                entries.push((road.clone(), label.clone(), y));
            }
        }
    }
    for (_, road) in net.existing_roads() {
        entries.push((road.key(), phantom.clone(), false));
    }
    let extended = DeploymentPanel::new(periods, entries).map_err(glm_err)?;
    let design = build_design(&net, &spec, &extended, &ResponseWindow::Period(phantom))
        .map_err(glm_err)?;

    let (header, draws) = load_draws(&args.samples)?;
    if header != design.labels {
        return Err(CliError::Data(format!(
            "{} has columns [{}] but the model needs [{}]",
            args.samples.display(),
            header.join(", "),
            design.labels.join(", ")
        )));
    }
    let samples = PosteriorSamples {
        draws,
        acceptance_rate: f64::NAN,
        seed: 0,
        effective_sample_size: Vec::new(),
    };
    let probs = bayes::posterior_predictive(&samples, &design.matrix).map_err(bayes_err)?;
    let mut text = String::from("road_from,road_to,probability\n");
    for (key, p) in design.roads.iter().zip(&probs) {
        text.push_str(&format!("{},{},{p}\n", key.first(), key.second()));
    }
    write_file(&ctx.out.join("predictions.csv"), &text)?;
    ctx.finish(
        manifest,
        format!("roads={} draws={}", design.roads.len(), samples.draws.nrows()),
    )
}

#[derive(Deserialize)]
struct PredictionRecord {
    road_from: String,
    road_to: String,
    period: String,
    probability: f64,
}

fn load_predictions(path: &Path) -> Result<BTreeMap<(EdgeKey, String), f64>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("failed to read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, record) in reader.deserialize::<PredictionRecord>().enumerate() {
        let r = record
            .map_err(|e| CliError::Data(format!("{} record {}: {e}", path.display(), i + 2)))?;
        let key = (EdgeKey::new(r.road_from, r.road_to), r.period);
        if map.insert(key.clone(), r.probability).is_some() {
            return Err(CliError::Data(format!(
                "{} repeats road {} in period {}",
                path.display(),
                key.0,
                key.1
            )));
        }
    }
    Ok(map)
}

fn cmd_pool(args: PoolArgs, ctx: &Ctx) -> Result<(), CliError> {
    let mut manifest = Manifest::new("pool");
    if args.predictions.len() < 2 {
        return Err(CliError::Usage(
            "pooling needs at least two --predictions files".into(),
        ));
    }
    for path in &args.predictions {
        manifest.input(path)?;
    }
    manifest.input(&args.panel)?;
    manifest.option("eta", args.eta);
    manifest.option(
        "predictions",
        args.predictions
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    let panel = load_panel(&args.panel, None).map_err(glm_err)?;
    let sources: Vec<BTreeMap<(EdgeKey, String), f64>> = args
        .predictions
        .iter()
        .map(|p| load_predictions(p))
        .collect::<Result<_, _>>()?;

    let roads: Vec<EdgeKey> = panel.roads().cloned().collect();
    let mut periods = Vec::new();
    let mut units_per_period = Vec::new();
    for (t, label) in panel.periods().iter().enumerate() {
        let mut outcomes = Vec::new();
        let mut units = Vec::new();
        for road in &roads {
            if let Some(y) = panel.outcome(road, t) {
                outcomes.push(y);
                units.push(road.clone());
            }
        }
        let mut predictions = Vec::new();
        for (si, source) in sources.iter().enumerate() {
            let mut row = Vec::with_capacity(units.len());
            for road in &units {
                let p = source.get(&(road.clone(), label.clone())).ok_or_else(|| {
                    CliError::Data(format!(
                        "{} has no prediction for road {road} in period {label}",
                        args.predictions[si].display()
                    ))
                })?;
                row.push(*p);
            }
            predictions.push(row);
        }
        periods.push(PoolPeriod {
            predictions,
            outcomes,
        });
        units_per_period.push(units);
    }
    let result = bayes::pool_predictions(&periods, args.eta).map_err(bayes_err)?;

    let source_names: Vec<String> = args
        .predictions
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let mut pooled = String::from("road_from,road_to,period,probability\n");
    for (t, label) in panel.periods().iter().enumerate() {
        for (road, p) in units_per_period[t].iter().zip(&result.pooled[t]) {
            pooled.push_str(&format!("{},{},{label},{p}\n", road.first(), road.second()));
        }
    }
    write_file(&ctx.out.join("pooled.csv"), &pooled)?;
    let mut weights = String::from("period,source,weight\n");
    let weight_labels: Vec<&str> = std::iter::once("initial")
        .chain(panel.periods().iter().map(String::as_str))
        .collect();
    for (label, row) in weight_labels.iter().zip(&result.weights) {
        for (name, w) in source_names.iter().zip(row) {
            weights.push_str(&format!("{label},{name},{w}\n"));
        }
    }
    write_file(&ctx.out.join("weights.csv"), &weights)?;
    let mut scores = String::from("period,source,brier\n");
    for (label, row) in panel.periods().iter().zip(&result.scores) {
        for (name, s) in source_names.iter().zip(row) {
            scores.push_str(&format!("{label},{name},{s}\n"));
        }
    }
    write_file(&ctx.out.join("scores.csv"), &scores)?;

    let final_weights = result.weights.last().expect("weights never empty");
    let best = source_names
        .iter()
        .zip(final_weights)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least two sources");
    ctx.finish(
        manifest,
        format!(
            "sources={} periods={} leader={} weight={:.3}",
            source_names.len(),
            panel.periods().len(),
            best.0,
            best.1
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_tokens_accept_dash_and_letter_pair_forms() {
        assert_eq!(parse_edge("B-D").unwrap(), EdgeKey::new("B", "D"));
        assert_eq!(parse_edge("BD").unwrap(), EdgeKey::new("B", "D"));
        assert_eq!(parse_edge("DB").unwrap(), EdgeKey::new("B", "D"));
        assert_eq!(parse_edge("R0C1-R0C2").unwrap(), EdgeKey::new("R0C1", "R0C2"));
        assert!(matches!(parse_edge("ABC"), Err(CliError::Usage(_))));
        assert!(matches!(parse_edge("-B"), Err(CliError::Usage(_))));
    }

    #[test]
    fn forced_tokens_parse_state() {
        let (key, state) = parse_forced("B-D=blocked").unwrap();
        assert_eq!(key, EdgeKey::new("B", "D"));
        assert_eq!(state, ForcedState::Blocked);
        let (_, state) = parse_forced("AC=open").unwrap();
        assert_eq!(state, ForcedState::Open);
        assert!(matches!(parse_forced("B-D=shut"), Err(CliError::Usage(_))));
        assert!(matches!(parse_forced("B-D"), Err(CliError::Usage(_))));
    }

    #[test]
    fn grid_tokens_parse_shape() {
        assert!(matches!(
            parse_grid("3x4").unwrap(),
            Topology::Grid { rows: 3, cols: 4 }
        ));
        assert!(matches!(
            parse_grid("2X2").unwrap(),
            Topology::Grid { rows: 2, cols: 2 }
        ));
        assert!(matches!(parse_grid("3"), Err(CliError::Usage(_))));
        assert!(matches!(parse_grid("axb"), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_seed_is_a_usage_error_unless_entropy_allowed() {
        assert_eq!(resolve_seed(Some(7), false).unwrap(), 7);
        assert!(matches!(resolve_seed(None, false), Err(CliError::Usage(_))));
        assert!(resolve_seed(None, true).is_ok());
    }

    #[test]
    fn block_lists_toggle_spec_fields() {
        let spec = model_spec(&None, 2, Some(0.5), None).unwrap();
        assert!(spec.node_local && spec.edge_global);
        assert_eq!((spec.lags, spec.ridge), (2, 0.5));

        let spec = model_spec(&Some(vec!["edge-local".into()]), 0, None, None).unwrap();
        assert!(!spec.node_local && !spec.node_global && !spec.edge_global);
        assert!(spec.edge_local);

        let spec = model_spec(&Some(vec!["none".into()]), 0, None, None).unwrap();
        assert!(!spec.node_local && !spec.node_global && !spec.edge_local && !spec.edge_global);

        assert!(matches!(
            model_spec(&Some(vec!["edges".into()]), 0, None, None),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn exit_codes_follow_failure_class() {
        assert_eq!(
            ctp_err(CtpError::GuardExceeded {
                tracked: 33,
                limit: 32
            })
            .code(),
            3
        );
        assert_eq!(glm_err(GlmError::UnknownPeriod("t9".into())).code(), 2);
        assert_eq!(
            glm_err(GlmError::NonConvergence {
                iterations: 50,
                max_gradient: 1.0
            })
            .code(),
            3
        );
        // Nested classification keeps the outer message but the inner class.
        let e = coupled_err(CoupledError::Fit {
            iteration: 3,
            source: GlmError::SingularInformation,
        });
        assert_eq!(e.code(), 3);
        assert!(e.message().contains("iteration 3"));
        assert_eq!(elicit_err(ElicitError::RankDeficient).code(), 3);
        assert_eq!(
            bayes_err(BayesError::Period {
                period: "t2".into(),
                source: Box::new(BayesError::Glm(GlmError::EmptyDesign)),
            })
            .code(),
            2
        );
    }

    #[test]
    fn file_digests_are_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.txt");
        fs::write(&path, "abc").unwrap();
        assert_eq!(
            file_digest(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn help_requests_are_not_errors() {
        let err = Cli::try_parse_from(["canbet", "--help"]).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::DisplayHelp);
        let err = Cli::try_parse_from(["canbet", "ctp-solve", "--help"]).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::DisplayHelp);
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from([
            "canbet", "route", "--network", "x.json", "--from", "A", "--to", "B", "--fast"
        ])
        .is_err());
    }

    #[test]
    fn comma_lists_split() {
        let cli = Cli::try_parse_from([
            "canbet", "route", "--network", "n.json", "--from", "A", "--to", "D", "--blocked",
            "B-D,C-D",
        ])
        .unwrap();
        match cli.command {
            Command::Route(args) => assert_eq!(args.blocked, ["B-D", "C-D"]),
            _ => unreachable!(),
        }
        let cli = Cli::try_parse_from([
            "canbet", "simulate", "--nodes", "6", "--density", "0.5", "--periods", "3", "--tau",
            "-0.5,0.25", "--seed", "1",
        ])
        .unwrap();
        match cli.command {
            Command::Simulate(args) => assert_eq!(args.tau, [-0.5, 0.25]),
            _ => unreachable!(),
        }
    }
}

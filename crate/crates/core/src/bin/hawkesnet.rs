use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hawkesnet::bench::{
    emit_plot_data, run_benchmark_estimation, run_benchmark_testing, BenchConfig, FusionStrength,
    TestMethod, TestingScenario, WeightStrategy,
};
use hawkesnet::config::{overlay, resolve, ConfigFile};
use hawkesnet::crosscov::{
    empirical_similarity_matrix, oracle_similarity_matrix, similarity_weights,
    thresholded_covariances, SimilarityWeights, ThresholdRule, DEFAULT_BIN_WIDTH, DEFAULT_MAX_LAG,
};
use hawkesnet::estimate::{
    default_grid, joint_fit, precompute_design, tune, FusionScale, SolverConfig, TauRule,
    TuneOptions,
};
use hawkesnet::infer::{
    bonferroni_test, hierarchical_test, least_squares_fits, model_thetas, score_statistics,
    Decorrelation, EdgeTrees, NodeTest, ScoreVariance, TestConfig, TestingDesign,
};
use hawkesnet::io::{self, EventOptions, WeightsDoc};
use hawkesnet::process::{Kernel, Link, MultiExperimentData};
use hawkesnet::simulate::{
    default_benchmark, simulate_multi_with, SimulationOptions, DEFAULT_MAX_EVENTS,
};
use hawkesnet::tree::{empirical_tree, SimilarityTree};
use hawkesnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hawkesnet",
    version,
    about = "Joint estimation and edge testing of multi-experiment Hawkes networks"
)]
struct Cli {
    /// JSON file with one section per subcommand; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "HAWKESNET_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate events from a model file or the benchmark networks.
    Simulate(SimulateArgs),
    /// Fusion weights from thresholded cross-covariances.
    Weights(WeightsArgs),
    /// Joint fit at given penalties.
    Estimate(EstimateArgs),
    /// Joint fit over a penalty grid, selected by eBIC.
    Tune(TuneArgs),
    /// Hierarchical (or Bonferroni) edge tests.
    Test(TestArgs),
    /// Edge selection study.
    BenchEst(BenchArgs),
    /// Power and error rate study of the edge tests.
    BenchTest(BenchArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EventArgs {
    /// CSV with columns experiment,unit,time (1-based indices).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Observation window per experiment, comma separated.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Number of units, when some never fire.
    #[arg(long)]
    units: Option<usize>,
}

impl EventArgs {
    fn load(&self) -> Result<MultiExperimentData> {
        let path = required(&self.events, "--events")?;
        io::read_events(
            path,
            &EventOptions {
                units: self.units,
                horizons: self.horizons.clone(),
            },
        )
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SimulateArgs {
    /// Model JSON.
    #[arg(long, conflicts_with = "benchmark")]
    model: Option<PathBuf>,
    /// Simulate Networks 1, 2 and 3 on this many units instead.
    #[arg(long)]
    benchmark: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    max_events: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the simulated model as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct WeightsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: EventArgs,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    max_lag: Option<usize>,
    /// pvalue:<cutoff> or abs:<kappa>.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: EventArgs,
    /// Weights JSON file, or auto, uniform, oracle:<model.json>.
    #[arg(long)]
    weights: Option<String>,
    /// linear or exp.
    #[arg(long)]
    link: Option<String>,
    /// Rate of the exponential kernel.
    #[arg(long)]
    kernel_rate: Option<f64>,
    /// Edge threshold: <k> or mult:<k> (k rho1), fixed:<tau>, rate:<k>,<c>.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Fitted model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    fit: FitArgs,
    #[arg(long)]
    rho1: Option<f64>,
    /// Defaults to rho1.
    #[arg(long)]
    rho2: Option<f64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TuneArgs {
    #[command(flatten)]
    #[serde(flatten)]
    fit: FitArgs,
    /// Number of rho1 values.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    grid_lo: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    /// rho2 / rho1 ratios, comma separated, or sqrt_m.
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    ebic_gamma: Option<f64>,
    /// CSV of rho1,rho2,ebic,converged.
    #[arg(long)]
    path: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: EventArgs,
    /// Fitted model JSON to plug in; unpenalized least squares otherwise.
    #[arg(long, alias = "model")]
    #[serde(alias = "model")]
    fit: Option<PathBuf>,
    /// Tree JSON file, or auto, identity, oracle:<model.json>.
    #[arg(long)]
    tree: Option<String>,
    /// Test every experiment separately at the Bonferroni level.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    bonferroni: Option<bool>,
    #[arg(long)]
    alpha: Option<f64>,
    /// sum, max or max:<d>.
    #[arg(long)]
    node_test: Option<String>,
    #[arg(long)]
    link: Option<String>,
    #[arg(long)]
    kernel_rate: Option<f64>,
    /// predictable or realized.
    #[arg(long)]
    variance: Option<String>,
    /// auto, projection or lasso.
    #[arg(long)]
    decorrelation: Option<String>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    rule: Option<String>,
    /// Rejection CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of every node p-value.
    #[arg(long)]
    pvalues: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct BenchArgs {
    /// Start from the full-scale settings.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    full: Option<bool>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Numbers of experiments (testing).
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    /// oracle, empirical, uniform, separate (estimation).
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<WeightStrategy>>,
    /// weak, strong, sqrt_m (estimation).
    #[arg(long, value_delimiter = ',')]
    fusion: Option<Vec<FusionStrength>>,
    /// bonferroni, oracle, empirical, scrambled (testing).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<TestMethod>>,
    /// Testing with no edges at all.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    all_null: Option<bool>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    node_test: Option<String>,
    /// Tidy CSV for plotting.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Domain(format!("{flag} is required")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| Error::Domain(format!("bad {what} {s:?}: {e}")))
}

fn parse_link(s: Option<&str>) -> Result<Link> {
    match s.unwrap_or("linear") {
        "linear" => Ok(Link::Linear),
        "exp" | "exponential" => Ok(Link::Exponential),
        o => Err(Error::Domain(format!(
            "unknown link {o:?}; use linear or exp"
        ))),
    }
}

fn threshold_rule(s: &Option<String>) -> Result<ThresholdRule> {
    s.as_deref()
        .map_or(Ok(ThresholdRule::default()), |r| r.parse())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let model = match (&a.model, a.benchmark) {
        (Some(path), _) => io::read_model(path)?,
        (None, Some(p)) => default_benchmark(p)?,
        (None, None) => return Err(Error::Domain("give --model or --benchmark".into())),
    };
    let m = model.num_experiments();
    let horizons = match a.horizons {
        Some(h) if h.len() == 1 => vec![h[0]; m],
        Some(h) => h,
        None => return Err(Error::Domain("--horizons is required".into())),
    };
    let opts = SimulationOptions {
        burn_in: a.burn_in,
        max_events: a.max_events.unwrap_or(DEFAULT_MAX_EVENTS),
    };
    let data = simulate_multi_with(&model, &horizons, a.seed.unwrap_or(0), opts)?;
    match &a.out {
        Some(path) => io::write_events(&data, path)?,
        None => io::write_events_to(&data, std::io::stdout().lock())?,
    }
    if let Some(path) = &a.model_out {
        io::write_model(&model, path)?;
    }
    log::info!(
        "simulated {} events in {m} experiments",
        data.experiments()
            .iter()
            .map(|e| e.total_events())
            .sum::<usize>()
    );
    Ok(())
}

fn weights(a: WeightsArgs) -> Result<()> {
    let data = a.input.load()?;
    let (bin_width, max_lag) = (
        a.bin_width.unwrap_or(DEFAULT_BIN_WIDTH),
        a.max_lag.unwrap_or(DEFAULT_MAX_LAG),
    );
    let rule = threshold_rule(&a.rule)?;
    let covs = thresholded_covariances(data.experiments(), bin_width, max_lag, rule)?;
    let w = similarity_weights(&covs)?;
    let sim = empirical_similarity_matrix(&covs)?;
    let rows =
        |d: nalgebra::DMatrix<f64>| d.row_iter().map(|r| r.iter().copied().collect()).collect();
    let doc = WeightsDoc {
        weights: rows(w.matrix()),
        similarity: rows(sim),
        edge_counts: covs.iter().map(|c| c.nnz()).collect(),
        rule: Some(rule),
        bin_width: Some(bin_width),
        max_lag: Some(max_lag),
    };
    write_json_or_stdout(&doc, a.out.as_deref())
}

fn write_json_or_stdout<T: Serialize>(v: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => io::write_json(v, p),
        None => {
            println!("{}", serde_json::to_string_pretty(v)?);
            Ok(())
        }
    }
}

fn fit_weights(spec: Option<&str>, data: &MultiExperimentData) -> Result<SimilarityWeights> {
    let m = data.num_experiments();
    match spec.unwrap_or("auto") {
        _ if m == 1 => Ok(SimilarityWeights::uniform(1)),
        "auto" => similarity_weights(&thresholded_covariances(
            data.experiments(),
            DEFAULT_BIN_WIDTH,
            DEFAULT_MAX_LAG,
            ThresholdRule::default(),
        )?),
        "uniform" => Ok(SimilarityWeights::uniform(m)),
        s => match s.strip_prefix("oracle:") {
            Some(path) => SimilarityWeights::from_similarity(&oracle_similarity_matrix(
                &io::read_model(Path::new(path))?,
            )),
            None => io::read_json::<WeightsDoc>(Path::new(s))?.to_weights(),
        },
    }
}

struct FitSetup {
    data: MultiExperimentData,
    kernel: Kernel,
    link: Link,
    weights: SimilarityWeights,
    solver: SolverConfig,
    tau: TauRule,
}

fn fit_setup(a: &FitArgs) -> Result<FitSetup> {
    let data = a.input.load()?;
    let kernel = Kernel::exponential(a.kernel_rate.unwrap_or(1.0))?;
    let d = SolverConfig::default();
    let solver = SolverConfig {
        max_iter: a.max_iter.unwrap_or(d.max_iter),
        tol: a.tol.unwrap_or(d.tol),
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        ..d
    };
    solver.validate()?;
    Ok(FitSetup {
        weights: fit_weights(a.weights.as_deref(), &data)?,
        link: parse_link(a.link.as_deref())?,
        tau: a
            .tau
            .as_deref()
            .map_or(Ok(TauRule::default()), |s| parse(s, "threshold rule"))?,
        data,
        kernel,
        solver,
    })
}

fn finish_fit(
    fit: &hawkesnet::estimate::FitResult,
    s: &FitSetup,
    out: Option<&Path>,
) -> Result<()> {
    let tau = s.tau.tau(fit.rho1, s.data.total_horizon());
    match out {
        Some(path) => io::write_fit(fit, &s.kernel, tau, path)?,
        None => println!("{}", io::fit_to_json(fit, &s.kernel, tau)?),
    }
    if !fit.converged() {
        let units: Vec<usize> = fit.nonconverged_units().iter().map(|u| u + 1).collect();
        return Err(Error::NonConvergence(format!(
            "units {units:?} hit the iteration limit"
        )));
    }
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let s = fit_setup(&a.fit)?;
    let rho1 = *required(&a.rho1, "--rho1")?;
    let design = precompute_design(&s.data, &s.kernel)?;
    let fit = joint_fit(
        &design,
        &s.weights,
        rho1,
        a.rho2.unwrap_or(rho1),
        s.link,
        &s.solver,
    )?;
    finish_fit(&fit, &s, a.fit.out.as_deref())
}

fn tune_cmd(a: TuneArgs) -> Result<()> {
    let s = fit_setup(&a.fit)?;
    let design = precompute_design(&s.data, &s.kernel)?;
    let scale = match a.fusion.as_deref() {
        None => FusionScale::default(),
        Some("sqrt_m" | "sqrtm") => FusionScale::SqrtM,
        Some(list) => FusionScale::Ratios(
            list.split(',')
                .map(|r| parse(r.trim(), "fusion ratio"))
                .collect::<Result<_>>()?,
        ),
    };
    let grid = default_grid(
        &design,
        a.grid.unwrap_or(10),
        a.grid_lo.unwrap_or(1e-3),
        a.grid_hi.unwrap_or(1.0),
        &scale,
    );
    let opts = TuneOptions {
        ebic_gamma: a.ebic_gamma.unwrap_or(1.0),
        ..TuneOptions::default()
    };
    let res = tune(&design, &s.weights, &grid, s.link, &s.solver, &opts)?;
    if let Some(path) = &a.path {
        io::write_tune_path(
            &res.path,
            std::io::BufWriter::new(std::fs::File::create(path)?),
        )?;
    }
    log::info!(
        "eBIC selects rho1 = {:.4e}, rho2 = {:.4e}",
        res.best.0,
        res.best.1
    );
    finish_fit(&res.fit, &s, a.fit.out.as_deref())
}

fn test_cmd(a: TestArgs) -> Result<()> {
    let data = a.input.load()?;
    let kernel = Kernel::exponential(a.kernel_rate.unwrap_or(1.0))?;
    let link = parse_link(a.link.as_deref())?;
    let variance = match a.variance.as_deref().unwrap_or("predictable") {
        "predictable" => ScoreVariance::Predictable,
        "realized" => ScoreVariance::Realized,
        o => {
            return Err(Error::Domain(format!(
                "unknown variance {o:?}; use predictable or realized"
            )))
        }
    };
    let decorrelation = match a.decorrelation.as_deref().unwrap_or("auto") {
        "auto" => Decorrelation::Auto,
        "projection" => Decorrelation::Projection,
        "lasso" => Decorrelation::Lasso,
        o => return Err(Error::Domain(format!("unknown decorrelation {o:?}"))),
    };
    let design = TestingDesign::build_with(&data, &kernel, link, variance)?;
    let thetas = match &a.fit {
        Some(path) => model_thetas(&io::read_model(path)?),
        None => least_squares_fits(&design)?,
    };
    let stats = score_statistics(&design, &thetas, decorrelation)?;
    let config = TestConfig {
        alpha: a.alpha.unwrap_or(0.05),
        node_test: a
            .node_test
            .as_deref()
            .map_or(Ok(NodeTest::Sum), |s| parse(s, "node test"))?,
        subset: vec![],
    };
    let z = if a.bonferroni.unwrap_or(false) {
        bonferroni_test(&stats, &config)?
    } else {
        let m = data.num_experiments();
        let trees = match a.tree.as_deref().unwrap_or("auto") {
            "auto" => {
                let covs = thresholded_covariances(
                    data.experiments(),
                    a.bin_width.unwrap_or(DEFAULT_BIN_WIDTH),
                    a.max_lag.unwrap_or(DEFAULT_MAX_LAG),
                    threshold_rule(&a.rule)?,
                )?;
                EdgeTrees::Shared(empirical_tree(&covs)?)
            }
            "identity" => EdgeTrees::Shared(SimilarityTree::identity(m)?),
            s => match s.strip_prefix("oracle:") {
                Some(path) => EdgeTrees::oracle(&io::read_model(Path::new(path))?, false)?,
                None => EdgeTrees::Shared(io::read_tree(Path::new(s))?),
            },
        };
        hierarchical_test(&trees, &stats, &config)?
    };
    if let Some(path) = &a.pvalues {
        io::write_pvalues(&z, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    match &a.out {
        Some(path) => {
            io::write_rejections(&z, std::io::BufWriter::new(std::fs::File::create(path)?))?
        }
        None => io::write_rejections(&z, std::io::stdout().lock())?,
    }
    log::info!("{} rejections", z.num_rejections());
    Ok(())
}

/// Defaults, then the file section, then the flags, as a `BenchConfig`.
fn bench_config(
    a: &BenchArgs,
    file: Option<&ConfigFile>,
    section: &str,
    testing: bool,
) -> Result<BenchConfig> {
    let a = resolve(a, file, section)?;
    let full = a.full.unwrap_or(false);
    let base = match (testing, full) {
        (false, false) => BenchConfig::default(),
        (false, true) => BenchConfig::full_estimation(),
        (true, false) => BenchConfig::testing(),
        (true, true) => BenchConfig::full_testing(),
    };
    let mut merged = serde_json::to_value(&base)?;
    if let Some(f) = file {
        merged = overlay(merged, f.section(section));
    }
    let mut flags = serde_json::to_value(&a)?;
    if let Value::Object(o) = &mut flags {
        for k in ["full", "out", "report", "all_null", "node_test"] {
            o.remove(k);
        }
    }
    let mut config: BenchConfig = serde_json::from_value(overlay(merged, flags))
        .map_err(|e| Error::Domain(format!("configuration section {section:?}: {e}")))?;
    if a.all_null.unwrap_or(false) {
        config.scenario = TestingScenario::AllNull;
    }
    if let Some(s) = &a.node_test {
        config.node_test = parse(s, "node test")?;
    }
    Ok(config)
}

fn bench(a: BenchArgs, file: Option<&ConfigFile>, testing: bool) -> Result<()> {
    let section = if testing { "bench_test" } else { "bench_est" };
    let config = bench_config(&a, file, section, testing)?;
    let a = resolve(&a, file, section)?;
    let report = if testing {
        run_benchmark_testing(&config)?
    } else {
        run_benchmark_estimation(&config)?
    };
    if let Some(path) = &a.report {
        io::write_json(&report, path)?;
    }
    match &a.out {
        Some(path) => emit_plot_data(&report, path),
        None => hawkesnet::bench::write_plot_data(&report, std::io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    }
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Simulate(a) => simulate(resolve(&a, file, "simulate")?),
        Command::Weights(a) => weights(resolve(&a, file, "weights")?),
        Command::Estimate(a) => estimate(resolve(&a, file, "estimate")?),
        Command::Tune(a) => tune_cmd(resolve(&a, file, "tune")?),
        Command::Test(a) => test_cmd(resolve(&a, file, "test")?),
        Command::BenchEst(a) => bench(a, file, false),
        Command::BenchTest(a) => bench(a, file, true),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence(_) | Error::Overflow(_) | Error::Runaway { .. } => 3,
        Error::Io(_) => 4,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 4,
        Error::Json(j) if j.is_io() => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! The `rck` command-line tool.
//!
//! Subcommands: `solve`, `simulate`, `frontier`, `gen`. Every output embeds
//! the full effective configuration, so a result can be reproduced from its
//! own file. Exit codes: 0 success, 1 a solver did not converge, 2 usage
//! error, 3 file error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::instances::{self, LognormalMixture, SamplerSpec, MIXTURE_VERSION};
use crate::kelly;
use crate::model::{BetVector, Estimate, FiniteOutcomeModel, ProblemFile, ReturnSampler, RiskSpec, Source};
use crate::montecarlo::{self, BoundValidation, FrontierRow, FrontierSpec, SimulationPlan, StatsSummary};
use crate::qrck;
use crate::rck::{self, Certificate};
use crate::rng::GENERATOR;
use crate::solver::{SolveReport, SolverConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "rck", version, about = "Kelly and risk-constrained Kelly bets with drawdown certificates")]
pub struct Cli {
    /// Worker threads for simulation. Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for a bet and report optimality residuals.
    Solve(SolveArgs),
    /// Simulate wealth trajectories of a bet.
    Simulate(SimulateArgs),
    /// Sweep the growth/drawdown trade-off.
    Frontier(FrontierArgs),
    /// Write a problem file or sampler spec.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kelly,
    Rck,
    Qrck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Finite,
    Mixture,
    Two,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Problem file or sampler-spec file (JSON).
    #[arg(long, conflicts_with = "instance")]
    pub problem: Option<PathBuf>,
    /// Generated instance: `finite`, `mixture`, or `two:PI:P`.
    #[arg(long)]
    pub instance: Option<String>,
    /// Number of bets of a generated instance, cash included.
    #[arg(long, default_value_t = instances::FINITE_DEFAULT_N)]
    pub n: usize,
    /// Number of outcomes of a generated finite instance.
    #[arg(long, default_value_t = instances::FINITE_DEFAULT_K)]
    pub k: usize,
    /// Seed of a generated instance. Defaults to `--seed`.
    #[arg(long)]
    pub instance_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RiskArgs {
    /// Risk aversion `lambda`.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    pub lambda: Option<f64>,
    /// Drawdown threshold; used with `--beta`.
    #[arg(long, requires = "beta")]
    pub alpha: Option<f64>,
    /// Cap on the probability of falling below `--alpha`.
    #[arg(long, requires = "alpha")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Cash floor.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Cap on the dual variable.
    #[arg(long)]
    pub dual_cap: Option<f64>,
    /// Iterations of the stochastic methods.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Samples per stochastic iteration.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Step constant `C` in `t_k = C / sqrt(k)`.
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub risk: RiskArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Bet file: a JSON array, `{"bet": [...]}`, or the output of `solve`.
    #[arg(long, conflicts_with = "from_solve", required_unless_present = "from_solve")]
    pub bet: Option<PathBuf>,
    /// Output of `solve`; supplies the bet, the problem and `lambda`.
    #[arg(long)]
    pub from_solve: Option<PathBuf>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// `lambda` for bound validation; overrides the value from `--from-solve`.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = montecarlo::DEFAULT_TRAJECTORIES)]
    pub trajectories: usize,
    #[arg(long, default_value_t = montecarlo::DEFAULT_HORIZON)]
    pub horizon: usize,
    #[arg(long, value_delimiter = ',', default_values_t = montecarlo::DEFAULT_ALPHA_GRID)]
    pub alpha_grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub stream_offset: u64,
    /// Summary JSON file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trajectory CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Vec<f64>,
    /// Threshold at which risk is reported.
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = montecarlo::DEFAULT_TRAJECTORIES)]
    pub trajectories: usize,
    #[arg(long, default_value_t = montecarlo::DEFAULT_HORIZON)]
    pub horizon: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Configuration JSON file; stderr when absent.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = instances::FINITE_DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = instances::FINITE_DEFAULT_K)]
    pub k: usize,
    /// Win probability of the two-outcome game.
    #[arg(long)]
    pub pi: Option<f64>,
    /// Payoff of the two-outcome game.
    #[arg(long = "P")]
    pub payoff: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Context attached to failures of reading or writing a file.
#[derive(Debug)]
struct FileError(String);

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn file_context(path: &Path) -> FileError {
    FileError(path.display().to_string())
}

/// Where a problem came from, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    File { path: String },
    Finite { n: usize, k: usize, seed: u64 },
    Mixture { n: usize, seed: u64, version: String },
    Two { pi: f64, payoff: f64 },
}

pub enum Problem {
    Finite(FiniteOutcomeModel),
    Mixture(LognormalMixture),
}

impl Problem {
    pub fn source(&self) -> Source<'_> {
        match self {
            Problem::Finite(m) => Source::Model(m),
            Problem::Mixture(s) => Source::Sampler(s),
        }
    }

    fn base_config(&self) -> SolverConfig {
        match self {
            Problem::Finite(_) => SolverConfig::default(),
            Problem::Mixture(_) => SolverConfig::sampled(),
        }
    }
}

fn parse_number(text: &str, what: &str) -> anyhow::Result<f64> {
    text.parse().map_err(|_| anyhow!("invalid {what} {text:?} in instance spec"))
}

impl ProblemArgs {
    fn config(&self, default_seed: u64) -> anyhow::Result<Option<ProblemConfig>> {
        let seed = self.instance_seed.unwrap_or(default_seed);
        if let Some(path) = &self.problem {
            return Ok(Some(ProblemConfig::File { path: path.display().to_string() }));
        }
        let Some(spec) = &self.instance else { return Ok(None) };
        let config = match spec.as_str() {
            "finite" => ProblemConfig::Finite { n: self.n, k: self.k, seed },
            "mixture" => ProblemConfig::Mixture { n: self.n, seed, version: MIXTURE_VERSION.into() },
            other => match other.split(':').collect::<Vec<_>>().as_slice() {
                ["two", pi, p] => ProblemConfig::Two {
                    pi: parse_number(pi, "probability")?,
                    payoff: parse_number(p, "payoff")?,
                },
                _ => bail!("unknown instance {other:?}; expected finite, mixture, or two:PI:P"),
            },
        };
        Ok(Some(config))
    }
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| file_context(path))?;
    serde_json::from_str(&text).with_context(|| file_context(path))
}

pub fn load_problem(config: &ProblemConfig) -> anyhow::Result<Problem> {
    Ok(match config {
        ProblemConfig::File { path } => {
            let path = Path::new(path);
            let value = read_json(path)?;
            if value.get("kind").is_some() {
                let spec: SamplerSpec = serde_json::from_value(value).with_context(|| file_context(path))?;
                Problem::Mixture(LognormalMixture::from_spec(&spec).with_context(|| file_context(path))?)
            } else {
                let file: ProblemFile = serde_json::from_value(value).with_context(|| file_context(path))?;
                Problem::Finite(FiniteOutcomeModel::from_problem_file(file).with_context(|| file_context(path))?)
            }
        }
        ProblemConfig::Finite { n, k, seed } => Problem::Finite(instances::gen_finite(*n, *k, *seed)?),
        ProblemConfig::Mixture { n, seed, version } => Problem::Mixture(LognormalMixture::from_spec(&SamplerSpec {
            kind: "mixture".into(),
            n: *n,
            seed: *seed,
            version: version.clone(),
        })?),
        ProblemConfig::Two { pi, payoff } => Problem::Finite(instances::gen_two_outcome(*pi, *payoff)?),
    })
}

impl SolverArgs {
    fn apply(&self, mut config: SolverConfig) -> anyhow::Result<SolverConfig> {
        if let Some(eps) = self.eps {
            config.eps = eps;
        }
        if let Some(cap) = self.dual_cap {
            config.dual_cap = cap;
        }
        if let Some(iters) = self.iters {
            config.max_iters = iters;
        }
        if let Some(batch) = self.batch {
            config.batch_size = batch;
        }
        if let Some(step) = self.step {
            config.step_constant = step;
        }
        config.validate()?;
        Ok(config)
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| file_context(p)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveEcho {
    pub version: String,
    pub generator: String,
    pub method: Method,
    pub problem: ProblemConfig,
    pub risk: RiskSpec,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOutput {
    pub command: String,
    pub config: SolveEcho,
    pub report: SolveReport,
    /// `E (r'b)^-lambda` of the returned bet under the problem distribution,
    /// exact for finite problems and a held-out estimate otherwise.
    pub risk_check: Estimate,
    /// Drawdown guarantees, present when `lambda > 0` and `risk_check <= 1`.
    pub certificate: Option<Vec<Certificate>>,
    /// Markowitz risk aversion reproducing a quadratic bet.
    pub markowitz_gamma: Option<f64>,
}

fn cmd_solve(args: &SolveArgs) -> anyhow::Result<u8> {
    let problem_config = args
        .problem
        .config(args.seed)?
        .ok_or_else(|| anyhow!("one of --problem or --instance is required"))?;
    let risk = match (args.risk.lambda, args.risk.alpha, args.risk.beta) {
        (Some(l), _, _) => RiskSpec::from_lambda(l)?,
        (None, Some(a), Some(b)) => RiskSpec::from_alpha_beta(a, b)?,
        _ if args.method == Method::Kelly => RiskSpec::from_lambda(0.0)?,
        _ => bail!("--method {:?} needs --lambda or --alpha with --beta", args.method),
    };
    if args.method == Method::Kelly && risk.lambda != 0.0 {
        bail!("--lambda, --alpha and --beta apply to rck and qrck");
    }
    let problem = load_problem(&problem_config)?;
    let config = args.solver.apply(problem.base_config())?;
    let lambda = risk.lambda;
    let mut markowitz_gamma = None;
    let report = match (&problem, args.method) {
        (Problem::Finite(m), Method::Kelly) => kelly::solve_finite(m, &config)?,
        (Problem::Mixture(s), Method::Kelly) => kelly::solve_sampled(s, s.dim(), &config)?,
        (Problem::Finite(m), Method::Rck) => rck::solve_finite_rck(m, lambda, &config)?,
        (Problem::Mixture(s), Method::Rck) => rck::solve_sampled_rck(s, s.dim(), lambda, &config)?,
        (_, Method::Qrck) => {
            let moments = match &problem {
                Problem::Finite(m) => qrck::MomentEstimate::from_model(m),
                Problem::Mixture(s) => qrck::estimate_sampled_moments(s, config.moment_samples)?,
            };
            let report = qrck::solve_qrck(&moments, lambda, &config)?;
            markowitz_gamma = qrck::markowitz_gamma_of_qrck(&report, &moments).ok();
            report
        }
    };
    let eval = problem.source().evaluation_model(config.eval_samples)?;
    let risk_check = rck::risk_value(&eval, &report.bet, lambda);
    let certificate = if lambda > 0.0 && risk_check.mean <= 1.0 {
        let grid = match risk.alpha {
            Some(a) => vec![a],
            None => montecarlo::DEFAULT_ALPHA_GRID.to_vec(),
        };
        Some(
            grid.into_iter()
                .map(|a| rck::certify(&report.bet, lambda, a, risk_check.mean))
                .collect::<crate::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let converged = report.converged;
    let output = SolveOutput {
        command: "solve".into(),
        config: SolveEcho {
            version: VERSION.into(),
            generator: GENERATOR.into(),
            method: args.method,
            problem: problem_config,
            risk,
            seed: args.seed,
            solver: config,
        },
        report,
        risk_check,
        certificate,
        markowitz_gamma,
    };
    write_output(args.out.as_deref(), &pretty(&output)?)?;
    Ok(if converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Extracts a bet from a JSON array, `{"bet": [...]}`, or a `solve` output.
fn bet_from_value(value: &Value) -> Option<Value> {
    match value {
        Value::Array(_) => Some(value.clone()),
        Value::Object(map) => map
            .get("bet")
            .cloned()
            .or_else(|| map.get("report").and_then(|r| r.get("bet")).cloned()),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateEcho {
    pub version: String,
    pub generator: String,
    pub problem: ProblemConfig,
    pub bet: BetVector,
    pub lambda: Option<f64>,
    pub plan: SimulationPlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub command: String,
    pub config: SimulateEcho,
    pub summary: StatsSummary,
    pub validation: Option<BoundValidation>,
}

fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<u8> {
    let (bet_path, solve_output) = match (&args.bet, &args.from_solve) {
        (Some(p), _) => (p, None),
        (None, Some(p)) => {
            let value = read_json(p)?;
            let output: SolveOutput = serde_json::from_value(value).with_context(|| file_context(p))?;
            (p, Some(output))
        }
        (None, None) => bail!("one of --bet or --from-solve is required"),
    };
    let bet = match &solve_output {
        Some(out) => out.report.bet.clone(),
        None => {
            let value = read_json(bet_path)?;
            let raw = bet_from_value(&value)
                .ok_or_else(|| anyhow!("no bet vector found"))
                .with_context(|| file_context(bet_path))?;
            serde_json::from_value(raw).with_context(|| file_context(bet_path))?
        }
    };
    let problem_config = match args.problem.config(args.seed)? {
        Some(c) => c,
        None => solve_output
            .as_ref()
            .map(|o| o.config.problem.clone())
            .ok_or_else(|| anyhow!("--bet needs --problem or --instance"))?,
    };
    let lambda = args.lambda.or_else(|| {
        solve_output.as_ref().map(|o| o.config.risk.lambda).filter(|l| *l > 0.0)
    });
    let problem = load_problem(&problem_config)?;
    let plan = SimulationPlan {
        trajectories: args.trajectories,
        horizon: args.horizon,
        alpha_grid: args.alpha_grid.clone(),
        seed: args.seed,
        stream_offset: args.stream_offset,
    };
    let stats = montecarlo::simulate(problem.source(), &bet, &plan)?;
    let validation = lambda.map(|l| montecarlo::validate_bound(&stats, l)).transpose()?;
    if let Some(path) = &args.csv {
        let mut buf = Vec::new();
        stats.write_csv(&mut buf)?;
        write_output(Some(path), &buf)?;
    }
    let output = SimulateOutput {
        command: "simulate".into(),
        config: SimulateEcho {
            version: VERSION.into(),
            generator: GENERATOR.into(),
            problem: problem_config,
            bet,
            lambda,
            plan,
        },
        summary: stats.summary(),
        validation,
    };
    write_output(args.out.as_deref(), &pretty(&output)?)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierEcho {
    pub command: String,
    pub version: String,
    pub generator: String,
    pub problem: ProblemConfig,
    pub spec: FrontierSpec,
    pub plan: SimulationPlan,
    pub solver: SolverConfig,
    pub rows: Vec<FrontierRow>,
}

fn cmd_frontier(args: &FrontierArgs) -> anyhow::Result<u8> {
    let problem_config = args
        .problem
        .config(args.seed)?
        .ok_or_else(|| anyhow!("one of --problem or --instance is required"))?;
    let problem = load_problem(&problem_config)?;
    let config = args.solver.apply(problem.base_config())?;
    let spec = FrontierSpec { lambdas: args.lambdas.clone(), fractions: args.fractions.clone(), alpha: args.alpha };
    let plan = SimulationPlan {
        trajectories: args.trajectories,
        horizon: args.horizon,
        alpha_grid: vec![args.alpha],
        seed: args.seed,
        stream_offset: 0,
    };
    let rows = montecarlo::frontier(problem.source(), &spec, &plan, &config)?;
    let mut csv = Vec::new();
    montecarlo::write_frontier_csv(&rows, &mut csv)?;
    write_output(args.out.as_deref(), &csv)?;
    let converged = rows.iter().all(|r| r.converged);
    let echo = FrontierEcho {
        command: "frontier".into(),
        version: VERSION.into(),
        generator: GENERATOR.into(),
        problem: problem_config,
        spec,
        plan,
        solver: config,
        rows,
    };
    let meta = pretty(&echo)?;
    match &args.meta {
        Some(p) => write_output(Some(p), &meta)?,
        None => io::stderr().write_all(&meta)?,
    }
    Ok(if converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenEcho {
    pub command: String,
    pub version: String,
    pub generator: String,
    pub problem: ProblemConfig,
}

#[derive(Serialize)]
struct GenOutput<T: Serialize> {
    #[serde(flatten)]
    body: T,
    meta: GenEcho,
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<u8> {
    let problem_config = match args.kind {
        Kind::Finite => ProblemConfig::Finite { n: args.n, k: args.k, seed: args.seed },
        Kind::Mixture => ProblemConfig::Mixture { n: args.n, seed: args.seed, version: MIXTURE_VERSION.into() },
        Kind::Two => ProblemConfig::Two {
            pi: args.pi.ok_or_else(|| anyhow!("--kind two needs --pi"))?,
            payoff: args.payoff.ok_or_else(|| anyhow!("--kind two needs --P"))?,
        },
    };
    let meta = GenEcho {
        command: "gen".into(),
        version: VERSION.into(),
        generator: GENERATOR.into(),
        problem: problem_config.clone(),
    };
    let bytes = match load_problem(&problem_config)? {
        Problem::Finite(m) => pretty(&GenOutput { body: m.to_problem_file(), meta })?,
        Problem::Mixture(s) => pretty(&GenOutput { body: s.spec(), meta })?,
    };
    write_output(args.out.as_deref(), &bytes)?;
    Ok(EXIT_OK)
}

/// Exit code of a failed command: 3 when a file could not be read, parsed
/// or written, 2 otherwise.
pub fn exit_code_of(err: &anyhow::Error) -> u8 {
    let io_failure = err.chain().any(|cause| {
        cause.downcast_ref::<io::Error>().is_some()
            || matches!(cause.downcast_ref::<crate::Error>(), Some(crate::Error::Io(_) | crate::Error::Csv(_)))
    });
    if io_failure || err.downcast_ref::<FileError>().is_some() {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<u8> {
    let run = || match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Frontier(a) => cmd_frontier(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match cli.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build()?.install(run),
        None => run(),
    }
}

/// Parses `args`, runs the command, reports errors on stderr, and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_of(&e)
        }
    }
}

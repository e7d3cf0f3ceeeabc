//! Command line entry points: `simulate`, `batch`, `genpool` and `serve`.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prefkit::acquisition::{AcquisitionKind, CostModel};
use prefkit::batch::{BatchConfig, BatchMethod};
use prefkit::experiment::{
    run_batch_comparison, run_simulation, EnvSpec, ExperimentConfig, ExperimentError, QueryKindSpec, SpaceSpec,
};
use prefkit::simenv::{gen_pool, LDSSpec, NoiseMode};

/// Exit code for invalid configurations.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "prefkit", version, about = "Active reward learning from comparative feedback")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulated elicitation runs; prints a metric table.
    Simulate(SimArgs),
    /// Compares batch generation methods on identical candidate sets.
    Batch(SimArgs),
    /// Writes a random LDS trajectory pool.
    Genpool(GenArgs),
    /// Runs the elicitation HTTP service.
    Serve(ServeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EnvArg {
    Lds,
    Pool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum KindArg {
    Pair,
    Choice,
    Weak,
    Scale,
    Ranking,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum AcqArg {
    Random,
    Vr,
    WorstVr,
    Mi,
    MaxRegret,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Greedy,
    Medoids,
    BoundaryMedoids,
    SuccessiveElimination,
    Dpp,
    /// One worst-case volume removal query at a time.
    Sequential,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NoiseArg {
    Oracle,
    Noisy,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SpaceArg {
    Linear,
    OmegaAlpha,
    OmegaDelta,
    Mixture,
}

/// Flags override a `--config` file, which overrides the LDS defaults.
#[derive(Args, Debug, Clone)]
struct SimArgs {
    /// Experiment config as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    env: Option<EnvArg>,
    #[arg(long)]
    dim: Option<usize>,
    /// Pool file, implies `--env pool`.
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long, value_enum)]
    query_kind: Option<KindArg>,
    /// Items per choice or ranking query.
    #[arg(long)]
    query_size: Option<usize>,
    /// Slider step ε of scale queries.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, value_enum)]
    acq: Option<AcqArg>,
    /// Batch methods; several are compared by `batch`.
    #[arg(long, value_enum, value_delimiter = ',')]
    batch_method: Vec<MethodArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    reduced_size: Option<usize>,
    #[arg(long)]
    dpp_gamma: Option<f64>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Constant per-query cost.
    #[arg(long)]
    cost: Option<f64>,
    /// Interpretability cost offset.
    #[arg(long, conflicts_with = "cost")]
    eta: Option<f64>,
    #[arg(long, value_enum)]
    truth: Option<SpaceArg>,
    #[arg(long, value_enum)]
    learner: Option<SpaceArg>,
    /// Mixture modes for mixture spaces.
    #[arg(long, default_value_t = 2)]
    modes: usize,
    #[arg(long)]
    candidates: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::Pool { .. } => CliError::Config(e.to_string()),
            e => CliError::Run(e.to_string()),
        }
    }
}

fn method(m: MethodArg) -> Option<BatchMethod> {
    match m {
        MethodArg::Greedy => Some(BatchMethod::Greedy),
        MethodArg::Medoids => Some(BatchMethod::Medoids),
        MethodArg::BoundaryMedoids => Some(BatchMethod::BoundaryMedoids),
        MethodArg::SuccessiveElimination => Some(BatchMethod::SuccessiveElimination),
        MethodArg::Dpp => Some(BatchMethod::DppMode),
        MethodArg::Sequential => None,
    }
}

fn space(s: SpaceArg, modes: usize) -> SpaceSpec {
    match s {
        SpaceArg::Linear => SpaceSpec::Linear,
        SpaceArg::OmegaAlpha => SpaceSpec::OmegaAlpha,
        SpaceArg::OmegaDelta => SpaceSpec::OmegaDelta,
        SpaceArg::Mixture => SpaceSpec::Mixture { modes },
    }
}

fn build_config(a: &SimArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::lds(a.dim.unwrap_or(4), AcquisitionKind::MutualInformation),
    };
    let env = a.env.or(a.pool.as_ref().map(|_| EnvArg::Pool));
    match env {
        Some(EnvArg::Pool) => {
            let path = a.pool.clone().ok_or_else(|| CliError::Config("--env pool needs --pool".into()))?;
            cfg.env = EnvSpec::PoolFile { path };
        }
        Some(EnvArg::Lds) | None => {
            if let EnvSpec::Lds { dim, pool_size } = &mut cfg.env {
                *dim = a.dim.unwrap_or(*dim);
                *pool_size = a.pool_size.unwrap_or(*pool_size);
            } else if env.is_some() {
                cfg.env = EnvSpec::Lds { dim: a.dim.unwrap_or(4), pool_size: a.pool_size.unwrap_or(1000) };
            }
        }
    }
    if let Some(k) = a.query_kind {
        cfg.query_kind = match k {
            KindArg::Pair => QueryKindSpec::Pair,
            KindArg::Choice => QueryKindSpec::Choice { size: a.query_size.unwrap_or(3) },
            KindArg::Weak => QueryKindSpec::Weak,
            KindArg::Scale => QueryKindSpec::Scale { step: a.step.unwrap_or(0.1) },
            KindArg::Ranking => QueryKindSpec::Ranking { size: a.query_size.unwrap_or(6) },
        };
    }
    if let Some(acq) = a.acq {
        cfg.acquisition = match acq {
            AcqArg::Random => AcquisitionKind::Random,
            AcqArg::Vr => AcquisitionKind::VolumeRemoval,
            AcqArg::WorstVr => AcquisitionKind::WorstCaseVolumeRemoval,
            AcqArg::Mi => AcquisitionKind::MutualInformation,
            AcqArg::MaxRegret => AcquisitionKind::MaxRegret,
        };
    }
    let batch_flags = !a.batch_method.is_empty() || a.k.is_some() || a.reduced_size.is_some() || a.dpp_gamma.is_some();
    if batch_flags {
        let mut b = cfg.batch.clone().unwrap_or_default();
        if let Some(m) = a.batch_method.first().copied().and_then(method) {
            b.method = m;
        }
        b.k = a.k.unwrap_or(b.k);
        b.reduced_size = a.reduced_size.unwrap_or(b.reduced_size);
        b.dpp_gamma = a.dpp_gamma.unwrap_or(b.dpp_gamma);
        cfg.batch = Some(b);
    }
    cfg.n_queries = a.queries.unwrap_or(cfg.n_queries);
    cfg.n_seeds = a.seeds.unwrap_or(cfg.n_seeds);
    cfg.n_candidates = a.candidates.unwrap_or(cfg.n_candidates);
    cfg.workers = a.workers.unwrap_or(cfg.workers);
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.mh.seed = s;
    }
    if let Some(n) = a.noise {
        cfg.noise = match n {
            NoiseArg::Oracle => NoiseMode::Oracle,
            NoiseArg::Noisy => NoiseMode::ModelNoisy,
        };
    }
    if let Some(c) = a.cost {
        cfg.cost = CostModel::Constant { c };
    }
    if let Some(eta) = a.eta {
        cfg.cost = CostModel::Interpretability { eta };
    }
    if let Some(t) = a.truth {
        cfg.truth_space = space(t, a.modes);
    }
    if let Some(l) = a.learner {
        cfg.learner_space = space(l, a.modes);
    }
    validated(cfg)
}

/// Any failure found before work starts is a config error.
fn validated(cfg: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Run(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Run(e.to_string())),
    }
}

fn simulate(a: &SimArgs) -> Result<(), CliError> {
    let cfg = build_config(a)?;
    if a.batch_method.len() > 1 {
        return Err(CliError::Config("simulate takes one --batch-method; use `batch` to compare".into()));
    }
    if a.batch_method == [MethodArg::Sequential] {
        return Err(CliError::Config("sequential is a comparison baseline; omit --batch-method instead".into()));
    }
    if a.dry_run {
        return emit(&a.out, &format!("{}\n", serde_json::to_string_pretty(&cfg).expect("config serializes")));
    }
    emit(&a.out, &run_simulation(&cfg)?.to_tsv())
}

fn batch(a: &SimArgs) -> Result<(), CliError> {
    let mut a = a.clone();
    if a.batch_method.is_empty() {
        a.batch_method = vec![
            MethodArg::Sequential,
            MethodArg::Greedy,
            MethodArg::Medoids,
            MethodArg::BoundaryMedoids,
            MethodArg::SuccessiveElimination,
            MethodArg::Dpp,
        ];
    }
    if a.acq.is_none() && a.config.is_none() {
        a.acq = Some(AcqArg::WorstVr);
    }
    let mut cfg = build_config(&a)?;
    if cfg.batch.is_none() {
        cfg.batch = Some(BatchConfig::default());
        cfg = validated(cfg)?;
    }
    if a.dry_run {
        return emit(&a.out, &format!("{}\n", serde_json::to_string_pretty(&cfg).expect("config serializes")));
    }
    let methods: Vec<Option<BatchMethod>> = a.batch_method.iter().map(|&m| method(m)).collect();
    emit(&a.out, &run_batch_comparison(&cfg, &methods)?.to_tsv())
}

fn genpool(a: &GenArgs) -> Result<(), CliError> {
    if a.dim == 0 {
        return Err(CliError::Config("--dim must be positive".into()));
    }
    let pool = gen_pool::<f64>(LDSSpec { dim: a.dim }, a.size, a.seed).map_err(|e| CliError::Config(e.to_string()))?;
    emit(&a.out, &format!("{}\n", pool.to_json()))
}

fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Run(e.to_string()))?;
    eprintln!("listening on http://{}", a.addr);
    rt.block_on(prefkit_service::serve(a.addr)).map_err(|e| CliError::Run(e.to_string()))
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let res = match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Batch(a) => batch(a),
        Cmd::Genpool(a) => genpool(a),
        Cmd::Serve(a) => serve(a),
    };
    match res {
        Ok(()) => 0,
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            EXIT_CONFIG
        }
        Err(CliError::Run(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fwerk_core::{Error, ErrorCategory};

use crate::config::RunConfig;
use crate::output::RunLog;

#[derive(Debug, Parser)]
#[command(
    name = "fwerk",
    version,
    about = "Local significance levels for correlated GLM score tests"
)]
struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory
    #[arg(short, long, global = true)]
    out_dir: Option<PathBuf>,

    /// Master random seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score statistics, local levels and adjusted p-values
    Analyze(AnalyzeArgs),
    /// AR1 experiment, null calibration or synthetic data sets
    Simulate(SimulateArgs),
    /// Permutation estimate of the max-statistic cutoff
    Maxt(MaxtArgs),
    /// Estimate the banded correlation of the statistics only
    Corr(CorrArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Maxt(_) => "maxt",
            Command::Corr(_) => "corr",
        }
    }
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Directory holding phenotype.txt, genotypes.tsv and optionally covariates.tsv
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    phenotype: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    genotypes: Option<PathBuf>,
    /// Response family: logistic or normal
    #[arg(long)]
    family: Option<String>,
}

#[derive(Debug, Args)]
struct BandArgs {
    /// Band width: correlations up to lag width-1 are estimated
    #[arg(long)]
    bandwidth: Option<usize>,
    /// exact or genotype-only
    #[arg(long)]
    correlation_mode: Option<String>,
    /// Cut blocks where every correlation across the cut is below this
    #[arg(long)]
    block_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    band_args: BandArgs,
    /// Familywise error rate
    #[arg(long)]
    alpha: Option<f64>,
    /// Methods: bonferroni, sidak, order (order k), order2..order6, maxt
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Order used for a bare `order` method
    #[arg(short, long)]
    k: Option<usize>,
    /// Marker p-value table (id, p, optional chrom:bp) instead of raw data
    #[arg(long)]
    pvalues: Option<PathBuf>,
    /// Band file to pair with --pvalues
    #[arg(long)]
    band: Option<PathBuf>,
    /// Levels only, for this many independent markers
    #[arg(long)]
    markers: Option<usize>,
    /// Stratum labels for maxt, one per individual
    #[arg(long)]
    strata: Option<PathBuf>,
    /// Permutations for maxt
    #[arg(short = 'b', long)]
    permutations: Option<usize>,
}

#[derive(Debug, Args)]
struct MaxtArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(short = 'b', long)]
    permutations: Option<usize>,
    /// Confidence of the binomial interval
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long)]
    strata: Option<PathBuf>,
    /// Also write every permutation maximum
    #[arg(long)]
    write_samples: bool,
}

#[derive(Debug, Args)]
struct CorrArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    band_args: BandArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// AR1 comparison of approximation orders
    #[arg(long)]
    ar1: bool,
    #[arg(long)]
    rho: Option<f64>,
    /// start:end:step or a comma list
    #[arg(long)]
    rho_grid: Option<String>,
    /// Orders for the AR1 table
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// Samples for the full-joint column (0 skips it)
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Empirical FWER of the order-k rule on null data sets
    #[arg(long)]
    null_calibration: bool,
    /// Write one synthetic data set to the output directory
    #[arg(long)]
    gwas: bool,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(short, long)]
    m: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Inclusive block length range, e.g. 1,10
    #[arg(long, value_delimiter = ',')]
    block_length: Option<Vec<usize>>,
    #[arg(long)]
    within_block_rho: Option<f64>,
    #[arg(long)]
    chromosomes: Option<usize>,
    #[arg(long)]
    family: Option<String>,
    #[command(flatten)]
    band_args: BandArgs,
}

macro_rules! set {
    ($cfg:ident, $src:expr => $($field:ident),+) => {
        $(if let Some(v) = &$src.$field { $cfg.$field = v.clone().into(); })+
    };
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set!(cfg, self => data_dir, phenotype, covariates, genotypes, family);
    }
}

impl BandArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set!(cfg, self => bandwidth, correlation_mode, block_threshold);
    }
}

impl Cli {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        set!(cfg, self => threads, out_dir, seed);
        match &self.command {
            Command::Analyze(a) => {
                a.input.apply(&mut cfg);
                a.band_args.apply(&mut cfg);
                set!(cfg, a => alpha, methods, k, pvalues, band, markers, strata, permutations);
            }
            Command::Maxt(a) => {
                a.input.apply(&mut cfg);
                set!(cfg, a => alpha, permutations, confidence, strata);
                cfg.write_samples |= a.write_samples;
            }
            Command::Corr(a) => {
                a.input.apply(&mut cfg);
                a.band_args.apply(&mut cfg);
            }
            Command::Simulate(a) => {
                a.band_args.apply(&mut cfg);
                set!(cfg, a => rho, rho_grid, orders, mc_samples, n, m, replicates, k, alpha, within_block_rho, chromosomes, family);
                if let Some(b) = &a.block_length {
                    let [lo, hi] = b[..] else {
                        return Err(Error::InvalidArgument(format!(
                            "--block-length takes two values, got {}",
                            b.len()
                        ))
                        .into());
                    };
                    cfg.block_length = (lo, hi);
                }
                cfg.ar1 |= a.ar1;
                cfg.null_calibration |= a.null_calibration;
                cfg.gwas |= a.gwas;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = cli.config()?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut log = RunLog::create(&cfg.out_dir)?;
    log.line(format!(
        "# fwerk {} (core {})",
        env!("CARGO_PKG_VERSION"),
        fwerk_core::VERSION
    ))?;
    log.line(format!("command: {}", cli.command.name()))?;
    log.line(format!("seed: {}", cfg.seed))?;
    log.line(format!("threads: {}", rayon::current_num_threads()))?;
    log.line("[effective config]")?;
    for line in cfg.to_toml().lines() {
        log.line(line)?;
    }
    log.line("[run]")?;
    match &cli.command {
        Command::Analyze(_) => commands::analyze(&cfg, &mut log)?,
        Command::Simulate(_) => commands::simulate(&cfg, &mut log)?,
        Command::Maxt(_) => commands::maxt(&cfg, &mut log)?,
        Command::Corr(_) => commands::corr(&cfg, &mut log)?,
    }
    log.line("done")?;
    log.finish()
}

/// Exit status by failure class: 3 validation, 4 I/O, 5 numeric, 1 other.
fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::category)
    {
        Some(ErrorCategory::Validation) => (3, "validation"),
        Some(ErrorCategory::Io) => (4, "I/O"),
        Some(ErrorCategory::Numeric) => (5, "numeric"),
        None => (1, "internal"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = exit_code(&err);
            eprintln!("fwerk: {kind} error: {err:#}");
            ExitCode::from(code)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wsn_detect::asymptotics::{asymptotic_spec, croc_theoretical, threshold_for_tail};
use wsn_detect::config::{AngleGrid, ExperimentConfig, StatisticFamily, DEFAULT_DEFLECTION_RHOS};
use wsn_detect::consensus::ConsensusTrace;
use wsn_detect::detectors::StatisticKind;
use wsn_detect::experiments::{
    deflection_sweep, energy_report, measured_energy_report, output_file_name, run_croc_experiment,
    validate_estimator_asymptotics, write_output, CrocConfig,
};
use wsn_detect::network::{generate_geometric_network, SensorNetwork};
use wsn_detect::{Error, Result};

/// Distributed detection experiments for sensor networks with correlated
/// Gaussian observations.
#[derive(Debug, Parser)]
#[command(name = "wsn-detect", version)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random geometric sensor network.
    GenNetwork(GenNetworkArgs),
    /// Monte Carlo and theoretical CROC curves for a config.
    Croc(CrocArgs),
    /// Deflection ratio sweep for two sensors.
    Deflection(DeflectionArgs),
    /// Per-iteration consensus states on a network.
    ConsensusTrace(ConsensusTraceArgs),
    /// Broadcast budget of the distributed and centralized statistics.
    Energy(EnergyArgs),
    /// Theoretical CROC curves only.
    AsymptoticCroc(AsymptoticCrocArgs),
    /// Empirical covariance of the local estimates against its prediction.
    ValidateEstimator(ValidateEstimatorArgs),
}

#[derive(Debug, Args)]
struct GenNetworkArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    edges: usize,
    #[arg(long, default_value_t = 100.0)]
    side: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CrocArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DeflectionArgs {
    /// Reads the deflection block of this config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated correlation values.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Angle grid in degrees, `start:stop:step` with stop excluded.
    #[arg(long)]
    phis: Option<String>,
    #[arg(long)]
    norm: Option<f64>,
    #[arg(long = "L")]
    n_slots: Option<usize>,
    /// Output file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NetworkArgs {
    /// Network text file; otherwise one is generated.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    edges: usize,
    #[arg(long, default_value_t = 100.0)]
    side: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl NetworkArgs {
    fn build(&self) -> Result<SensorNetwork> {
        match &self.network {
            Some(path) => SensorNetwork::from_text(&read_text(path)?),
            None => generate_geometric_network(self.n, self.edges, self.side, self.seed),
        }
    }
}

#[derive(Debug, Args)]
struct ConsensusTraceArgs {
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, default_value_t = 20)]
    n_it: usize,
    /// Comma-separated initial values; defaults to the node indices.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnergyArgs {
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, default_value_t = 20)]
    n_it: usize,
    /// `lmp` or `glr`.
    #[arg(long, default_value = "lmp")]
    statistic: String,
    /// Report the analytic budget without running consensus.
    #[arg(long)]
    no_measure: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AsymptoticCrocArgs {
    #[arg(long)]
    config: PathBuf,
    /// Threshold grid `start:stop:step`; by default `output.grid_size`
    /// points from 0 to the 1e-4 upper tail point under H1.
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateEstimatorArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `mc.n_trials`.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Error::io(dir.display().to_string(), e))?;
            }
            std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn output_dir(flag: Option<&PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.cloned()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn gen_network(args: &GenNetworkArgs) -> Result<()> {
    let net = generate_geometric_network(args.n, args.edges, args.side, args.seed)?;
    emit(args.out.as_deref(), &net.to_text())
}

fn croc(args: &CrocArgs) -> Result<()> {
    let config = ExperimentConfig::from_file(&args.config)?;
    let croc = CrocConfig::from_experiment(&config)?;
    let run = run_croc_experiment(&croc)?;
    let dir = output_dir(args.out_dir.as_ref(), &config);
    for table in &run.tables {
        let stat = table.metadata.kind.as_str();
        for (experiment, csv) in [
            ("croc-mc", table.mc_csv()),
            ("croc-theory", table.theory_csv()),
        ] {
            let path = write_output(
                &dir,
                &output_file_name(experiment, stat, croc.base_seed),
                &csv,
            )?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn deflection(args: &DeflectionArgs) -> Result<()> {
    let mut settings = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?.deflection,
        None => Default::default(),
    };
    if let Some(rho) = &args.rho {
        settings.rhos = rho.clone();
    }
    if let Some(phis) = &args.phis {
        settings.phis = AngleGrid::parse(phis)?;
    }
    if let Some(norm) = args.norm {
        settings.norm = norm;
    }
    if let Some(l) = args.n_slots {
        settings.n_slots = l;
    }
    if settings.rhos.is_empty() {
        settings.rhos = DEFAULT_DEFLECTION_RHOS.to_vec();
    }
    if let Some(bad) = settings.rhos.iter().find(|r| r.is_nan() || r.abs() >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho {bad} outside (-1, 1)"
        )));
    }
    let table = deflection_sweep(
        &settings.rhos,
        &settings.phis,
        settings.norm,
        settings.n_slots,
    )?;
    emit(args.out.as_deref(), &table.to_csv())
}

fn consensus_trace(args: &ConsensusTraceArgs) -> Result<()> {
    let net = args.network.build()?;
    let initial = match &args.values {
        Some(v) => v.clone(),
        None => (0..net.n_nodes()).map(|k| k as f64).collect(),
    };
    if initial.len() != net.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: net.n_nodes(),
            actual: initial.len(),
        });
    }
    let trace = ConsensusTrace::run(&net, &initial, args.n_it)?;
    let meta = format!(
        "experiment=consensus-trace seed={} network={} n_it={} convergence_factor={}",
        args.network.seed,
        net.content_hash(),
        args.n_it,
        net.spectral_convergence_factor()
    );
    emit(args.out.as_deref(), &trace.to_csv(&meta))
}

fn energy(args: &EnergyArgs) -> Result<()> {
    let kind = match StatisticFamily::parse(&args.statistic)? {
        StatisticFamily::Glr => StatisticKind::GlrKnownCov,
        StatisticFamily::Lmp => StatisticKind::LmpKnownCov,
    };
    let report = if args.no_measure {
        energy_report(args.network.n, args.n_it, kind, None)?
    } else {
        measured_energy_report(&args.network.build()?, args.n_it, kind)?
    };
    emit(args.out.as_deref(), &report.to_text())
}

fn asymptotic_croc(args: &AsymptoticCrocArgs) -> Result<()> {
    let config = ExperimentConfig::from_file(&args.config)?;
    let model_cfg = config.model()?;
    let model = model_cfg.build()?;
    let dir = output_dir(args.out_dir.as_ref(), &config);
    for family in &config.statistics {
        let spec = asymptotic_spec(&model, model_cfg.n_slots, *family == StatisticFamily::Glr)?;
        let gammas = match &args.gammas {
            Some(text) => AngleGrid::parse(text)?.values(),
            None => {
                let top = threshold_for_tail(&spec.dist_h1, 1e-4)?;
                let n = config.grid_size;
                (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect()
            }
        };
        let points = croc_theoretical(&spec, &gammas)?;
        let mut csv = format!(
            "# experiment=asymptotic-croc statistic={} L={} seed={}\ngamma,pfa_theory,pmd_theory\n",
            spec.kind, model_cfg.n_slots, config.base_seed
        );
        for p in points {
            csv.push_str(&format!("{},{},{}\n", p.gamma, p.pfa, p.pmd));
        }
        let name = output_file_name("asymptotic-croc", spec.kind.as_str(), config.base_seed);
        println!("{}", write_output(&dir, &name, &csv)?.display());
    }
    Ok(())
}

fn validate_estimator(args: &ValidateEstimatorArgs) -> Result<()> {
    let config = ExperimentConfig::from_file(&args.config)?;
    let model_cfg = config.model()?;
    let model = model_cfg.build()?;
    let trials = args.trials.unwrap_or(config.n_trials);
    let report =
        validate_estimator_asymptotics(&model, model_cfg.n_slots, trials, config.base_seed)?;
    emit(args.out.as_deref(), &report.to_text(config.base_seed))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenNetwork(a) => gen_network(a),
        Command::Croc(a) => croc(a),
        Command::Deflection(a) => deflection(a),
        Command::ConsensusTrace(a) => consensus_trace(a),
        Command::Energy(a) => energy(a),
        Command::AsymptoticCroc(a) => asymptotic_croc(a),
        Command::ValidateEstimator(a) => validate_estimator(a),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let escaped = message
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    eprintln!("error: kind={kind} message=\"{escaped}\"");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return fail("config", line, 1);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return fail("config", "--threads must be positive", 1);
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail("config", &e.to_string(), 1),
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            fail(
                category.as_str(),
                &e.to_string(),
                category.exit_code() as u8,
            )
        }
    }
}

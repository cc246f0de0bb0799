use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cplab::config::{ExperimentConfig, Noise};
use cplab::runner::{self, RunSettings};
use cplab::{csv_io, report, LabError, Result};
use cplab_core::data::{self, SyntheticSpec};

/// Default output directory when neither the flag nor the config sets one.
const OUT_DIR_ENV: &str = "CPLAB_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "results";

#[derive(Parser)]
#[command(name = "cplab", version, about = "Split conformal regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep, resuming from rows already in the output directory.
    Run(RunArgs),
    /// Write a synthetic training set and test set as CSV.
    GenData(GenArgs),
    /// Recompute summary.csv from raw.csv.
    Summarize(DirArgs),
    /// Recompute the coverage-gap convergence report from raw.csv.
    Convergence(DirArgs),
    /// Recompute the efficiency outlier report from raw.csv.
    Outliers(DirArgs),
    /// Print the fully resolved configuration as TOML.
    ShowConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Preset used when no file is given: `desk` or `full`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides `output_dir`; otherwise $CPLAB_OUT_DIR, then ./results.
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, short = 'j')]
    workers: Option<usize>,
    /// Repetitions per cell.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Base seed of every repetition seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write 0 for fit_seconds so repeated runs produce identical files.
    #[arg(long)]
    no_fit_time: bool,
}

#[derive(Args)]
struct GenArgs {
    /// homo_gauss, hetero_gauss, right_skew or hetero_non_gauss.
    #[arg(long, default_value = "homo_gauss")]
    noise: String,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    test_size: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving train.csv and test.csv.
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DirArgs {
    /// Directory holding raw.csv; defaults as for `run`.
    dir: Option<PathBuf>,
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn resolve(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::desk(),
    };
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone().unwrap_or_else(default_out_dir);
    Ok((cfg, out))
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let (cfg, out) = resolve(&args.config)?;
    let mut settings = RunSettings::from_config(&cfg);
    settings.record_fit_time = !args.no_fit_time;
    let outcome = runner::run_sweep(&cfg, &out, &settings)?;
    log::info!(
        "{} rows ({} resumed), {} failures, {} cells -> {}",
        outcome.records.len(),
        outcome.resumed,
        outcome.failures.len(),
        outcome.summaries.len(),
        out.display()
    );
    let dead = outcome.dead_cells();
    for k in &dead {
        log::error!("every repetition failed in {}", report::cell_id(k));
    }
    Ok(if dead.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn gen_data(args: &GenArgs) -> Result<ExitCode> {
    let noise: Noise = args.noise.clone().try_into().map_err(LabError::Config)?;
    let spec = SyntheticSpec {
        dim: args.dim,
        n: args.n,
        noise: noise.0,
        noise_level: args.noise_level,
        seed: args.seed,
    };
    spec.validate().map_err(|e| LabError::Config(e.to_string()))?;
    let out = args.output_dir.clone().unwrap_or_else(default_out_dir);
    std::fs::create_dir_all(&out).map_err(|e| LabError::io(&out, e))?;
    csv_io::write_dataset(&out.join("train.csv"), &data::generate(&spec)?)?;
    csv_io::write_dataset(&out.join("test.csv"), &data::generate_test(&spec, args.test_size)?)?;
    log::info!("wrote train.csv and test.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn raw_in(dir: &Option<PathBuf>) -> Result<(PathBuf, Vec<cplab_core::eval::MetricsRecord>)> {
    let dir = dir.clone().unwrap_or_else(default_out_dir);
    let raw = dir.join(report::RAW_FILE);
    if !raw.is_file() {
        return Err(LabError::MissingFile(raw));
    }
    let records = report::read_raw(&raw)?;
    Ok((dir, records))
}

fn wrote(path: &Path, rows: usize) -> Result<ExitCode> {
    println!("{} ({rows} rows)", path.display());
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run(a) => run(a),
        Command::GenData(a) => gen_data(a),
        Command::Summarize(a) => {
            let (dir, records) = raw_in(&a.dir)?;
            let sums = report::summaries(&records)?;
            let path = dir.join(report::SUMMARY_FILE);
            report::write_summary(&path, &sums)?;
            wrote(&path, sums.len())
        }
        Command::Convergence(a) => {
            let (dir, records) = raw_in(&a.dir)?;
            let rows = report::convergence(&records);
            let path = dir.join(report::CONVERGENCE_FILE);
            report::write_convergence(&path, &rows)?;
            wrote(&path, rows.len())
        }
        Command::Outliers(a) => {
            let (dir, records) = raw_in(&a.dir)?;
            let rows = report::outliers(&report::summaries(&records)?);
            let path = dir.join(report::OUTLIERS_FILE);
            report::write_outliers(&path, &rows)?;
            wrote(&path, rows.len())
        }
        Command::ShowConfig(a) => {
            let (cfg, _) = resolve(a)?;
            print!("{}", cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

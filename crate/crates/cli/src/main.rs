use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod config;
mod io;
mod stages;

use config::RunConfig;
use stages::Stage;

/// Input or configuration problem; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "esncast", version, about = "Long-range ensemble forecasting with calibrated uncertainty")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides data.series.
    #[arg(long, global = true)]
    series: Option<PathBuf>,
    /// Overrides data.stations.
    #[arg(long, global = true)]
    stations: Option<PathBuf>,
    /// Overrides data.districts.
    #[arg(long, global = true)]
    districts: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Lorenz-96 realizations, one CSV each.
    #[command(name = "simulate-lorenz96")]
    SimulateLorenz96 {
        #[arg(long, default_value_t = 10)]
        realizations: usize,
        #[arg(long, default_value_t = 1380)]
        points: usize,
    },
    /// Select ESN hyper-parameters on a trailing hold-out block.
    Validate,
    /// Recursive ensemble forecast from the end of the training rows.
    Forecast {
        /// Also emit calibrated intervals (needs `calibrate` output).
        #[arg(long)]
        with_intervals: bool,
    },
    /// Fit the marginal calibration from windowed forecasts.
    Calibrate,
    /// Empirical and sparse correlation of standardized residuals.
    Dependence,
    /// Fit the nonstationary spatial model and the shrinkage weight.
    Spatial,
    /// Krige the forecast onto a grid.
    Interpolate,
    /// Exposed population per time from the interpolated field.
    Exposure,
    /// Lorenz-96 method comparison and calibration study.
    Benchmark {
        /// Fixed leaking rate instead of validation.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SimulateLorenz96 { .. } => "simulate-lorenz96",
            Command::Validate => "validate",
            Command::Forecast { .. } => "forecast",
            Command::Calibrate => "calibrate",
            Command::Dependence => "dependence",
            Command::Spatial => "spatial",
            Command::Interpolate => "interpolate",
            Command::Exposure => "exposure",
            Command::Benchmark { .. } => "benchmark",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    for (slot, v) in [(&mut cfg.data.series, &cli.series), (&mut cfg.data.stations, &cli.stations), (&mut cfg.data.districts, &cli.districts)] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
    cfg.check()?;
    Ok(cfg)
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, threads: usize, written: &[PathBuf]) -> Result<()> {
    let outputs = written
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(serde_json::json!({ "file": name, "sha256": stages::hash_file(p)? }))
        })
        .collect::<Result<Vec<_>>>()?;
    let created = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_sha256": cfg.hash()?,
        "threads": threads,
        "created_unix": created,
        "outputs": outputs,
    });
    io::write_json(&out.join(format!("manifest-{command}.json")), &manifest)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    pool.build_global().context("configuring the thread pool")?;
    let threads = rayon::current_num_threads();
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let mut stage = Stage::new(&cfg, &cli.out_dir);
    match &cli.command {
        Command::SimulateLorenz96 { realizations, points } => stage.simulate_lorenz96(*realizations, *points)?,
        Command::Validate => stage.validate()?,
        Command::Forecast { with_intervals } => stage.forecast(*with_intervals)?,
        Command::Calibrate => stage.calibrate()?,
        Command::Dependence => stage.dependence()?,
        Command::Spatial => stage.spatial()?,
        Command::Interpolate => stage.interpolate()?,
        Command::Exposure => stage.exposure()?,
        Command::Benchmark { alpha } => print!("{}", stage.benchmark(*alpha)?),
    }
    write_manifest(&cli.out_dir, cli.command.name(), &cfg, threads, &stage.written)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for cause in e.chain() {
                eprintln!("error: {cause}");
            }
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

mod commands;
mod config;
mod errors;
mod report;
mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use errors::{CliError, Result};

/// Spin-Hamiltonian simulation and spectrum-fitting toolkit for effective
/// spin-1/2 ions with hyperfine structure.
#[derive(Parser)]
#[command(name = "eprkit", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate field-dependent transition catalogs (CSV, SVG, optional synthetic traces).
    Simulate(commands::simulate::SimulateArgs),
    /// Fit spin-Hamiltonian parameters to a zero-field spectrum (peak list or raw traces).
    FitZeroField(commands::fit_zero_field::FitArgs),
    /// Locate field-insensitive turning points of transition branches.
    Zefoz(commands::zefoz::ZefozArgs),
    /// Calibrate nominal field values against a reference EPR line in per-field traces.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Fit one line across a temperature series and compare areas with the polarization model.
    Thermal(commands::thermal::ThermalArgs),
    /// Build a median background reference and emit background-corrected traces.
    Background(commands::background::BackgroundArgs),
}

/// Flags shared by every subcommand. Values given here override the JSON
/// config file; unset values fall back to built-in defaults.
#[derive(Args, Debug)]
pub struct CommonArgs {
    /// JSON run-configuration file (all flags below override its keys).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Named parameter set, e.g. this_work, sattler1971, i0.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Spin-system JSON file (alternative to --preset).
    #[arg(long, value_name = "PATH")]
    system_file: Option<PathBuf>,
    /// Static-field polar angle(s) from the c-axis in degrees.
    /// A comma-separated list runs a direction batch (zefoz only).
    #[arg(long = "b0-theta", value_name = "DEG", value_delimiter = ',')]
    b0_theta: Option<Vec<f64>>,
    /// Static-field azimuth in degrees.
    #[arg(long = "b0-phi", value_name = "DEG")]
    b0_phi: Option<f64>,
    /// Excitation geometry: "faraday" (B1 along B0) or "voigt" (B1 across B0).
    #[arg(long, value_name = "KIND")]
    geometry: Option<String>,
    /// Field scan start, mT.
    #[arg(long = "b-start", value_name = "MT")]
    b_start: Option<f64>,
    /// Field scan stop, mT.
    #[arg(long = "b-stop", value_name = "MT")]
    b_stop: Option<f64>,
    /// Field scan step, mT.
    #[arg(long = "b-step", value_name = "MT")]
    b_step: Option<f64>,
    /// Lower edge of the frequency window, MHz.
    #[arg(long = "f-min", value_name = "MHZ")]
    f_min: Option<f64>,
    /// Upper edge of the frequency window, MHz.
    #[arg(long = "f-max", value_name = "MHZ")]
    f_max: Option<f64>,
    /// Sensor temperature, mK.
    #[arg(long = "t-mk", value_name = "MK")]
    t_mk: Option<f64>,
    /// Effective spin-temperature floor, mK.
    #[arg(long = "t-min-mk", value_name = "MK")]
    t_min_mk: Option<f64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for synthetic-noise generation.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for field scans (default: all logical processors).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

impl CommonArgs {
    /// File config overlaid with command-line flags. `theta` selects one
    /// entry when `--b0-theta` held a list.
    fn merged_config(&self, theta_deg: Option<f64>) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = RunConfig {
            preset: self.preset.clone(),
            system_file: self.system_file.clone(),
            system: None,
            b0_theta_deg: theta_deg,
            b0_phi_deg: self.b0_phi,
            geometry: self.geometry.clone(),
            b_start_mt: self.b_start,
            b_stop_mt: self.b_stop,
            b_step_mt: self.b_step,
            f_min_mhz: self.f_min,
            f_max_mhz: self.f_max,
            t_mk: self.t_mk,
            t_min_mk: self.t_min_mk,
            out_dir: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
        };
        Ok(base.overlaid_with(overrides))
    }

    /// The single `--b0-theta` value, or an error when a batch list was
    /// given to a command that scans one direction.
    fn single_theta(&self) -> Result<Option<f64>> {
        match self.b0_theta.as_deref() {
            None => Ok(None),
            Some([theta]) => Ok(Some(*theta)),
            Some(list) => Err(CliError::Config(format!(
                "--b0-theta got {} values; direction batches are only supported by `zefoz`",
                list.len()
            ))),
        }
    }

    /// All requested polar angles (for direction batches), or `None` when
    /// the config file / default should decide.
    fn theta_list(&self) -> Option<&[f64]> {
        self.b0_theta.as_deref()
    }
}

/// Runs `f` on a dedicated rayon pool when a thread count was requested.
fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            if n == 0 {
                return Err(CliError::Config("threads must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config("threads", e))?;
            Ok(pool.install(f))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::FitZeroField(args) => commands::fit_zero_field::run(args),
        Command::Zefoz(args) => commands::zefoz::run(args),
        Command::Calibrate(args) => commands::calibrate::run(args),
        Command::Thermal(args) => commands::thermal::run(args),
        Command::Background(args) => commands::background::run(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

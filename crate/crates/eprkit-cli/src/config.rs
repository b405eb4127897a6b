use std::path::{Path, PathBuf};

use eprkit::presets::{preset, system_from_json, PRESET_NAMES};
use eprkit::{ExcitationGeometry, GeometryKind, SpinSystem, ThermalModel};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, Result};

/// On-disk run configuration. Every key is optional; command-line flags
/// override file values, and anything still unset falls back to the
/// defaults listed in `--help`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Named parameter set (see `eprkit simulate --help` for the list).
    pub preset: Option<String>,
    /// Path to a spin-system JSON file; mutually exclusive with `system`.
    pub system_file: Option<PathBuf>,
    /// Inline spin-system parameters.
    pub system: Option<SpinSystem>,
    /// Static-field polar angle from the crystal c-axis, degrees.
    pub b0_theta_deg: Option<f64>,
    /// Static-field azimuth, degrees.
    pub b0_phi_deg: Option<f64>,
    /// Drive geometry: "faraday" (B1 parallel B0) or "voigt" (B1 perpendicular B0).
    pub geometry: Option<String>,
    pub b_start_mt: Option<f64>,
    pub b_stop_mt: Option<f64>,
    pub b_step_mt: Option<f64>,
    pub f_min_mhz: Option<f64>,
    pub f_max_mhz: Option<f64>,
    /// Sensor temperature, millikelvin.
    pub t_mk: Option<f64>,
    /// Saturation floor of the effective spin temperature, millikelvin.
    pub t_min_mk: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(&format!("cannot read {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(&format!("{}", path.display()), e))
    }

    /// Applies `other` on top of `self`, keeping `self` values only where
    /// `other` leaves them unset.
    pub fn overlaid_with(mut self, other: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($field:ident),*) => { $( if other.$field.is_some() { self.$field = other.$field; } )* };
        }
        take!(
            preset, system_file, system, b0_theta_deg, b0_phi_deg, geometry, b_start_mt,
            b_stop_mt, b_step_mt, f_min_mhz, f_max_mhz, t_mk, t_min_mk, out_dir, seed, threads
        );
        self
    }
}

/// Fully validated settings shared by the simulation-driven subcommands.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub system: SpinSystem,
    pub system_source: String,
    pub b0_theta_deg: f64,
    pub b0_phi_deg: f64,
    pub geometry: GeometryKind,
    pub b_start_mt: f64,
    pub b_stop_mt: f64,
    pub b_step_mt: f64,
    pub f_min_mhz: f64,
    pub f_max_mhz: f64,
    pub t_mk: f64,
    pub t_min_mk: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Resolved {
    pub fn direction(&self) -> [f64; 3] {
        let theta = self.b0_theta_deg.to_radians();
        let phi = self.b0_phi_deg.to_radians();
        [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
    }

    pub fn excitation(&self) -> Result<ExcitationGeometry> {
        ExcitationGeometry::new(self.geometry, self.direction())
            .map_err(|e| CliError::config("geometry", e))
    }

    pub fn thermal(&self) -> Result<ThermalModel> {
        ThermalModel::new(self.t_mk * 1e-3, self.t_min_mk * 1e-3)
            .map_err(|e| CliError::config("thermal model", e))
    }
}

fn require_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::Config(format!("{name} must be finite, got {value}")))
    }
}

pub fn resolve(config: RunConfig) -> Result<Resolved> {
    let (system, system_source) = match (&config.system, &config.system_file, &config.preset) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) | (_, Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give exactly one of preset, system_file, or inline system".into(),
            ))
        }
        (Some(sys), None, None) => {
            sys.validate().map_err(|e| CliError::config("system", e))?;
            (sys.clone(), "inline".to_string())
        }
        (None, Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(&format!("cannot read {}", path.display()), e))?;
            let sys = system_from_json(&text)
                .map_err(|e| CliError::config(&format!("{}", path.display()), e))?;
            (sys, path.display().to_string())
        }
        (None, None, maybe_name) => {
            let name = maybe_name.as_deref().unwrap_or("this_work");
            let sys = preset(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown preset {name:?}; known presets: {}, i0",
                    PRESET_NAMES.join(", ")
                ))
            })?;
            (sys, format!("preset:{name}"))
        }
    };

    let b0_theta_deg = require_finite("b0_theta_deg", config.b0_theta_deg.unwrap_or(0.0))?;
    let b0_phi_deg = require_finite("b0_phi_deg", config.b0_phi_deg.unwrap_or(0.0))?;
    let geometry = match config.geometry.as_deref().unwrap_or("voigt") {
        "voigt" => GeometryKind::VoigtLike,
        "faraday" => GeometryKind::FaradayLike,
        other => {
            return Err(CliError::Config(format!(
                "geometry must be \"faraday\" or \"voigt\", got {other:?}"
            )))
        }
    };

    let b_start_mt = require_finite("b_start_mt", config.b_start_mt.unwrap_or(0.0))?;
    let b_stop_mt = require_finite("b_stop_mt", config.b_stop_mt.unwrap_or(50.0))?;
    let b_step_mt = require_finite("b_step_mt", config.b_step_mt.unwrap_or(1.0))?;
    if b_step_mt <= 0.0 {
        return Err(CliError::Config(format!(
            "b_step_mt must be positive, got {b_step_mt}"
        )));
    }
    if b_stop_mt < b_start_mt {
        return Err(CliError::Config(format!(
            "b_start_mt ({b_start_mt}) must not exceed b_stop_mt ({b_stop_mt})"
        )));
    }

    let f_min_mhz = require_finite("f_min_mhz", config.f_min_mhz.unwrap_or(1800.0))?;
    let f_max_mhz = require_finite("f_max_mhz", config.f_max_mhz.unwrap_or(3500.0))?;
    if f_max_mhz <= f_min_mhz {
        return Err(CliError::Config(format!(
            "frequency window is empty: f_min_mhz {f_min_mhz} >= f_max_mhz {f_max_mhz}"
        )));
    }

    let t_mk = require_finite("t_mk", config.t_mk.unwrap_or(20.0))?;
    let t_min_mk = require_finite("t_min_mk", config.t_min_mk.unwrap_or(20.0))?;
    if t_mk < 0.0 {
        return Err(CliError::Config(format!("t_mk must be >= 0, got {t_mk}")));
    }
    if t_min_mk <= 0.0 {
        return Err(CliError::Config(format!(
            "t_min_mk must be positive, got {t_min_mk}"
        )));
    }

    Ok(Resolved {
        system,
        system_source,
        b0_theta_deg,
        b0_phi_deg,
        geometry,
        b_start_mt,
        b_stop_mt,
        b_step_mt,
        f_min_mhz,
        f_max_mhz,
        t_mk,
        t_min_mk,
        out_dir: config.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        seed: config.seed.unwrap_or(1),
        threads: config.threads,
    })
}

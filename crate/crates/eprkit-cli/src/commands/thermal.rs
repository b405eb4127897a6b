use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use eprkit::csvio::parse_trace_csv;
use eprkit::{
    effective_temperature, peak_area_vs_temperature, spin_polarisation, transition_catalog,
    FieldVector, IntensityThreshold, SpinOperators, ThermalModel,
};

use crate::config::resolve;
use crate::errors::{CliError, Result};
use crate::report::{digest_file, ensure_out_dir, write_json, write_text, RunRecord};
use crate::svg::Plot;
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct ThermalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Temperature-tagged traces covering one line (>= 2 files).
    #[arg(value_name = "TRACE", required = true, num_args = 2..)]
    files: Vec<PathBuf>,
}

pub fn run(args: &ThermalArgs) -> Result<()> {
    let theta = args.common.single_theta()?;
    let resolved = resolve(args.common.merged_config(theta)?)?;
    ensure_out_dir(&resolved.out_dir)?;
    let window = (resolved.f_min_mhz, resolved.f_max_mhz);

    let mut inputs = Vec::new();
    let mut traces = Vec::new();
    for path in &args.files {
        inputs.push(digest_file(path)?);
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(&format!("cannot read {name}"), e))?;
        let trace = parse_trace_csv(&text, &name).map_err(|e| CliError::data("trace", e))?;
        traces.push(super::flatten_against_median(&trace)?);
    }
    let areas =
        peak_area_vs_temperature(&traces, window).map_err(|e| CliError::data("area series", e))?;

    // Model column: polarization of the strongest zero-field line inside the
    // window, evaluated at the floored effective temperature.
    let ops = SpinOperators::new(&resolved.system)
        .map_err(|e| CliError::config("system", e))?;
    let eig = ops
        .eigensystem(&resolved.system, FieldVector::ZERO)
        .map_err(|e| CliError::config("system", e))?;
    let catalog = transition_catalog(
        &eig,
        &resolved.system,
        &resolved.excitation()?,
        &resolved.thermal()?,
        window.0,
        window.1,
        IntensityThreshold::default(),
    )
    .map_err(|e| CliError::config("model line", e))?;
    let model_pair = catalog
        .iter()
        .max_by(|a, b| a.intensity.total_cmp(&b.intensity))
        .map(|rec| (rec.i_index, rec.f_index));

    let model_chi = |t_mk: f64| -> Option<f64> {
        let (i, f) = model_pair?;
        let thermal = ThermalModel::new(t_mk * 1e-3, resolved.t_min_mk * 1e-3).ok()?;
        spin_polarisation(&eig, effective_temperature(&thermal), i, f).ok()
    };
    let model_max = areas
        .iter()
        .filter_map(|p| model_chi(p.temperature_mk))
        .fold(f64::NAN, f64::max);

    let mut csv = String::from(
        "temperature_mK,center_MHz,fwhm_MHz,area,normalized_area,model_chi_normalized,note\n",
    );
    let mut measured_points = Vec::new();
    let mut model_points = Vec::new();
    for point in &areas {
        let (center, fwhm, area) = match &point.fit {
            Some(fit) => (fit.center_mhz, fit.fwhm_mhz, fit.area),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let model_norm = model_chi(point.temperature_mk)
            .map(|chi| chi / model_max)
            .unwrap_or(f64::NAN);
        let normalized = point.normalized_area.unwrap_or(f64::NAN);
        let _ = writeln!(
            csv,
            "{:.4},{:.6},{:.6},{:.6e},{:.6},{:.6},{}",
            point.temperature_mk,
            center,
            fwhm,
            area,
            normalized,
            model_norm,
            point.note.as_deref().unwrap_or("")
        );
        if let Some(a) = point.normalized_area {
            measured_points.push((point.temperature_mk, a));
        }
        if model_norm.is_finite() {
            model_points.push((point.temperature_mk, model_norm));
        }
    }
    write_text(&resolved.out_dir, "thermal.csv", &csv)?;

    let t_max = areas.last().map(|p| p.temperature_mk).unwrap_or(1.0);
    let mut plot = Plot::new(
        "line area vs temperature",
        "temperature (mK)",
        "normalized area / polarization",
        (0.0, 1.05 * t_max),
        (0.0, 1.05),
    );
    plot.polyline(&model_points, "#1f77b4", 1.5, 1.0);
    plot.scatter(&measured_points, "#d62728", 4.0);
    write_text(&resolved.out_dir, "thermal.svg", &plot.render())?;

    let mut record = RunRecord::new("thermal", &resolved, inputs);
    record.outputs = vec!["thermal.csv".into(), "thermal.svg".into()];
    write_json(&resolved.out_dir, "run.json", &record)?;

    println!(
        "thermal: {} temperature points -> {}",
        areas.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

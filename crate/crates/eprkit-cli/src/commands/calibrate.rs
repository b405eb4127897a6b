use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use eprkit::csvio::parse_trace_csv;
use eprkit::{detect_peaks, dpph_field_from_frequency, fit_lorentzian};
use serde::Serialize;

use crate::errors::{CliError, Result};
use crate::report::{digest_file, ensure_out_dir, write_json, write_text, RunRecord};
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Per-field reference traces, each tagged with its nominal field.
    #[arg(value_name = "TRACE", required = true)]
    files: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct CalibrationPoint {
    file: String,
    field_nominal_mt: f64,
    dpph_center_mhz: f64,
    field_calibrated_mt: f64,
}

#[derive(Debug, Serialize)]
struct CalibrationSummary {
    /// Linear map from nominal to calibrated field: B_cal = slope * B_nom + intercept.
    slope: f64,
    intercept_mt: f64,
    residual_rms_mt: f64,
    points: Vec<CalibrationPoint>,
    skipped: Vec<String>,
}

/// Least-squares line through (nominal, calibrated) pairs. A single pair
/// pins the scale through the origin.
fn linear_map(points: &[CalibrationPoint]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.len() == 1 {
        let p = &points[0];
        let slope = if p.field_nominal_mt != 0.0 {
            p.field_calibrated_mt / p.field_nominal_mt
        } else {
            1.0
        };
        return (slope, 0.0, 0.0);
    }
    let sx: f64 = points.iter().map(|p| p.field_nominal_mt).sum();
    let sy: f64 = points.iter().map(|p| p.field_calibrated_mt).sum();
    let sxx: f64 = points.iter().map(|p| p.field_nominal_mt.powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| p.field_nominal_mt * p.field_calibrated_mt)
        .sum();
    let denom = n * sxx - sx * sx;
    let (slope, intercept) = if denom.abs() < 1e-12 * sxx.max(1.0) {
        (if sx != 0.0 { sy / sx } else { 1.0 }, 0.0)
    } else {
        ((n * sxy - sx * sy) / denom, (sy * sxx - sx * sxy) / denom)
    };
    let rms = (points
        .iter()
        .map(|p| (p.field_calibrated_mt - slope * p.field_nominal_mt - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let theta = args.common.single_theta()?;
    let resolved = crate::config::resolve(args.common.merged_config(theta)?)?;
    ensure_out_dir(&resolved.out_dir)?;

    let mut inputs = Vec::new();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for path in &args.files {
        inputs.push(digest_file(path)?);
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(&format!("cannot read {name}"), e))?;
        let trace = parse_trace_csv(&text, &name).map_err(|e| CliError::data("trace", e))?;

        let flat = super::flatten_against_median(&trace)?;
        let candidates = detect_peaks(&flat, None, 5.0);
        let best = candidates
            .iter()
            .max_by(|a, b| a.amplitude.total_cmp(&b.amplitude));
        let fitted = best.and_then(|peak| {
            fit_lorentzian(
                &flat,
                (peak.frequency_mhz - 10.0, peak.frequency_mhz + 10.0),
                None,
            )
            .ok()
        });
        match fitted {
            Some(fit) => {
                let field = dpph_field_from_frequency(fit.center_mhz)
                    .map_err(|e| CliError::data(&name, e))?;
                points.push(CalibrationPoint {
                    file: name,
                    field_nominal_mt: trace.field_mt,
                    dpph_center_mhz: fit.center_mhz,
                    field_calibrated_mt: field,
                });
            }
            None => {
                eprintln!(
                    "warning: {name}: no reference line could be fitted; skipping \
                     (the I = 0 even-isotope EPR line can substitute when no marker is present)"
                );
                skipped.push(name);
            }
        }
    }
    if points.is_empty() {
        return Err(CliError::Data(
            "no reference line could be fitted in any input trace".into(),
        ));
    }
    points.sort_by(|a, b| a.field_nominal_mt.total_cmp(&b.field_nominal_mt));

    let (slope, intercept_mt, residual_rms_mt) = linear_map(&points);
    let mut csv = String::from("file,field_nominal_mT,dpph_center_MHz,field_calibrated_mT\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{:.4},{:.6},{:.6}",
            p.file, p.field_nominal_mt, p.dpph_center_mhz, p.field_calibrated_mt
        );
    }
    write_text(&resolved.out_dir, "calibration.csv", &csv)?;
    let summary = CalibrationSummary {
        slope,
        intercept_mt,
        residual_rms_mt,
        points,
        skipped,
    };
    write_json(&resolved.out_dir, "calibration.json", &summary)?;

    let mut record = RunRecord::new("calibrate", &resolved, inputs);
    record.outputs = vec!["calibration.csv".into(), "calibration.json".into()];
    write_json(&resolved.out_dir, "run.json", &record)?;

    println!(
        "calibrate: {} point(s), B_cal = {slope:.6} * B_nom + {intercept_mt:.6} mT -> {}",
        summary.points.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

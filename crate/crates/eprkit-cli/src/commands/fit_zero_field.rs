use std::path::PathBuf;

use clap::Args;
use eprkit::csvio::{parse_peaks_csv, parse_trace_csv};
use eprkit::{
    build_reference, detect_peaks, fit_lorentzian, fit_parameters, subtract_background,
    FitProblem, FitResult,
};

use super::flatten_against_median;

use crate::config::resolve;
use crate::errors::{classify_run, CliError, Result};
use crate::report::{
    digest_file, ensure_out_dir, parameter_unit, write_json, write_text, AssignmentRow,
    FitReport, InputDigest, ParameterRow, RunRecord,
};
use crate::svg::Plot;
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Peak-list CSV (field_mT,center_MHz,fwhm_MHz,...); zero-field rows are used.
    #[arg(long, value_name = "PATH", conflicts_with = "trace")]
    peaks: Option<PathBuf>,
    /// Raw trace CSV (repeatable). With three or more traces a median
    /// background reference is built first; with fewer, each trace is
    /// flattened against its own median level.
    #[arg(long, value_name = "PATH")]
    trace: Vec<PathBuf>,
    /// Keep the quadrupole parameter frozen at its starting value.
    #[arg(long)]
    freeze_p: bool,
    /// Matching gate between measured and predicted lines, MHz.
    #[arg(long, value_name = "MHZ", default_value_t = eprkit::DEFAULT_GATE_MHZ)]
    gate_mhz: f64,
}

/// Stage 1: obtain a zero-field peak list, either directly or through the
/// background-subtraction + detection pipeline.
fn gather_peaks(args: &FitArgs, window: (f64, f64)) -> Result<(Vec<f64>, Vec<InputDigest>)> {
    let mut digests = Vec::new();
    let mut centers = Vec::new();

    if let Some(path) = &args.peaks {
        digests.push(digest_file(path)?);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(&format!("cannot read {}", path.display()), e))?;
        let rows = parse_peaks_csv(&text, &path.display().to_string())
            .map_err(|e| CliError::data("peak list", e))?;
        for (field_mt, center_mhz, _fwhm) in rows {
            if field_mt.abs() < 0.5 && center_mhz >= window.0 && center_mhz <= window.1 {
                centers.push(center_mhz);
            }
        }
        return Ok((centers, digests));
    }

    if args.trace.is_empty() {
        return Err(CliError::Config(
            "fit-zero-field needs --peaks FILE or at least one --trace FILE".into(),
        ));
    }
    let mut traces = Vec::new();
    for path in &args.trace {
        digests.push(digest_file(path)?);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(&format!("cannot read {}", path.display()), e))?;
        traces.push(
            parse_trace_csv(&text, &path.display().to_string())
                .map_err(|e| CliError::data("trace", e))?,
        );
    }

    let reference = if traces.len() >= 3 {
        Some(build_reference(&traces, &[]).map_err(|e| CliError::data("background reference", e))?)
    } else {
        None
    };
    for trace in &traces {
        let corrected = match &reference {
            Some(r) => subtract_background(trace, r)
                .map_err(|e| CliError::data("background subtraction", e))?,
            None => flatten_against_median(trace)?,
        };
        for peak in detect_peaks(&corrected, None, 2.0) {
            if peak.frequency_mhz < window.0 || peak.frequency_mhz > window.1 {
                continue;
            }
            // Refine each detected candidate with a local line fit; fall
            // back to the detected position when the fit cannot converge.
            let local = (peak.frequency_mhz - 8.0, peak.frequency_mhz + 8.0);
            let center = fit_lorentzian(&corrected, local, None)
                .map(|fit| fit.center_mhz)
                .unwrap_or(peak.frequency_mhz);
            if !centers.iter().any(|c: &f64| (c - center).abs() < 1.0) {
                centers.push(center);
            }
        }
    }
    centers.sort_by(f64::total_cmp);
    Ok((centers, digests))
}

fn build_report(
    result: &FitResult,
    measured: &[f64],
    initial: &eprkit::SpinSystem,
    inputs: Vec<InputDigest>,
) -> FitReport {
    // Lines whose residual stands well above the pooled fit quality point at
    // model misfit rather than noise; the 2 MHz floor (about one linewidth)
    // keeps noise-level fits from flagging anything.
    let flag_threshold = (1.5 * result.residual_rms_mhz).max(2.0);
    let mut assignments = Vec::new();
    let mut flagged_peaks = Vec::new();
    for (j, slot) in result.assignments.iter().enumerate() {
        let row = match slot {
            Some(m) => {
                let flagged = m.residual_mhz.abs() > flag_threshold;
                if flagged {
                    flagged_peaks.push(j);
                }
                AssignmentRow {
                    peak_index: j,
                    measured_mhz: measured[j],
                    lower: Some(m.i_index),
                    upper: Some(m.f_index),
                    predicted_mhz: Some(m.predicted_mhz),
                    residual_mhz: Some(m.residual_mhz),
                    flagged,
                }
            }
            None => {
                flagged_peaks.push(j);
                AssignmentRow {
                    peak_index: j,
                    measured_mhz: measured[j],
                    lower: None,
                    upper: None,
                    predicted_mhz: None,
                    residual_mhz: None,
                    flagged: true,
                }
            }
        };
        assignments.push(row);
    }
    FitReport {
        parameters: result
            .estimates
            .iter()
            .map(|e| ParameterRow {
                name: e.name.to_string(),
                value: e.value,
                sigma: e.sigma,
                unit: parameter_unit(&e.name).to_string(),
            })
            .collect(),
        chi2: result.chi2,
        residual_rms_mhz: result.residual_rms_mhz,
        iterations: result.iterations,
        converged: result.converged,
        sign_ambiguous: result.sign_ambiguous,
        misalignment_deg: result.misalignment_deg,
        assignments,
        flagged_peaks,
        fitted_system: result.system.clone(),
        initial_system: initial.clone(),
        inputs,
    }
}

pub fn run(args: &FitArgs) -> Result<()> {
    let theta = args.common.single_theta()?;
    let resolved = resolve(args.common.merged_config(theta)?)?;
    ensure_out_dir(&resolved.out_dir)?;
    let window = (resolved.f_min_mhz, resolved.f_max_mhz);

    let (peaks, inputs) = gather_peaks(args, window)?;
    if peaks.is_empty() {
        return Err(CliError::Data(
            "no peaks detected in the zero-field inputs; nothing to fit".into(),
        ));
    }

    let mut problem = FitProblem::zero_field(resolved.system.clone(), &peaks, window);
    problem.gate_mhz = args.gate_mhz;
    if args.freeze_p {
        problem.free.quadrupole_p = false;
    }
    let result = fit_parameters(&problem).map_err(|e| classify_run("zero-field fit", e))?;

    let report = build_report(&result, &peaks, &resolved.system, inputs);
    write_json(&resolved.out_dir, "fit_report.json", &report)?;

    // Overlay: measured positions as rug marks, per-peak residual stems.
    let residual_span = report
        .assignments
        .iter()
        .filter_map(|a| a.residual_mhz)
        .fold(1.0f64, |m, r| m.max(r.abs()));
    let mut plot = Plot::new(
        "zero-field fit: measured lines and residuals",
        "frequency (MHz)",
        "residual (MHz)",
        window,
        (-1.1 * residual_span, 1.1 * residual_span),
    );
    plot.rug(&peaks, "#999999", 0.12);
    plot.polyline(&[(window.0, 0.0), (window.1, 0.0)], "#404040", 0.8, 1.0);
    let matched: Vec<(f64, f64)> = report
        .assignments
        .iter()
        .filter_map(|a| a.residual_mhz.map(|r| (a.measured_mhz, r)))
        .collect();
    plot.scatter(&matched, "#d62728", 3.5);
    write_text(&resolved.out_dir, "fit_overlay.svg", &plot.render())?;

    let mut record = RunRecord::new("fit-zero-field", &resolved, report.inputs.clone());
    record.outputs = vec!["fit_report.json".into(), "fit_overlay.svg".into()];
    write_json(&resolved.out_dir, "run.json", &record)?;

    println!(
        "fit-zero-field: {} peaks, rms {:.4} MHz, converged: {} -> {}",
        peaks.len(),
        report.residual_rms_mhz,
        report.converged,
        resolved.out_dir.display()
    );
    Ok(())
}

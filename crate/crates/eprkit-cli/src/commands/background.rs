use std::path::PathBuf;

use clap::Args;
use eprkit::csvio::{parse_trace_csv, trace_csv};
use eprkit::{build_reference, subtract_background};

use crate::config::resolve;
use crate::errors::{CliError, Result};
use crate::report::{digest_file, ensure_out_dir, write_json, write_text, RunRecord};
use crate::CommonArgs;

#[derive(Args, Debug)]
pub struct BackgroundArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input traces on a common frequency grid.
    #[arg(value_name = "TRACE", required = true)]
    files: Vec<PathBuf>,
    /// Frequency window LO:HI (MHz) excluded from the reference median,
    /// repeatable; use around lines that sit at fixed frequency.
    #[arg(long, value_name = "LO:HI")]
    exclude: Vec<String>,
}

fn parse_window(spec: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let err = || CliError::Config(format!("--exclude expects LO:HI in MHz, got {spec:?}"));
    if parts.len() != 2 {
        return Err(err());
    }
    let lo: f64 = parts[0].parse().map_err(|_| err())?;
    let hi: f64 = parts[1].parse().map_err(|_| err())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(err());
    }
    Ok((lo, hi))
}

pub fn run(args: &BackgroundArgs) -> Result<()> {
    let theta = args.common.single_theta()?;
    let resolved = resolve(args.common.merged_config(theta)?)?;
    ensure_out_dir(&resolved.out_dir)?;

    let windows: Vec<(f64, f64)> = args
        .exclude
        .iter()
        .map(|s| parse_window(s))
        .collect::<Result<_>>()?;

    let mut inputs = Vec::new();
    let mut traces = Vec::new();
    for path in &args.files {
        inputs.push(digest_file(path)?);
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(&format!("cannot read {name}"), e))?;
        traces.push(parse_trace_csv(&text, &name).map_err(|e| CliError::data("trace", e))?);
    }

    let exclusions: Vec<Vec<(f64, f64)>> = if windows.is_empty() {
        Vec::new()
    } else {
        vec![windows; traces.len()]
    };
    let reference = build_reference(&traces, &exclusions)
        .map_err(|e| CliError::data("background reference", e))?;

    let mut record = RunRecord::new("background", &resolved, inputs);
    write_text(&resolved.out_dir, "reference.csv", &trace_csv(&reference))?;
    record.outputs.push("reference.csv".into());

    for (k, (path, trace)) in args.files.iter().zip(&traces).enumerate() {
        let corrected = subtract_background(trace, &reference)
            .map_err(|e| CliError::data("background subtraction", e))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("trace{k}"));
        let name = format!("corrected_{k:03}_{stem}.csv");
        write_text(&resolved.out_dir, &name, &trace_csv(&corrected))?;
        record.outputs.push(name);
    }

    write_json(&resolved.out_dir, "run.json", &record)?;
    println!(
        "background: reference from {} trace(s) -> {}",
        traces.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

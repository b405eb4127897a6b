use clap::Args;
use eprkit::csvio;
use eprkit::{
    field_scan, magnitude_scan, synthesize, IntensityThreshold, Linewidths, NoiseSpec,
};

use crate::config::resolve;
use crate::errors::{classify_run, CliError, Result};
use crate::report::{ensure_out_dir, write_json, write_text, RunRecord};
use crate::svg::Plot;
use crate::{with_pool, CommonArgs};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also write one synthetic trace CSV per field point.
    #[arg(long)]
    emit_traces: bool,
    /// Line width used for synthetic traces, MHz.
    #[arg(long, value_name = "MHZ", default_value_t = 1.84)]
    fwhm_mhz: f64,
    /// Gaussian noise level for synthetic traces (0 = noiseless).
    #[arg(long, value_name = "SIGMA", default_value_t = 0.0)]
    noise_sigma: f64,
    /// Frequency grid step for synthetic traces, MHz.
    #[arg(long, value_name = "MHZ", default_value_t = 0.05)]
    trace_step_mhz: f64,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let theta = args.common.single_theta()?;
    let resolved = resolve(args.common.merged_config(theta)?)?;
    ensure_out_dir(&resolved.out_dir)?;

    let fields = magnitude_scan(
        resolved.direction(),
        resolved.b_start_mt,
        resolved.b_stop_mt,
        resolved.b_step_mt,
    )
    .map_err(|e| CliError::config("field grid", e))?;
    let geometry = resolved.excitation()?;
    let thermal = resolved.thermal()?;

    let scan = with_pool(resolved.threads, || {
        field_scan(
            &resolved.system,
            &fields,
            &geometry,
            &thermal,
            resolved.f_min_mhz,
            resolved.f_max_mhz,
            IntensityThreshold::default(),
        )
    })?
    .map_err(|e| classify_run("field scan", e))?;

    let mut record = RunRecord::new("simulate", &resolved, Vec::new());

    write_text(&resolved.out_dir, "catalog.csv", &csvio::catalog_csv(&scan))?;
    record.outputs.push("catalog.csv".into());

    if args.emit_traces {
        if !(args.trace_step_mhz.is_finite() && args.trace_step_mhz > 0.0) {
            return Err(CliError::Config(format!(
                "trace_step_mhz must be positive, got {}",
                args.trace_step_mhz
            )));
        }
        let n_points = ((resolved.f_max_mhz - resolved.f_min_mhz) / args.trace_step_mhz).round()
            as usize;
        let grid: Vec<f64> = (0..=n_points)
            .map(|k| resolved.f_min_mhz + k as f64 * args.trace_step_mhz)
            .collect();
        let traces_dir = resolved.out_dir.join("traces");
        std::fs::create_dir_all(&traces_dir)
            .map_err(|e| CliError::data("creating traces directory", e))?;
        for (k, point) in scan.iter().enumerate() {
            let noise = (args.noise_sigma > 0.0).then(|| NoiseSpec {
                seed: resolved.seed.wrapping_add(k as u64),
                sigma: args.noise_sigma,
            });
            let mut trace = synthesize(
                &point.catalog,
                &grid,
                &Linewidths::Uniform(args.fwhm_mhz),
                noise,
                point.field.magnitude(),
            )
            .map_err(|e| classify_run("synthesizing trace", e))?;
            trace.temperature_mk = Some(resolved.t_mk);
            let name = format!("traces/trace_{k:04}.csv");
            write_text(&resolved.out_dir, &name, &csvio::trace_csv(&trace))?;
            record.outputs.push(name);
        }
    }

    // Frequency-vs-field branch diagram, line opacity following intensity.
    let series = super::branch_series(&scan);
    let mut plot = Plot::new(
        &format!("transition branches ({})", resolved.system_source),
        "field (mT)",
        "frequency (MHz)",
        (resolved.b_start_mt, resolved.b_stop_mt),
        (resolved.f_min_mhz, resolved.f_max_mhz),
    );
    let strongest = series
        .iter()
        .map(|(_, _, peak)| *peak)
        .fold(f64::MIN_POSITIVE, f64::max);
    for (_, points, peak) in &series {
        let opacity = (peak / strongest).powf(0.25).clamp(0.15, 1.0);
        plot.polyline(points, "#1f77b4", 1.4, opacity);
    }
    write_text(&resolved.out_dir, "branches.svg", &plot.render())?;
    record.outputs.push("branches.svg".into());

    write_json(&resolved.out_dir, "run.json", &record)?;
    println!(
        "simulate: {} field points, {} branches -> {}",
        scan.len(),
        series.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

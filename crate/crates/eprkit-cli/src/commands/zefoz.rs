use clap::Args;
use eprkit::csvio::zefoz_csv;
use eprkit::{
    field_scan, find_zefoz, magnitude_scan, track_branches, IntensityThreshold, Refinement,
    ZefozReport, DEFAULT_ZEFOZ_TOL_MHZ_PER_MT,
};

use crate::config::resolve;
use crate::errors::{classify_run, CliError, Result};
use crate::report::{ensure_out_dir, write_json, write_text, RunRecord};
use crate::{with_pool, CommonArgs};

#[derive(Args, Debug)]
pub struct ZefozArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// First-derivative tolerance for the refined turning point, MHz/mT.
    #[arg(long, value_name = "MHZPERMT", default_value_t = DEFAULT_ZEFOZ_TOL_MHZ_PER_MT)]
    tolerance: f64,
}

pub fn run(args: &ZefozArgs) -> Result<()> {
    let thetas: Vec<Option<f64>> = match args.common.theta_list() {
        None => vec![None],
        Some(list) => list.iter().copied().map(Some).collect(),
    };
    let batch = thetas.len() > 1;

    let mut all_reports: Vec<ZefozReport> = Vec::new();
    let mut resolved_for_record = None;
    for theta in thetas {
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

        let branches = track_branches(&scan).map_err(|e| classify_run("branch tracking", e))?;
        for branch in &branches {
            let reports = find_zefoz(branch, args.tolerance, Refinement::Exact(&resolved.system))
                .map_err(|e| classify_run(&format!("branch {}", branch.id), e))?;
            for mut report in reports {
                if batch {
                    report.branch_id =
                        format!("t{}:{}", resolved.b0_theta_deg, report.branch_id);
                }
                all_reports.push(report);
            }
        }
        resolved_for_record = Some(resolved);
    }
    let resolved = resolved_for_record.expect("at least one direction runs");

    write_text(&resolved.out_dir, "zefoz.csv", &zefoz_csv(&all_reports))?;
    let mut record = RunRecord::new("zefoz", &resolved, Vec::new());
    record.outputs = vec!["zefoz.csv".into()];
    write_json(&resolved.out_dir, "run.json", &record)?;

    println!(
        "zefoz: {} turning point(s) -> {}",
        all_reports.len(),
        resolved.out_dir.join("zefoz.csv").display()
    );
    Ok(())
}

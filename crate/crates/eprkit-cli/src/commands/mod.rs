pub mod background;
pub mod calibrate;
pub mod fit_zero_field;
pub mod simulate;
pub mod thermal;
pub mod zefoz;

use std::collections::BTreeMap;

use eprkit::{subtract_background, FieldScanPoint, SpectrumTrace};

use crate::errors::{CliError, Result};

/// Levels a trace against its own median and orients the line structure
/// upward, so peak detection works on both conventions that appear in
/// practice: transmission dips below a baseline (measured data) and upward
/// peaks on a flat floor (synthesized data). Whichever side of the median
/// has the larger excursion is taken to be the signal.
pub fn flatten_against_median(trace: &SpectrumTrace) -> Result<SpectrumTrace> {
    let mut sorted = trace.amplitude.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let flat = SpectrumTrace::new(
        trace.field_mt,
        trace.temperature_mk,
        trace.frequency_mhz.clone(),
        vec![median; trace.amplitude.len()],
    )
    .map_err(|e| CliError::data("flattening trace", e))?;
    let mut corrected =
        subtract_background(trace, &flat).map_err(|e| CliError::data("flattening trace", e))?;
    let up = corrected.amplitude.iter().copied().fold(0.0f64, f64::max);
    let down = corrected.amplitude.iter().copied().fold(0.0f64, f64::min);
    if -down > up {
        for a in &mut corrected.amplitude {
            *a = -*a;
        }
    }
    Ok(corrected)
}

/// Branch polylines for plotting: one frequency-vs-field series per
/// (lower, upper) level pair, with the series' peak intensity.
pub fn branch_series(scan: &[FieldScanPoint]) -> Vec<((usize, usize), Vec<(f64, f64)>, f64)> {
    let mut series: BTreeMap<(usize, usize), (Vec<(f64, f64)>, f64)> = BTreeMap::new();
    for point in scan {
        let b = point.field.magnitude();
        for rec in &point.catalog {
            let entry = series
                .entry((rec.i_index, rec.f_index))
                .or_insert_with(|| (Vec::new(), 0.0));
            entry.0.push((b, rec.frequency_mhz));
            entry.1 = entry.1.max(rec.intensity);
        }
    }
    series
        .into_iter()
        .map(|(pair, (pts, peak))| (pair, pts, peak))
        .collect()
}

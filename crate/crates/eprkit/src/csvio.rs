//! CSV readers and writers for the toolkit's on-disk formats. All writers
//! produce deterministic fixed-precision output so reruns are byte-identical.
//!
//! Formats:
//! - transition catalog: `field_mT,freq_MHz,intensity,chi,i_index,f_index,delta_mF`
//! - trace: `# field_mT=<v>` / optional `# temperature_mK=<v>` headers, then
//!   `frequency_hz,amplitude_db` rows (frequencies in Hz on disk, ascending)
//! - peak report: `field_mT,center_MHz,fwhm_MHz,area,residual_rms`
//! - turning-point report: `branch_id,f0_MHz,B_star_mT,f_star_MHz,S2_MHz_per_mT2,S1_residual`
//! - measured branch: `field_mT,f_center_MHz,fwhm_MHz`

use std::fmt::Write as _;

use crate::spectrum::{PeakFit, SpectrumTrace};
use crate::transitions::FieldScanPoint;
use crate::zefoz::ZefozReport;
use crate::{Error, Result};

pub const CATALOG_HEADER: &str = "field_mT,freq_MHz,intensity,chi,i_index,f_index,delta_mF";
pub const TRACE_HEADER: &str = "frequency_hz,amplitude_db";
pub const PEAKS_HEADER: &str = "field_mT,center_MHz,fwhm_MHz,area,residual_rms";
pub const ZEFOZ_HEADER: &str = "branch_id,f0_MHz,B_star_mT,f_star_MHz,S2_MHz_per_mT2,S1_residual";
pub const BRANCH_HEADER: &str = "field_mT,f_center_MHz,fwhm_MHz";

/// Serializes a field scan's transition catalogs. Rows are ordered by field
/// ascending, then frequency ascending; unlabelable transitions carry the
/// literal `mixed` in the `delta_mF` column.
pub fn catalog_csv(scan: &[FieldScanPoint]) -> String {
    let mut order: Vec<usize> = (0..scan.len()).collect();
    order.sort_by(|&a, &b| scan[a].field.magnitude().total_cmp(&scan[b].field.magnitude()));
    let mut out = String::from(CATALOG_HEADER);
    out.push('\n');
    for idx in order {
        let point = &scan[idx];
        let field = point.field.magnitude();
        // Catalogs are already frequency-ascending.
        for r in &point.catalog {
            let label = match r.delta_mf {
                Some(d) => d.to_string(),
                None => "mixed".to_string(),
            };
            writeln!(
                out,
                "{field:.4},{:.6},{:.6e},{:.6e},{},{},{label}",
                r.frequency_mhz, r.intensity, r.chi, r.i_index, r.f_index
            )
            .expect("writing to String cannot fail");
        }
    }
    out
}

/// Serializes a trace. Frequencies are written in Hz (the instrument
/// convention) even though they are MHz in memory.
pub fn trace_csv(trace: &SpectrumTrace) -> String {
    let mut out = format!("# field_mT={:.4}\n", trace.field_mt);
    if let Some(t) = trace.temperature_mk {
        writeln!(out, "# temperature_mK={t:.4}").expect("writing to String cannot fail");
    }
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (f, a) in trace.frequency_mhz.iter().zip(&trace.amplitude) {
        writeln!(out, "{:.4},{a:.9}", f * 1e6).expect("writing to String cannot fail");
    }
    out
}

fn parse_number(path: &str, line: usize, what: &str, text: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        msg: format!("{what}: cannot parse number from {text:?}"),
    })
}

/// Parses the trace format written by [`trace_csv`]. `path` labels error
/// messages only; pass the file name (or any identifier for in-memory
/// sources).
pub fn parse_trace_csv(text: &str, path: &str) -> Result<SpectrumTrace> {
    let mut field_mt: Option<f64> = None;
    let mut temperature_mk: Option<f64> = None;
    let mut header_seen = false;
    let mut frequency_mhz = Vec::new();
    let mut amplitude = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let body = comment.trim();
            if let Some(v) = body.strip_prefix("field_mT=") {
                field_mt = Some(parse_number(path, lineno, "field_mT", v)?);
            } else if let Some(v) = body.strip_prefix("temperature_mK=") {
                temperature_mk = Some(parse_number(path, lineno, "temperature_mK", v)?);
            }
            continue;
        }
        if !header_seen {
            if line != TRACE_HEADER {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno,
                    msg: format!("expected header {TRACE_HEADER:?}, found {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let mut fields = line.split(',');
        let (Some(f), Some(a), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("expected 2 comma-separated values, found {line:?}"),
            });
        };
        frequency_mhz.push(parse_number(path, lineno, "frequency_hz", f)? / 1e6);
        amplitude.push(parse_number(path, lineno, "amplitude_db", a)?);
    }

    let Some(field_mt) = field_mt else {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: "missing \"# field_mT=<value>\" header".to_string(),
        });
    };
    if !header_seen {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("missing {TRACE_HEADER:?} header"),
        });
    }
    SpectrumTrace::new(field_mt, temperature_mk, frequency_mhz, amplitude).map_err(|e| {
        Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: e.to_string(),
        }
    })
}

/// Serializes fitted peaks, one row per (field, fit).
pub fn peaks_csv(rows: &[(f64, PeakFit)]) -> String {
    let mut out = String::from(PEAKS_HEADER);
    out.push('\n');
    for (field, fit) in rows {
        writeln!(
            out,
            "{field:.4},{:.6},{:.6},{:.6e},{:.6e}",
            fit.center_mhz, fit.fwhm_mhz, fit.area, fit.residual_rms
        )
        .expect("writing to String cannot fail");
    }
    out
}

/// Parses the peak-report format written by [`peaks_csv`] back into
/// (field, center, fwhm) triples — the columns a measured peak list needs.
pub fn parse_peaks_csv(text: &str, path: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != PEAKS_HEADER {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno,
                    msg: format!("expected header {PEAKS_HEADER:?}, found {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("expected 5 comma-separated values, found {line:?}"),
            });
        }
        rows.push((
            parse_number(path, lineno, "field_mT", fields[0])?,
            parse_number(path, lineno, "center_MHz", fields[1])?,
            parse_number(path, lineno, "fwhm_MHz", fields[2])?,
        ));
    }
    if !header_seen {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("missing {PEAKS_HEADER:?} header"),
        });
    }
    Ok(rows)
}

/// Serializes turning-point reports.
pub fn zefoz_csv(reports: &[ZefozReport]) -> String {
    let mut out = String::from(ZEFOZ_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(
            out,
            "{},{:.6},{:.4},{:.6},{:.6},{:.3e}",
            r.branch_id,
            r.f0_mhz,
            r.b_star_mt,
            r.f_star_mhz,
            r.s2_mhz_per_mt2,
            r.s1_residual_mhz_per_mt
        )
        .expect("writing to String cannot fail");
    }
    out
}

/// Serializes a measured branch: per-field fitted line centers and widths.
pub fn branch_csv(rows: &[(f64, PeakFit)]) -> String {
    let mut out = String::from(BRANCH_HEADER);
    out.push('\n');
    for (field, fit) in rows {
        writeln!(out, "{field:.4},{:.6},{:.6}", fit.center_mhz, fit.fwhm_mhz)
            .expect("writing to String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;
    use crate::transitions::{
        field_scan, ExcitationGeometry, IntensityThreshold, ThermalModel,
    };
    use crate::FieldVector;
    use approx::assert_abs_diff_eq;

    fn sample_trace() -> SpectrumTrace {
        SpectrumTrace::new(
            19.0,
            Some(52.5),
            vec![2400.0, 2400.25, 2400.5, 2400.75],
            vec![-30.0, -32.5, -31.25, -30.125],
        )
        .unwrap()
    }

    #[test]
    fn trace_round_trips_through_hz_on_disk() {
        let trace = sample_trace();
        let text = trace_csv(&trace);
        assert!(text.starts_with("# field_mT=19.0000\n# temperature_mK=52.5000\n"));
        assert!(text.contains("frequency_hz,amplitude_db"));
        assert!(text.contains("2400000000.0000,-30.000000000"));
        let back = parse_trace_csv(&text, "mem").unwrap();
        assert_eq!(back.field_mt, trace.field_mt);
        assert_eq!(back.temperature_mk, trace.temperature_mk);
        for (a, b) in back.frequency_mhz.iter().zip(&trace.frequency_mhz) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_eq!(back.amplitude, trace.amplitude);
        // Writing is deterministic: a rewrite is byte-identical.
        assert_eq!(trace_csv(&back), text);
    }

    #[test]
    fn temperature_header_is_optional() {
        let text = "# field_mT=0\nfrequency_hz,amplitude_db\n1000000,1\n2000000,2\n";
        let trace = parse_trace_csv(text, "mem").unwrap();
        assert_eq!(trace.temperature_mk, None);
        assert_eq!(trace.frequency_mhz, vec![1.0, 2.0]);
    }

    #[test]
    fn malformed_traces_fail_with_line_numbers() {
        let missing_field = "frequency_hz,amplitude_db\n1,1\n2,2\n";
        match parse_trace_csv(missing_field, "t.csv").unwrap_err() {
            Error::Parse { path, msg, .. } => {
                assert_eq!(path, "t.csv");
                assert!(msg.contains("field_mT"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }

        let bad_header = "# field_mT=1\nfreq,amp\n1,1\n";
        match parse_trace_csv(bad_header, "t.csv").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }

        let bad_number = "# field_mT=1\nfrequency_hz,amplitude_db\n1000000,1\nx,2\n";
        match parse_trace_csv(bad_number, "t.csv").unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 4);
                assert!(msg.contains("frequency_hz"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }

        let descending = "# field_mT=1\nfrequency_hz,amplitude_db\n2000000,1\n1000000,2\n";
        assert!(parse_trace_csv(descending, "t.csv").is_err());
    }

    #[test]
    fn catalog_rows_are_field_then_frequency_ordered() {
        let system = preset("this_work").unwrap();
        let dir = [0.0, 0.0, 1.0];
        // Deliberately unordered field list; the writer sorts rows.
        let fields = vec![FieldVector::along(dir, 10.0), FieldVector::along(dir, 0.0)];
        let scan = field_scan(
            &system,
            &fields,
            &ExcitationGeometry::voigt(dir).unwrap(),
            &ThermalModel::new(0.020, 0.020).unwrap(),
            1800.0,
            3500.0,
            IntensityThreshold::default(),
        )
        .unwrap();
        let text = catalog_csv(&scan);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CATALOG_HEADER);
        let mut last = (f64::MIN, f64::MIN);
        let mut zero_field_rows = 0;
        for row in &lines[1..] {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 7);
            let field: f64 = cols[0].parse().unwrap();
            let freq: f64 = cols[1].parse().unwrap();
            assert!(
                field > last.0 || (field == last.0 && freq >= last.1),
                "ordering violated at {row}"
            );
            last = (field, freq);
            if field == 0.0 {
                zero_field_rows += 1;
                // Zero-field states have sharp F_z, so labels are integers.
                assert!(cols[6].parse::<i32>().is_ok(), "label {:?}", cols[6]);
            }
        }
        assert!(zero_field_rows > 0);
        assert_eq!(catalog_csv(&scan), text);
    }

    #[test]
    fn peak_rows_round_trip() {
        let fit = PeakFit {
            center_mhz: 2413.96,
            fwhm_mhz: 1.84,
            amplitude: 0.9,
            offset: 0.01,
            area: std::f64::consts::FRAC_PI_2 * 0.9 * 1.84,
            residual_rms: 0.002,
            iterations: 12,
        };
        let text = peaks_csv(&[(19.0, fit.clone()), (20.0, fit)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], PEAKS_HEADER);
        assert_eq!(lines.len(), 3);
        let rows = parse_peaks_csv(&text, "mem").unwrap();
        assert_eq!(rows.len(), 2);
        assert_abs_diff_eq!(rows[0].0, 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0].1, 2413.96, epsilon = 1e-6);
        assert_abs_diff_eq!(rows[1].2, 1.84, epsilon = 1e-6);

        assert!(parse_peaks_csv("nonsense\n", "mem").is_err());
    }

    #[test]
    fn zefoz_and_branch_exports_have_the_documented_columns() {
        let report = ZefozReport {
            branch_id: "6-10".into(),
            f0_mhz: 2413.962436,
            b_star_mt: 21.0046,
            f_star_mhz: 2232.02,
            s2_mhz_per_mt2: 0.862,
            s1_residual_mhz_per_mt: 4.2e-4,
            s1_start_mhz_per_mt: -16.56,
            s1_end_mhz_per_mt: 7.57,
        };
        let text = zefoz_csv(&[report]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], ZEFOZ_HEADER);
        assert_eq!(
            lines[1],
            "6-10,2413.962436,21.0046,2232.020000,0.862000,4.200e-4"
        );

        let fit = PeakFit {
            center_mhz: 2232.0,
            fwhm_mhz: 1.84,
            amplitude: 1.0,
            offset: 0.0,
            area: 1.0,
            residual_rms: 0.0,
            iterations: 1,
        };
        let branch = branch_csv(&[(19.0, fit)]);
        let lines: Vec<&str> = branch.lines().collect();
        assert_eq!(lines[0], BRANCH_HEADER);
        assert_eq!(lines[1], "19.0000,2232.000000,1.840000");
    }
}

//! Transition-branch tracking across field scans and clock-point analysis:
//! first/second-order field sensitivities, turning-point (ZEFOZ) search and
//! the linewidth-versus-field minimum.

use crate::calibration::hungarian;
use crate::spectrum::PeakFit;
use crate::spin::{FieldVector, SpinOperators, SpinSystem};
use crate::transitions::FieldScanPoint;
use crate::{EigenSystem, Error, Result};

/// Convergence target for the turning-point search, MHz/mT.
pub const DEFAULT_ZEFOZ_TOL_MHZ_PER_MT: f64 = 1e-3;

/// One sample of a tracked transition branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPoint {
    pub field_mt: f64,
    pub frequency_mhz: f64,
    /// Catalog intensity of the tracked pair at this field; 0 when the pair
    /// fell below the catalog cutoff or out of its window.
    pub intensity: f64,
    /// Position of the tracked lower level in this field point's
    /// energy-sorted eigensystem.
    pub lower_sorted_index: usize,
    pub upper_sorted_index: usize,
    /// Distance from either tracked level to its nearest neighbor level,
    /// excluding the branch partner; infinite for a two-level system.
    pub min_gap_mhz: f64,
}

/// A tracking-continuity failure: the step-to-step state overlap dropped to
/// or below the continuity threshold, so the branch was cut at this field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEvent {
    pub field_mt: f64,
    pub overlap: f64,
}

/// A transition followed through a field scan by eigenstate continuity
/// rather than by energy order, so level crossings do not swap identities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBranch {
    /// Sorted-index pair at the branch's first point, plus a `.sN` suffix
    /// for every split ancestor.
    pub id: String,
    /// Sorted indices of the seeding pair at the branch's first point.
    pub seed_lower: usize,
    pub seed_upper: usize,
    /// Unit field direction of the scan.
    pub direction: [f64; 3],
    pub points: Vec<BranchPoint>,
    /// Why this branch ends before the scan does (when it does).
    pub splits: Vec<SplitEvent>,
    /// Smallest step-to-step state overlap seen while tracking.
    pub min_overlap: f64,
}

const CONTINUITY_THRESHOLD: f64 = 0.7;

fn scan_direction(scan: &[FieldScanPoint]) -> [f64; 3] {
    scan.iter()
        .find_map(|p| p.field.direction().ok())
        .unwrap_or([0.0, 0.0, 1.0])
}

/// Gap from levels `a` and `b` to their nearest neighbor, excluding each
/// other.
fn min_partner_excluded_gap(energies: &[f64], a: usize, b: usize) -> f64 {
    let mut gap = f64::INFINITY;
    for (m, &e) in energies.iter().enumerate() {
        if m == a || m == b {
            continue;
        }
        gap = gap.min((e - energies[a]).abs()).min((e - energies[b]).abs());
    }
    gap
}

fn catalog_intensity(point: &FieldScanPoint, lower: usize, upper: usize) -> f64 {
    point
        .catalog
        .iter()
        .find(|r| r.i_index == lower && r.f_index == upper)
        .map(|r| r.intensity)
        .unwrap_or(0.0)
}

fn branch_point(point: &FieldScanPoint, lower: usize, upper: usize) -> BranchPoint {
    let e = &point.eigensystem.energies;
    BranchPoint {
        field_mt: point.field.magnitude(),
        frequency_mhz: e[upper] - e[lower],
        intensity: catalog_intensity(point, lower.min(upper), lower.max(upper)),
        lower_sorted_index: lower,
        upper_sorted_index: upper,
        min_gap_mhz: min_partner_excluded_gap(e, lower, upper),
    }
}

/// Per-level correspondence between two adjacent eigensystems: entry `k` is
/// the index in `next` continuing level `k` of `prev`, with the overlap
/// magnitude of that pairing.
fn level_assignment(prev: &EigenSystem, next: &EigenSystem) -> (Vec<usize>, Vec<f64>) {
    let n = prev.dimension();
    let mut overlap = vec![vec![0.0f64; n]; n];
    for (k, row) in overlap.iter_mut().enumerate() {
        let vk = prev.states.column(k);
        for (l, o) in row.iter_mut().enumerate() {
            *o = (vk.adjoint() * next.states.column(l))[(0, 0)].norm();
        }
    }
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| row.iter().map(|o| 1.0 - o * o).collect())
        .collect();
    let assignment = hungarian(&cost);
    let overlaps = assignment
        .iter()
        .enumerate()
        .map(|(k, &l)| overlap[k][l])
        .collect();
    (assignment, overlaps)
}

/// Follows every transition of the first scan point's catalog through the
/// scan by eigenstate overlap. A branch whose step-to-step overlap drops to
/// 0.7 or below is cut there with a [`SplitEvent`] diagnostic and a
/// successor branch (id suffixed `.sN`) continues from the next point with
/// the best-guess correspondence.
pub fn track_branches(scan: &[FieldScanPoint]) -> Result<Vec<TransitionBranch>> {
    if scan.is_empty() {
        return Err(Error::NotEnoughData("branch tracking needs a nonempty scan".into()));
    }
    let direction = scan_direction(scan);

    struct Active {
        branch: TransitionBranch,
        lower: usize,
        upper: usize,
    }
    let mut active: Vec<Active> = scan[0]
        .catalog
        .iter()
        .map(|rec| Active {
            branch: TransitionBranch {
                id: format!("{}-{}", rec.i_index, rec.f_index),
                seed_lower: rec.i_index,
                seed_upper: rec.f_index,
                direction,
                points: vec![branch_point(&scan[0], rec.i_index, rec.f_index)],
                splits: Vec::new(),
                min_overlap: 1.0,
            },
            lower: rec.i_index,
            upper: rec.f_index,
        })
        .collect();
    let mut finished: Vec<TransitionBranch> = Vec::new();

    for step in 1..scan.len() {
        let (assignment, overlaps) =
            level_assignment(&scan[step - 1].eigensystem, &scan[step].eigensystem);
        let mut next_active = Vec::with_capacity(active.len());
        for mut a in active {
            let new_lower = assignment[a.lower];
            let new_upper = assignment[a.upper];
            let o = overlaps[a.lower].min(overlaps[a.upper]);
            if o > CONTINUITY_THRESHOLD {
                a.branch.min_overlap = a.branch.min_overlap.min(o);
                a.branch.points.push(branch_point(&scan[step], new_lower, new_upper));
                a.lower = new_lower;
                a.upper = new_upper;
                next_active.push(a);
            } else {
                let event = SplitEvent {
                    field_mt: scan[step].field.magnitude(),
                    overlap: o,
                };
                a.branch.splits.push(event);
                let child_id = format!("{}.s{}", a.branch.id, a.branch.splits.len());
                finished.push(a.branch);
                next_active.push(Active {
                    branch: TransitionBranch {
                        id: child_id,
                        seed_lower: new_lower,
                        seed_upper: new_upper,
                        direction,
                        points: vec![branch_point(&scan[step], new_lower, new_upper)],
                        splits: Vec::new(),
                        min_overlap: 1.0,
                    },
                    lower: new_lower,
                    upper: new_upper,
                });
            }
        }
        active = next_active;
    }
    finished.extend(active.into_iter().map(|a| a.branch));
    Ok(finished)
}

/// First- and second-order field sensitivities of a branch at one of its
/// interior samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub s1_mhz_per_mt: f64,
    pub s2_mhz_per_mt2: f64,
    /// True when a neighboring level sits closer than 10x the frequency
    /// change per scan step, so finite differences and tracking may be
    /// degraded by an avoided crossing.
    pub near_degeneracy: bool,
}

/// Nonuniform three-point central differences: first and second derivative
/// at the middle sample.
fn central_differences(
    (b_minus, f_minus): (f64, f64),
    (b0, f0): (f64, f64),
    (b_plus, f_plus): (f64, f64),
) -> (f64, f64) {
    let hm = b0 - b_minus;
    let hp = b_plus - b0;
    let denom = hp * hm * (hp + hm);
    let s1 = (f_plus * hm * hm - f_minus * hp * hp + f0 * (hp * hp - hm * hm)) / denom;
    let s2 = 2.0 * (f_minus * hp + f_plus * hm - f0 * (hp + hm)) / denom;
    (s1, s2)
}

fn sample_triple(branch: &TransitionBranch, j: usize) -> ((f64, f64), (f64, f64), (f64, f64)) {
    let p = |k: usize| (branch.points[k].field_mt, branch.points[k].frequency_mhz);
    (p(j - 1), p(j), p(j + 1))
}

fn interior_s1(branch: &TransitionBranch, j: usize) -> f64 {
    let (a, b, c) = sample_triple(branch, j);
    central_differences(a, b, c).0
}

/// Field sensitivity df/dB (and curvature) at the branch sample nearest
/// `field_mt`, by central finite differences over the neighboring samples.
/// Endpoints have no central stencil and are rejected.
pub fn sensitivity(branch: &TransitionBranch, field_mt: f64) -> Result<Sensitivity> {
    if branch.points.len() < 3 {
        return Err(Error::NotEnoughData(
            "sensitivity needs at least 3 branch samples".into(),
        ));
    }
    let j = (0..branch.points.len())
        .min_by(|&a, &b| {
            (branch.points[a].field_mt - field_mt)
                .abs()
                .total_cmp(&(branch.points[b].field_mt - field_mt).abs())
        })
        .expect("nonempty");
    if j == 0 || j == branch.points.len() - 1 {
        return Err(Error::InvalidInput(format!(
            "field {field_mt} mT falls on a scan endpoint; central differences need an interior sample"
        )));
    }
    let (pm, p0, pp) = sample_triple(branch, j);
    let (s1, s2) = central_differences(pm, p0, pp);
    let step_resolution = (p0.1 - pm.1).abs().max((pp.1 - p0.1).abs());
    Ok(Sensitivity {
        s1_mhz_per_mt: s1,
        s2_mhz_per_mt2: s2,
        near_degeneracy: branch.points[j].min_gap_mhz < 10.0 * step_resolution,
    })
}

/// S1 = d f / d B from the Hellmann-Feynman theorem: the difference of
/// dH/dB expectation values between the pair of eigenstates. Exact at the
/// given field point (no finite differences).
pub fn hellmann_feynman_s1(
    ops: &SpinOperators,
    system: &SpinSystem,
    eig: &EigenSystem,
    direction: [f64; 3],
    lower: usize,
    upper: usize,
) -> f64 {
    let dh = ops.zeeman_derivative(system, direction);
    let expectation = |k: usize| {
        let v = eig.states.column(k);
        (v.adjoint() * &dh * v)[(0, 0)].re
    };
    expectation(upper) - expectation(lower)
}

/// How [`find_zefoz`] polishes a bracketed turning point.
pub enum Refinement<'a> {
    /// Local parabola through the scan samples around the sign change.
    FromSamples,
    /// Bisection on the exact Hellmann-Feynman slope, re-diagonalizing the
    /// given system at every trial field.
    Exact(&'a SpinSystem),
}

/// A located zero-first-order-Zeeman (turning) point of a branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ZefozReport {
    pub branch_id: String,
    /// Branch frequency at the scan start.
    pub f0_mhz: f64,
    pub b_star_mt: f64,
    pub f_star_mhz: f64,
    pub s2_mhz_per_mt2: f64,
    /// |S1| remaining at the reported field.
    pub s1_residual_mhz_per_mt: f64,
    /// S1 at the first and last interior samples of the scan.
    pub s1_start_mhz_per_mt: f64,
    pub s1_end_mhz_per_mt: f64,
}

/// Coefficients (value, slope, curvature/2 form) of the parabola through
/// three points, returned as (c0, c1, c2) of c0 + c1 (b - b1) + c2 (b - b1)(b - b2)
/// together with the anchor fields b1, b2.
struct Parabola {
    b1: f64,
    b2: f64,
    g1: f64,
    d1: f64,
    c2: f64,
}

impl Parabola {
    fn through(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)) -> Option<Parabola> {
        let (b1, g1) = p1;
        let (b2, g2) = p2;
        let (b3, g3) = p3;
        if b1 == b2 || b2 == b3 || b1 == b3 {
            return None;
        }
        let d1 = (g2 - g1) / (b2 - b1);
        let c2 = ((g3 - g1) / (b3 - b1) - d1) / (b3 - b2);
        Some(Parabola { b1, b2, g1, d1, c2 })
    }

    fn value(&self, b: f64) -> f64 {
        self.g1 + self.d1 * (b - self.b1) + self.c2 * (b - self.b1) * (b - self.b2)
    }

    fn vertex(&self) -> Option<f64> {
        (self.c2 != 0.0).then(|| 0.5 * (self.b1 + self.b2) - self.d1 / (2.0 * self.c2))
    }

    fn curvature(&self) -> f64 {
        2.0 * self.c2
    }
}

/// Locates the turning points (dF/dB = 0) of a tracked branch. Sign changes
/// of the finite-difference slope between interior samples bracket each
/// candidate; `refinement` then polishes it. Returns one report per turning
/// point, empty when the branch is monotone over the scan.
pub fn find_zefoz(
    branch: &TransitionBranch,
    tolerance_mhz_per_mt: f64,
    refinement: Refinement<'_>,
) -> Result<Vec<ZefozReport>> {
    if branch.points.len() < 5 {
        return Err(Error::NotEnoughData(
            "turning-point search needs at least 5 branch samples".into(),
        ));
    }
    if !(tolerance_mhz_per_mt.is_finite() && tolerance_mhz_per_mt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "turning-point tolerance {tolerance_mhz_per_mt} MHz/mT"
        )));
    }
    let n = branch.points.len();
    let s1: Vec<f64> = (1..n - 1).map(|j| interior_s1(branch, j)).collect();
    let s1_start = s1[0];
    let s1_end = s1[s1.len() - 1];
    let field_at = |j: usize| branch.points[j].field_mt;

    let mut reports = Vec::new();
    for w in 0..s1.len() - 1 {
        let (sa, sb) = (s1[w], s1[w + 1]);
        if sa == 0.0 {
            // Exactly on a sample; treat as a bracket of zero width.
        } else if sa * sb >= 0.0 {
            continue;
        }
        let ja = w + 1; // branch-point index of the first bracket sample
        let jb = w + 2;
        let (ba, bb) = (field_at(ja), field_at(jb));
        let b_linear = if sa == 0.0 {
            ba
        } else {
            ba - sa * (bb - ba) / (sb - sa)
        };

        let report = match &refinement {
            Refinement::FromSamples => {
                let c = if (b_linear - ba).abs() <= (b_linear - bb).abs() { ja } else { jb }
                    .clamp(1, n - 2);
                let (pm, p0, pp) = sample_triple(branch, c);
                let parabola = Parabola::through(pm, p0, pp)
                    .ok_or_else(|| Error::InvalidInput("coincident branch samples".into()))?;
                let b_star = match parabola.vertex() {
                    Some(v) if v >= pm.0 && v <= pp.0 => v,
                    _ => b_linear,
                };
                let s1_residual = (sa + (b_star - ba) * (sb - sa) / (bb - ba)).abs();
                ZefozReport {
                    branch_id: branch.id.clone(),
                    f0_mhz: branch.points[0].frequency_mhz,
                    b_star_mt: b_star,
                    f_star_mhz: parabola.value(b_star),
                    s2_mhz_per_mt2: parabola.curvature(),
                    s1_residual_mhz_per_mt: s1_residual,
                    s1_start_mhz_per_mt: s1_start,
                    s1_end_mhz_per_mt: s1_end,
                }
            }
            Refinement::Exact(system) => refine_exact(
                branch,
                system,
                (ba, bb),
                b_linear,
                tolerance_mhz_per_mt,
                (s1_start, s1_end),
            )?,
        };
        reports.push(report);
    }
    Ok(reports)
}

fn refine_exact(
    branch: &TransitionBranch,
    system: &SpinSystem,
    (ba, bb): (f64, f64),
    b_linear: f64,
    tolerance: f64,
    (s1_start, s1_end): (f64, f64),
) -> Result<ZefozReport> {
    let ops = SpinOperators::new(system)?;
    let dir = branch.direction;
    // Anchor the level identification at the bracket sample nearest the
    // estimated root; every trial field re-identifies the pair by overlap
    // with this anchor.
    let anchor_idx = branch
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.field_mt == ba || p.field_mt == bb)
        .min_by(|(_, p), (_, q)| {
            (p.field_mt - b_linear)
                .abs()
                .total_cmp(&(q.field_mt - b_linear).abs())
        })
        .map(|(j, _)| j)
        .expect("bracket samples are branch points");
    let anchor = &branch.points[anchor_idx];
    let anchor_eig = ops.eigensystem(system, FieldVector::along(dir, anchor.field_mt))?;
    let dh = ops.zeeman_derivative(system, dir);

    let identify = |anchor_level: usize, eig: &EigenSystem| -> usize {
        let v = anchor_eig.states.column(anchor_level);
        (0..eig.dimension())
            .max_by(|&a, &b| {
                let oa = (v.adjoint() * eig.states.column(a))[(0, 0)].norm();
                let ob = (v.adjoint() * eig.states.column(b))[(0, 0)].norm();
                oa.total_cmp(&ob)
            })
            .expect("nonempty eigensystem")
    };
    let probe = |b: f64| -> Result<(f64, f64)> {
        let eig = ops.eigensystem(system, FieldVector::along(dir, b))?;
        let lower = identify(anchor.lower_sorted_index, &eig);
        let upper = identify(anchor.upper_sorted_index, &eig);
        let expectation = |k: usize| {
            let v = eig.states.column(k);
            (v.adjoint() * &dh * v)[(0, 0)].re
        };
        Ok((
            expectation(upper) - expectation(lower),
            eig.energies[upper] - eig.energies[lower],
        ))
    };

    let (mut lo, mut hi) = (ba, bb);
    let (mut s_lo, _) = probe(lo)?;
    let (s_hi, _) = probe(hi)?;
    let (mut b_star, mut s_star, mut f_star);
    if s_lo == 0.0 {
        b_star = lo;
        (s_star, f_star) = probe(lo)?;
    } else if s_hi == 0.0 {
        b_star = hi;
        (s_star, f_star) = probe(hi)?;
    } else if s_lo * s_hi > 0.0 {
        // The exact slope does not change sign over the bracket (the
        // finite-difference crossing was a discretization artifact); report
        // the sample-level estimate instead.
        b_star = b_linear;
        (s_star, f_star) = probe(b_star)?;
    } else {
        b_star = 0.5 * (lo + hi);
        (s_star, f_star) = probe(b_star)?;
        for _ in 0..200 {
            if s_star.abs() <= tolerance || (hi - lo) < 1e-10 {
                break;
            }
            if s_lo * s_star < 0.0 {
                hi = b_star;
            } else {
                lo = b_star;
                s_lo = s_star;
            }
            b_star = 0.5 * (lo + hi);
            (s_star, f_star) = probe(b_star)?;
        }
    }

    // Curvature from the exact slope, differenced over a small window.
    let delta = 0.01;
    let (s_plus, _) = probe(b_star + delta)?;
    let (s_minus, _) = probe(b_star - delta)?;
    Ok(ZefozReport {
        branch_id: branch.id.clone(),
        f0_mhz: branch.points[0].frequency_mhz,
        b_star_mt: b_star,
        f_star_mhz: f_star,
        s2_mhz_per_mt2: (s_plus - s_minus) / (2.0 * delta),
        s1_residual_mhz_per_mt: s_star.abs(),
        s1_start_mhz_per_mt: s1_start,
        s1_end_mhz_per_mt: s1_end,
    })
}

/// The linewidth minimum extracted from per-field line fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinewidthMinimum {
    pub b_min_mt: f64,
    pub gamma_min_mhz: f64,
    /// b_min - B* when a turning-point report was supplied.
    pub offset_from_zefoz_mt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinewidthTable {
    /// (field mT, FWHM MHz), sorted by field.
    pub points: Vec<(f64, f64)>,
    pub minimum: Option<LinewidthMinimum>,
    /// True when the linewidths carry no field dependence to locate a
    /// minimum from.
    pub flat: bool,
}

/// Locates the field of minimum linewidth by an exact parabola through the
/// three narrowest fits, optionally reporting its offset from a located
/// turning point.
pub fn linewidth_vs_field(
    measurements: &[(f64, PeakFit)],
    zefoz: Option<&ZefozReport>,
) -> Result<LinewidthTable> {
    if measurements.len() < 3 {
        return Err(Error::NotEnoughData(
            "linewidth analysis needs at least 3 field points".into(),
        ));
    }
    let mut points: Vec<(f64, f64)> = measurements
        .iter()
        .map(|(b, fit)| (*b, fit.fwhm_mhz))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let widths: Vec<f64> = points.iter().map(|p| p.1).collect();
    let spread = widths.iter().cloned().fold(f64::MIN, f64::max)
        - widths.iter().cloned().fold(f64::MAX, f64::min);
    if spread.abs() <= 1e-9 * widths.iter().cloned().fold(0.0, f64::max).max(1.0) {
        return Ok(LinewidthTable {
            points,
            minimum: None,
            flat: true,
        });
    }

    let mut narrowest = points.clone();
    narrowest.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut three = narrowest[..3].to_vec();
    three.sort_by(|a, b| a.0.total_cmp(&b.0));
    let parabola = Parabola::through(three[0], three[1], three[2])
        .ok_or_else(|| Error::InvalidInput("repeated field values in linewidth data".into()))?;
    let minimum = match parabola.vertex() {
        Some(b_min) if parabola.curvature() > 0.0 => Some(LinewidthMinimum {
            b_min_mt: b_min,
            gamma_min_mhz: parabola.value(b_min),
            offset_from_zefoz_mt: zefoz.map(|z| b_min - z.b_star_mt),
        }),
        _ => None,
    };
    Ok(LinewidthTable {
        points,
        minimum,
        flat: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::MU_B_MHZ_PER_MT;
    use crate::presets::preset;
    use crate::transitions::{
        field_scan, magnitude_scan, ExcitationGeometry, IntensityThreshold, ThermalModel,
        TransitionRecord,
    };
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    fn thermal() -> ThermalModel {
        ThermalModel::new(0.020, 0.020).unwrap()
    }

    fn tilt_direction(theta_deg: f64) -> [f64; 3] {
        let t = theta_deg.to_radians();
        [t.sin(), 0.0, t.cos()]
    }

    fn scan_this_work(theta_deg: f64, stop_mt: f64, step_mt: f64) -> Vec<FieldScanPoint> {
        let system = preset("this_work").unwrap();
        let dir = tilt_direction(theta_deg);
        let fields = magnitude_scan(dir, 0.0, stop_mt, step_mt).unwrap();
        field_scan(
            &system,
            &fields,
            &ExcitationGeometry::voigt(dir).unwrap(),
            &thermal(),
            2300.0,
            2500.0,
            IntensityThreshold::default(),
        )
        .unwrap()
    }

    #[test]
    fn electron_only_scan_gives_one_linear_branch() {
        let system = preset("i0").unwrap();
        let dir = [0.0, 0.0, 1.0];
        let fields = magnitude_scan(dir, 5.0, 50.0, 5.0).unwrap();
        let scan = field_scan(
            &system,
            &fields,
            &ExcitationGeometry::voigt(dir).unwrap(),
            &thermal(),
            100.0,
            2500.0,
            IntensityThreshold::default(),
        )
        .unwrap();
        let branches = track_branches(&scan).unwrap();
        assert_eq!(branches.len(), 1);
        let b = &branches[0];
        assert!(b.splits.is_empty());
        assert_eq!(b.points.len(), 10);
        for p in &b.points {
            assert_abs_diff_eq!(
                p.frequency_mhz,
                system.g_parallel * MU_B_MHZ_PER_MT * p.field_mt,
                epsilon = 1e-6
            );
            assert!(p.min_gap_mhz.is_infinite());
        }
        let s = sensitivity(b, 25.0).unwrap();
        assert_abs_diff_eq!(s.s1_mhz_per_mt, 43.91, epsilon = 0.01);
        assert_abs_diff_eq!(s.s2_mhz_per_mt2, 0.0, epsilon = 1e-8);
        assert!(!s.near_degeneracy);
        assert!(find_zefoz(b, DEFAULT_ZEFOZ_TOL_MHZ_PER_MT, Refinement::FromSamples)
            .unwrap()
            .is_empty());
    }

    /// Two transitions from independent blocks whose frequencies cross
    /// mid-scan; their upper levels also cross in energy order.
    fn crossing_scan() -> Vec<FieldScanPoint> {
        let basis = |k: usize| {
            let mut v = DMatrix::<Complex64>::zeros(4, 1);
            v[(k, 0)] = Complex64::new(1.0, 0.0);
            v
        };
        (0..=6)
            .map(|step| {
                let b = step as f64;
                // Block A: basis states 0 (E=0) and 1 (E=100+10B).
                // Block B: basis states 2 (E=2) and 3 (E=162-10B).
                let levels = [(0.0, 0usize), (2.0, 2), (100.0 + 10.0 * b, 1), (162.0 - 10.0 * b, 3)];
                let mut sorted = levels.to_vec();
                sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
                let energies: Vec<f64> = sorted.iter().map(|(e, _)| *e).collect();
                let mut states = DMatrix::<Complex64>::zeros(4, 4);
                for (col, (_, k)) in sorted.iter().enumerate() {
                    states.set_column(col, &basis(*k).column(0));
                }
                let field = FieldVector::new(0.0, 0.0, b.max(1e-6));
                let eigensystem = EigenSystem {
                    energies: energies.clone(),
                    states,
                    field,
                };
                let catalog = if step == 0 {
                    let pos =
                        |k: usize| sorted.iter().position(|(_, kk)| *kk == k).unwrap();
                    vec![
                        TransitionRecord {
                            i_index: pos(0),
                            f_index: pos(1),
                            frequency_mhz: energies[pos(1)] - energies[pos(0)],
                            matrix_element_sq: 1.0,
                            chi: 1.0,
                            intensity: 1.0,
                            delta_mf: None,
                        },
                        TransitionRecord {
                            i_index: pos(2),
                            f_index: pos(3),
                            frequency_mhz: energies[pos(3)] - energies[pos(2)],
                            matrix_element_sq: 1.0,
                            chi: 1.0,
                            intensity: 1.0,
                            delta_mf: None,
                        },
                    ]
                } else {
                    Vec::new()
                };
                FieldScanPoint {
                    field,
                    eigensystem,
                    catalog,
                }
            })
            .collect()
    }

    #[test]
    fn crossing_lines_keep_their_identity() {
        let branches = track_branches(&crossing_scan()).unwrap();
        assert_eq!(branches.len(), 2);
        let rising = branches
            .iter()
            .find(|b| b.points[0].frequency_mhz < 110.0)
            .unwrap();
        let falling = branches
            .iter()
            .find(|b| b.points[0].frequency_mhz > 150.0)
            .unwrap();
        for b in &branches {
            assert!(b.splits.is_empty());
            assert_eq!(b.points.len(), 7);
        }
        for (k, p) in rising.points.iter().enumerate() {
            assert_abs_diff_eq!(p.frequency_mhz, 100.0 + 10.0 * k as f64, epsilon = 1e-12);
        }
        for (k, p) in falling.points.iter().enumerate() {
            assert_abs_diff_eq!(p.frequency_mhz, 160.0 - 10.0 * k as f64, epsilon = 1e-12);
        }
        // After the level crossing at B = 3.1 the rising branch's upper
        // state has the top energy slot.
        assert_eq!(rising.points[0].upper_sorted_index, 2);
        assert_eq!(rising.points[6].upper_sorted_index, 3);
        assert_eq!(falling.points[6].upper_sorted_index, 2);
    }

    #[test]
    fn low_overlap_steps_cut_the_branch_with_a_diagnostic() {
        let id3 = DMatrix::<Complex64>::identity(3, 3);
        // A 3x3 unitary mixing every state equally (a discrete Fourier
        // frame): every overlap with the previous basis is 1/sqrt(3).
        let w = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        let s = Complex64::new(3.0f64.sqrt().recip(), 0.0);
        let dft = DMatrix::<Complex64>::from_row_slice(
            3,
            3,
            &[s, s, s, s, s * w, s * w * w, s, s * w * w, s * w * w * w * w],
        );
        let point = |b: f64, states: &DMatrix<Complex64>, with_catalog: bool| FieldScanPoint {
            field: FieldVector::new(0.0, 0.0, b),
            eigensystem: EigenSystem {
                energies: vec![0.0, 50.0 + b, 120.0],
                states: states.clone(),
                field: FieldVector::new(0.0, 0.0, b),
            },
            catalog: if with_catalog {
                vec![TransitionRecord {
                    i_index: 0,
                    f_index: 1,
                    frequency_mhz: 50.0 + b,
                    matrix_element_sq: 1.0,
                    chi: 1.0,
                    intensity: 1.0,
                    delta_mf: None,
                }]
            } else {
                Vec::new()
            },
        };
        let scan = vec![
            point(1.0, &id3, true),
            point(2.0, &dft, false),
            point(3.0, &dft, false),
        ];
        let branches = track_branches(&scan).unwrap();
        assert_eq!(branches.len(), 2);
        let parent = branches.iter().find(|b| b.id == "0-1").unwrap();
        assert_eq!(parent.points.len(), 1);
        assert_eq!(parent.splits.len(), 1);
        assert_abs_diff_eq!(parent.splits[0].overlap, 3.0f64.sqrt().recip(), epsilon = 1e-12);
        assert_abs_diff_eq!(parent.splits[0].field_mt, 2.0, epsilon = 1e-12);
        let child = branches.iter().find(|b| b.id == "0-1.s1").unwrap();
        assert_eq!(child.points.len(), 2);
        assert!(child.splits.is_empty());
    }

    #[test]
    fn sensitivity_matches_the_analytic_parabola_on_nonuniform_samples() {
        let f = |b: f64| 2400.0 + 0.43 * (b - 20.0) * (b - 20.0);
        let fields = [17.0, 18.5, 19.25, 20.75, 23.0];
        let branch = TransitionBranch {
            id: "syn".into(),
            seed_lower: 0,
            seed_upper: 1,
            direction: [0.0, 0.0, 1.0],
            points: fields
                .iter()
                .map(|&b| BranchPoint {
                    field_mt: b,
                    frequency_mhz: f(b),
                    intensity: 1.0,
                    lower_sorted_index: 0,
                    upper_sorted_index: 1,
                    min_gap_mhz: f64::INFINITY,
                })
                .collect(),
            splits: Vec::new(),
            min_overlap: 1.0,
        };
        for &b in &fields[1..4] {
            let s = sensitivity(&branch, b).unwrap();
            assert_abs_diff_eq!(s.s1_mhz_per_mt, 2.0 * 0.43 * (b - 20.0), epsilon = 1e-9);
            assert_abs_diff_eq!(s.s2_mhz_per_mt2, 0.86, epsilon = 1e-9);
        }
        assert!(sensitivity(&branch, 17.0).is_err());
        assert!(sensitivity(&branch, 23.0).is_err());

        let reports =
            find_zefoz(&branch, DEFAULT_ZEFOZ_TOL_MHZ_PER_MT, Refinement::FromSamples).unwrap();
        assert_eq!(reports.len(), 1);
        assert_abs_diff_eq!(reports[0].b_star_mt, 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(reports[0].f_star_mhz, 2400.0, epsilon = 1e-9);
        assert_abs_diff_eq!(reports[0].s2_mhz_per_mt2, 0.86, epsilon = 1e-9);
    }

    #[test]
    fn clock_transition_branch_has_one_turning_point_in_range() {
        let scan = scan_this_work(3.3, 30.0, 0.1);
        let branches = track_branches(&scan).unwrap();
        // The zero-field doublet near 2414 MHz seeds two branches.
        assert_eq!(branches.len(), 2);
        for b in &branches {
            assert!(b.splits.is_empty(), "{} split", b.id);
            assert!(b.min_overlap > 0.99, "{} overlap {}", b.id, b.min_overlap);
        }

        let mut with_turning = Vec::new();
        for b in &branches {
            let reports =
                find_zefoz(b, DEFAULT_ZEFOZ_TOL_MHZ_PER_MT, Refinement::FromSamples).unwrap();
            if !reports.is_empty() {
                with_turning.push((b, reports));
            }
        }
        assert_eq!(with_turning.len(), 1, "exactly one branch turns over");
        let (branch, sample_reports) = &with_turning[0];
        assert_eq!(branch.seed_lower, 6);
        assert_eq!(branch.seed_upper, 10);
        assert_eq!(sample_reports.len(), 1);
        let from_samples = &sample_reports[0];
        assert!(from_samples.b_star_mt > 18.0 && from_samples.b_star_mt < 23.0);

        let system = preset("this_work").unwrap();
        let exact_reports = find_zefoz(
            branch,
            DEFAULT_ZEFOZ_TOL_MHZ_PER_MT,
            Refinement::Exact(&system),
        )
        .unwrap();
        assert_eq!(exact_reports.len(), 1);
        let exact = &exact_reports[0];
        assert_abs_diff_eq!(exact.b_star_mt, 21.0046, epsilon = 0.01);
        assert_abs_diff_eq!(exact.f_star_mhz, 2232.02, epsilon = 0.5);
        assert_abs_diff_eq!(exact.s2_mhz_per_mt2, 0.862, epsilon = 0.01);
        assert!(exact.s1_residual_mhz_per_mt <= DEFAULT_ZEFOZ_TOL_MHZ_PER_MT);
        assert_abs_diff_eq!(exact.s1_start_mhz_per_mt, -16.56, epsilon = 0.1);
        assert_abs_diff_eq!(exact.s1_end_mhz_per_mt, 7.57, epsilon = 0.1);
        assert_abs_diff_eq!(exact.f0_mhz, 2413.96, epsilon = 0.05);
        // The two estimators agree to a fraction of a step.
        assert_abs_diff_eq!(from_samples.b_star_mt, exact.b_star_mt, epsilon = 0.05);
    }

    #[test]
    fn finite_difference_slope_matches_hellmann_feynman() {
        let system = preset("this_work").unwrap();
        let scan = scan_this_work(3.3, 30.0, 0.1);
        let branches = track_branches(&scan).unwrap();
        let branch = branches
            .iter()
            .find(|b| b.seed_lower == 6 && b.seed_upper == 10)
            .unwrap();

        let ops = SpinOperators::new(&system).unwrap();
        let dir = tilt_direction(3.3);
        for &b_mt in &[5.0, 10.0, 15.0, 25.0] {
            let fd = sensitivity(branch, b_mt).unwrap();
            assert!(!fd.near_degeneracy, "unexpected flag at {b_mt} mT");
            let j = branch
                .points
                .iter()
                .position(|p| (p.field_mt - b_mt).abs() < 1e-9)
                .unwrap();
            let p = &branch.points[j];
            let eig = ops
                .eigensystem(&system, FieldVector::along(dir, p.field_mt))
                .unwrap();
            let hf = hellmann_feynman_s1(
                &ops,
                &system,
                &eig,
                dir,
                p.lower_sorted_index,
                p.upper_sorted_index,
            );
            let rel = (fd.s1_mhz_per_mt - hf).abs() / hf.abs().max(1e-12);
            assert!(rel < 0.01, "B={b_mt}: fd {} vs hf {hf}", fd.s1_mhz_per_mt);
        }
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let system = preset("this_work").unwrap();
        let ops = SpinOperators::new(&system).unwrap();
        let dir = tilt_direction(3.3);
        let probe_field = 10.0;

        let fd_error = |step: f64| -> f64 {
            let fields = magnitude_scan(dir, 0.0, 30.0, step).unwrap();
            let scan = field_scan(
                &system,
                &fields,
                &ExcitationGeometry::voigt(dir).unwrap(),
                &thermal(),
                2300.0,
                2500.0,
                IntensityThreshold::default(),
            )
            .unwrap();
            let branches = track_branches(&scan).unwrap();
            let branch = branches
                .iter()
                .find(|b| b.seed_lower == 6 && b.seed_upper == 10)
                .unwrap();
            let fd = sensitivity(branch, probe_field).unwrap().s1_mhz_per_mt;
            let j = branch
                .points
                .iter()
                .position(|p| (p.field_mt - probe_field).abs() < 1e-9)
                .unwrap();
            let p = &branch.points[j];
            let eig = ops
                .eigensystem(&system, FieldVector::along(dir, p.field_mt))
                .unwrap();
            let hf = hellmann_feynman_s1(
                &ops,
                &system,
                &eig,
                dir,
                p.lower_sorted_index,
                p.upper_sorted_index,
            );
            (fd - hf).abs()
        };

        let e_coarse = fd_error(0.4);
        let e_fine = fd_error(0.2);
        let ratio = e_coarse / e_fine;
        assert!(
            (3.2..=4.8).contains(&ratio),
            "halving the step should quarter the error: {e_coarse} / {e_fine} = {ratio}"
        );
    }

    #[test]
    fn turning_point_is_stable_under_step_halving() {
        let find = |step: f64| -> f64 {
            let scan = scan_this_work(3.3, 30.0, step);
            let branches = track_branches(&scan).unwrap();
            let branch = branches
                .iter()
                .find(|b| b.seed_lower == 6 && b.seed_upper == 10)
                .unwrap();
            find_zefoz(branch, DEFAULT_ZEFOZ_TOL_MHZ_PER_MT, Refinement::FromSamples).unwrap()[0]
                .b_star_mt
        };
        let coarse = find(0.2);
        let fine = find(0.1);
        assert!(
            (coarse - fine).abs() < 0.05,
            "turning point moved {coarse} -> {fine}"
        );
    }

    #[test]
    fn opposite_tilts_mirror_the_slope() {
        let slope_at = |theta: f64| -> Vec<f64> {
            let scan = scan_this_work(theta, 10.0, 0.5);
            let branches = track_branches(&scan).unwrap();
            let branch = branches
                .iter()
                .find(|b| b.seed_lower == 6 && b.seed_upper == 10)
                .unwrap();
            (1..branch.points.len() - 1)
                .map(|j| interior_s1(branch, j))
                .collect()
        };
        let plus = slope_at(3.3);
        let minus = slope_at(-3.3);
        assert_eq!(plus.len(), minus.len());
        for (a, b) in plus.iter().zip(&minus) {
            assert_abs_diff_eq!(a.abs(), b.abs(), epsilon = 1e-6);
        }
    }

    fn width_fit(fwhm: f64) -> PeakFit {
        PeakFit {
            center_mhz: 2232.0,
            fwhm_mhz: fwhm,
            amplitude: 1.0,
            offset: 0.0,
            area: 1.0,
            residual_rms: 0.0,
            iterations: 1,
        }
    }

    #[test]
    fn linewidth_parabola_recovers_the_minimum_exactly() {
        let gamma = |b: f64| 1.84 + 0.05 * (b - 19.0) * (b - 19.0);
        let data: Vec<(f64, PeakFit)> = (15..=23)
            .map(|k| (k as f64, width_fit(gamma(k as f64))))
            .collect();
        let table = linewidth_vs_field(&data, None).unwrap();
        assert!(!table.flat);
        let m = table.minimum.unwrap();
        assert_abs_diff_eq!(m.b_min_mt, 19.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.gamma_min_mhz, 1.84, epsilon = 1e-9);
        assert!(m.offset_from_zefoz_mt.is_none());

        let zefoz = ZefozReport {
            branch_id: "6-10".into(),
            f0_mhz: 2414.0,
            b_star_mt: 20.5,
            f_star_mhz: 2232.0,
            s2_mhz_per_mt2: 0.86,
            s1_residual_mhz_per_mt: 0.0,
            s1_start_mhz_per_mt: -16.0,
            s1_end_mhz_per_mt: 7.0,
        };
        let table = linewidth_vs_field(&data, Some(&zefoz)).unwrap();
        let m = table.minimum.unwrap();
        assert_abs_diff_eq!(m.offset_from_zefoz_mt.unwrap(), -1.5, epsilon = 1e-9);
    }

    #[test]
    fn constant_linewidths_are_flagged_flat() {
        let data: Vec<(f64, PeakFit)> = (15..=20).map(|k| (k as f64, width_fit(2.0))).collect();
        let table = linewidth_vs_field(&data, None).unwrap();
        assert!(table.flat);
        assert!(table.minimum.is_none());

        assert!(linewidth_vs_field(&data[..2], None).is_err());
    }
}

//! Transition catalogs: excitation geometry, millikelvin thermal weighting
//! and static-field scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::MHZ_TO_KELVIN;
use crate::spin::{EigenSystem, FieldVector, SpinOperators, SpinSystem};
use crate::{Error, Result};

/// Microwave excitation geometry relative to the static field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    /// Propagation along B0: the oscillating field B1 is perpendicular to B0.
    FaradayLike,
    /// Propagation across B0: B1 carries components both perpendicular and
    /// parallel to B0.
    VoigtLike,
}

/// How per-direction matrix elements combine into one record intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriveAggregation {
    /// Strongest single sampled B1 direction (conservative default).
    #[default]
    Max,
    /// Sum over sampled directions.
    Sum,
}

/// Static-field direction plus the set of unit B1 directions sampled when
/// evaluating transition intensities.
#[derive(Debug, Clone)]
pub struct ExcitationGeometry {
    kind: GeometryKind,
    b0_direction: [f64; 3],
    b1_directions: Vec<[f64; 3]>,
    pub aggregation: DriveAggregation,
}

fn normalize(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroDirection);
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl ExcitationGeometry {
    /// Builds the sampled B1 set for `kind` around the static-field
    /// direction `b0` (need not be normalized).
    pub fn new(kind: GeometryKind, b0: [f64; 3]) -> Result<Self> {
        let b0 = normalize(b0)?;
        // Perpendicular pair: cross against whichever axis is less aligned.
        let helper = if b0[2].abs() < 0.9 {
            [0.0, 0.0, 1.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        let e1 = normalize(cross(b0, helper))?;
        let e2 = cross(b0, e1); // already unit: b0 and e1 orthonormal
        let b1_directions = match kind {
            GeometryKind::FaradayLike => vec![e1, e2],
            GeometryKind::VoigtLike => vec![e1, e2, b0],
        };
        Ok(ExcitationGeometry {
            kind,
            b0_direction: b0,
            b1_directions,
            aggregation: DriveAggregation::Max,
        })
    }

    pub fn faraday(b0: [f64; 3]) -> Result<Self> {
        Self::new(GeometryKind::FaradayLike, b0)
    }

    pub fn voigt(b0: [f64; 3]) -> Result<Self> {
        Self::new(GeometryKind::VoigtLike, b0)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn b0_direction(&self) -> [f64; 3] {
        self.b0_direction
    }

    pub fn b1_directions(&self) -> &[[f64; 3]] {
        &self.b1_directions
    }
}

/// Sensor temperature plus the saturation floor of the sample stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    /// Temperature reported by the mixing-chamber sensor, K.
    pub sensor_temperature_k: f64,
    /// Minimum temperature the sample itself reaches, K.
    pub t_min_k: f64,
}

impl ThermalModel {
    pub fn new(sensor_temperature_k: f64, t_min_k: f64) -> Result<Self> {
        if !(t_min_k.is_finite() && t_min_k > 0.0) {
            return Err(Error::InvalidTemperature(t_min_k));
        }
        if !(sensor_temperature_k.is_finite() && sensor_temperature_k >= 0.0) {
            return Err(Error::InvalidTemperature(sensor_temperature_k));
        }
        Ok(ThermalModel {
            sensor_temperature_k,
            t_min_k,
        })
    }

    pub fn effective_temperature_k(&self) -> f64 {
        effective_temperature(self)
    }
}

/// Effective sample temperature: the sensor reading saturates smoothly at
/// the floor, `T_eff = T_min sqrt(1 + (T/T_min)^2)`.
pub fn effective_temperature(model: &ThermalModel) -> f64 {
    let ratio = model.sensor_temperature_k / model.t_min_k;
    model.t_min_k * (1.0 + ratio * ratio).sqrt()
}

/// Boltzmann populations of the eigenlevels at `temperature_k`.
///
/// Energies are shifted to put the ground level at zero before
/// exponentiating, so extreme splitting/temperature ratios underflow to
/// zero population instead of overflowing. The result sums to one.
pub fn populations(eig: &EigenSystem, temperature_k: f64) -> Result<Vec<f64>> {
    if !(temperature_k.is_finite() && temperature_k > 0.0) {
        return Err(Error::InvalidTemperature(temperature_k));
    }
    let kt_mhz = temperature_k / MHZ_TO_KELVIN;
    let e0 = eig
        .energies
        .first()
        .copied()
        .ok_or_else(|| Error::NotEnoughData("eigensystem has no levels".into()))?;
    let mut p: Vec<f64> = eig
        .energies
        .iter()
        .map(|e| (-(e - e0) / kt_mhz).exp())
        .collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    Ok(p)
}

/// Population difference |p_i - p_f| of one level pair; the thermal factor
/// chi entering transition intensities.
pub fn spin_polarisation(eig: &EigenSystem, temperature_k: f64, i: usize, f: usize) -> Result<f64> {
    let p = populations(eig, temperature_k)?;
    Ok((p[i] - p[f]).abs())
}

/// One predicted transition at a fixed field point.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    /// Index of the initial (lower) level in ascending-energy order.
    pub i_index: usize,
    /// Index of the final (upper) level.
    pub f_index: usize,
    /// E_f - E_i, MHz.
    pub frequency_mhz: f64,
    /// |<f| u.g.S |i>|^2 aggregated over sampled B1 directions
    /// (dimensionless; drive normalized by mu_B |B1|).
    pub matrix_element_sq: f64,
    /// Thermal population difference of the level pair.
    pub chi: f64,
    /// chi * matrix_element_sq.
    pub intensity: f64,
    /// m_F(final) - m_F(initial) when both states carry clean F_z labels;
    /// `None` marks strongly mixed states.
    pub delta_mf: Option<i32>,
}

/// Intensity cutoff for catalog records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntensityThreshold {
    /// Keep records with intensity >= the given absolute value.
    Absolute(f64),
    /// Keep records with intensity >= fraction * strongest record at the
    /// same field point.
    RelativeToStrongest(f64),
}

impl Default for IntensityThreshold {
    /// Drop records weaker than 1e-4 of the strongest line at the field point.
    fn default() -> Self {
        IntensityThreshold::RelativeToStrongest(1e-4)
    }
}

impl IntensityThreshold {
    fn validate(&self) -> Result<()> {
        let v = match self {
            IntensityThreshold::Absolute(v) | IntensityThreshold::RelativeToStrongest(v) => *v,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "intensity threshold must be nonnegative, got {v}"
            )));
        }
        Ok(())
    }
}

/// Squared drive matrix element |<f| g_perp(ux Sx + uy Sy) + g_par uz Sz |i>|^2
/// for one unit B1 direction.
pub fn drive_matrix_element(
    ops: &SpinOperators,
    system: &SpinSystem,
    eig: &EigenSystem,
    i: usize,
    f: usize,
    u: [f64; 3],
) -> f64 {
    let op = ops.drive_operator(system, u);
    let amp = (eig.states.column(f).adjoint() * op * eig.states.column(i))[(0, 0)];
    amp.norm_sqr()
}

fn mf_label(value: f64) -> Option<f64> {
    let nearest = (2.0 * value).round() / 2.0;
    ((value - nearest).abs() <= 0.1).then_some(nearest)
}

/// Predicted transitions at one field point within `[f_min, f_max]` MHz.
///
/// Intensities are chi * |matrix element|^2, with chi evaluated at the
/// model's effective temperature and the matrix element aggregated over the
/// geometry's sampled B1 directions. Records are sorted by frequency.
pub fn transition_catalog(
    eig: &EigenSystem,
    system: &SpinSystem,
    geometry: &ExcitationGeometry,
    thermal: &ThermalModel,
    f_min: f64,
    f_max: f64,
    threshold: IntensityThreshold,
) -> Result<Vec<TransitionRecord>> {
    let ops = SpinOperators::new(system)?;
    transition_catalog_with_ops(&ops, eig, system, geometry, thermal, f_min, f_max, threshold)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn transition_catalog_with_ops(
    ops: &SpinOperators,
    eig: &EigenSystem,
    system: &SpinSystem,
    geometry: &ExcitationGeometry,
    thermal: &ThermalModel,
    f_min: f64,
    f_max: f64,
    threshold: IntensityThreshold,
) -> Result<Vec<TransitionRecord>> {
    if !(f_min.is_finite() && f_max.is_finite() && f_min < f_max) {
        return Err(Error::InvalidInput(format!(
            "invalid frequency window [{f_min}, {f_max}]"
        )));
    }
    if geometry.b1_directions().is_empty() {
        return Err(Error::InvalidInput(
            "geometry samples no drive directions".into(),
        ));
    }
    threshold.validate()?;
    let t_eff = effective_temperature(thermal);
    let pops = populations(eig, t_eff)?;
    let mf = eig.fz_expectations(ops);
    let n = eig.dimension();

    let drive_ops: Vec<_> = geometry
        .b1_directions()
        .iter()
        .map(|&u| ops.drive_operator(system, u))
        .collect();

    let mut records = Vec::new();
    for i in 0..n {
        for f in (i + 1)..n {
            let freq = eig.transition_frequency(i, f);
            if freq <= 0.0 || freq < f_min || freq > f_max {
                continue;
            }
            let mut me = 0.0f64;
            for op in &drive_ops {
                let amp = (eig.states.column(f).adjoint() * op * eig.states.column(i))[(0, 0)];
                let sq = amp.norm_sqr();
                me = match geometry.aggregation {
                    DriveAggregation::Max => me.max(sq),
                    DriveAggregation::Sum => me + sq,
                };
            }
            let chi = (pops[i] - pops[f]).abs();
            let delta_mf = match (mf_label(mf[i]), mf_label(mf[f])) {
                (Some(a), Some(b)) => Some((b - a).round() as i32),
                _ => None,
            };
            records.push(TransitionRecord {
                i_index: i,
                f_index: f,
                frequency_mhz: freq,
                matrix_element_sq: me,
                chi,
                intensity: chi * me,
                delta_mf,
            });
        }
    }

    let cutoff = match threshold {
        IntensityThreshold::Absolute(v) => v,
        IntensityThreshold::RelativeToStrongest(frac) => {
            let strongest = records.iter().map(|r| r.intensity).fold(0.0, f64::max);
            frac * strongest
        }
    };
    records.retain(|r| r.intensity >= cutoff && r.intensity > 0.0);
    records.sort_by(|a, b| {
        a.frequency_mhz
            .total_cmp(&b.frequency_mhz)
            .then(a.i_index.cmp(&b.i_index))
            .then(a.f_index.cmp(&b.f_index))
    });
    Ok(records)
}

/// Eigensystem and catalog at one point of a field scan.
#[derive(Debug, Clone)]
pub struct FieldScanPoint {
    pub field: FieldVector,
    pub eigensystem: EigenSystem,
    pub catalog: Vec<TransitionRecord>,
}

/// Diagonalizes and catalogs every field point (in parallel; output order
/// matches the input order).
pub fn field_scan(
    system: &SpinSystem,
    fields: &[FieldVector],
    geometry: &ExcitationGeometry,
    thermal: &ThermalModel,
    f_min: f64,
    f_max: f64,
    threshold: IntensityThreshold,
) -> Result<Vec<FieldScanPoint>> {
    let ops = SpinOperators::new(system)?;
    fields
        .par_iter()
        .map(|&field| {
            let eig = ops.eigensystem(system, field)?;
            let catalog = transition_catalog_with_ops(
                &ops, &eig, system, geometry, thermal, f_min, f_max, threshold,
            )?;
            Ok(FieldScanPoint {
                field,
                eigensystem: eig,
                catalog,
            })
        })
        .collect()
}

/// Evenly spaced field magnitudes `start..=stop` (inclusive of the end when
/// it falls on the grid) along a fixed direction.
pub fn magnitude_scan(dir: [f64; 3], start_mt: f64, stop_mt: f64, step_mt: f64) -> Result<Vec<FieldVector>> {
    if !(step_mt.is_finite() && step_mt > 0.0) || stop_mt < start_mt {
        return Err(Error::InvalidInput(format!(
            "bad scan range {start_mt}..{stop_mt} step {step_mt}"
        )));
    }
    let dir = normalize(dir)?;
    let n = ((stop_mt - start_mt) / step_mt).round() as usize;
    let count = n + 1;
    Ok((0..count)
        .map(|k| FieldVector::along(dir, start_mt + step_mt * k as f64))
        .collect())
}

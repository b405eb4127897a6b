//! Spin-Hamiltonian toolkit for broadband EPR of effective spin-1/2 ions
//! with hyperfine and quadrupole structure.
//!
//! The crate models an anisotropic electron Zeeman interaction coupled to a
//! single nuclear spin, diagonalizes the resulting Hamiltonian over static
//! field scans, predicts transition catalogs with thermal weighting down to
//! millikelvin temperatures, and fits spin-Hamiltonian parameters to measured
//! peak lists. Supporting modules handle VNA-style trace processing
//! (background subtraction, Lorentzian peak fits), field calibration against
//! a g-marker, and sensitivity analysis of transition branches (ZEFOZ search).
//!
//! All energies and frequencies are in MHz, fields in mT, temperatures in K
//! unless a name says otherwise.

pub mod calibration;
pub mod constants;
pub mod csvio;
mod error;
mod levmar;
pub mod presets;
pub mod spectrum;
pub mod spin;
pub mod transitions;
pub mod zefoz;

pub use calibration::{
    calibrate_field, dpph_field_from_frequency, dpph_frequency_from_field, extract_misalignment,
    fit_parameters, match_peaks, validate_symmetry_rules, FitProblem, FitResult, FreeParameters,
    MatchedPeak, MeasuredPeak, NominalAxis, ParameterEstimate, SymmetryReport, DEFAULT_GATE_MHZ,
};
pub use error::{Error, Result};
pub use spectrum::{
    build_reference, detect_peaks, fit_lorentzian, lorentzian, peak_area_vs_temperature,
    subtract_background, synthesize, AreaPoint, Linewidths, NoiseSpec, Peak, PeakFit,
    SpectrumTrace,
};
pub use spin::{
    assemble_hamiltonian, build_angular_momentum, eigensystem, AngularMomentum, EigenSystem,
    FieldVector, OperatorMatrix, QuadrupoleForm, SpinOperators, SpinSystem,
};
pub use transitions::{
    effective_temperature, field_scan, magnitude_scan, populations, spin_polarisation,
    transition_catalog, DriveAggregation, ExcitationGeometry, FieldScanPoint, GeometryKind,
    IntensityThreshold, ThermalModel, TransitionRecord,
};
pub use zefoz::{
    find_zefoz, hellmann_feynman_s1, linewidth_vs_field, sensitivity, track_branches,
    BranchPoint, LinewidthMinimum, LinewidthTable, Refinement, Sensitivity, SplitEvent,
    TransitionBranch, ZefozReport, DEFAULT_ZEFOZ_TOL_MHZ_PER_MT,
};

//! Physical constants and numerical tolerances shared across the crate.

/// Bohr magneton over Planck's constant, MHz/mT (CODATA).
pub const MU_B_MHZ_PER_MT: f64 = 13.996244936;

/// Energy conversion: h * (1 MHz) / k_B in kelvin.
///
/// One transition at f MHz corresponds to a thermal energy of
/// `f * MHZ_TO_KELVIN` K, i.e. 1 K ~ 20.8 GHz.
pub const MHZ_TO_KELVIN: f64 = 4.799243e-5;

/// g-factor of the DPPH field-calibration marker.
pub const DPPH_G_FACTOR: f64 = 2.0037;

/// Free-ion hyperfine constant A_J of Er3+ (167-isotope), MHz.
/// Used by the symmetry-rule checks on fitted hyperfine tensors.
pub const ER_FREE_ION_A_J_MHZ: f64 = -125.3;

/// Free-ion Lande factor g_J of Er3+ (4f11, J = 15/2).
pub const ER_FREE_ION_G_J: f64 = 1.2;

/// Default minimum achievable sample temperature, K. Sensor readings are
/// mapped through [`crate::transitions::effective_temperature`] so the
/// effective temperature never drops below this floor.
pub const T_MIN_DEFAULT_K: f64 = 0.020;

/// Relative Hermiticity tolerance for assembled Hamiltonians: the largest
/// entry of |H - H^dagger| must not exceed this fraction of the largest
/// entry of |H|.
pub const HERMITICITY_REL_TOL: f64 = 1e-9;

/// Relative tolerance on the eigenvalue-sum vs. matrix-trace identity.
pub const TRACE_REL_TOL: f64 = 1e-6;

/// Absolute tolerance on eigenvector orthonormality (entries of V^dagger V - 1).
pub const UNITARITY_TOL: f64 = 1e-9;

/// Eigenvalues closer than this (MHz) are treated as one degenerate block
/// when assigning deterministic F_z labels.
pub const DEGENERACY_TOL_MHZ: f64 = 1e-3;

/// Boltzmann populations must sum to one within this absolute tolerance.
pub const POPULATION_SUM_TOL: f64 = 1e-12;

//! Spin operators, Hamiltonian assembly and eigendecomposition.
//!
//! The model is an effective electron spin S coupled to one nuclear spin I:
//!
//! ```text
//! H = mu_B [ g_perp (Bx Sx + By Sy) + g_par Bz Sz ]
//!   + A_perp (Sx Ix + Sy Iy) + A_par Sz Iz
//!   + P (Iz^2 - I(I+1)/3)                       (traceless form)
//! ```
//!
//! with H in MHz, B in mT and the crystal c-axis along z. Operators live in
//! the product basis electron (x) nucleus, m descending within each factor.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{
    DEGENERACY_TOL_MHZ, HERMITICITY_REL_TOL, MU_B_MHZ_PER_MT,
};
use crate::{Error, Result};

/// Dense complex matrix in MHz used for all operators and Hamiltonians.
pub type OperatorMatrix = DMatrix<Complex64>;

fn cx(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Checks that `j` is a nonnegative half-integer and returns the matrix
/// dimension 2j+1.
fn spin_dimension(j: f64) -> Result<usize> {
    let twice = 2.0 * j;
    if !j.is_finite() || j < 0.0 || (twice - twice.round()).abs() > 1e-9 {
        return Err(Error::InvalidSpin(j));
    }
    Ok(twice.round() as usize + 1)
}

/// Angular momentum matrices for quantum number `j` in the |j,m> basis with
/// m = j, j-1, ..., -j.
#[derive(Debug, Clone)]
pub struct AngularMomentum {
    pub j: f64,
    pub jx: OperatorMatrix,
    pub jy: OperatorMatrix,
    pub jz: OperatorMatrix,
    /// Casimir operator Jx^2 + Jy^2 + Jz^2 = j(j+1) * identity.
    pub jsq: OperatorMatrix,
}

/// Builds the angular momentum matrices for a half-integer `j`.
pub fn build_angular_momentum(j: f64) -> Result<AngularMomentum> {
    let d = spin_dimension(j)?;
    let m_of = |row: usize| j - row as f64;

    let mut jz = OperatorMatrix::zeros(d, d);
    for k in 0..d {
        jz[(k, k)] = cx(m_of(k));
    }

    // J+ |j,m> = sqrt(j(j+1) - m(m+1)) |j,m+1>; m+1 sits one row above m.
    let mut jplus = OperatorMatrix::zeros(d, d);
    for col in 1..d {
        let m = m_of(col);
        jplus[(col - 1, col)] = cx((j * (j + 1.0) - m * (m + 1.0)).sqrt());
    }
    let jminus = jplus.adjoint();

    let jx = (&jplus + &jminus).map(|z| z * cx(0.5));
    let jy = (&jplus - &jminus).map(|z| z * Complex64::new(0.0, -0.5));
    let jsq = &jx * &jx + &jy * &jy + &jz * &jz;

    Ok(AngularMomentum { j, jx, jy, jz, jsq })
}

/// Which constant offset accompanies the Iz^2 quadrupole term.
///
/// Both forms produce identical transition frequencies; they differ by a
/// multiple of the identity. `Traceless` subtracts I(I+1)/3 so the term has
/// zero trace, `Verbatim` adds it instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadrupoleForm {
    #[default]
    Traceless,
    Verbatim,
}

/// Static spin-Hamiltonian parameters.
///
/// Serialized with explicit unit suffixes so parameter files are
/// self-describing; see [`crate::presets`] for bundled literature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSystem {
    /// Effective electron spin (1/2 for a ground Kramers doublet).
    pub electron_spin: f64,
    /// Nuclear spin (7/2 for 167Er; 0 for even isotopes).
    pub nuclear_spin: f64,
    /// g-factor along the crystal c-axis.
    pub g_parallel: f64,
    /// g-factor perpendicular to the c-axis.
    pub g_perp: f64,
    /// Hyperfine coupling along c, MHz.
    #[serde(rename = "a_parallel_mhz")]
    pub a_parallel: f64,
    /// Hyperfine coupling perpendicular to c, MHz.
    #[serde(rename = "a_perp_mhz")]
    pub a_perp: f64,
    /// Axial quadrupole coefficient of Iz^2, MHz.
    #[serde(rename = "quadrupole_p_mhz")]
    pub quadrupole_p: f64,
    #[serde(default)]
    pub quadrupole_form: QuadrupoleForm,
}

impl SpinSystem {
    /// Product-space dimension (2S+1)(2I+1).
    pub fn dimension(&self) -> usize {
        let ds = spin_dimension(self.electron_spin).unwrap_or(0);
        let di = spin_dimension(self.nuclear_spin).unwrap_or(0);
        ds * di
    }

    pub fn validate(&self) -> Result<()> {
        spin_dimension(self.electron_spin)?;
        spin_dimension(self.nuclear_spin)?;
        for (name, v) in [
            ("g_parallel", self.g_parallel),
            ("g_perp", self.g_perp),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidSystem(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("a_parallel_mhz", self.a_parallel),
            ("a_perp_mhz", self.a_perp),
            ("quadrupole_p_mhz", self.quadrupole_p),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidSystem(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Static magnetic field vector in mT, components along the crystal axes
/// (z = c-axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub const ZERO: FieldVector = FieldVector {
        bx: 0.0,
        by: 0.0,
        bz: 0.0,
    };

    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        FieldVector { bx, by, bz }
    }

    /// Field of magnitude `b_mt` along the unit vector `dir`.
    pub fn along(dir: [f64; 3], b_mt: f64) -> Self {
        FieldVector::new(dir[0] * b_mt, dir[1] * b_mt, dir[2] * b_mt)
    }

    /// Field from spherical angles measured from the c-axis (degrees).
    pub fn from_polar_deg(b_mt: f64, theta_deg: f64, phi_deg: f64) -> Self {
        let th = theta_deg.to_radians();
        let ph = phi_deg.to_radians();
        FieldVector::new(
            b_mt * th.sin() * ph.cos(),
            b_mt * th.sin() * ph.sin(),
            b_mt * th.cos(),
        )
    }

    pub fn magnitude(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    /// Unit direction, or an error for the zero vector.
    pub fn direction(&self) -> Result<[f64; 3]> {
        let m = self.magnitude();
        if m == 0.0 {
            return Err(Error::ZeroDirection);
        }
        Ok([self.bx / m, self.by / m, self.bz / m])
    }
}

/// Product-space operators for one [`SpinSystem`], built once and reused
/// across field scans. Read-only after construction.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    dim: usize,
    electron_spin: f64,
    nuclear_spin: f64,
    pub sx: OperatorMatrix,
    pub sy: OperatorMatrix,
    pub sz: OperatorMatrix,
    pub ix: OperatorMatrix,
    pub iy: OperatorMatrix,
    pub iz: OperatorMatrix,
    /// F_z = Sz + Iz, used for deterministic labeling of degenerate states.
    pub fz: OperatorMatrix,
    hyperfine_perp: OperatorMatrix,
    hyperfine_par: OperatorMatrix,
    quad_traceless: OperatorMatrix,
    quad_verbatim: OperatorMatrix,
}

impl SpinOperators {
    pub fn new(system: &SpinSystem) -> Result<Self> {
        system.validate()?;
        let s = build_angular_momentum(system.electron_spin)?;
        let i = build_angular_momentum(system.nuclear_spin)?;
        let ds = s.jz.nrows();
        let di = i.jz.nrows();
        let eye_s = OperatorMatrix::identity(ds, ds);
        let eye_i = OperatorMatrix::identity(di, di);

        let sx = s.jx.kronecker(&eye_i);
        let sy = s.jy.kronecker(&eye_i);
        let sz = s.jz.kronecker(&eye_i);
        let ix = eye_s.kronecker(&i.jx);
        let iy = eye_s.kronecker(&i.jy);
        let iz = eye_s.kronecker(&i.jz);

        let hyperfine_perp = &sx * &ix + &sy * &iy;
        let hyperfine_par = &sz * &iz;
        let fz = &sz + &iz;

        let dim = ds * di;
        let ii = system.nuclear_spin * (system.nuclear_spin + 1.0);
        let iz2 = &iz * &iz;
        let shift = OperatorMatrix::identity(dim, dim).map(|z| z * cx(ii / 3.0));
        let quad_traceless = &iz2 - &shift;
        let quad_verbatim = &iz2 + &shift;

        Ok(SpinOperators {
            dim,
            electron_spin: system.electron_spin,
            nuclear_spin: system.nuclear_spin,
            sx,
            sy,
            sz,
            ix,
            iy,
            iz,
            fz,
            hyperfine_perp,
            hyperfine_par,
            quad_traceless,
            quad_verbatim,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    fn check_system(&self, system: &SpinSystem) -> Result<()> {
        if system.electron_spin != self.electron_spin || system.nuclear_spin != self.nuclear_spin {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: system.dimension(),
            });
        }
        Ok(())
    }

    /// Assembles the spin Hamiltonian in MHz for a static field in mT.
    pub fn hamiltonian(&self, system: &SpinSystem, field: FieldVector) -> Result<OperatorMatrix> {
        self.check_system(system)?;
        let zeeman_x = MU_B_MHZ_PER_MT * system.g_perp * field.bx;
        let zeeman_y = MU_B_MHZ_PER_MT * system.g_perp * field.by;
        let zeeman_z = MU_B_MHZ_PER_MT * system.g_parallel * field.bz;

        let mut h = self.sx.map(|z| z * cx(zeeman_x));
        h += self.sy.map(|z| z * cx(zeeman_y));
        h += self.sz.map(|z| z * cx(zeeman_z));
        h += self.hyperfine_perp.map(|z| z * cx(system.a_perp));
        h += self.hyperfine_par.map(|z| z * cx(system.a_parallel));
        let quad = match system.quadrupole_form {
            QuadrupoleForm::Traceless => &self.quad_traceless,
            QuadrupoleForm::Verbatim => &self.quad_verbatim,
        };
        h += quad.map(|z| z * cx(system.quadrupole_p));
        Ok(h)
    }

    /// Dimensionless drive operator g_perp (ux Sx + uy Sy) + g_par uz Sz for
    /// a unit oscillating-field direction `u`. The squared matrix element of
    /// this operator between eigenstates is the transition intensity factor
    /// |<f| B1.g.S |i>|^2 / (mu_B |B1|)^2.
    pub fn drive_operator(&self, system: &SpinSystem, u: [f64; 3]) -> OperatorMatrix {
        let mut op = self.sx.map(|z| z * cx(system.g_perp * u[0]));
        op += self.sy.map(|z| z * cx(system.g_perp * u[1]));
        op += self.sz.map(|z| z * cx(system.g_parallel * u[2]));
        op
    }

    /// dH/dB for a field sweep along the unit direction `u`, in MHz/mT.
    pub fn zeeman_derivative(&self, system: &SpinSystem, u: [f64; 3]) -> OperatorMatrix {
        self.drive_operator(system, u)
            .map(|z| z * cx(MU_B_MHZ_PER_MT))
    }

    /// Assembles and diagonalizes at `field`, then rotates degenerate
    /// eigenvector blocks to diagonalize F_z so that state labels are
    /// deterministic (sorted by <F_z> within each block).
    pub fn eigensystem(&self, system: &SpinSystem, field: FieldVector) -> Result<EigenSystem> {
        let h = self.hamiltonian(system, field)?;
        let mut eig = eigensystem(&h, field)?;
        rotate_degenerate_blocks(&mut eig, &self.fz);
        fix_phases(&mut eig.states);
        Ok(eig)
    }
}

/// Convenience wrapper building the operators on the fly; prefer
/// [`SpinOperators::hamiltonian`] inside loops.
pub fn assemble_hamiltonian(system: &SpinSystem, field: FieldVector) -> Result<OperatorMatrix> {
    SpinOperators::new(system)?.hamiltonian(system, field)
}

/// Energies and eigenstates at one field point. Energies ascend; `states`
/// holds the corresponding eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub energies: Vec<f64>,
    pub states: OperatorMatrix,
    pub field: FieldVector,
}

impl EigenSystem {
    pub fn dimension(&self) -> usize {
        self.energies.len()
    }

    /// f = E_f - E_i in MHz (negative when f lies below i).
    pub fn transition_frequency(&self, i: usize, f: usize) -> f64 {
        self.energies[f] - self.energies[i]
    }

    /// <F_z> for every eigenstate.
    pub fn fz_expectations(&self, ops: &SpinOperators) -> Vec<f64> {
        (0..self.dimension())
            .map(|k| {
                let v = self.states.column(k);
                (v.adjoint() * &ops.fz * v)[(0, 0)].re
            })
            .collect()
    }

    /// |<v_k (this)|v_k (other)>| per level; used for branch continuity.
    pub fn diagonal_overlaps(&self, other: &EigenSystem) -> Vec<f64> {
        (0..self.dimension())
            .map(|k| (self.states.column(k).adjoint() * other.states.column(k))[(0, 0)].norm())
            .collect()
    }
}

/// Diagonalizes a Hermitian operator matrix. Energies are sorted ascending;
/// eigenvectors are orthonormal columns in matching order. Degenerate
/// subspaces keep the solver's arbitrary basis — use
/// [`SpinOperators::eigensystem`] when deterministic labels matter.
pub fn eigensystem(h: &OperatorMatrix, field: FieldVector) -> Result<EigenSystem> {
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let asym = (h - h.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if asym > HERMITICITY_REL_TOL * scale.max(1e-300) {
        return Err(Error::NotHermitian {
            asymmetry: asym,
            tol: HERMITICITY_REL_TOL * scale,
        });
    }

    let se = h.clone().symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));

    let energies: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let mut states = OperatorMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        states.set_column(dst, &se.eigenvectors.column(src));
    }
    Ok(EigenSystem {
        energies,
        states,
        field,
    })
}

/// Rotates each degenerate eigenvalue block so that F_z is diagonal inside
/// it, ordering the block states by ascending <F_z>.
fn rotate_degenerate_blocks(eig: &mut EigenSystem, fz: &OperatorMatrix) {
    let n = eig.dimension();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.energies[end] - eig.energies[start] <= DEGENERACY_TOL_MHZ {
            end += 1;
        }
        if end - start > 1 {
            let block = eig.states.columns(start, end - start).into_owned();
            let fz_block = block.adjoint() * fz * &block;
            let se = fz_block.symmetric_eigen();
            let k = end - start;
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
            let mut u = OperatorMatrix::zeros(k, k);
            for (dst, &src) in order.iter().enumerate() {
                u.set_column(dst, &se.eigenvectors.column(src));
            }
            let rotated = block * u;
            for c in 0..k {
                eig.states.set_column(start + c, &rotated.column(c));
            }
        }
        start = end;
    }
}

/// Makes the largest-magnitude component of each eigenvector real and
/// positive. Gauge only — removes solver-dependent phases from outputs.
fn fix_phases(states: &mut OperatorMatrix) {
    let n = states.ncols();
    for c in 0..n {
        let col = states.column(c);
        let mut best = 0;
        let mut best_norm = 0.0;
        for (r, z) in col.iter().enumerate() {
            if z.norm() > best_norm {
                best_norm = z.norm();
                best = r;
            }
        }
        if best_norm > 0.0 {
            let phase = states[(best, c)] / cx(best_norm);
            let correction = phase.conj();
            for r in 0..states.nrows() {
                states[(r, c)] *= correction;
            }
        }
    }
}

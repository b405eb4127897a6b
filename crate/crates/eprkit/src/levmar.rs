//! Damped least-squares minimizer with finite-difference Jacobians.
//!
//! Small, dependency-free Levenberg–Marquardt: good enough for the
//! low-dimensional fits in this crate (4-parameter line shapes, <=5
//! spin-Hamiltonian parameters) where the residual is smooth and cheap.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_iterations: usize,
    /// Converged when the largest relative parameter step falls below this.
    pub xtol: f64,
    /// Converged when an accepted step improves chi^2 by less than this
    /// relative amount.
    pub ftol: f64,
    /// Relative forward-difference step for the Jacobian.
    pub fd_rel_step: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_iterations: 200,
            xtol: 1e-9,
            ftol: 1e-12,
            fd_rel_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub parameters: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    /// Jacobian evaluated at the solution (rows: residuals, cols: parameters).
    pub jacobian: DMatrix<f64>,
    pub residuals: DVector<f64>,
}

impl Outcome {
    pub fn residual_rms(&self) -> f64 {
        (self.chi2 / self.residuals.len().max(1) as f64).sqrt()
    }
}

fn fd_jacobian<F>(f: &mut F, x: &[f64], r0: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    let m = r0.len();
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for col in 0..n {
        let h = rel * x[col].abs().max(1.0);
        xp[col] = x[col] + h;
        let rp = f(&xp)?;
        if rp.len() != m {
            return Err(Error::InvalidInput(format!(
                "residual length changed from {m} to {} during differentiation",
                rp.len()
            )));
        }
        for row in 0..m {
            j[(row, col)] = (rp[row] - r0[row]) / h;
        }
        xp[col] = x[col];
    }
    Ok(j)
}

/// Minimizes sum r_i(x)^2 starting from `x0`.
///
/// The damping factor grows until a step decreases chi^2, so accepted
/// iterates are strictly monotone in chi^2. Returns
/// [`Error::NoConvergence`] if the iteration cap is hit first.
pub fn minimize<F>(mut residual_fn: F, x0: &[f64], opts: &Options) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    if x0.is_empty() {
        return Err(Error::InvalidInput("no parameters to fit".into()));
    }
    let mut x = x0.to_vec();
    let mut r = residual_fn(&x)?;
    if r.is_empty() {
        return Err(Error::NotEnoughData("residual vector is empty".into()));
    }
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let n = x.len();

    for iteration in 1..=opts.max_iterations {
        let j = fd_jacobian(&mut residual_fn, &x, &r, opts.fd_rel_step)?;
        let jt = j.transpose();
        let h = &jt * &j;
        let g = &jt * &r;
        let max_diag = (0..n).map(|k| h[(k, k)]).fold(0.0f64, f64::max);
        if max_diag == 0.0 || chi2 == 0.0 {
            // Flat residual: already at a (trivial) minimum.
            return Ok(Outcome {
                parameters: x,
                chi2,
                iterations: iteration,
                jacobian: j,
                residuals: r,
            });
        }

        let mut accepted = false;
        while lambda < 1e15 {
            let mut damped = h.clone();
            for k in 0..n {
                // Marquardt scaling with a floor so zero-curvature
                // directions stay solvable.
                damped[(k, k)] += lambda * h[(k, k)].max(1e-12 * max_diag);
            }
            let delta = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let r_trial = residual_fn(&trial)?;
            let chi2_trial = r_trial.norm_squared();
            if chi2_trial < chi2 {
                let rel_step = delta
                    .iter()
                    .zip(&x)
                    .map(|(d, xv)| d.abs() / xv.abs().max(1.0))
                    .fold(0.0f64, f64::max);
                let rel_improvement = (chi2 - chi2_trial) / chi2;
                x = trial;
                r = r_trial;
                chi2 = chi2_trial;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if rel_step < opts.xtol || rel_improvement < opts.ftol {
                    let j = fd_jacobian(&mut residual_fn, &x, &r, opts.fd_rel_step)?;
                    return Ok(Outcome {
                        parameters: x,
                        chi2,
                        iterations: iteration,
                        jacobian: j,
                        residuals: r,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction at any damping: numerically at a minimum.
            let j = fd_jacobian(&mut residual_fn, &x, &r, opts.fd_rel_step)?;
            return Ok(Outcome {
                parameters: x,
                chi2,
                iterations: iteration,
                jacobian: j,
                residuals: r,
            });
        }
    }

    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual_rms: (chi2 / r.len() as f64).sqrt(),
        last_parameters: x,
    })
}

/// Parameter covariance at the solution: (J^T J)^{-1} * chi^2 / (m - n).
///
/// `names` labels the columns; it is used to describe the null direction
/// when the Jacobian is rank deficient.
pub fn covariance(jacobian: &DMatrix<f64>, chi2: f64, names: &[&str]) -> Result<DMatrix<f64>> {
    let (m, n) = jacobian.shape();
    if m <= n {
        return Err(Error::NotEnoughData(format!(
            "{m} residuals cannot determine {n} parameters with uncertainties"
        )));
    }
    let svd = jacobian.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let s_max = svd.singular_values.max();
    let s_min_idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let s_min = svd.singular_values[s_min_idx];
    if s_min <= 1e-12 * s_max {
        let mut terms = Vec::new();
        for (k, name) in names.iter().enumerate() {
            let c = v_t[(s_min_idx, k)];
            if c.abs() > 0.2 {
                terms.push(format!("{c:+.2}*{name}"));
            }
        }
        if terms.is_empty() {
            terms.push("an ill-determined parameter combination".into());
        }
        return Err(Error::RankDeficient {
            null_direction: terms.join(" "),
        });
    }
    let scale = chi2 / (m - n) as f64;
    let mut cov = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut sum = 0.0;
            for k in 0..n {
                let s = svd.singular_values[k];
                sum += v_t[(k, a)] * v_t[(k, b)] / (s * s);
            }
            cov[(a, b)] = sum * scale;
        }
    }
    Ok(cov)
}

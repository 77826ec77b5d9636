//! Moving between nodal fields and spectral coefficients, and the
//! semi-implicit Euler step shared by the simulator and the learned operators.

use nalgebra::DVector;

use crate::domain::EigenBasis;
use crate::error::{Error, Result};

/// Coefficients of a field in a particular eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    pub beta: DVector<f64>,
    pub basis_id: String,
}

impl SpectralCoeffs {
    pub fn new(beta: DVector<f64>, basis: &EigenBasis) -> Result<Self> {
        check_len("coefficients", basis.n_modes(), beta.len())?;
        Ok(SpectralCoeffs {
            beta,
            basis_id: basis.id().to_string(),
        })
    }

    pub fn zeros(basis: &EigenBasis) -> Self {
        SpectralCoeffs {
            beta: DVector::zeros(basis.n_modes()),
            basis_id: basis.id().to_string(),
        }
    }

    fn check_basis(&self, basis: &EigenBasis) -> Result<()> {
        if self.basis_id != basis.id() {
            return Err(Error::BasisMismatch {
                expected: basis.id().to_string(),
                got: self.basis_id.clone(),
            });
        }
        Ok(())
    }
}

/// `R^n` for `n = 1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub residuals: Vec<DVector<f64>>,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// `beta_i = phi_i^T M u`.
pub fn project(field: &[f64], basis: &EigenBasis) -> Result<SpectralCoeffs> {
    check_len("field", basis.n_nodes(), field.len())?;
    Ok(SpectralCoeffs {
        beta: project_raw(field, basis),
        basis_id: basis.id().to_string(),
    })
}

/// `sum_i beta_i phi_i`.
pub fn reconstruct(coeffs: &SpectralCoeffs, basis: &EigenBasis) -> Result<Vec<f64>> {
    coeffs.check_basis(basis)?;
    check_len("coefficients", basis.n_modes(), coeffs.beta.len())?;
    Ok(reconstruct_raw(&coeffs.beta, basis))
}

/// Unchecked projection for hot loops.
pub fn project_raw(field: &[f64], basis: &EigenBasis) -> DVector<f64> {
    basis.weighted_modes().tr_mul(&DVector::from_column_slice(field))
}

pub fn reconstruct_raw(beta: &DVector<f64>, basis: &EigenBasis) -> Vec<f64> {
    (basis.modes() * beta).data.into()
}

pub fn check_times(times: &[f64]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if w[1] <= w[0] || !w[1].is_finite() {
            return Err(Error::NonIncreasingTimes { index: i + 1 });
        }
    }
    Ok(())
}

/// `R^n = (beta^n - beta^{n-1}) / (t_n - t_{n-1}) + alpha Lambda beta^n`.
pub fn residual_series(
    series: &[SpectralCoeffs],
    times: &[f64],
    alpha: f64,
    basis: &EigenBasis,
) -> Result<ResidualSeries> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(
            "residual series needs at least two time points".into(),
        ));
    }
    check_len("times", series.len(), times.len())?;
    check_times(times)?;
    for c in series {
        c.check_basis(basis)?;
    }
    let betas: Vec<&DVector<f64>> = series.iter().map(|c| &c.beta).collect();
    Ok(ResidualSeries {
        residuals: residuals_raw(&betas, times, alpha, basis.eigenvalues()),
    })
}

pub fn residuals_raw(betas: &[&DVector<f64>], times: &[f64], alpha: f64, lambda: &[f64]) -> Vec<DVector<f64>> {
    (1..betas.len())
        .map(|n| {
            let dt = times[n] - times[n - 1];
            DVector::from_fn(lambda.len(), |i, _| {
                (betas[n][i] - betas[n - 1][i]) / dt + alpha * lambda[i] * betas[n][i]
            })
        })
        .collect()
}

/// One semi-implicit Euler step: `beta^n_i = (beta^{n-1}_i + dt g_i) / (1 + dt alpha lambda_i)`.
pub fn rollout_step(
    prev: &SpectralCoeffs,
    dt: f64,
    alpha: f64,
    basis: &EigenBasis,
    g: &[f64],
) -> Result<SpectralCoeffs> {
    prev.check_basis(basis)?;
    check_len("drive", basis.n_modes(), g.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let mut beta = prev.beta.clone();
    semi_implicit_update(&mut beta, dt, alpha, basis.eigenvalues(), g);
    Ok(SpectralCoeffs {
        beta,
        basis_id: prev.basis_id.clone(),
    })
}

/// In-place form of [`rollout_step`].
#[inline]
pub fn semi_implicit_update(beta: &mut DVector<f64>, dt: f64, alpha: f64, lambda: &[f64], g: &[f64]) {
    for i in 0..beta.len() {
        beta[i] = (beta[i] + dt * g[i]) / (1.0 + dt * alpha * lambda[i]);
    }
}

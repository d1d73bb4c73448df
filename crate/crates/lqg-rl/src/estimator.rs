//! Kalman-filter state estimation: one-step predict-correct update of the
//! state estimate and its covariance.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::model::{symmetrize, ValidatedModel};
use crate::{Error, Result};

/// State estimate x̂_t and estimation covariance Σ_t at time t. Immutable;
/// [`kalman_step`] maps old state to new state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub xhat: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub t: usize,
}

/// Filter state at t = 1: the prior mean and covariance of the initial state.
pub fn kalman_init(model: &ValidatedModel) -> FilterState {
    FilterState {
        xhat: model.system().x1_mean.clone(),
        sigma: model.system().sigma1.clone(),
        t: 1,
    }
}

/// Factorize the innovation covariance, retrying once with a trace-scaled
/// jitter to absorb semidefinite boundary cases.
fn innovation_cholesky(s: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = Cholesky::new(s.clone()) {
        return Ok(ch);
    }
    let jitter = 1e-12 * s.trace();
    let n = s.nrows();
    Cholesky::new(s + DMatrix::identity(n, n) * jitter)
        .ok_or(Error::SingularInnovationCovariance)
}

/// One combined predict-correct update:
///
/// x̂' = F x̂ + G u + K (y − H x̂),
/// K  = F Σ Hᵀ (H Σ Hᵀ + E)⁻¹,
/// Σ' = W + F Σ Fᵀ − K H Σ Fᵀ,
///
/// with Σ' symmetrized.
pub fn kalman_step(
    fs: &FilterState,
    u: &DVector<f64>,
    y: &DVector<f64>,
    model: &ValidatedModel,
) -> Result<FilterState> {
    let sys = model.system();
    let (n, m, k) = (model.state_dim(), model.control_dim(), model.obs_dim());
    if u.len() != m {
        return Err(Error::DimensionMismatch {
            name: "u".into(),
            expected: format!("{m}x1"),
            actual: format!("{}x1", u.len()),
        });
    }
    if y.len() != k {
        return Err(Error::DimensionMismatch {
            name: "y".into(),
            expected: format!("{k}x1"),
            actual: format!("{}x1", y.len()),
        });
    }
    if fs.xhat.len() != n || fs.sigma.nrows() != n || fs.sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            name: "FilterState".into(),
            expected: format!("{n}x1 / {n}x{n}"),
            actual: format!("{}x1 / {}x{}", fs.xhat.len(), fs.sigma.nrows(), fs.sigma.ncols()),
        });
    }

    let innovation_cov = &sys.h * &fs.sigma * sys.h.transpose() + &sys.e;
    let chol = innovation_cholesky(innovation_cov)?;
    // K = F Σ Hᵀ S⁻¹, computed as (S⁻¹ (F Σ Hᵀ)ᵀ)ᵀ since S is symmetric.
    let f_sigma_ht = &sys.f * &fs.sigma * sys.h.transpose();
    let gain = chol.solve(&f_sigma_ht.transpose()).transpose();

    let innovation = y - &sys.h * &fs.xhat;
    let xhat = &sys.f * &fs.xhat + &sys.g * u + &gain * innovation;
    let sigma = &sys.w + &sys.f * &fs.sigma * sys.f.transpose()
        - &gain * &sys.h * &fs.sigma * sys.f.transpose();

    Ok(FilterState {
        xhat,
        sigma: symmetrize(&sigma),
        t: fs.t + 1,
    })
}

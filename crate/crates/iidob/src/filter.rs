//! Auxiliary first-order disturbance filter.
//!
//! The raw observer output `dhat` enters the safety constraints through a
//! differentiable surrogate `dhat_f` driven by
//! `dhat_f_dot = -(T1 + T2 r^2 ||d beta/d x||_F^2)(dhat_f - dhat)`,
//! whose error decays at rate `zeta` to the same ultimate ball, scaled.

use crate::observer::BoundReport;
use crate::{Real, Vector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter gain inequality violated: need T2 > 1/(4 kappa) = {floor}, got {got}")]
    T2TooSmall { floor: Real, got: Real },
    #[error("filter gains must be positive: T1 = {t1}, T2 = {t2}")]
    NonPositive { t1: Real, t2: Real },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterParams {
    pub t1: Real,
    pub t2: Real,
}

/// Filter state is just the filtered disturbance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub dhat_f: Vector,
}

/// `dhat_f_dot = -(T1 + T2 r^2 ||d beta/d x||_F^2)(dhat_f - dhat)`.
/// The diagonal structure of `d beta/d x` makes the Frobenius norm the
/// Euclidean norm of its diagonal.
pub fn filter_rhs(
    state: &FilterState,
    params: &FilterParams,
    dhat: &Vector,
    r: Real,
    dbeta_dx_diag: &Vector,
) -> Vector {
    let gain = params.t1 + params.t2 * r * r * dbeta_dx_diag.norm_squared();
    -(&state.dhat_f - dhat) * gain
}

/// Decay rate `zeta = min{2 T1, 2 kappa - 1/(2 T2)}` and the filtered-error
/// envelope `rho_f(t) = sqrt((||z(0)||^2 - 2 omega/zeta) e^{-zeta t} + 2 omega/zeta)`.
#[derive(Debug, Clone, Copy)]
pub struct FilterEnvelope {
    pub zeta: Real,
    pub omega: Real,
    pub z0_norm_sq: Real,
}

pub fn zeta_and_rho_f(
    params: &FilterParams,
    report: &BoundReport,
    z0_norm_sq: Real,
) -> Result<FilterEnvelope, FilterError> {
    if !(params.t1 > 0.0 && params.t2 > 0.0) {
        return Err(FilterError::NonPositive { t1: params.t1, t2: params.t2 });
    }
    let floor = 1.0 / (4.0 * report.kappa);
    if !(params.t2 > floor) {
        return Err(FilterError::T2TooSmall { floor, got: params.t2 });
    }
    let zeta = (2.0 * params.t1).min(2.0 * report.kappa - 1.0 / (2.0 * params.t2));
    Ok(FilterEnvelope { zeta, omega: report.omega, z0_norm_sq })
}

impl FilterEnvelope {
    pub fn rho_f(&self, t: Real) -> Real {
        let floor = 2.0 * self.omega / self.zeta;
        ((self.z0_norm_sq - floor) * (-self.zeta * t).exp() + floor)
            .max(0.0)
            .sqrt()
    }
}

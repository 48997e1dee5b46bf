//! Disturbance-compensating tracking controller with a dynamic-surface
//! filter on the desired input.
//!
//! The desired input cancels drift, feeds back the tracking error and
//! subtracts the disturbance estimate:
//! `u_d = -g(x)^+ (f(x) + (alpha1 + r^2/2) e_x + dhat - xd_dot)`.
//! Its derivative is obtained from the first-order surface
//! `epsilon u_d_f_dot = -u_d_f + u_d`, and the nominal auxiliary input is
//! `v = -alpha2 (u - u_d_f) + u_d_f_dot - g(x)^T e_x`.

use crate::model::{ModelError, SystemModel};
use crate::{Real, Vector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("model evaluation failed in tracking controller: {0}")]
    Model(#[from] ModelError),
    #[error("input matrix is numerically rank deficient (condition {cond:.3e})")]
    IllConditioned { cond: Real },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackingParams {
    pub alpha1: Real,
    pub alpha2: Real,
    /// Dynamic-surface time constant.
    pub epsilon: Real,
}

const COND_LIMIT: Real = 1e8;

/// `u_d = -g^+ (f + (alpha1 + r^2/2) e_x + dhat - xd_dot)` with `e_x = x - xd`.
/// The pseudoinverse is taken through an SVD and rejected when the condition
/// number of `g` exceeds 1e8.
pub fn desired_input(
    model: &SystemModel,
    params: &TrackingParams,
    x: &Vector,
    xd: &Vector,
    xd_dot: &Vector,
    dhat: &Vector,
    r: Real,
) -> Result<Vector, TrackingError> {
    let g = model.g(x)?;
    let svd = g.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { Real::INFINITY };
    if !(cond < COND_LIMIT) {
        return Err(TrackingError::IllConditioned { cond });
    }
    let e_x = x - xd;
    let target = model.f(x)? + e_x * (params.alpha1 + 0.5 * r * r) + dhat - xd_dot;
    let u_d = svd
        .solve(&(-target), 0.0)
        .map_err(|_| TrackingError::IllConditioned { cond })?;
    Ok(u_d)
}

/// `u_d_f_dot = (-u_d_f + u_d) / epsilon`.
pub fn surface_rhs(params: &TrackingParams, u_d_f: &Vector, u_d: &Vector) -> Vector {
    (u_d - u_d_f) / params.epsilon
}

/// `v = -alpha2 (u - u_d_f) + u_d_f_dot - g(x)^T e_x`.
pub fn nominal_v(
    model: &SystemModel,
    params: &TrackingParams,
    x: &Vector,
    xd: &Vector,
    u: &Vector,
    u_d_f: &Vector,
    u_d_f_dot: &Vector,
) -> Result<Vector, TrackingError> {
    let g = model.g(x)?;
    let e_x = x - xd;
    Ok(-(u - u_d_f) * params.alpha2 + u_d_f_dot - g.transpose() * e_x)
}

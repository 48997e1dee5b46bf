//! Immersion-and-invariance disturbance observer.
//!
//! The observer estimates the total disturbance `d = p(x) w(t)` of the
//! integrator-augmented plant as `dhat = xi + beta(x, xhat, u)`, where
//! `beta` approximately solves a gradient PDE by integrating the scalar
//! function `psi` one coordinate at a time, and an adaptive scaling factor
//! `r` compensates the approximation error. The error `dhat - d` is
//! uniformly ultimately bounded with computable envelopes.

use crate::model::{ModelError, SystemModel};
use crate::numerics::{central_diff, fd_step, quad_gl, NumericsError, QuadRule};
use crate::{Matrix, Real, Vector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("model evaluation failed during {phase}: {source}")]
    Model {
        phase: &'static str,
        source: ModelError,
    },
    #[error("quadrature failed during {phase}: {source}")]
    Quadrature {
        phase: &'static str,
        source: NumericsError,
    },
    #[error("observer gain inequalities violated: {}", .0.join("; "))]
    Violations(Vec<String>),
}

/// Observer tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObserverGains {
    pub gamma: Real,
    pub eta: Real,
    pub c: Real,
    pub theta: Real,
    pub k1: Real,
    pub k2: Real,
}

/// Derived constants and the ultimate disturbance-estimation bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    pub kappa: Real,
    pub omega: Real,
    pub chi: Real,
    pub theta: Real,
    /// Limit of the estimation-error envelope: sqrt(omega (theta + 2 omega) / (kappa chi)).
    pub ultimate_bound: Real,
}

/// Checks every gain inequality and returns the derived constants, or the
/// full list of violated inequalities.
pub fn validate_gains(
    gains: &ObserverGains,
    n: usize,
    r0: Real,
    omega0: Real,
    omega1: Real,
    l: usize,
) -> Result<BoundReport, ObserverError> {
    let mut bad = Vec::new();
    for (name, v) in [
        ("gamma", gains.gamma),
        ("eta", gains.eta),
        ("c", gains.c),
        ("theta", gains.theta),
        ("k1", gains.k1),
        ("k2", gains.k2),
    ] {
        if !(v > 0.0) {
            bad.push(format!("{name} > 0 (got {v})"));
        }
    }
    let nf = n as Real;
    let kappa = gains.gamma - nf / (2.0 * gains.c) - gains.theta;
    if !(kappa > 0.0) {
        bad.push(format!(
            "gamma > n/(2c) + theta (kappa = {kappa} must be positive)"
        ));
    }
    let k2_floor = 1.0 / (4.0 * gains.gamma - 2.0 * nf / gains.c - 4.0 * gains.theta);
    if kappa > 0.0 && !(gains.k2 > k2_floor) {
        bad.push(format!(
            "k2 > 1/(4 gamma - 2n/c - 4 theta) (need k2 > {k2_floor}, got {})",
            gains.k2
        ));
    }
    if !(r0 > 1.0) {
        bad.push(format!("r(0) > 1 (got {r0})"));
    }
    if !bad.is_empty() {
        return Err(ObserverError::Violations(bad));
    }
    let lf = l as Real;
    let omega =
        (omega1 * omega1 + lf * omega0 * omega0 + lf * omega0.powi(4)) / (2.0 * gains.eta);
    let chi = (2.0 * kappa - 1.0 / (2.0 * gains.k2))
        .min(2.0 * gains.k1)
        .min(gains.theta);
    Ok(BoundReport {
        kappa,
        omega,
        chi,
        theta: gains.theta,
        ultimate_bound: (omega * (gains.theta + 2.0 * omega) / (kappa * chi)).sqrt(),
    })
}

/// The scalar observer-gain function
/// `psi = eta/2 [ ||p||^2 + sum_i ( ||dp_i (f + g u)||^2 + ||dp_i p||^2 ) ] + gamma`.
pub fn psi(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    u: &Vector,
) -> Result<Real, ObserverError> {
    let wrap = |source| ObserverError::Model { phase: "psi", source };
    let p = model.p(x).map_err(wrap)?;
    let fgu = model.f(x).map_err(wrap)? + model.g(x).map_err(wrap)? * u;
    let mut acc = p.norm_squared();
    for i in 0..model.l {
        let dpi = model.dp(i, x).map_err(wrap)?;
        acc += (&dpi * &fgu).norm_squared();
        acc += (&dpi * &p).norm_squared();
    }
    Ok(0.5 * gains.eta * acc + gains.gamma)
}

/// psi with NaN instead of an error, for use inside quadrature integrands.
fn psi_or_nan(model: &SystemModel, gains: &ObserverGains, x: &Vector, u: &Vector) -> Real {
    psi(model, gains, x, u).unwrap_or(Real::NAN)
}

/// The point whose slot `i` is free while every other slot sits at `xhat`.
fn mixed_point(xhat: &Vector, i: usize, tau: Real) -> Vector {
    let mut pt = xhat.clone();
    pt[i] = tau;
    pt
}

/// `beta` component `i` integrates psi from 0 to `x_i` with every other
/// coordinate held at its estimate.
pub fn beta(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
    rule: &QuadRule,
) -> Result<Vector, ObserverError> {
    let mut out = Vector::zeros(model.n);
    for i in 0..model.n {
        out[i] = quad_gl(
            |tau| psi_or_nan(model, gains, &mixed_point(xhat, i, tau), u),
            0.0,
            x[i],
            rule,
        )
        .map_err(|source| ObserverError::Quadrature { phase: "beta", source })?;
    }
    Ok(out)
}

/// Diagonal of `d beta / d x` by the fundamental theorem of calculus:
/// entry `i` is psi evaluated at the mixed point with slot `i` at `x_i`.
pub fn dbeta_dx_diag(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
) -> Result<Vector, ObserverError> {
    let mut out = Vector::zeros(model.n);
    for i in 0..model.n {
        out[i] = psi(model, gains, &mixed_point(xhat, i, x[i]), u)?;
    }
    Ok(out)
}

/// `d beta / d x` as a diagonal matrix; no quadrature involved.
pub fn dbeta_dx(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
) -> Result<Matrix, ObserverError> {
    Ok(Matrix::from_diagonal(&dbeta_dx_diag(model, gains, x, xhat, u)?))
}

/// `d beta / d xhat` by the Leibniz integral rule: entry (i, j) integrates
/// the central-difference partial of psi in estimate slot `j` along the
/// slot-`i` integration path. The diagonal is zero because slot `i` is the
/// integration variable, not an estimate.
pub fn dbeta_dxhat(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
    rule: &QuadRule,
) -> Result<Matrix, ObserverError> {
    let n = model.n;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let h = fd_step(xhat[j]);
            out[(i, j)] = quad_gl(
                |tau| {
                    let mut plus = mixed_point(xhat, i, tau);
                    let mut minus = plus.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    (psi_or_nan(model, gains, &plus, u)
                        - psi_or_nan(model, gains, &minus, u))
                        / (2.0 * h)
                },
                0.0,
                x[i],
                rule,
            )
            .map_err(|source| ObserverError::Quadrature { phase: "dbeta_dxhat", source })?;
        }
    }
    Ok(out)
}

/// `d beta / d u` by the Leibniz integral rule.
pub fn dbeta_du(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
    rule: &QuadRule,
) -> Result<Matrix, ObserverError> {
    let n = model.n;
    let mut out = Matrix::zeros(n, model.m);
    for i in 0..n {
        for j in 0..model.m {
            let h = fd_step(u[j]);
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            out[(i, j)] = quad_gl(
                |tau| {
                    let pt = mixed_point(xhat, i, tau);
                    (psi_or_nan(model, gains, &pt, &up) - psi_or_nan(model, gains, &pt, &um))
                        / (2.0 * h)
                },
                0.0,
                x[i],
                rule,
            )
            .map_err(|source| ObserverError::Quadrature { phase: "dbeta_du", source })?;
        }
    }
    Ok(out)
}

/// Joint directional derivative `(d beta/d xhat) dxhat + (d beta/d u) du` by
/// one central difference of `beta` along the direction. Equivalent to the
/// Leibniz-rule Jacobian products but needs only two `beta` evaluations.
pub fn dbeta_dir(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
    rule: &QuadRule,
    dxhat: &Vector,
    du: &Vector,
) -> Result<Vector, ObserverError> {
    let scale = (dxhat.norm_squared() + du.norm_squared()).sqrt();
    if scale == 0.0 {
        return Ok(Vector::zeros(model.n));
    }
    let eps = 1e-6 * (1.0 + xhat.norm() + u.norm()) / scale;
    let bp = beta(model, gains, x, &(xhat + dxhat * eps), &(u + du * eps), rule)?;
    let bm = beta(model, gains, x, &(xhat - dxhat * eps), &(u - du * eps), rule)?;
    Ok((bp - bm) / (2.0 * eps))
}

/// The divided-difference coefficients delta_ij: `entries[(i, j)]` holds
/// delta_ij, so the diagonal matrix Delta_j is column `j`.
#[derive(Debug, Clone)]
pub struct DeltaCoeffs {
    pub entries: Matrix,
}

impl DeltaCoeffs {
    /// Squared Frobenius norm of Delta_j = diag of column j.
    pub fn col_norm_sq(&self, j: usize) -> Real {
        self.entries.column(j).norm_squared()
    }
}

const DELTA_FALLBACK_TOL: Real = 1e-8;

/// Ascending-index telescoping divided differences for the identity
/// `psi(mixed row i) - psi(x) = -sum_j delta_ij e_j`, with a derivative
/// fallback when `|e_j|` is tiny. `delta_ii = 0` because slot `i` is never
/// switched.
pub fn delta_coeffs_with<F>(psi_fn: F, x: &Vector, xhat: &Vector) -> DeltaCoeffs
where
    F: Fn(&Vector) -> Real,
{
    let n = x.len();
    let mut entries = Matrix::zeros(n, n);
    for i in 0..n {
        let mut current = x.clone();
        let mut psi_before = psi_fn(&current);
        for j in 0..n {
            if j == i {
                continue;
            }
            let ej = xhat[j] - x[j];
            if ej.abs() > DELTA_FALLBACK_TOL {
                current[j] = xhat[j];
                let psi_after = psi_fn(&current);
                entries[(i, j)] = -(psi_after - psi_before) / ej;
                psi_before = psi_after;
            } else {
                let h = fd_step(current[j]);
                let d = central_diff(&psi_fn, &current, j, h).unwrap_or(Real::NAN);
                entries[(i, j)] = -d;
                current[j] = xhat[j];
                psi_before = psi_fn(&current);
            }
        }
    }
    DeltaCoeffs { entries }
}

/// delta coefficients for the model psi at fixed input `u`.
pub fn delta_coeffs(
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    xhat: &Vector,
    u: &Vector,
) -> DeltaCoeffs {
    delta_coeffs_with(|pt| psi_or_nan(model, gains, pt, u), x, xhat)
}

/// The injection gain
/// `Lambda = (k1 + k2 r^2) I + (c r^2 / 2) diag[||Delta_1||^2, ..., ||Delta_n||^2]`.
pub fn lambda_gain(gains: &ObserverGains, r: Real, deltas: &DeltaCoeffs) -> Matrix {
    let n = deltas.entries.nrows();
    let base = gains.k1 + gains.k2 * r * r;
    let mut diag = Vector::from_element(n, base);
    for j in 0..n {
        diag[j] += 0.5 * gains.c * r * r * deltas.col_norm_sq(j);
    }
    Matrix::from_diagonal(&diag)
}

/// Observer state: state estimate, internal estimator state, scaling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub xhat: Vector,
    pub xi: Vector,
    pub r: Real,
}

/// Output of one observer right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct ObserverDerivs {
    pub xhat_dot: Vector,
    pub xi_dot: Vector,
    pub r_dot: Real,
    pub dhat: Vector,
    /// Diagonal of d beta / d x, reused by the disturbance filter.
    pub dbeta_dx_diag: Vector,
    /// Stiffness estimate: largest decay rate present in the observer
    /// dynamics, used for stability-driven substepping.
    pub stiffness: Real,
}

/// Evaluates the full observer dynamics. Order: beta, dhat, Delta, Lambda,
/// xhat_dot, xi_dot, r_dot.
pub fn observer_rhs(
    state: &ObserverState,
    model: &SystemModel,
    gains: &ObserverGains,
    x: &Vector,
    u: &Vector,
    v: &Vector,
    rule: &QuadRule,
) -> Result<ObserverDerivs, ObserverError> {
    let wrap = |source| ObserverError::Model { phase: "observer_rhs", source };
    let beta_v = beta(model, gains, x, &state.xhat, u, rule)?;
    let dhat = &state.xi + &beta_v;
    let deltas = delta_coeffs(model, gains, x, &state.xhat, u);
    let lambda = lambda_gain(gains, state.r, &deltas);
    let e = &state.xhat - x;
    let fgu = model.f(x).map_err(wrap)? + model.g(x).map_err(wrap)? * u;

    let xhat_dot = &fgu + &dhat - &lambda * &e;

    let dbx = dbeta_dx_diag(model, gains, x, &state.xhat, u)?;
    let xi_dot = -dbx.component_mul(&(&fgu + &dhat))
        - dbeta_dir(model, gains, x, &state.xhat, u, rule, &xhat_dot, v)?;

    let mut quad_sum = 0.0;
    for j in 0..model.n {
        quad_sum += e[j] * e[j] * deltas.col_norm_sq(j);
    }
    let r_dot = -gains.theta * (state.r - 1.0) + 0.5 * gains.c * state.r * quad_sum;

    let stiffness = dbx.max().max(lambda.diagonal().max());
    Ok(ObserverDerivs {
        xhat_dot,
        xi_dot,
        r_dot,
        dhat,
        dbeta_dx_diag: dbx,
        stiffness,
    })
}

/// Time-varying envelopes from the boundedness analysis.
#[derive(Debug, Clone, Copy)]
pub struct Envelopes {
    pub kappa: Real,
    pub omega: Real,
    pub chi: Real,
    pub theta: Real,
    pub z0_norm_sq: Real,
    pub w0: Real,
}

/// Builds the envelopes `rho_z` and `rho_r` from the bound report, the
/// initial scaled error and the initial augmented Lyapunov value `W(0)`.
pub fn bound_envelopes(report: &BoundReport, z0: &Vector, w0: Real) -> Envelopes {
    Envelopes {
        kappa: report.kappa,
        omega: report.omega,
        chi: report.chi,
        theta: report.theta,
        z0_norm_sq: z0.norm_squared(),
        w0,
    }
}

impl Envelopes {
    /// `rho_z(t) = sqrt(||z(0)||^2 e^{-2 kappa t} + omega / kappa)`.
    pub fn rho_z(&self, t: Real) -> Real {
        (self.z0_norm_sq * (-2.0 * self.kappa * t).exp() + self.omega / self.kappa).sqrt()
    }

    /// `rho_r(t) = sqrt(2 W(0) e^{-chi t} + (theta + 2 omega) / chi)`.
    pub fn rho_r(&self, t: Real) -> Real {
        (2.0 * self.w0 * (-self.chi * t).exp() + (self.theta + 2.0 * self.omega) / self.chi)
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::make_example1;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex1_gains(eta: Real) -> ObserverGains {
        ObserverGains { gamma: 100.0, eta, c: 0.5, theta: 10.0, k1: 10.0, k2: 10.0 }
    }

    /// Single-channel model with p identically zero; psi collapses to gamma.
    fn zero_p_model() -> SystemModel {
        SystemModel::new(
            2,
            2,
            1,
            Box::new(|x: &Vector| dvector![x[1], x[0] * x[1]]),
            Box::new(|_x: &Vector| Matrix::identity(2, 2)),
            Box::new(|_x: &Vector| Matrix::zeros(2, 1)),
            vec![Box::new(|_x: &Vector| Matrix::zeros(2, 2))],
        )
    }

    #[test]
    fn gain_arithmetic_example1() {
        let rep = validate_gains(&ex1_gains(1.0), 2, 1.001, 8.0, 26.0, 1).unwrap();
        assert_relative_eq!(rep.kappa, 88.0, epsilon = 1e-12);
        assert_relative_eq!(rep.omega, 2418.0, epsilon = 1e-12);
        // k2 threshold 1/352 is comfortably met by k2 = 10.
        assert_relative_eq!(1.0 / (4.0 * 100.0 - 2.0 * 2.0 / 0.5 - 4.0 * 10.0), 1.0 / 352.0);
        assert_relative_eq!(rep.chi, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn gain_arithmetic_example2() {
        let g = ObserverGains { gamma: 250.0, eta: 1.0, c: 5.0, theta: 50.0, k1: 20.0, k2: 20.0 };
        let rep = validate_gains(&g, 4, 1.001, 11.0, 37.0, 2).unwrap();
        assert_relative_eq!(rep.kappa, 199.6, epsilon = 1e-12);
    }

    #[test]
    fn gain_violations_are_named() {
        let g = ObserverGains { gamma: 10.0, eta: 1.0, c: 0.5, theta: 10.0, k1: 1.0, k2: 1.0 };
        let err = validate_gains(&g, 2, 1.001, 8.0, 26.0, 1).unwrap_err();
        match err {
            ObserverError::Violations(v) => {
                assert!(v.iter().any(|s| s.contains("gamma > n/(2c) + theta")), "{v:?}")
            }
            other => panic!("{other:?}"),
        }
        let g = ex1_gains(1.0);
        let err = validate_gains(&g, 2, 1.0, 8.0, 26.0, 1).unwrap_err();
        match err {
            ObserverError::Violations(v) => {
                assert!(v.iter().any(|s| s.contains("r(0) > 1")), "{v:?}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn psi_hand_values() {
        let sc = make_example1();
        let g = ex1_gains(1.0);
        let u = dvector![0.0, 0.0];
        let v = psi(&sc.model, &g, &dvector![0.0, 0.0], &u).unwrap();
        assert_relative_eq!(v, 100.0, epsilon = 1e-14);
        let v = psi(&sc.model, &g, &dvector![1.0, 0.0], &u).unwrap();
        assert_relative_eq!(v, 101.0, epsilon = 1e-14);
        let v = psi(&zero_p_model(), &g, &dvector![3.0, -2.0], &dvector![1.0, 1.0]).unwrap();
        assert_relative_eq!(v, 100.0, epsilon = 1e-14);
    }

    #[test]
    fn beta_closed_forms() {
        let g = ex1_gains(1.0);
        let rule = QuadRule::default();
        let u = dvector![0.0, 0.0];

        // p = 0 makes psi constant, so beta = gamma x exactly.
        let m = zero_p_model();
        let x = dvector![0.7, -1.3];
        let b = beta(&m, &g, &x, &dvector![0.1, 0.2], &u, &rule).unwrap();
        assert_relative_eq!(b, &x * 100.0, max_relative = 1e-13);

        // x = 0 gives zero-length integrals regardless of xhat.
        let sc = make_example1();
        let b = beta(&sc.model, &g, &dvector![0.0, 0.0], &dvector![4.0, -3.0], &u, &rule)
            .unwrap();
        assert_eq!(b, dvector![0.0, 0.0]);

        // Closed form: psi(tau, 0, 0) = tau^2 + 100.
        let b = beta(&sc.model, &g, &dvector![1.0, 0.0], &dvector![1.0, 0.0], &u, &rule)
            .unwrap();
        assert_relative_eq!(b[0], 100.0 + 1.0 / 3.0, max_relative = 1e-13);
        assert_eq!(b[1], 0.0);
    }

    #[test]
    fn dbeta_dx_properties() {
        let g = ex1_gains(1.0);
        let u = dvector![0.3, -0.4];
        let sc = make_example1();
        // Coincident estimate collapses every mixed argument to x.
        let x = dvector![0.9, -0.2];
        let d = dbeta_dx(&sc.model, &g, &x, &x, &u).unwrap();
        let val = psi(&sc.model, &g, &x, &u).unwrap();
        assert_relative_eq!(d, Matrix::identity(2, 2) * val, max_relative = 1e-14);
        // p = 0 gives gamma I.
        let m = zero_p_model();
        let d = dbeta_dx(&m, &g, &x, &dvector![1.0, 1.0], &u).unwrap();
        assert_relative_eq!(d, Matrix::identity(2, 2) * 100.0, max_relative = 1e-14);
    }

    #[test]
    fn dbeta_dx_matches_quadrature_differentiation() {
        let sc = make_example1();
        let g = ex1_gains(1.0);
        let rule = QuadRule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let xhat = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let u = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let analytic = dbeta_dx_diag(&sc.model, &g, &x, &xhat, &u).unwrap();
            for i in 0..2 {
                let fd = central_diff(
                    |y: &Vector| beta(&sc.model, &g, y, &xhat, &u, &rule).unwrap()[i],
                    &x,
                    i,
                    fd_step(x[i]),
                )
                .unwrap();
                assert!(
                    (analytic[i] - fd).abs() / (1.0 + fd.abs()) <= 1e-6,
                    "i={i} analytic={} fd={fd}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn dbeta_dxhat_and_du_zero_cases() {
        let g = ex1_gains(1.0);
        let rule = QuadRule::default();
        let u = dvector![0.5, -0.5];
        let m = zero_p_model();
        let x = dvector![1.1, -0.6];
        let xhat = dvector![0.4, 0.9];
        assert_relative_eq!(
            dbeta_dxhat(&m, &g, &x, &xhat, &u, &rule).unwrap(),
            Matrix::zeros(2, 2),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            dbeta_du(&m, &g, &x, &xhat, &u, &rule).unwrap(),
            Matrix::zeros(2, 2),
            epsilon = 1e-9
        );
        let sc = make_example1();
        let zero = dvector![0.0, 0.0];
        assert_eq!(
            dbeta_dxhat(&sc.model, &g, &zero, &xhat, &u, &rule).unwrap(),
            Matrix::zeros(2, 2)
        );
        assert_eq!(
            dbeta_du(&sc.model, &g, &zero, &xhat, &u, &rule).unwrap(),
            Matrix::zeros(2, 2)
        );
    }

    #[test]
    fn leibniz_jacobians_match_outer_differences() {
        let sc = make_example1();
        let g = ex1_gains(1.0);
        let rule = QuadRule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let x = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let xhat = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let u = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let jx = dbeta_dxhat(&sc.model, &g, &x, &xhat, &u, &rule).unwrap();
            let ju = dbeta_du(&sc.model, &g, &x, &xhat, &u, &rule).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let fd = central_diff(
                        |y: &Vector| beta(&sc.model, &g, &x, y, &u, &rule).unwrap()[i],
                        &xhat,
                        j,
                        fd_step(xhat[j]),
                    )
                    .unwrap();
                    assert!(
                        (jx[(i, j)] - fd).abs() / (1.0 + fd.abs()) <= 1e-4,
                        "dxhat ({i},{j}): {} vs {fd}",
                        jx[(i, j)]
                    );
                    let fd = central_diff(
                        |y: &Vector| beta(&sc.model, &g, &x, &xhat, y, &rule).unwrap()[i],
                        &u,
                        j,
                        fd_step(u[j]),
                    )
                    .unwrap();
                    assert!(
                        (ju[(i, j)] - fd).abs() / (1.0 + fd.abs()) <= 1e-4,
                        "du ({i},{j}): {} vs {fd}",
                        ju[(i, j)]
                    );
                }
            }
            assert_eq!(jx[(0, 0)], 0.0);
            assert_eq!(jx[(1, 1)], 0.0);
        }
    }

    #[test]
    fn directional_derivative_matches_jacobian_products() {
        let sc = make_example1();
        let g = ex1_gains(1.0);
        let rule = QuadRule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let xhat = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let u = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let dxh = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let du = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let jx = dbeta_dxhat(&sc.model, &g, &x, &xhat, &u, &rule).unwrap();
            let ju = dbeta_du(&sc.model, &g, &x, &xhat, &u, &rule).unwrap();
            let expect = &jx * &dxh + &ju * &du;
            let got = dbeta_dir(&sc.model, &g, &x, &xhat, &u, &rule, &dxh, &du).unwrap();
            assert_relative_eq!(got, expect, epsilon = 1e-4, max_relative = 1e-4);
        }
    }

    #[test]
    fn delta_coeffs_synthetic() {
        // psi(x) = x1: switching slot 1 moves psi by e1.
        let psi_fn = |x: &Vector| x[0];
        let d = delta_coeffs_with(psi_fn, &dvector![0.0, 0.0], &dvector![1.0, 1.0]);
        assert_relative_eq!(d.entries[(1, 0)], -1.0, epsilon = 1e-12);
        assert_eq!(d.entries[(0, 0)], 0.0);
        assert_relative_eq!(d.entries[(0, 1)], 0.0, epsilon = 1e-12);
        assert_eq!(d.entries[(1, 1)], 0.0);
    }

    #[test]
    fn delta_coeffs_constant_psi_is_zero() {
        let d = delta_coeffs_with(|_x| 42.0, &dvector![0.3, -0.8], &dvector![1.0, 2.0]);
        assert_relative_eq!(d.entries, Matrix::zeros(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn delta_identity_holds_randomly() {
        // Telescoped identity on 1000 random triples, both scenarios' psi.
        for sc in [make_example1()] {
            let g = ex1_gains(1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..1000 {
                let n = sc.model.n;
                let x = Vector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
                let xhat = Vector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
                let u = Vector::from_fn(sc.model.m, |_, _| rng.gen_range(-2.0..2.0));
                let d = delta_coeffs(&sc.model, &g, &x, &xhat, &u);
                let psi_x = psi(&sc.model, &g, &x, &u).unwrap();
                let e = &xhat - &x;
                for i in 0..n {
                    let mixed = {
                        let mut pt = xhat.clone();
                        pt[i] = x[i];
                        pt
                    };
                    let lhs = psi(&sc.model, &g, &mixed, &u).unwrap() - psi_x;
                    let rhs = -(0..n).map(|j| d.entries[(i, j)] * e[j]).sum::<Real>();
                    assert!(
                        (lhs - rhs).abs() <= 1e-6 * (1.0 + psi_x.abs()),
                        "row {i}: lhs={lhs} rhs={rhs}"
                    );
                }
            }
        }
    }

    #[test]
    fn lambda_gain_arithmetic() {
        let g = ObserverGains { gamma: 100.0, eta: 1.0, c: 0.5, theta: 10.0, k1: 10.0, k2: 10.0 };
        // n = 1, ||Delta_1||^2 = 4, r = 2.
        let d = DeltaCoeffs { entries: Matrix::from_element(1, 1, 2.0) };
        let lam = lambda_gain(&g, 2.0, &d);
        assert_relative_eq!(lam[(0, 0)], 10.0 + 40.0 + 0.5 * 4.0 / 2.0 * 4.0, epsilon = 1e-12);
        // Zero deltas, r = 1: (k1 + k2) I, and eigenvalues never drop below.
        let d = DeltaCoeffs { entries: Matrix::zeros(3, 3) };
        let lam = lambda_gain(&g, 1.0, &d);
        assert_relative_eq!(lam, Matrix::identity(3, 3) * 20.0);
    }

    #[test]
    fn observer_rhs_r_decays_without_error() {
        let sc = make_example1();
        let g = ex1_gains(1.0);
        let rule = QuadRule::default();
        let x = dvector![0.4, -0.9];
        let u = dvector![0.1, 0.2];
        let st = ObserverState { xhat: x.clone(), xi: Vector::zeros(2), r: 1.5 };
        let out = observer_rhs(&st, &sc.model, &g, &x, &u, &dvector![0.0, 0.0], &rule).unwrap();
        assert_relative_eq!(out.r_dot, -10.0 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn envelope_shapes() {
        let rep = validate_gains(&ex1_gains(100.0), 2, 1.001, 8.0, 26.0, 1).unwrap();
        assert_relative_eq!(rep.omega, 24.18, epsilon = 1e-12);
        let env = bound_envelopes(&rep, &dvector![0.0, 0.0], 0.5);
        // z0 = 0: constant envelope sqrt(omega/kappa).
        let lim = (24.18f64 / 88.0).sqrt();
        assert_relative_eq!(env.rho_z(0.0), lim, epsilon = 1e-12);
        assert_relative_eq!(env.rho_z(3.0), lim, epsilon = 1e-12);
        assert_relative_eq!(lim, 0.52418768325, epsilon = 1e-9);
        // t = 0 dominates the initial condition.
        let env = bound_envelopes(&rep, &dvector![3.0, 4.0], 13.0);
        assert_relative_eq!(env.rho_z(0.0), (25.0f64 + 24.18 / 88.0).sqrt(), epsilon = 1e-12);
        assert!(env.rho_z(0.0) >= 5.0);
        // Monotone nonincreasing.
        let mut last = env.rho_r(0.0);
        for k in 1..50 {
            let v = env.rho_r(k as Real * 0.1);
            assert!(v <= last + 1e-15);
            last = v;
        }
    }
}

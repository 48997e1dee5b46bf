//! Control-barrier-function chain, the (psi0, psi1) constraint pair, the
//! safety QP with closed-form single-constraint and exact multi-constraint
//! active-set solutions, the hypothesis validator, and the worst-case
//! robust-CBF baseline.

use crate::model::{BarrierDef, ModelError, SystemModel};
use crate::numerics::fd_step;
use crate::observer::BoundReport;
use crate::{Matrix, Real, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SafetyError {
    #[error("model evaluation failed in safe controller: {0}")]
    Model(#[from] ModelError),
    #[error("barrier configuration error: {0}")]
    Config(String),
    #[error(
        "infeasible safety constraint: psi1 vanishes while psi0 = {psi0} < 0; \
         the supremum hypothesis of the safety theorem fails here"
    )]
    Infeasible { psi0: Real },
    #[error("infeasible constraint set: no active subset yields a feasible point")]
    InfeasibleSet,
}

use crate::model::{BarrierGrad, BarrierScalar};

/// A barrier with its rates and margins, ready for chain construction.
pub struct CbfSpec {
    pub name: String,
    /// Relative degree of the original plant with respect to h0.
    pub iota: usize,
    /// Rates lambda_0 ... lambda_iota (length iota + 1).
    pub lambdas: Vec<Real>,
    pub rho: Real,
    pub rho_tilde: Real,
    pub h0: BarrierScalar,
    pub grad_h0: BarrierGrad,
    /// Analytic h_{iota-1} and its gradient, pre-derived per scenario.
    pub h_prev: BarrierScalar,
    pub grad_prev: BarrierGrad,
}

impl CbfSpec {
    /// Binds a scenario barrier to its rates and margins. `lambdas` must
    /// hold lambda_0 ... lambda_iota.
    pub fn from_barrier(
        def: &BarrierDef,
        lambdas: &[Real],
        rho: Real,
        rho_tilde: Real,
    ) -> Result<Self, SafetyError> {
        if def.iota == 0 {
            return Err(SafetyError::Config(format!(
                "barrier '{}' must have relative degree >= 1",
                def.name
            )));
        }
        if lambdas.len() != def.iota + 1 {
            return Err(SafetyError::Config(format!(
                "barrier '{}' has relative degree {}, needs {} rates, got {}",
                def.name,
                def.iota,
                def.iota + 1,
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(SafetyError::Config(format!(
                "barrier '{}' rates must be positive: {lambdas:?}",
                def.name
            )));
        }
        if !(rho > 0.0 && rho_tilde > 0.0) {
            return Err(SafetyError::Config(format!(
                "barrier '{}' margins must be positive: rho = {rho}, rho-tilde = {rho_tilde}",
                def.name
            )));
        }
        // For iota = 1 the slice is empty and make_prev returns h0 again.
        let (h_prev, grad_prev) = (def.make_prev)(&lambdas[..def.iota - 1]);
        Ok(Self {
            name: def.name.clone(),
            iota: def.iota,
            lambdas: lambdas.to_vec(),
            rho,
            rho_tilde,
            h0: def.h0.clone(),
            grad_h0: def.grad_h0.clone(),
            h_prev,
            grad_prev,
        })
    }
}

/// The chain h_0 ... h_{iota-1}. Members are evaluated recursively from the
/// spec: h_i = grad(h_{i-1}) . f + lambda_{i-1} h_{i-1}, with the last
/// member replaced by the scenario's analytic form.
pub struct Chain<'a> {
    spec: &'a CbfSpec,
}

impl<'a> Chain<'a> {
    /// Chain member h_i(x), 0 <= i <= iota - 1.
    pub fn h(&self, i: usize, model: &SystemModel, x: &Vector) -> Result<Real, SafetyError> {
        if i == 0 {
            return Ok((self.spec.h0)(x));
        }
        if i == self.spec.iota - 1 {
            return Ok((self.spec.h_prev)(x));
        }
        let prev = self.h(i - 1, model, x)?;
        let grad = self.grad(i - 1, model, x)?;
        let f = model.f(x)?;
        Ok(grad.dot(&f) + self.spec.lambdas[i - 1] * prev)
    }

    /// Gradient of chain member i: analytic at the ends, central
    /// differences for intermediate members.
    pub fn grad(&self, i: usize, model: &SystemModel, x: &Vector) -> Result<Vector, SafetyError> {
        if i == 0 {
            return Ok((self.spec.grad_h0)(x));
        }
        if i == self.spec.iota - 1 {
            return Ok((self.spec.grad_prev)(x));
        }
        let n = x.len();
        let mut g = Vector::zeros(n);
        for j in 0..n {
            let h = fd_step(x[j]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            g[j] = (self.h(i, model, &xp)? - self.h(i, model, &xm)?) / (2.0 * h);
        }
        Ok(g)
    }
}

const DEGREE_SAMPLES: usize = 100;
const DEGREE_TOL: Real = 1e-7;

/// Builds the chain and verifies the relative-degree structure at random
/// states: for i <= iota - 2, grad(h_i) must annihilate both g and p, and
/// the analytic last member must agree with the recursive construction.
pub fn build_chain<'a>(
    spec: &'a CbfSpec,
    model: &SystemModel,
) -> Result<Chain<'a>, SafetyError> {
    let chain = Chain { spec };
    let mut rng = ChaCha8Rng::seed_from_u64(0x1d0b);
    for _ in 0..DEGREE_SAMPLES {
        let x = Vector::from_fn(model.n, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..spec.iota.saturating_sub(1) {
            let grad = chain.grad(i, model, &x)?;
            let lg = (grad.transpose() * model.g(&x)?).norm();
            let lp = (grad.transpose() * model.p(&x)?).norm();
            if lg > DEGREE_TOL || lp > DEGREE_TOL {
                return Err(SafetyError::Config(format!(
                    "barrier '{}': relative degree {} violated at sampled state \
                     (|L_g h_{i}| = {lg:.3e}, |L_p h_{i}| = {lp:.3e})",
                    spec.name, spec.iota
                )));
            }
        }
        if spec.iota >= 2 {
            let i = spec.iota - 1;
            let rec = chain.grad(i - 1, model, &x)?.dot(&model.f(&x)?)
                + spec.lambdas[i - 1] * chain.h(i - 1, model, &x)?;
            let ana = chain.h(i, model, &x)?;
            if (rec - ana).abs() > 1e-6 * (1.0 + ana.abs()) {
                return Err(SafetyError::Config(format!(
                    "barrier '{}': analytic h_{} disagrees with the chain recursion \
                     ({ana} vs {rec})",
                    spec.name, i
                )));
            }
        }
    }
    Ok(chain)
}

/// `h_iota = grad(h_{iota-1}) . (f + g u + dhat_f)
///  - (1 + r^2) ||grad(h_{iota-1})||^2 / (2 rho_tilde (zeta - lambda_{iota-1}))
///  - rho_tilde omega + lambda_{iota-1} h_{iota-1}`.
#[allow(clippy::too_many_arguments)]
pub fn eval_h_iota(
    spec: &CbfSpec,
    chain: &Chain,
    model: &SystemModel,
    x: &Vector,
    u: &Vector,
    r: Real,
    dhat_f: &Vector,
    zeta: Real,
    omega: Real,
) -> Result<Real, SafetyError> {
    let lam = spec.lambdas[spec.iota - 1];
    if !(zeta > lam) {
        return Err(SafetyError::Config(format!(
            "barrier '{}': the safety theorem requires lambda_{} = {lam} < zeta = {zeta}",
            spec.name,
            spec.iota - 1
        )));
    }
    let hp = chain.h(spec.iota - 1, model, x)?;
    let gp = chain.grad(spec.iota - 1, model, x)?;
    let fgu = model.f(x)? + model.g(x)? * u + dhat_f;
    Ok(gp.dot(&fgu)
        - (1.0 + r * r) * gp.norm_squared() / (2.0 * spec.rho_tilde * (zeta - lam))
        - spec.rho_tilde * omega
        + lam * hp)
}

/// The linear constraint psi0 + psi1 v >= 0 evaluated at one instant, plus
/// the barrier value h_iota for logging.
#[derive(Debug, Clone)]
pub struct ConstraintPair {
    pub psi0: Real,
    pub psi1: Vector,
    pub h_iota: Real,
}

/// Observer-side signals the constraint pair needs at one instant.
pub struct SafetySignals<'a> {
    pub x: &'a Vector,
    pub u: &'a Vector,
    pub r: Real,
    pub dhat: &'a Vector,
    pub dhat_f: &'a Vector,
    pub r_dot: Real,
    pub dhat_f_dot: &'a Vector,
}

/// Builds (psi0, psi1):
/// `psi0 = dh/dx (f + g u + dhat) + dh/dr rdot + dh/ddhat_f dhat_f_dot
///  - r^2 ||dh/dx||^2 / (rho (4 kappa - 2 lambda_iota)) - rho omega
///  + lambda_iota h_iota`, `psi1 = grad(h_{iota-1}) g`.
/// dh/dx is taken by central differences of eval_h_iota; dh/dr and
/// dh/ddhat_f are analytic.
pub fn constraint_pair(
    spec: &CbfSpec,
    chain: &Chain,
    model: &SystemModel,
    sig: &SafetySignals,
    report: &BoundReport,
    zeta: Real,
) -> Result<ConstraintPair, SafetyError> {
    let lam_iota = spec.lambdas[spec.iota];
    let denom_k = 4.0 * report.kappa - 2.0 * lam_iota;
    if !(denom_k > 0.0) {
        return Err(SafetyError::Config(format!(
            "barrier '{}': the safety theorem requires lambda_{} = {lam_iota} < 2 kappa = {}",
            spec.name,
            spec.iota,
            2.0 * report.kappa
        )));
    }
    let omega = report.omega;
    let lam_prev = spec.lambdas[spec.iota - 1];

    let gp = chain.grad(spec.iota - 1, model, sig.x)?;
    let psi1 = (gp.transpose() * model.g(sig.x)?).transpose();

    let h_iota =
        eval_h_iota(spec, chain, model, sig.x, sig.u, sig.r, sig.dhat_f, zeta, omega)?;

    let n = sig.x.len();
    let mut dh_dx = Vector::zeros(n);
    for j in 0..n {
        let step = fd_step(sig.x[j]);
        let mut xp = sig.x.clone();
        let mut xm = sig.x.clone();
        xp[j] += step;
        xm[j] -= step;
        let hp = eval_h_iota(spec, chain, model, &xp, sig.u, sig.r, sig.dhat_f, zeta, omega)?;
        let hm = eval_h_iota(spec, chain, model, &xm, sig.u, sig.r, sig.dhat_f, zeta, omega)?;
        dh_dx[j] = (hp - hm) / (2.0 * step);
    }

    let dh_dr = -sig.r * gp.norm_squared() / (spec.rho_tilde * (zeta - lam_prev));
    // dh_iota/ddhat_f = grad(h_{iota-1}) exactly.
    let fgu_dhat = model.f(sig.x)? + model.g(sig.x)? * sig.u + sig.dhat;

    let psi0 = dh_dx.dot(&fgu_dhat)
        + dh_dr * sig.r_dot
        + gp.dot(sig.dhat_f_dot)
        - sig.r * sig.r * dh_dx.norm_squared() / (spec.rho * denom_k)
        - spec.rho * omega
        + lam_iota * h_iota;

    Ok(ConstraintPair { psi0, psi1, h_iota })
}

/// QP solution for min ||v - v_nom||^2 subject to linear safety constraints.
#[derive(Debug, Clone)]
pub struct QpResult {
    pub v: Vector,
    pub active: Vec<bool>,
    pub objective: Real,
}

const ACTIVE_TOL: Real = 1e-8;
const FEAS_TOL: Real = 1e-9;

/// Closed form for one constraint: project v_nom onto the halfspace.
/// Returns v_nom bit-for-bit when already feasible.
pub fn solve_qp_single(psi0: Real, psi1: &Vector, v_nom: &Vector) -> Result<QpResult, SafetyError> {
    let slack = psi0 + psi1.dot(v_nom);
    if slack >= 0.0 {
        return Ok(QpResult {
            v: v_nom.clone(),
            active: vec![slack.abs() <= ACTIVE_TOL],
            objective: 0.0,
        });
    }
    let denom = psi1.norm_squared();
    if denom == 0.0 {
        return Err(SafetyError::Infeasible { psi0 });
    }
    let v = v_nom - psi1 * (slack / denom);
    let objective = (&v - v_nom).norm_squared();
    Ok(QpResult { v, active: vec![true], objective })
}

const MAX_QP_CONSTRAINTS: usize = 8;

/// Exact multi-constraint solution by active-set enumeration: for every
/// subset of constraints treated as equalities, solve the projection, keep
/// feasible candidates, return the one with the smallest objective. For a
/// convex QP the optimizer's active set is one of the subsets, so the best
/// feasible candidate is the exact minimizer.
pub fn solve_qp_multi(
    pairs: &[(Real, Vector)],
    v_nom: &Vector,
) -> Result<QpResult, SafetyError> {
    if pairs.len() == 1 {
        let mut res = solve_qp_single(pairs[0].0, &pairs[0].1, v_nom)?;
        res.active = vec![pairs[0].0 + pairs[0].1.dot(&res.v) <= ACTIVE_TOL];
        return Ok(res);
    }
    if pairs.len() > MAX_QP_CONSTRAINTS {
        return Err(SafetyError::Config(format!(
            "active-set enumeration supports at most {MAX_QP_CONSTRAINTS} constraints, got {}",
            pairs.len()
        )));
    }
    let feasible = |v: &Vector| pairs.iter().all(|(p0, p1)| p0 + p1.dot(v) >= -FEAS_TOL);
    // The unconstrained optimum wins outright when feasible (objective 0).
    if feasible(v_nom) {
        return Ok(QpResult {
            v: v_nom.clone(),
            active: pairs
                .iter()
                .map(|(p0, p1)| p0 + p1.dot(v_nom) <= ACTIVE_TOL)
                .collect(),
            objective: 0.0,
        });
    }
    let k = pairs.len();
    let m = v_nom.len();
    let mut best: Option<QpResult> = None;
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let rows = idx.len();
        let mut a = Matrix::zeros(rows, m);
        let mut b = Vector::zeros(rows);
        for (row, &i) in idx.iter().enumerate() {
            a.row_mut(row).copy_from(&pairs[i].1.transpose());
            b[row] = pairs[i].0;
        }
        // Want A v = -b; with v = v_nom - A^T mu this is
        // (A A^T) mu = A v_nom + b.
        let gram = &a * a.transpose();
        let rhs = &a * v_nom + &b;
        let svd = gram.svd(true, true);
        let mu = match svd.solve(&rhs, 1e-12) {
            Ok(mu) => mu,
            Err(_) => continue,
        };
        let v = v_nom - a.transpose() * &mu;
        // Rank-deficient subsets can fail to reach the equality target.
        if ((&a * &v) + &b).amax() > 1e-7 {
            continue;
        }
        if !feasible(&v) {
            continue;
        }
        let objective = (&v - v_nom).norm_squared();
        if best.as_ref().map_or(true, |b| objective < b.objective - 1e-15) {
            let active = pairs
                .iter()
                .map(|(p0, p1)| p0 + p1.dot(&v) <= ACTIVE_TOL)
                .collect();
            best = Some(QpResult { v, active, objective });
        }
    }
    best.ok_or(SafetyError::InfeasibleSet)
}

/// One hypothesis check of the safety theorem.
#[derive(Debug, Clone)]
pub struct CheckItem {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Failing this item degrades the formal guarantee to an empirical one
    /// rather than invalidating the configuration (e.g. the theorem's
    /// initial-condition hypotheses, which depend on the unknown d(0)).
    pub warn_only: bool,
}

impl CheckItem {
    pub fn status(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else if self.warn_only {
            "WARN"
        } else {
            "FAIL"
        }
    }
}

/// Evaluates every hypothesis of the safety theorem at the initial instant.
/// All checks are reported; the caller decides whether to proceed (the
/// simulation may continue on failure with a warning, with safety then
/// verified empirically).
#[allow(clippy::too_many_arguments)]
pub fn validate_theorem2(
    spec: &CbfSpec,
    chain: &Chain,
    model: &SystemModel,
    report: &BoundReport,
    zeta: Real,
    x0: &Vector,
    u0: &Vector,
    r0: Real,
    dhat_f0: &Vector,
    z0_norm_sq: Real,
    ef0_norm_sq: Real,
) -> Result<Vec<CheckItem>, SafetyError> {
    let mut out = Vec::new();
    let lam_iota = spec.lambdas[spec.iota];
    let lam_prev = spec.lambdas[spec.iota - 1];
    out.push(CheckItem {
        name: format!("{}: lambda_iota < 2 kappa", spec.name),
        pass: lam_iota < 2.0 * report.kappa,
        detail: format!("{lam_iota} < {}", 2.0 * report.kappa),
        warn_only: false,
    });
    out.push(CheckItem {
        name: format!("{}: lambda_(iota-1) < zeta", spec.name),
        pass: lam_prev < zeta,
        detail: format!("{lam_prev} < {zeta}"),
        warn_only: false,
    });
    for i in 0..spec.iota.saturating_sub(1) {
        let hi = chain.h(i, model, x0)?;
        out.push(CheckItem {
            name: format!("{}: h_{i}(x(0)) > 0", spec.name),
            pass: hi > 0.0,
            detail: format!("h_{i}(x(0)) = {hi}"),
            warn_only: true,
        });
    }
    let vf0 = 0.5 * ef0_norm_sq + 0.5 * z0_norm_sq;
    let h_prev0 = chain.h(spec.iota - 1, model, x0)?;
    out.push(CheckItem {
        name: format!("{}: h_(iota-1)(x(0)) - rho_tilde V_f(0) > 0", spec.name),
        pass: h_prev0 - spec.rho_tilde * vf0 > 0.0,
        detail: format!("{h_prev0} - {} * {vf0}", spec.rho_tilde),
        warn_only: true,
    });
    let h_iota0 =
        eval_h_iota(spec, chain, model, x0, u0, r0, dhat_f0, zeta, report.omega)?;
    out.push(CheckItem {
        name: format!("{}: h_iota(0) - (rho/2)||z(0)||^2 > 0", spec.name),
        pass: h_iota0 - 0.5 * spec.rho * z0_norm_sq > 0.0,
        detail: format!("{h_iota0} - {}", 0.5 * spec.rho * z0_norm_sq),
        warn_only: true,
    });
    Ok(out)
}

/// Worst-case robust-CBF baseline for relative-degree-1 barriers, filtering
/// `u` directly: `psi0_r = L_f h - ||(dh/dx) p|| omega0 + rate h`,
/// `psi1_r = (dh/dx) g`.
pub fn robust_cbf_constraint(
    spec: &CbfSpec,
    model: &SystemModel,
    x: &Vector,
    omega0: Real,
    rate: Real,
) -> Result<(Real, Vector), SafetyError> {
    if spec.iota != 1 {
        return Err(SafetyError::Config(format!(
            "barrier '{}': the robust baseline needs relative degree 1, got {}",
            spec.name, spec.iota
        )));
    }
    let h = (spec.h0)(x);
    let grad = (spec.grad_h0)(x);
    let psi0 = grad.dot(&model.f(x)?) - (grad.transpose() * model.p(x)?).norm() * omega0
        + rate * h;
    let psi1 = (grad.transpose() * model.g(x)?).transpose();
    Ok((psi0, psi1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{validate_gains, ObserverGains};
    use crate::scenarios::{make_example1, make_manipulator};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn ex1_spec() -> CbfSpec {
        let sc = make_example1();
        CbfSpec::from_barrier(&sc.barriers[0], &[50.0, 50.0], 1.0, 1.0).unwrap()
    }

    fn ex1_report() -> BoundReport {
        let g = ObserverGains { gamma: 100.0, eta: 100.0, c: 0.5, theta: 10.0, k1: 10.0, k2: 10.0 };
        validate_gains(&g, 2, 1.001, 8.0, 26.0, 1).unwrap()
    }

    #[test]
    fn chain_degree_one_is_h0() {
        let sc = make_example1();
        let spec = ex1_spec();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let x = dvector![0.3, -0.8];
        assert_relative_eq!(chain.h(0, &sc.model, &x).unwrap(), 1.3, epsilon = 1e-14);
        assert_eq!(chain.grad(0, &sc.model, &x).unwrap(), dvector![1.0, 0.0]);
    }

    #[test]
    fn manipulator_chain_hand_value() {
        let sc = make_manipulator();
        // First joint barrier q1 + 1 >= 0 with lambda_0 = 25.
        let spec = CbfSpec::from_barrier(&sc.barriers[0], &[25.0, 30.0, 50.0], 1.0, 1.0).unwrap();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let x = dvector![0.2, -0.4, 0.7, 0.1];
        // h1 = qdot1 + 25 (q1 + 1).
        assert_relative_eq!(
            chain.h(1, &sc.model, &x).unwrap(),
            0.7 + 25.0 * 1.2,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            chain.grad(1, &sc.model, &x).unwrap(),
            dvector![25.0, 0.0, 1.0, 0.0],
            epsilon = 1e-12
        );
    }

    #[test]
    fn chain_gradients_match_central_differences() {
        use crate::numerics::central_diff;
        let sc = make_manipulator();
        let spec = CbfSpec::from_barrier(&sc.barriers[0], &[25.0, 30.0, 50.0], 1.0, 1.0).unwrap();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let x = Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let g = chain.grad(1, &sc.model, &x).unwrap();
            for j in 0..4 {
                let fd = central_diff(
                    |y: &Vector| chain.h(1, &sc.model, y).unwrap(),
                    &x,
                    j,
                    fd_step(x[j]),
                )
                .unwrap();
                assert!((g[j] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn relative_degree_violation_is_caught() {
        let sc = make_manipulator();
        // A barrier on a velocity coordinate has relative degree 1, not 2:
        // claiming 2 must fail the L_g check.
        use crate::model::BarrierDef;
        use std::sync::Arc;
        let bad = BarrierDef {
            name: "bogus".into(),
            iota: 2,
            h0: Arc::new(|x: &Vector| x[2] + 1.0),
            grad_h0: Arc::new(|_x: &Vector| dvector![0.0, 0.0, 1.0, 0.0]),
            make_prev: Box::new(|lam: &[Real]| {
                let l0 = lam.first().copied().unwrap_or(0.0);
                (
                    Arc::new(move |x: &Vector| x[2] + 1.0 + l0 * 0.0) as _,
                    Arc::new(|_x: &Vector| dvector![0.0, 0.0, 1.0, 0.0]) as _,
                )
            }),
        };
        let spec = CbfSpec::from_barrier(&bad, &[25.0, 30.0, 50.0], 1.0, 1.0).unwrap();
        assert!(matches!(build_chain(&spec, &sc.model), Err(SafetyError::Config(_))));
    }

    #[test]
    fn h_iota_hand_value() {
        let sc = make_example1();
        let spec = ex1_spec();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let z = dvector![0.0, 0.0];
        let v = eval_h_iota(&spec, &chain, &sc.model, &z, &z, 1.0, &z, 100.0, 24.18).unwrap();
        // 0 - 2 * 1 / (2 * 1 * 50) - 24.18 + 50 * 1 = 25.8.
        assert_relative_eq!(v, 25.8, epsilon = 1e-12);
        // Linearity in dhat_f with slope grad_prev.
        let shift = dvector![0.7, -0.3];
        let v2 =
            eval_h_iota(&spec, &chain, &sc.model, &z, &z, 1.0, &shift, 100.0, 24.18).unwrap();
        assert_relative_eq!(v2 - v, 0.7, epsilon = 1e-12);
        // zeta <= lambda_(iota-1) rejected.
        assert!(matches!(
            eval_h_iota(&spec, &chain, &sc.model, &z, &z, 1.0, &z, 50.0, 24.18),
            Err(SafetyError::Config(_))
        ));
    }

    #[test]
    fn constraint_pair_psi1_and_fd_cross_check() {
        let sc = make_example1();
        let spec = ex1_spec();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let report = ex1_report();
        let zeta = 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let x = Vector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
            let u = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let dhat = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let dhat_f = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let dfdot = Vector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let r = rng.gen_range(1.0..1.5);
            let sig = SafetySignals {
                x: &x,
                u: &u,
                r,
                dhat: &dhat,
                dhat_f: &dhat_f,
                r_dot: rng.gen_range(-1.0..1.0),
                dhat_f_dot: &dfdot,
            };
            let pair = constraint_pair(&spec, &chain, &sc.model, &sig, &report, zeta).unwrap();
            // psi1 is the first row of g for h0 = x1 + 1.
            assert_relative_eq!(pair.psi1, dvector![1.0, 0.0], epsilon = 1e-12);
            // Analytic psi1 vs finite difference of h_iota in u.
            for j in 0..2 {
                let h = fd_step(u[j]);
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                let hp = eval_h_iota(
                    &spec, &chain, &sc.model, &x, &up, r, &dhat_f, zeta, report.omega,
                )
                .unwrap();
                let hm = eval_h_iota(
                    &spec, &chain, &sc.model, &x, &um, r, &dhat_f, zeta, report.omega,
                )
                .unwrap();
                let fd = (hp - hm) / (2.0 * h);
                assert!(
                    (pair.psi1[j] - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                    "{} vs {fd}",
                    pair.psi1[j]
                );
            }
        }
    }

    #[test]
    fn constraint_pair_rejects_large_lambda_iota() {
        let sc = make_example1();
        let spec = CbfSpec::from_barrier(&sc.barriers[0], &[50.0, 200.0], 1.0, 1.0).unwrap();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let z = dvector![0.0, 0.0];
        let sig = SafetySignals {
            x: &z,
            u: &z,
            r: 1.0,
            dhat: &z,
            dhat_f: &z,
            r_dot: 0.0,
            dhat_f_dot: &z,
        };
        // 2 kappa = 176 < 200.
        assert!(matches!(
            constraint_pair(&spec, &chain, &sc.model, &sig, &ex1_report(), 100.0),
            Err(SafetyError::Config(_))
        ));
    }

    #[test]
    fn qp_single_hand_cases() {
        let v0 = dvector![0.0, 0.0];
        let res = solve_qp_single(1.0, &dvector![0.0, 1.0], &v0).unwrap();
        assert_eq!(res.v, v0);
        assert!(!res.active[0]);
        assert_eq!(res.objective, 0.0);

        let res = solve_qp_single(-1.0, &dvector![1.0, 0.0], &v0).unwrap();
        assert_relative_eq!(res.v, dvector![1.0, 0.0], epsilon = 1e-14);
        assert!(res.active[0]);

        assert!(matches!(
            solve_qp_single(-1.0, &dvector![0.0, 0.0], &v0),
            Err(SafetyError::Infeasible { .. })
        ));
    }

    #[test]
    fn qp_single_feasible_is_bit_for_bit() {
        let v0 = dvector![0.1 + 0.2, -1.0 / 3.0];
        let res = solve_qp_single(0.5, &dvector![0.3, 0.7], &v0).unwrap();
        assert!(res.v == v0);
    }

    #[test]
    fn qp_multi_hand_cases() {
        let v0 = dvector![0.0, 0.0];
        // Two orthogonal violated constraints.
        let pairs = vec![(-1.0, dvector![1.0, 0.0]), (-1.0, dvector![0.0, 1.0])];
        let res = solve_qp_multi(&pairs, &v0).unwrap();
        assert_relative_eq!(res.v, dvector![1.0, 1.0], epsilon = 1e-12);
        assert!(res.active.iter().all(|a| *a));

        // Single pair reduces to the closed form.
        let pairs = vec![(-1.0, dvector![1.0, 0.0])];
        let res = solve_qp_multi(&pairs, &v0).unwrap();
        let single = solve_qp_single(-1.0, &dvector![1.0, 0.0], &v0).unwrap();
        assert_eq!(res.v, single.v);

        // Redundant copies of one constraint (degenerate active set).
        let pairs = vec![(-1.0, dvector![1.0, 0.0]), (-1.0, dvector![1.0, 0.0])];
        let res = solve_qp_multi(&pairs, &v0).unwrap();
        assert_relative_eq!(res.v, dvector![1.0, 0.0], epsilon = 1e-9);

        // Infeasible set: opposite halfspaces that cannot both hold.
        let pairs = vec![(-1.0, dvector![1.0, 0.0]), (-1.0, dvector![-1.0, 0.0])];
        assert!(matches!(solve_qp_multi(&pairs, &v0), Err(SafetyError::InfeasibleSet)));
    }

    #[test]
    fn qp_multi_satisfies_kkt_on_random_instances() {
        // Independent certificate: feasibility, stationarity with
        // nonnegative multipliers on the active set, complementary
        // slackness. For a convex QP this certifies the global optimum.
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let mut solved = 0;
        while solved < 500 {
            let m = rng.gen_range(2..4usize);
            let k = rng.gen_range(1..5usize);
            let v0 = Vector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
            let pairs: Vec<(Real, Vector)> = (0..k)
                .map(|_| {
                    (
                        rng.gen_range(-2.0..1.0),
                        Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)),
                    )
                })
                .collect();
            let res = match solve_qp_multi(&pairs, &v0) {
                Ok(r) => r,
                Err(_) => continue,
            };
            solved += 1;
            for (p0, p1) in &pairs {
                assert!(p0 + p1.dot(&res.v) >= -1e-9);
            }
            // Fit multipliers on the active set and verify stationarity.
            let act: Vec<usize> = (0..k)
                .filter(|i| pairs[*i].0 + pairs[*i].1.dot(&res.v) <= 1e-6)
                .collect();
            let resid = &res.v - &v0;
            if act.is_empty() {
                assert!(resid.norm() <= 1e-9);
                continue;
            }
            let mut a = Matrix::zeros(m, act.len());
            for (col, &i) in act.iter().enumerate() {
                a.column_mut(col).copy_from(&pairs[i].1);
            }
            let mu = a.clone().svd(true, true).solve(&resid, 1e-12).unwrap();
            assert!((a * &mu - &resid).norm() <= 1e-6, "stationarity violated");
            assert!(mu.iter().all(|&m| m >= -1e-6), "negative multiplier {mu:?}");
        }
    }

    #[test]
    fn theorem2_checks() {
        let sc = make_example1();
        let spec = ex1_spec();
        let chain = build_chain(&spec, &sc.model).unwrap();
        let report = ex1_report();
        let x0 = dvector![-0.5, -0.5];
        let z = dvector![0.0, 0.0];
        let checks = validate_theorem2(
            &spec, &chain, &sc.model, &report, 100.0, &x0, &z, 1.001, &z, 0.0, 0.0,
        )
        .unwrap();
        // Rate conditions: 50 < 176 and 50 < 100.
        assert!(checks[0].pass, "{:?}", checks[0]);
        assert!(checks[1].pass, "{:?}", checks[1]);
        // z(0) = 0 reduces the V_f condition to h0(x0) = 0.5 > 0.
        assert!(checks[2].pass, "{:?}", checks[2]);

        // Constructed violation is named.
        let bad = CbfSpec::from_barrier(&sc.barriers[0], &[50.0, 200.0], 1.0, 1.0).unwrap();
        let chain_b = build_chain(&bad, &sc.model).unwrap();
        let checks = validate_theorem2(
            &bad, &chain_b, &sc.model, &report, 100.0, &x0, &z, 1.001, &z, 0.0, 0.0,
        )
        .unwrap();
        assert!(!checks[0].pass);
        assert!(checks[0].name.contains("lambda_iota < 2 kappa"));
    }

    #[test]
    fn robust_baseline_values() {
        let sc = make_example1();
        let spec = ex1_spec();
        // h = x1 + 1 at x = (1, 0): L_f h = x2 = 0, (dh/dx) p = x1 = 1,
        // margin 8; h = 2.
        let (psi0, psi1) =
            robust_cbf_constraint(&spec, &sc.model, &dvector![1.0, 0.0], 8.0, 50.0).unwrap();
        assert_relative_eq!(psi0, 0.0 - 8.0 + 50.0 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(psi1, dvector![1.0, 0.0], epsilon = 1e-12);

        // Degree-2 barrier rejected.
        let sc2 = make_manipulator();
        let spec2 =
            CbfSpec::from_barrier(&sc2.barriers[0], &[25.0, 30.0, 50.0], 1.0, 1.0).unwrap();
        assert!(matches!(
            robust_cbf_constraint(&spec2, &sc2.model, &dvector![0.0, 0.0, 0.0, 0.0], 11.0, 25.0),
            Err(SafetyError::Config(_))
        ));
    }
}

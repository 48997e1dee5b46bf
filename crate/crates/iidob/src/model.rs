//! Disturbed control-affine plant `xdot = f(x) + g(x) u + p(x) w(t)`, its
//! integrator augmentation `udot = v`, and disturbance signal handling.

use crate::{Matrix, Real, Vector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("singular inertia matrix at q = {0:?}")]
    SingularInertia(Vec<Real>),
}

type VecEval = Box<dyn Fn(&Vector) -> Vector + Send + Sync>;
type MatEval = Box<dyn Fn(&Vector) -> Matrix + Send + Sync>;
type SigEval = Box<dyn Fn(Real) -> Vector + Send + Sync>;

/// Control-affine plant definition with analytic Jacobians of the
/// disturbance input columns.
pub struct SystemModel {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    f: VecEval,
    g: MatEval,
    p: MatEval,
    /// `dp[i]` is the n x n Jacobian of the i-th column of `p`.
    dp: Vec<MatEval>,
}

impl SystemModel {
    pub fn new(
        n: usize,
        m: usize,
        l: usize,
        f: VecEval,
        g: MatEval,
        p: MatEval,
        dp: Vec<MatEval>,
    ) -> Self {
        assert_eq!(dp.len(), l, "one column Jacobian per disturbance channel");
        Self { n, m, l, f, g, p, dp }
    }

    fn check(&self, what: &'static str, rows: usize, cols: usize, exp_r: usize, exp_c: usize)
        -> Result<(), ModelError>
    {
        if rows != exp_r || cols != exp_c {
            return Err(ModelError::Dimension {
                what,
                expected: format!("{exp_r}x{exp_c}"),
                got: format!("{rows}x{cols}"),
            });
        }
        Ok(())
    }

    pub fn f(&self, x: &Vector) -> Result<Vector, ModelError> {
        self.check("state passed to f", x.len(), 1, self.n, 1)?;
        let out = (self.f)(x);
        self.check("f(x)", out.len(), 1, self.n, 1)?;
        Ok(out)
    }

    pub fn g(&self, x: &Vector) -> Result<Matrix, ModelError> {
        self.check("state passed to g", x.len(), 1, self.n, 1)?;
        let out = (self.g)(x);
        self.check("g(x)", out.nrows(), out.ncols(), self.n, self.m)?;
        Ok(out)
    }

    pub fn p(&self, x: &Vector) -> Result<Matrix, ModelError> {
        self.check("state passed to p", x.len(), 1, self.n, 1)?;
        let out = (self.p)(x);
        self.check("p(x)", out.nrows(), out.ncols(), self.n, self.l)?;
        Ok(out)
    }

    /// Jacobian of the `i`-th column of `p` with respect to the state.
    pub fn dp(&self, i: usize, x: &Vector) -> Result<Matrix, ModelError> {
        self.check("state passed to dp", x.len(), 1, self.n, 1)?;
        let out = (self.dp[i])(x);
        self.check("dp_i(x)", out.nrows(), out.ncols(), self.n, self.n)?;
        Ok(out)
    }
}

/// `xdot = f(x) + g(x) u + p(x) w`.
pub fn eval_plant(
    model: &SystemModel,
    x: &Vector,
    u: &Vector,
    w: &Vector,
) -> Result<Vector, ModelError> {
    if u.len() != model.m {
        return Err(ModelError::Dimension {
            what: "input u",
            expected: format!("{}", model.m),
            got: format!("{}", u.len()),
        });
    }
    if w.len() != model.l {
        return Err(ModelError::Dimension {
            what: "disturbance w",
            expected: format!("{}", model.l),
            got: format!("{}", w.len()),
        });
    }
    Ok(model.f(x)? + model.g(x)? * u + model.p(x)? * w)
}

/// Augmented dynamics: the plant stacked over `udot = v`.
pub fn eval_augmented(
    model: &SystemModel,
    x: &Vector,
    u: &Vector,
    v: &Vector,
    w: &Vector,
) -> Result<Vector, ModelError> {
    if v.len() != model.m {
        return Err(ModelError::Dimension {
            what: "auxiliary input v",
            expected: format!("{}", model.m),
            got: format!("{}", v.len()),
        });
    }
    let xdot = eval_plant(model, x, u, w)?;
    let mut out = Vector::zeros(model.n + model.m);
    out.rows_mut(0, model.n).copy_from(&xdot);
    out.rows_mut(model.n, model.m).copy_from(v);
    Ok(out)
}

/// Exogenous disturbance with declared bounds. The derivative evaluator is
/// for oracle diagnostics only; the observer and controller never read it.
pub struct DisturbanceSignal {
    pub w: SigEval,
    /// Oracle-only. Poisoning this (returning NaN) must not affect a
    /// non-oracle run.
    pub wdot: SigEval,
    pub omega0: Real,
    pub omega1: Real,
}

/// Returns the disturbance and its derivative at `t`. The derivative is
/// consumed only by oracle and diagnostic paths.
pub fn eval_disturbance(sig: &DisturbanceSignal, t: Real) -> (Vector, Vector) {
    ((sig.w)(t), (sig.wdot)(t))
}

/// Reference trajectory for tracking.
pub struct Reference {
    pub xd: SigEval,
    pub xd_dot: SigEval,
}

/// Shared scalar barrier evaluator (shared so controller-side specs can
/// hold the scenario's evaluators without copying them).
pub type BarrierScalar = std::sync::Arc<dyn Fn(&Vector) -> Real + Send + Sync>;
/// Shared barrier gradient evaluator.
pub type BarrierGrad = std::sync::Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Barrier definition owned by a scenario: the barrier function, its
/// analytic gradient, the relative degree, and a factory producing the
/// analytic second-to-last chain function once the rates are known.
pub struct BarrierDef {
    pub name: String,
    pub iota: usize,
    pub h0: BarrierScalar,
    pub grad_h0: BarrierGrad,
    /// Given `lambdas[0..iota-1]`, returns analytic `h_{iota-1}` and its
    /// gradient. For `iota = 1` this is just `h0` again.
    #[allow(clippy::type_complexity)]
    pub make_prev: Box<dyn Fn(&[Real]) -> (BarrierScalar, BarrierGrad) + Send + Sync>,
}

///// A complete benchmark: plant, disturbance, initial conditions, reference,
/// barriers and the per-scenario simulation grid.
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub disturbance: DisturbanceSignal,
    pub x0: Vector,
    pub u0: Vector,
    pub reference: Option<Reference>,
    pub barriers: Vec<BarrierDef>,
    pub horizon: Real,
    pub dt: Real,
}

impl Scenario {
    /// Total disturbance `d(x, t) = p(x) w(t)`.
    pub fn total_disturbance(&self, x: &Vector, t: Real) -> Result<Vector, ModelError> {
        Ok(self.model.p(x)? * (self.disturbance.w)(t))
    }
}

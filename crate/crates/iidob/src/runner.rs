//! Closed-loop experiment orchestration: config ingestion, the per-step
//! wiring of plant + observer + filter + tracking controller + safety QP,
//! trajectory logging, bound checking, and CSV/SVG/report emission.
//!
//! Integration scheme: the coupled state (x, u, xhat, dhat, r, u_d^f) is
//! advanced by fixed-step RK4 with deterministic stability-driven
//! substepping. The observer is integrated in the dhat = xi + beta
//! coordinate: by the chain rule dhat' = (d beta / d x) o (x' - f - g u -
//! dhat), which is the exact same ODE as the xi form but with its decay
//! rate (about psi) visible on the diagonal, no quadrature in the inner
//! loop, and none of the explosive xi <-> xhat cross-gains that defeat
//! explicit steppers. xi is recovered algebraically as dhat - beta at log
//! points. The filter state dhat_f has a decay rate of about psi^2 and is
//! advanced by an exact exponential update per substep — explicit stepping
//! at that rate is infeasible at any useful step size.

use crate::filter::{zeta_and_rho_f, FilterEnvelope, FilterParams};
use crate::model::{eval_disturbance, Scenario};
use crate::numerics::QuadRule;
use crate::observer::{
    beta, bound_envelopes, dbeta_dx_diag, delta_coeffs, lambda_gain, validate_gains, BoundReport,
    Envelopes, ObserverGains,
};
use crate::safety::{
    build_chain, constraint_pair, robust_cbf_constraint, solve_qp_multi, validate_theorem2,
    CbfSpec, CheckItem, SafetySignals,
};
use crate::scenarios::by_name;
use crate::tracking::{desired_input, nominal_v, surface_rhs, TrackingParams};
use crate::{Real, Vector};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    /// Configuration or theorem-inequality violation (exit code 1).
    #[error("configuration error: {0}")]
    Config(String),
    /// Runtime failure during simulation (exit code 2).
    #[error("runtime failure at step {step} (t = {t}): {msg}")]
    Runtime { step: usize, t: Real, msg: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Controller selection for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    IidobCbfQp,
    RobustCbf,
    NominalOnly,
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Controller::IidobCbfQp => "iidob-cbf-qp",
            Controller::RobustCbf => "robust-cbf",
            Controller::NominalOnly => "nominal-only",
        })
    }
}

/// User-facing configuration. Every field except the scenario name is
/// optional and falls back to the scenario's documented defaults.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: String,
    #[serde(default)]
    pub controller: Option<Controller>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub dt: Option<Real>,
    #[serde(default)]
    pub horizon: Option<Real>,
    #[serde(default)]
    pub observer: Option<ObserverGains>,
    #[serde(default)]
    pub filter: Option<FilterParams>,
    #[serde(default)]
    pub tracking: Option<TrackingParams>,
    #[serde(default)]
    pub rho: Option<Real>,
    #[serde(default)]
    pub rho_tilde: Option<Real>,
    /// Rates lambda_0..lambda_iota, one list per barrier.
    #[serde(default)]
    pub barrier_rates: Option<Vec<Vec<Real>>>,
    #[serde(default)]
    pub r0: Option<Real>,
    /// Bound on ||z(0)|| for envelopes in non-oracle mode.
    #[serde(default)]
    pub z0_bound: Option<Real>,
    /// Class-K rate of the robust-CBF baseline.
    #[serde(default)]
    pub robust_rate: Option<Real>,
    #[serde(default)]
    pub substeps_min: Option<usize>,
    #[serde(default)]
    pub substeps_max: Option<usize>,
    #[serde(default)]
    pub quad_nodes: Option<usize>,
    #[serde(default)]
    pub quad_segment_len: Option<Real>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl SimConfig {
    pub fn for_scenario(name: &str) -> Self {
        SimConfig {
            scenario: name.to_string(),
            controller: None,
            oracle: false,
            dt: None,
            horizon: None,
            observer: None,
            filter: None,
            tracking: None,
            rho: None,
            rho_tilde: None,
            barrier_rates: None,
            r0: None,
            z0_bound: None,
            robust_rate: None,
            substeps_min: None,
            substeps_max: None,
            quad_nodes: None,
            quad_segment_len: None,
            seed: None,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunnerError> {
        serde_json::from_str(text).map_err(|e| RunnerError::Config(format!("bad config: {e}")))
    }
}

/// All knobs resolved against scenario defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub controller: Controller,
    pub oracle: bool,
    pub dt: Real,
    pub horizon: Real,
    pub gains: ObserverGains,
    pub filter: FilterParams,
    pub tracking: TrackingParams,
    pub rho: Real,
    pub rho_tilde: Real,
    pub barrier_rates: Vec<Vec<Real>>,
    pub r0: Real,
    pub z0_bound: Real,
    pub robust_rate: Real,
    pub substeps_min: usize,
    pub substeps_max: usize,
    pub rule: QuadRule,
}

fn default_gains(scenario: &str) -> ObserverGains {
    match scenario {
        "manipulator" => ObserverGains {
            gamma: 250.0,
            eta: 100.0,
            c: 5.0,
            theta: 50.0,
            k1: 20.0,
            k2: 20.0,
        },
        _ => ObserverGains {
            gamma: 100.0,
            eta: 100.0,
            c: 0.5,
            theta: 10.0,
            k1: 10.0,
            k2: 10.0,
        },
    }
}

fn default_filter(scenario: &str) -> FilterParams {
    match scenario {
        "manipulator" => FilterParams { t1: 250.0, t2: 1.0 },
        _ => FilterParams { t1: 50.0, t2: 1.0 },
    }
}

fn default_rates(scenario: &str, barriers: usize) -> Vec<Vec<Real>> {
    let per = match scenario {
        "manipulator" => vec![25.0, 30.0, 50.0],
        _ => vec![50.0, 50.0],
    };
    vec![per; barriers]
}

pub fn resolve(config: &SimConfig, scenario: &Scenario) -> Result<Resolved, RunnerError> {
    let rule = QuadRule::new(
        config.quad_nodes.unwrap_or(16),
        config.quad_segment_len.unwrap_or(8.0),
    )
    .map_err(|e| RunnerError::Config(e.to_string()))?;
    let tracking = config.tracking.unwrap_or(TrackingParams {
        alpha1: 50.0,
        alpha2: 50.0,
        epsilon: 0.001,
    });
    if !(tracking.alpha1 > 0.0 && tracking.alpha2 > 0.0 && tracking.epsilon > 0.0) {
        return Err(RunnerError::Config(format!(
            "tracking parameters must be positive: {tracking:?}"
        )));
    }
    let barrier_rates = config
        .barrier_rates
        .clone()
        .unwrap_or_else(|| default_rates(&scenario.name, scenario.barriers.len()));
    if barrier_rates.len() != scenario.barriers.len() {
        return Err(RunnerError::Config(format!(
            "need one rate list per barrier: {} barriers, {} lists",
            scenario.barriers.len(),
            barrier_rates.len()
        )));
    }
    Ok(Resolved {
        controller: config.controller.unwrap_or(Controller::IidobCbfQp),
        oracle: config.oracle,
        dt: config.dt.unwrap_or(scenario.dt),
        horizon: config.horizon.unwrap_or(scenario.horizon),
        gains: config.observer.unwrap_or_else(|| default_gains(&scenario.name)),
        filter: config.filter.unwrap_or_else(|| default_filter(&scenario.name)),
        tracking,
        rho: config.rho.unwrap_or(1.0),
        rho_tilde: config.rho_tilde.unwrap_or(1.0),
        barrier_rates,
        r0: config.r0.unwrap_or(1.001),
        z0_bound: config.z0_bound.unwrap_or(10.0),
        robust_rate: config.robust_rate.unwrap_or(50.0),
        substeps_min: config.substeps_min.unwrap_or(1),
        substeps_max: config.substeps_max.unwrap_or(65536),
        rule,
    })
}

/// Column-named trajectory record on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Real>>,
}

impl TrajectoryLog {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn channel(&self, name: &str) -> Option<Vec<Real>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// The run aborted; the log holds everything up to the failure.
    Aborted { step: usize, reason: String },
}

/// Summary metrics for regression and comparison.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunMetrics {
    /// Time-averaged ||x - x_d|| over the last half of the horizon.
    pub avg_tracking_err_tail: Real,
    /// Time-averaged ||x - x_d|| over steps where no barrier is active.
    pub avg_tracking_err_inactive: Real,
    /// Time-averaged ||dhat - d_true|| over the last 3/4 of the horizon
    /// (oracle mode only; NaN otherwise).
    pub avg_est_err_tail: Real,
    /// Minimum of each barrier h over the run.
    pub min_h: Vec<Real>,
}

pub struct RunOutput {
    pub log: TrajectoryLog,
    pub checks: Vec<CheckItem>,
    pub report: BoundReport,
    pub zeta: Real,
    pub outcome: RunOutcome,
    pub metrics: RunMetrics,
}

/// Closed-loop simulation state. The mild channels (x, u, r, u_d^f) are
/// advanced by RK4; the stiff diagonal-linear channels (xhat, dhat, dhat_f)
/// are advanced by exact exponential updates per substep. Their decay gains
/// (Lambda, d beta / d x, and the filter gain) routinely reach 1e6..1e9, so
/// explicit stepping is out of the question at any useful step size, while
/// each channel is linear in itself with a slowly varying source — exactly
/// the integrating-factor sweet spot.
#[derive(Clone)]
struct SimState {
    x: Vector,
    u: Vector,
    xhat: Vector,
    dhat: Vector,
    dhat_f: Vector,
    r: Real,
    udf: Vector,
}

/// Per-instant observer/controller algebra at a given state. Everything
/// here is independent of the QP output v.
struct Algebra {
    dbx: Vector,
    lambda_diag: Vector,
    quad_sum: Real,
    r_dot: Real,
    filter_gain: Real,
    udf_dot: Vector,
}

struct Loop<'a> {
    sc: &'a Scenario,
    cfg: &'a Resolved,
}

impl<'a> Loop<'a> {
    fn n(&self) -> usize {
        self.sc.model.n
    }
    fn m(&self) -> usize {
        self.sc.model.m
    }

    fn algebra(&self, t: Real, s: &SimState) -> Result<Algebra, String> {
        let model = &self.sc.model;
        let g = &self.cfg.gains;
        let deltas = delta_coeffs(model, g, &s.x, &s.xhat, &s.u);
        let lambda_diag = lambda_gain(g, s.r, &deltas).diagonal();
        let e = &s.xhat - &s.x;
        let dbx =
            dbeta_dx_diag(model, g, &s.x, &s.xhat, &s.u).map_err(|e| e.to_string())?;
        let mut quad_sum = 0.0;
        for j in 0..model.n {
            quad_sum += e[j] * e[j] * deltas.col_norm_sq(j);
        }
        let r_dot = -g.theta * (s.r - 1.0) + 0.5 * g.c * s.r * quad_sum;
        let filter_gain =
            self.cfg.filter.t1 + self.cfg.filter.t2 * s.r * s.r * dbx.norm_squared();

        let (xd, xd_dot) = self.reference(t);
        let u_d = desired_input(model, &self.cfg.tracking, &s.x, &xd, &xd_dot, &s.dhat, s.r)
            .map_err(|e| e.to_string())?;
        let udf_dot = surface_rhs(&self.cfg.tracking, &s.udf, &u_d);
        Ok(Algebra { dbx, lambda_diag, quad_sum, r_dot, filter_gain, udf_dot })
    }

    fn reference(&self, t: Real) -> (Vector, Vector) {
        match &self.sc.reference {
            Some(r) => ((r.xd)(t), (r.xd_dot)(t)),
            None => (Vector::zeros(self.n()), Vector::zeros(self.n())),
        }
    }

    fn d_true(&self, t: Real, x: &Vector) -> Result<Vector, String> {
        let w = (self.sc.disturbance.w)(t);
        Ok(self.sc.model.p(x).map_err(|e| e.to_string())? * w)
    }

    /// RK4 block layout: [x, u, r, udf]. dhat and the e-weighted Delta sum
    /// feeding r' vary on the fast time scale and are frozen at their
    /// substep-start values; both are slaved quantities whose variation
    /// over one substep is O(h) of an already-small magnitude.
    fn rk_deriv(
        &self,
        t: Real,
        y: &Vector,
        v: &Vector,
        dhat: &Vector,
        quad_sum: Real,
    ) -> Result<Vector, String> {
        let (n, m) = (self.n(), self.m());
        let x = y.rows(0, n).into_owned();
        let u = y.rows(n, m).into_owned();
        let r = y[n + m];
        let udf = y.rows(n + m + 1, m).into_owned();
        let model = &self.sc.model;
        let g = &self.cfg.gains;
        let fgu = model.f(&x).map_err(|e| e.to_string())?
            + model.g(&x).map_err(|e| e.to_string())? * &u;
        let xdot = &fgu + self.d_true(t, &x)?;
        let r_dot = -g.theta * (r - 1.0) + 0.5 * g.c * r * quad_sum;
        let (xd, xd_dot) = self.reference(t);
        let u_d = desired_input(model, &self.cfg.tracking, &x, &xd, &xd_dot, dhat, r)
            .map_err(|e| e.to_string())?;
        let udf_dot = surface_rhs(&self.cfg.tracking, &udf, &u_d);
        let mut out = Vector::zeros(n + 2 * m + 1);
        out.rows_mut(0, n).copy_from(&xdot);
        out.rows_mut(n, m).copy_from(v);
        out[n + m] = r_dot;
        out.rows_mut(n + m + 1, m).copy_from(&udf_dot);
        Ok(out)
    }

    fn pack_rk(&self, s: &SimState) -> Vector {
        let (n, m) = (self.n(), self.m());
        let mut y = Vector::zeros(n + 2 * m + 1);
        y.rows_mut(0, n).copy_from(&s.x);
        y.rows_mut(n, m).copy_from(&s.u);
        y[n + m] = s.r;
        y.rows_mut(n + m + 1, m).copy_from(&s.udf);
        y
    }

    fn apply_rk(&self, s: &mut SimState, y: &Vector) {
        let (n, m) = (self.n(), self.m());
        s.x = y.rows(0, n).into_owned();
        s.u = y.rows(n, m).into_owned();
        s.r = y[n + m];
        s.udf = y.rows(n + m + 1, m).into_owned();
    }

    /// One substep: RK4 on the mild block, then exact exponential updates
    /// of the three stiff channels using trapezoidal gains and secant or
    /// averaged sources. Returns the algebra at the substep end so the next
    /// substep (or the macro-step logging) can reuse it.
    fn substep(
        &self,
        t0: Real,
        h: Real,
        s: &mut SimState,
        v: &Vector,
        alg0: &Algebra,
    ) -> Result<Algebra, String> {
        let n = self.n();
        let d0 = self.d_true(t0, &s.x)?;
        let e0 = &s.xhat - &s.x;
        let ed0 = &s.dhat - &d0;
        let ef0 = &s.dhat_f - &s.dhat;
        let dhat0 = s.dhat.clone();

        let y0 = self.pack_rk(s);
        let y1 = crate::numerics::rk4_step(
            |tt, yy: &Vector| self.rk_deriv(tt, yy, v, &dhat0, alg0.quad_sum),
            t0,
            &y0,
            h,
        )
        .map_err(|e| e.to_string())?;
        self.apply_rk(s, &y1);
        let t1 = t0 + h;

        // dhat: e_d' = -dbx o e_d - d', with the gain trapezoidal and the
        // source the secant slope of the true disturbance.
        let d1 = self.d_true(t1, &s.x)?;
        let xhat_prov = &s.x + &e0;
        let dbx1 = dbeta_dx_diag(&self.sc.model, &self.cfg.gains, &s.x, &xhat_prov, &s.u)
            .map_err(|e| e.to_string())?;
        let mut ed1 = Vector::zeros(n);
        for i in 0..n {
            let gm = 0.5 * (alg0.dbx[i] + dbx1[i]);
            let sig = (d1[i] - d0[i]) / h;
            ed1[i] = (-gm * h).exp() * (ed0[i] + sig / gm) - sig / gm;
        }
        s.dhat = &d1 + &ed1;

        // xhat: e' = -Lambda e + e_d, with the endpoint Lambda evaluated at
        // the provisional estimate (e changes by ~|e_d|/Lambda per substep).
        let deltas1 =
            delta_coeffs(&self.sc.model, &self.cfg.gains, &s.x, &xhat_prov, &s.u);
        let lam1 = lambda_gain(&self.cfg.gains, s.r, &deltas1).diagonal();
        let mut e1 = Vector::zeros(n);
        for i in 0..n {
            let lm = 0.5 * (alg0.lambda_diag[i] + lam1[i]);
            let sbar = 0.5 * (ed0[i] + ed1[i]);
            e1[i] = (-lm * h).exp() * (e0[i] - sbar / lm) + sbar / lm;
        }
        s.xhat = &s.x + &e1;

        // dhat_f: e_f' = -G e_f - dhat', gain trapezoidal, source secant.
        let gain1 = self.cfg.filter.t1
            + self.cfg.filter.t2 * s.r * s.r * dbx1.norm_squared();
        let gm = 0.5 * (alg0.filter_gain + gain1);
        let mut ef1 = Vector::zeros(n);
        for i in 0..n {
            let sig = (s.dhat[i] - dhat0[i]) / h;
            ef1[i] = (-gm * h).exp() * (ef0[i] + sig / gm) - sig / gm;
        }
        s.dhat_f = &s.dhat + &ef1;

        self.algebra(t1, s)
    }
}

fn build_specs(sc: &Scenario, cfg: &Resolved) -> Result<Vec<CbfSpec>, RunnerError> {
    sc.barriers
        .iter()
        .zip(&cfg.barrier_rates)
        .map(|(def, rates)| {
            CbfSpec::from_barrier(def, rates, cfg.rho, cfg.rho_tilde)
                .map_err(|e| RunnerError::Config(e.to_string()))
        })
        .collect()
}

fn log_columns(sc: &Scenario, oracle: bool) -> Vec<String> {
    let (n, m, b) = (sc.model.n, sc.model.m, sc.barriers.len());
    let mut cols = vec!["t".to_string()];
    for i in 1..=n {
        cols.push(format!("x{i}"));
    }
    for i in 1..=n {
        cols.push(format!("xhat{i}"));
    }
    for i in 1..=m {
        cols.push(format!("u{i}"));
    }
    cols.push("r".into());
    for i in 1..=n {
        cols.push(format!("dhat{i}"));
    }
    for i in 1..=n {
        cols.push(format!("dhatf{i}"));
    }
    for k in 1..=b {
        cols.push(format!("h{k}"));
    }
    for k in 1..=b {
        cols.push(format!("psi0_{k}"));
    }
    for i in 1..=m {
        cols.push(format!("v{i}"));
    }
    for i in 1..=m {
        cols.push(format!("udf{i}"));
    }
    for i in 1..=n {
        cols.push(format!("xi{i}"));
    }
    for k in 1..=b {
        for i in 1..=m {
            cols.push(format!("psi1_{k}_{i}"));
        }
    }
    for k in 1..=b {
        cols.push(format!("active_{k}"));
    }
    if oracle {
        for i in 1..=n {
            cols.push(format!("dtrue{i}"));
        }
        for i in 1..=n {
            cols.push(format!("z{i}"));
        }
        cols.push("rho_z".into());
        cols.push("rho_r".into());
        cols.push("rho_f".into());
    }
    cols
}

/// Validation-only entry point: gain/filter/rate inequalities plus the
/// safety theorem's initial-condition checks, no simulation.
pub fn validate(config: &SimConfig) -> Result<Vec<CheckItem>, RunnerError> {
    let sc = by_name(&config.scenario)
        .ok_or_else(|| RunnerError::Config(format!("unknown scenario '{}'", config.scenario)))?;
    let cfg = resolve(config, &sc)?;
    let (checks, _, _) = preflight(&sc, &cfg)?;
    Ok(checks)
}

/// Hard inequality gate + warn-only initial-condition checks.
fn preflight(
    sc: &Scenario,
    cfg: &Resolved,
) -> Result<(Vec<CheckItem>, BoundReport, Real), RunnerError> {
    let report = validate_gains(
        &cfg.gains,
        sc.model.n,
        cfg.r0,
        sc.disturbance.omega0,
        sc.disturbance.omega1,
        sc.model.l,
    )
    .map_err(|e| RunnerError::Config(e.to_string()))?;
    let fenv = zeta_and_rho_f(&cfg.filter, &report, cfg.z0_bound * cfg.z0_bound)
        .map_err(|e| RunnerError::Config(e.to_string()))?;
    let mut checks = vec![
        CheckItem {
            name: "observer gain inequalities".into(),
            pass: true,
            detail: format!(
                "kappa = {}, omega = {}, chi = {}, ultimate bound = {}",
                report.kappa, report.omega, report.chi, report.ultimate_bound
            ),
            warn_only: false,
        },
        CheckItem {
            name: "filter gain inequality (T2 > 1/(4 kappa))".into(),
            pass: true,
            detail: format!("zeta = {}", fenv.zeta),
            warn_only: false,
        },
        CheckItem {
            name: "tracking surface separation (epsilon << 1/alpha2)".into(),
            pass: cfg.tracking.epsilon * cfg.tracking.alpha2 < 0.5,
            detail: format!(
                "epsilon * alpha2 = {}",
                cfg.tracking.epsilon * cfg.tracking.alpha2
            ),
            warn_only: true,
        },
    ];
    if cfg.controller != Controller::RobustCbf {
        let specs = build_specs(sc, cfg)?;
        let z0sq = cfg.z0_bound * cfg.z0_bound;
        for spec in &specs {
            let chain = build_chain(spec, &sc.model)
                .map_err(|e| RunnerError::Config(e.to_string()))?;
            let items = validate_theorem2(
                spec,
                &chain,
                &sc.model,
                &report,
                fenv.zeta,
                &sc.x0,
                &sc.u0,
                cfg.r0,
                &Vector::zeros(sc.model.n),
                z0sq,
                0.0,
            )
            .map_err(|e| RunnerError::Config(e.to_string()))?;
            checks.extend(items);
        }
    }
    Ok((checks, report, fenv.zeta))
}

pub fn run(config: &SimConfig) -> Result<RunOutput, RunnerError> {
    let sc = by_name(&config.scenario)
        .ok_or_else(|| RunnerError::Config(format!("unknown scenario '{}'", config.scenario)))?;
    run_with(config, &sc)
}

/// Runs against a caller-supplied scenario (used by tests that poison the
/// oracle evaluators).
pub fn run_with(config: &SimConfig, sc: &Scenario) -> Result<RunOutput, RunnerError> {
    let cfg = resolve(config, sc)?;
    match cfg.controller {
        Controller::RobustCbf => run_robust(sc, &cfg),
        _ => run_iidob(sc, &cfg),
    }
}

#[allow(clippy::too_many_lines)]
fn run_iidob(sc: &Scenario, cfg: &Resolved) -> Result<RunOutput, RunnerError> {
    let (mut checks, report, zeta) = preflight(sc, cfg)?;
    let specs = build_specs(sc, cfg)?;
    let chains: Vec<_> = specs
        .iter()
        .map(|s| build_chain(s, &sc.model).map_err(|e| RunnerError::Config(e.to_string())))
        .collect::<Result<_, _>>()?;

    let looper = Loop { sc, cfg };
    let n = sc.model.n;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    if steps == 0 {
        return Err(RunnerError::Config("horizon shorter than dt".into()));
    }

    // Initialization: xhat(0) = x(0), dhat(0) = 0 (equivalently xi(0) =
    // -beta(0)), dhat_f(0) = dhat(0), u_d^f(0) = u_d(0).
    let x0 = sc.x0.clone();
    let u0 = sc.u0.clone();
    let (xd0, xd_dot0) = looper.reference(0.0);
    let zero_n = Vector::zeros(n);
    let ud0 = desired_input(
        &sc.model,
        &cfg.tracking,
        &x0,
        &xd0,
        &xd_dot0,
        &zero_n,
        cfg.r0,
    )
    .map_err(|e| RunnerError::Config(e.to_string()))?;
    let mut s = SimState {
        x: x0.clone(),
        u: u0.clone(),
        xhat: x0.clone(),
        dhat: zero_n.clone(),
        dhat_f: zero_n.clone(),
        r: cfg.r0,
        udf: ud0,
    };

    // Envelopes: oracle mode computes z(0) exactly (dhat(0) = 0), otherwise
    // the configured bound stands in.
    let z0_norm_sq = if cfg.oracle {
        let (w0v, _) = eval_disturbance(&sc.disturbance, 0.0);
        let d0 = sc
            .model
            .p(&x0)
            .map_err(|e| RunnerError::Config(e.to_string()))?
            * w0v;
        (d0 / cfg.r0).norm_squared()
    } else {
        cfg.z0_bound * cfg.z0_bound
    };
    let z0_vec_norm = z0_norm_sq.sqrt();
    let w0 = 0.5 * z0_norm_sq + 0.5 * cfg.r0 * cfg.r0;
    let env: Envelopes = bound_envelopes(
        &report,
        &Vector::from_element(1, z0_vec_norm),
        w0,
    );
    let fenv: FilterEnvelope = zeta_and_rho_f(&cfg.filter, &report, z0_norm_sq)
        .map_err(|e| RunnerError::Config(e.to_string()))?;

    let columns = log_columns(sc, cfg.oracle);
    let mut log = TrajectoryLog { columns, rows: Vec::with_capacity(steps + 1) };
    let mut outcome = RunOutcome::Completed;

    let mut alg = match looper.algebra(0.0, &s) {
        Ok(a) => a,
        Err(msg) => return Err(RunnerError::Config(msg)),
    };

    'steps: for k in 0..=steps {
        let t = k as Real * cfg.dt;

        // Constraint pairs; the filter derivative enters psi0 algebraically.
        let dhat_f_dot = -(&s.dhat_f - &s.dhat) * alg.filter_gain;
        let sig = SafetySignals {
            x: &s.x,
            u: &s.u,
            r: s.r,
            dhat: &s.dhat,
            dhat_f: &s.dhat_f,
            r_dot: alg.r_dot,
            dhat_f_dot: &dhat_f_dot,
        };
        let mut pairs = Vec::with_capacity(specs.len());
        for (spec, chain) in specs.iter().zip(&chains) {
            match constraint_pair(spec, chain, &sc.model, &sig, &report, zeta) {
                Ok(p) => pairs.push(p),
                Err(e) => {
                    outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                    break 'steps;
                }
            }
        }

        let (xd, _) = looper.reference(t);
        let v_nom = match nominal_v(
            &sc.model,
            &cfg.tracking,
            &s.x,
            &xd,
            &s.u,
            &s.udf,
            &alg.udf_dot,
        ) {
            Ok(v) => v,
            Err(e) => {
                outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                break 'steps;
            }
        };

        let (v, active) = if cfg.controller == Controller::IidobCbfQp {
            let qp_pairs: Vec<(Real, Vector)> =
                pairs.iter().map(|p| (p.psi0, p.psi1.clone())).collect();
            match solve_qp_multi(&qp_pairs, &v_nom) {
                Ok(res) => (res.v, res.active),
                Err(e) => {
                    outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                    break 'steps;
                }
            }
        } else {
            (v_nom.clone(), vec![false; specs.len()])
        };

        // Log row; xi is recovered algebraically from the dhat coordinate.
        let xi = match beta(&sc.model, &cfg.gains, &s.x, &s.xhat, &s.u, &cfg.rule) {
            Ok(b) => &s.dhat - b,
            Err(e) => {
                outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                break 'steps;
            }
        };
        let mut row = Vec::with_capacity(log.columns.len());
        row.push(t);
        row.extend(s.x.iter());
        row.extend(s.xhat.iter());
        row.extend(s.u.iter());
        row.push(s.r);
        row.extend(s.dhat.iter());
        row.extend(s.dhat_f.iter());
        for spec in &specs {
            row.push((spec.h0)(&s.x));
        }
        for p in &pairs {
            row.push(p.psi0);
        }
        row.extend(v.iter());
        row.extend(s.udf.iter());
        row.extend(xi.iter());
        for p in &pairs {
            row.extend(p.psi1.iter());
        }
        for a in &active {
            row.push(if *a { 1.0 } else { 0.0 });
        }
        if cfg.oracle {
            let (wv, _) = eval_disturbance(&sc.disturbance, t);
            let d_true = sc
                .model
                .p(&s.x)
                .map_err(|e| RunnerError::Runtime { step: k, t, msg: e.to_string() })?
                * wv;
            let z = (&s.dhat - &d_true) / s.r;
            row.extend(d_true.iter());
            row.extend(z.iter());
            row.push(env.rho_z(t));
            row.push(env.rho_r(t));
            row.push(fenv.rho_f(t));
        }
        if row.iter().any(|v| !v.is_finite()) {
            outcome = RunOutcome::Aborted { step: k, reason: "non-finite log entry".into() };
            log.rows.push(row);
            break 'steps;
        }
        log.rows.push(row);

        if k == steps {
            break;
        }

        // Stability-driven substepping for the explicitly stepped block
        // (fastest explicit rates: the surface filter 1/epsilon and the r
        // dynamics); the stiff observer channels ride on exact exponential
        // updates inside each substep.
        let explicit_rate = (1.0 / cfg.tracking.epsilon)
            .max(cfg.gains.theta + 0.5 * cfg.gains.c * s.r * alg.quad_sum);
        let substeps = ((cfg.dt * explicit_rate / 0.75).ceil() as usize)
            .clamp(cfg.substeps_min, cfg.substeps_max);
        let h = cfg.dt / substeps as Real;
        for i in 0..substeps {
            let t_sub = t + i as Real * h;
            alg = match looper.substep(t_sub, h, &mut s, &v, &alg) {
                Ok(a) => a,
                Err(msg) => {
                    outcome = RunOutcome::Aborted { step: k, reason: msg };
                    break 'steps;
                }
            };
        }
    }

    let metrics = compute_metrics(&log, sc, cfg);
    append_run_checks(&mut checks, &log, sc, cfg, &report, &metrics);
    Ok(RunOutput { log, checks, report, zeta, outcome, metrics })
}

/// Worst-case robust-CBF baseline: no observer; the QP filters u itself.
fn run_robust(sc: &Scenario, cfg: &Resolved) -> Result<RunOutput, RunnerError> {
    let (mut checks, report, zeta) = preflight(sc, cfg)?;
    let specs = build_specs(sc, cfg)?;
    for spec in &specs {
        if spec.iota != 1 {
            return Err(RunnerError::Config(format!(
                "barrier '{}': the robust baseline supports relative degree 1 only",
                spec.name
            )));
        }
    }
    let looper = Loop { sc, cfg };
    let n = sc.model.n;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let columns = log_columns(sc, cfg.oracle);
    let mut log = TrajectoryLog { columns, rows: Vec::with_capacity(steps + 1) };
    let mut outcome = RunOutcome::Completed;
    let mut x = sc.x0.clone();
    let zero_n = Vector::zeros(n);

    'steps: for k in 0..=steps {
        let t = k as Real * cfg.dt;
        let (xd, xd_dot) = looper.reference(t);
        // Nominal tracking without disturbance compensation or scaling.
        let target = match sc.model.f(&x) {
            Ok(f) => f + (&x - &xd) * cfg.tracking.alpha1 - &xd_dot,
            Err(e) => {
                outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                break 'steps;
            }
        };
        let gx = sc.model.g(&x).map_err(|e| RunnerError::Runtime {
            step: k,
            t,
            msg: e.to_string(),
        })?;
        let u_nom = match gx.clone().svd(true, true).solve(&(-target), 1e-12) {
            Ok(u) => u,
            Err(e) => {
                outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                break 'steps;
            }
        };
        let mut qp_pairs = Vec::with_capacity(specs.len());
        for spec in &specs {
            match robust_cbf_constraint(spec, &sc.model, &x, sc.disturbance.omega0, cfg.robust_rate)
            {
                Ok(p) => qp_pairs.push(p),
                Err(e) => {
                    outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                    break 'steps;
                }
            }
        }
        let (u, active) = match solve_qp_multi(&qp_pairs, &u_nom) {
            Ok(res) => (res.v, res.active),
            Err(e) => {
                outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                break 'steps;
            }
        };

        let mut row = Vec::with_capacity(log.columns.len());
        row.push(t);
        row.extend(x.iter());
        row.extend(x.iter()); // xhat placeholder: no observer runs
        row.extend(u.iter());
        row.push(1.0); // r
        row.extend(zero_n.iter()); // dhat
        row.extend(zero_n.iter()); // dhatf
        for spec in &specs {
            row.push((spec.h0)(&x));
        }
        for (p0, _) in &qp_pairs {
            row.push(*p0);
        }
        row.extend(std::iter::repeat(0.0).take(sc.model.m)); // v
        row.extend(u.iter()); // udf placeholder
        row.extend(zero_n.iter()); // xi
        for (_, p1) in &qp_pairs {
            row.extend(p1.iter());
        }
        for a in &active {
            row.push(if *a { 1.0 } else { 0.0 });
        }
        if cfg.oracle {
            let (wv, _) = eval_disturbance(&sc.disturbance, t);
            let d_true = sc.model.p(&x).map_err(|e| RunnerError::Runtime {
                step: k,
                t,
                msg: e.to_string(),
            })? * wv;
            row.extend(d_true.iter());
            row.extend(zero_n.iter()); // z undefined without an observer
            row.push(Real::NAN);
            row.push(Real::NAN);
            row.push(Real::NAN);
        }
        if row.iter().take(1 + n).any(|v| !v.is_finite()) {
            outcome = RunOutcome::Aborted { step: k, reason: "non-finite state".into() };
            break 'steps;
        }
        log.rows.push(row);
        if k == steps {
            break;
        }

        let stepped = crate::numerics::rk4_step(
            |tt, yy: &Vector| -> Result<Vector, String> {
                let w = (sc.disturbance.w)(tt);
                Ok(sc.model.f(yy).map_err(|e| e.to_string())?
                    + sc.model.g(yy).map_err(|e| e.to_string())? * &u
                    + sc.model.p(yy).map_err(|e| e.to_string())? * w)
            },
            t,
            &x,
            cfg.dt,
        );
        x = match stepped {
            Ok(x1) => x1,
            Err(e) => {
                outcome = RunOutcome::Aborted { step: k, reason: e.to_string() };
                break 'steps;
            }
        };
    }

    let metrics = compute_metrics(&log, sc, cfg);
    append_run_checks(&mut checks, &log, sc, cfg, &report, &metrics);
    Ok(RunOutput { log, checks, report, zeta, outcome, metrics })
}

fn compute_metrics(log: &TrajectoryLog, sc: &Scenario, cfg: &Resolved) -> RunMetrics {
    let b = sc.barriers.len();
    let n = sc.model.n;
    let idx_t = 0usize;
    let mut min_h = vec![Real::INFINITY; b];
    let mut track_tail = (0.0, 0usize);
    let mut track_inactive = (0.0, 0usize);
    let mut est_tail = (0.0, 0usize);
    let h_base = log.index("h1").unwrap_or(0);
    let act_base = log.index("active_1");
    let dtrue_base = log.index("dtrue1");
    let dhat_base = log.index("dhat1").unwrap_or(0);
    let looper = Loop { sc, cfg };
    for row in &log.rows {
        let t = row[idx_t];
        for k in 0..b {
            min_h[k] = min_h[k].min(row[h_base + k]);
        }
        let (xd, _) = looper.reference(t);
        let mut err = 0.0;
        for i in 0..n {
            let d = row[1 + i] - xd[i];
            err += d * d;
        }
        let err = err.sqrt();
        if t >= 0.5 * cfg.horizon {
            track_tail.0 += err;
            track_tail.1 += 1;
        }
        if let Some(ab) = act_base {
            if (0..b).all(|k| row[ab + k] == 0.0) {
                track_inactive.0 += err;
                track_inactive.1 += 1;
            }
        }
        if let Some(db) = dtrue_base {
            if t >= 0.25 * cfg.horizon {
                let mut e = 0.0;
                for i in 0..n {
                    let d = row[dhat_base + i] - row[db + i];
                    e += d * d;
                }
                est_tail.0 += e.sqrt();
                est_tail.1 += 1;
            }
        }
    }
    let avg = |(s, c): (Real, usize)| if c > 0 { s / c as Real } else { Real::NAN };
    RunMetrics {
        avg_tracking_err_tail: avg(track_tail),
        avg_tracking_err_inactive: avg(track_inactive),
        avg_est_err_tail: avg(est_tail),
        min_h,
    }
}

fn append_run_checks(
    checks: &mut Vec<CheckItem>,
    log: &TrajectoryLog,
    sc: &Scenario,
    cfg: &Resolved,
    report: &BoundReport,
    metrics: &RunMetrics,
) {
    for (k, mh) in metrics.min_h.iter().enumerate() {
        checks.push(CheckItem {
            name: format!("safety: min h{} >= -1e-6", k + 1),
            pass: *mh >= -1e-6,
            detail: format!("min h{} = {mh}", k + 1),
            warn_only: false,
        });
    }
    if !cfg.oracle || cfg.controller == Controller::RobustCbf {
        return;
    }
    let n = sc.model.n;
    let r_idx = log.index("r").unwrap();
    let z_base = log.index("z1").unwrap();
    let rho_z_idx = log.index("rho_z").unwrap();
    let rho_r_idx = log.index("rho_r").unwrap();
    let rho_f_idx = log.index("rho_f").unwrap();
    let dhat_base = log.index("dhat1").unwrap();
    let dhatf_base = log.index("dhatf1").unwrap();
    let dtrue_base = log.index("dtrue1").unwrap();
    let (mut min_r, mut z_excess, mut r_excess, mut f_excess) =
        (Real::INFINITY, Real::NEG_INFINITY, Real::NEG_INFINITY, Real::NEG_INFINITY);
    let mut ed_sup_tail: Real = 0.0;
    for row in &log.rows {
        let t = row[0];
        min_r = min_r.min(row[r_idx]);
        let znorm =
            (0..n).map(|i| row[z_base + i] * row[z_base + i]).sum::<Real>().sqrt();
        z_excess = z_excess.max(znorm - row[rho_z_idx]);
        r_excess = r_excess.max(row[r_idx] - row[rho_r_idx]);
        let efnorm = (0..n)
            .map(|i| {
                let d = row[dhatf_base + i] - row[dhat_base + i];
                d * d
            })
            .sum::<Real>()
            .sqrt();
        f_excess = f_excess.max(efnorm - row[rho_f_idx]);
        if t >= 0.75 * cfg.horizon {
            let ed = (0..n)
                .map(|i| {
                    let d = row[dhat_base + i] - row[dtrue_base + i];
                    d * d
                })
                .sum::<Real>()
                .sqrt();
            ed_sup_tail = ed_sup_tail.max(ed);
        }
    }
    checks.push(CheckItem {
        name: "scaling factor stays >= 1".into(),
        pass: min_r >= 1.0 - 1e-9,
        detail: format!("min r = {min_r}"),
        warn_only: false,
    });
    checks.push(CheckItem {
        name: "||z(t)|| within rho_z envelope".into(),
        pass: z_excess <= 1e-6,
        detail: format!("max excess = {z_excess:.3e}"),
        warn_only: false,
    });
    checks.push(CheckItem {
        name: "r(t) within rho_r envelope".into(),
        pass: r_excess <= 1e-6,
        detail: format!("max excess = {r_excess:.3e}"),
        warn_only: false,
    });
    checks.push(CheckItem {
        name: "||dhat_f - dhat|| within rho_f envelope".into(),
        pass: f_excess <= 1e-6,
        detail: format!("max excess = {f_excess:.3e}"),
        warn_only: false,
    });
    checks.push(CheckItem {
        name: "tail sup ||e_d|| within ultimate bound".into(),
        pass: ed_sup_tail <= report.ultimate_bound,
        detail: format!(
            "sup over tail = {ed_sup_tail}, bound = {}",
            report.ultimate_bound
        ),
        warn_only: false,
    });
}

/// One row of the controller comparison table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparisonRow {
    pub controller: String,
    pub avg_tracking_err_inactive: Real,
    pub avg_tracking_err_tail: Real,
    pub min_h: Real,
    pub safe: bool,
    pub completed: bool,
}

/// Runs the three controllers on the same configuration.
pub fn compare(config: &SimConfig) -> Result<Vec<ComparisonRow>, RunnerError> {
    let mut rows = Vec::new();
    for ctrl in [Controller::IidobCbfQp, Controller::RobustCbf, Controller::NominalOnly] {
        let mut c = config.clone();
        c.controller = Some(ctrl);
        match run(&c) {
            Ok(out) => {
                let min_h =
                    out.metrics.min_h.iter().copied().fold(Real::INFINITY, Real::min);
                rows.push(ComparisonRow {
                    controller: ctrl.to_string(),
                    avg_tracking_err_inactive: out.metrics.avg_tracking_err_inactive,
                    avg_tracking_err_tail: out.metrics.avg_tracking_err_tail,
                    min_h,
                    safe: min_h >= -1e-6,
                    completed: out.outcome == RunOutcome::Completed,
                });
            }
            // A controller that cannot run on this scenario (e.g. the
            // robust baseline on relative degree > 1) is reported, not
            // fatal to the comparison.
            Err(RunnerError::Config(_)) => rows.push(ComparisonRow {
                controller: ctrl.to_string(),
                avg_tracking_err_inactive: Real::NAN,
                avg_tracking_err_tail: Real::NAN,
                min_h: Real::NAN,
                safe: false,
                completed: false,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// Formats a float with 17 significant digits; round-trips exactly.
pub fn format_float(v: Real) -> String {
    format!("{v:.16e}")
}

pub fn emit_csv(log: &TrajectoryLog, path: &Path) -> Result<(), RunnerError> {
    let mut out = String::new();
    out.push_str(&log.columns.join(","));
    out.push('\n');
    for row in &log.rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_float(*v));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_csv(path: &Path) -> Result<TrajectoryLog, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| RunnerError::Config(format!("empty CSV at {}", path.display())))?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<Real>, _> = line.split(',').map(str::parse::<Real>).collect();
        let row = row.map_err(|e| {
            RunnerError::Config(format!("bad CSV row {} in {}: {e}", i + 2, path.display()))
        })?;
        if row.len() != columns.len() {
            return Err(RunnerError::Config(format!(
                "CSV row {} has {} fields, header has {}",
                i + 2,
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(TrajectoryLog { columns, rows })
}

const SVG_COLORS: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

/// Minimal line plot: time on the abscissa, one polyline per channel.
pub fn emit_svg(log: &TrajectoryLog, channels: &[String], path: &Path) -> Result<(), RunnerError> {
    const W: f64 = 900.0;
    const H: f64 = 520.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 50.0;
    let t: Vec<Real> = log.channel("t").unwrap_or_default();
    let mut series = Vec::new();
    for name in channels {
        let data = log.channel(name).ok_or_else(|| {
            RunnerError::Config(format!("unknown channel '{name}' requested for plot"))
        })?;
        series.push((name.clone(), data));
    }
    let (t0, t1) = (
        t.first().copied().unwrap_or(0.0),
        t.last().copied().unwrap_or(1.0),
    );
    let mut ymin = Real::INFINITY;
    let mut ymax = Real::NEG_INFINITY;
    for (_, d) in &series {
        for v in d {
            if v.is_finite() {
                ymin = ymin.min(*v);
                ymax = ymax.max(*v);
            }
        }
    }
    if !ymin.is_finite() {
        ymin = 0.0;
        ymax = 1.0;
    }
    if ymax - ymin < 1e-12 {
        ymax = ymin + 1.0;
    }
    let sx = |tv: Real| ML + (tv - t0) / (t1 - t0).max(1e-300) * (W - ML - MR);
    let sy = |yv: Real| H - MB - (yv - ymin) / (ymax - ymin) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB
    );
    let _ = writeln!(
        svg,
        "<text x=\"{ML}\" y=\"{}\" font-size=\"12\">{t0:.3}</text>",
        H - MB + 20.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{t1:.3}</text>",
        W - MR,
        H - MB + 20.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{ymin:.4}</text>",
        ML - 6.0,
        H - MB
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{ymax:.4}</text>",
        ML - 6.0,
        MT + 10.0
    );
    for (idx, (name, data)) in series.iter().enumerate() {
        let color = SVG_COLORS[idx % SVG_COLORS.len()];
        let mut pts = String::new();
        for (tv, yv) in t.iter().zip(data) {
            if yv.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", sx(*tv), sy(*yv));
            }
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{pts}\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            W - MR - 80.0,
            MT + 14.0 * (idx as f64 + 1.0)
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Human-readable report: one line per checked inequality or envelope.
pub fn emit_report(checks: &[CheckItem], path: &Path) -> Result<(), RunnerError> {
    let mut out = String::new();
    for c in checks {
        let _ = writeln!(out, "{} {} — {}", c.status(), c.name, c.detail);
    }
    std::fs::write(path, out).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

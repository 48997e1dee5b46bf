//! Small dense numerics shared by every other module: fixed-step RK4,
//! composite Gauss-Legendre quadrature and central finite differences.
//!
//! Everything here is generic over the scalar type; the rest of the crate
//! instantiates it at [`crate::Real`].

use nalgebra::{DVector, RealField};
use num_traits::FromPrimitive;
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite derivative at RK4 stage {stage}")]
    NonFiniteStage { stage: usize },
    #[error("non-finite quadrature sample at t = {location}")]
    NonFiniteSample { location: f64 },
    #[error("non-finite finite-difference sample at coordinate {index}")]
    NonFiniteDiffSample { index: usize },
    #[error("invalid quadrature rule: {0}")]
    BadRule(String),
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
}

/// Error produced by [`rk4_step`]: either the vector field itself failed,
/// or it returned a non-finite value at one of the four stages.
#[derive(Debug, Error)]
pub enum StepError<E> {
    #[error("vector field failed at RK4 stage {stage}: {source}")]
    Field { stage: usize, source: E },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Composite Gauss-Legendre quadrature rule: `nodes` points per segment,
/// segments of at most `segment_len` covering the integration interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    nodes: usize,
    segment_len: f64,
}

impl QuadRule {
    pub fn new(nodes: usize, segment_len: f64) -> Result<Self, NumericsError> {
        if nodes < 2 {
            return Err(NumericsError::BadRule(format!(
                "node count must be >= 2, got {nodes}"
            )));
        }
        if !(segment_len > 0.0) {
            return Err(NumericsError::BadRule(format!(
                "segment length must be positive, got {segment_len}"
            )));
        }
        Ok(Self { nodes, segment_len })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn segment_len(&self) -> f64 {
        self.segment_len
    }
}

impl Default for QuadRule {
    fn default() -> Self {
        Self { nodes: 16, segment_len: 1.0 }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], cached per node count.
fn gl_nodes_weights(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: Lazy<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> =
        Lazy::new(|| Mutex::new(HashMap::new()));
    let mut cache = CACHE.lock().unwrap();
    cache.entry(n).or_insert_with(|| compute_gl(n)).clone()
}

/// Newton iteration on the Legendre polynomial recurrence.
fn compute_gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (p0 - x * p1) / (1.0 - x * x);
    (p1, d)
}

/// One classical fourth-order Runge-Kutta step of `state` under the
/// time-dependent vector field `deriv`.
pub fn rk4_step<T, E, F>(
    mut deriv: F,
    t: T,
    state: &DVector<T>,
    dt: T,
) -> Result<DVector<T>, StepError<E>>
where
    T: RealField + FromPrimitive + Copy,
    F: FnMut(T, &DVector<T>) -> Result<DVector<T>, E>,
{
    if dt <= T::zero() {
        return Err(NumericsError::BadStep(dt.to_subset().unwrap_or(f64::NAN)).into());
    }
    let half = T::from_f64(0.5).unwrap();
    let sixth = T::from_f64(1.0 / 6.0).unwrap();
    let two = T::from_f64(2.0).unwrap();

    let eval = |stage: usize, t: T, y: &DVector<T>, deriv: &mut F| {
        let d = deriv(t, y).map_err(|source| StepError::Field { stage, source })?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteStage { stage }.into());
        }
        Ok::<_, StepError<E>>(d)
    };

    let k1 = eval(1, t, state, &mut deriv)?;
    let k2 = eval(2, t + half * dt, &(state + &k1 * (half * dt)), &mut deriv)?;
    let k3 = eval(3, t + half * dt, &(state + &k2 * (half * dt)), &mut deriv)?;
    let k4 = eval(4, t + dt, &(state + &k3 * dt), &mut deriv)?;

    Ok(state + (k1 + k2 * two + k3 * two + k4) * (dt * sixth))
}

/// Oriented composite Gauss-Legendre integral of `f` over [a, b]
/// (`a > b` gives the negated integral).
pub fn quad_gl<T, F>(f: F, a: T, b: T, rule: &QuadRule) -> Result<T, NumericsError>
where
    T: RealField + FromPrimitive + Copy,
    F: Fn(T) -> T,
{
    let len = (b - a).abs();
    if len == T::zero() {
        return Ok(T::zero());
    }
    let seg_len = T::from_f64(rule.segment_len).unwrap();
    let mut segments = (len / seg_len).ceil().to_subset().unwrap_or(1.0) as usize;
    segments = segments.max(1);
    let (xs, ws) = gl_nodes_weights(rule.nodes);

    let nseg = T::from_usize(segments).unwrap();
    let h = (b - a) / nseg;
    let half = T::from_f64(0.5).unwrap();
    let mut total = T::zero();
    for s in 0..segments {
        let lo = a + h * T::from_usize(s).unwrap();
        let mid = lo + h * half;
        let scale = h * half;
        let mut acc = T::zero();
        for (x, w) in xs.iter().zip(ws.iter()) {
            let tau = mid + scale * T::from_f64(*x).unwrap();
            let v = f(tau);
            if !v.is_finite() {
                return Err(NumericsError::NonFiniteSample {
                    location: tau.to_subset().unwrap_or(f64::NAN),
                });
            }
            acc += T::from_f64(*w).unwrap() * v;
        }
        total += acc * scale;
    }
    Ok(total)
}

/// Central finite difference of a scalar function along coordinate `index`.
pub fn central_diff<T, F>(
    f: F,
    point: &DVector<T>,
    index: usize,
    step: T,
) -> Result<T, NumericsError>
where
    T: RealField + FromPrimitive + Copy,
    F: Fn(&DVector<T>) -> T,
{
    if step <= T::zero() {
        return Err(NumericsError::BadStep(step.to_subset().unwrap_or(f64::NAN)));
    }
    let mut plus = point.clone();
    let mut minus = point.clone();
    plus[index] += step;
    minus[index] -= step;
    let (fp, fm) = (f(&plus), f(&minus));
    if !fp.is_finite() || !fm.is_finite() {
        return Err(NumericsError::NonFiniteDiffSample { index });
    }
    Ok((fp - fm) / (step + step))
}

/// Default central-difference step for a coordinate value.
pub fn fd_step(coord: f64) -> f64 {
    1e-6 * (1.0 + coord.abs())
}
